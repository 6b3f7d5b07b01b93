#include <algorithm>
#include <cmath>
#include <numeric>

#include "flare/error.hpp"
#include "flare/rng.hpp"
#include "flare/tensor_store.hpp"

namespace flare {

namespace {

// Within-map jitter of benign deviations, in BN standard deviations.
constexpr double kSpatialJitter = 0.3;
// Spread of benign samples around their class centre in staged layers.
constexpr double kClassJitter = 0.15;

void validate(const SynthSpec& spec) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  if (spec.samples == 0) fail("samples must be positive");
  if (spec.channels.empty()) fail("at least one layer is required");
  if (std::any_of(spec.channels.begin(), spec.channels.end(), [](auto c) { return c == 0; }))
    fail("every layer needs at least one channel");
  if (spec.height == 0 || spec.width == 0) fail("spatial extent must be positive");
  if (spec.classes == 0) fail("classes must be positive");
  if (spec.target_label >= spec.classes) fail("target_label must be below classes");
  if (!(spec.poison_rate >= 0.0 && spec.poison_rate < 1.0)) fail("poison_rate must lie in [0, 1)");
  if (!(spec.benign_spread > 0.0)) fail("benign_spread must be positive");
  if (!(spec.poison_spread >= 0.0)) fail("poison_spread must be non-negative");
  if (spec.staged_layers > spec.channels.size()) fail("staged_layers exceeds layer count");
}

} // namespace

std::uint64_t synth_poison_count(const SynthSpec& spec) {
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<std::uint64_t>(
      std::floor(spec.poison_rate * static_cast<double>(spec.samples) + 1e-9));
}

fs::path synth_dump(const SynthSpec& spec, std::uint64_t seed, const fs::path& dir) {
  validate(spec);
  Rng rng(seed);
  const std::uint64_t n = spec.samples;
  const std::uint32_t layer_count = static_cast<std::uint32_t>(spec.channels.size());
  const std::uint64_t spatial = std::uint64_t{spec.height} * spec.width;

  std::vector<std::uint64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::uint64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::uint8_t> poisoned(n, 0);
  const auto poison_count = synth_poison_count(spec);
  for (std::uint64_t i = 0; i < poison_count; ++i) poisoned[order[i]] = 1;

  // Poisoned samples keep their source class for content but carry the target label.
  std::vector<std::uint32_t> source_class(n);
  std::vector<std::uint32_t> labels(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    source_class[i] = static_cast<std::uint32_t>(rng.below(spec.classes));
    labels[i] = poisoned[i] ? spec.target_label : source_class[i];
  }

  DumpManifest manifest;
  manifest.sample_count = n;
  manifest.class_count = spec.classes;
  manifest.labels = labels;
  manifest.truth_flags = poisoned;

  std::vector<TensorBlock> activations;
  activations.reserve(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t channels = spec.channels[l];
    const bool staged = l >= layer_count - spec.staged_layers;
    const std::uint32_t designated = std::min(spec.poison_channels, channels);

    LayerSpec layer;
    layer.index = l + 1;
    layer.channels = channels;
    layer.height = spec.height;
    layer.width = spec.width;
    layer.bn_mean.resize(channels);
    layer.bn_var.resize(channels);
    for (std::uint32_t c = 0; c < channels; ++c) {
      layer.bn_mean[c] = static_cast<float>(rng.uniform(-1.0, 1.0));
      layer.bn_var[c] = static_cast<float>(rng.uniform(0.5, 2.0));
    }

    std::vector<double> class_centre;
    if (staged) {
      class_centre.resize(std::size_t{spec.classes} * channels);
      for (auto& v : class_centre) v = rng.uniform(-spec.class_separation, spec.class_separation);
    }

    TensorBlock block;
    block.shape = {n, channels, spec.height, spec.width};
    block.values.resize(n * channels * spatial);
    for (std::uint64_t i = 0; i < n; ++i) {
      for (std::uint32_t c = 0; c < channels; ++c) {
        const double mean = layer.bn_mean[c];
        const double sd = std::sqrt(static_cast<double>(layer.bn_var[c]));
        const double deviation =
            staged ? class_centre[std::size_t{source_class[i]} * channels + c] +
                         kClassJitter * spec.benign_spread * rng.normal()
                   : spec.benign_spread * rng.normal();
        float* map = block.values.data() + (i * channels + c) * spatial;
        for (std::uint64_t p = 0; p < spatial; ++p) {
          const double z = deviation + kSpatialJitter * rng.normal();
          map[p] = static_cast<float>(mean + sd * z);
        }
        if (poisoned[i] && c < designated) {
          // Trigger sits at the bottom-right position of the map.
          const double z = spec.trigger_level + spec.poison_spread * rng.normal();
          map[spatial - 1] = static_cast<float>(mean + sd * z);
        }
      }
    }
    manifest.layers.push_back(std::move(layer));
    activations.push_back(std::move(block));
  }
  return write_dump(manifest, activations, dir);
}

} // namespace flare
