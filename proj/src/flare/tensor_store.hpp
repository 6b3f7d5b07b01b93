#pragma once

// Activation dump I/O.
//
// A dump is a directory holding `manifest.json` plus one tensor file per
// referenced block. Tensor file layout (all integers little-endian):
//
//   "FLTD" | u32 version (1) | u64 header length | JSON header | payload
//
// The JSON header is {"dtype":"f32","shape":[...],"order":"row-major"} and the
// payload is the row-major f32 values.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flare {

namespace fs = std::filesystem;

inline constexpr char kTensorMagic[4] = {'F', 'L', 'T', 'D'};
inline constexpr std::uint32_t kTensorVersion = 1;

struct TensorBlock {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;

  std::uint64_t element_count() const;

  friend bool operator==(const TensorBlock&, const TensorBlock&) = default;
};

/// Reads and fully validates a tensor file, including finiteness of every value.
TensorBlock read_tensor(const fs::path& path);

/// Reads only the header; checks magic, version, dtype and that the file holds
/// exactly 4 * product(shape) payload bytes.
std::vector<std::uint64_t> read_tensor_shape(const fs::path& path);

/// Streams the payload in chunks and throws NonFiniteValue on the first
/// NaN/Inf, without keeping the payload in memory.
void scan_tensor_finite(const fs::path& path);

/// Throws ShapeMismatch if the value count disagrees with the shape.
void write_tensor(const fs::path& path, const TensorBlock& block);

struct LayerSpec {
  std::uint32_t index = 0; // 1-based, forward order
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> bn_mean;
  std::vector<float> bn_var;
  std::string activations_file;
  std::string bn_mean_file;
  std::string bn_var_file;

  std::uint64_t spatial() const { return std::uint64_t{height} * width; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct DumpManifest {
  fs::path root;
  std::uint64_t sample_count = 0;
  std::uint32_t class_count = 0;
  std::vector<LayerSpec> layers;
  std::vector<std::uint32_t> labels;
  std::optional<std::vector<std::uint8_t>> truth_flags;

  std::size_t layer_count() const { return layers.size(); }

  /// Activations of layers[pos], shape [N, C, H, W]. Loaded from disk on every call.
  TensorBlock load_activations(std::size_t pos) const;
};

/// Opens and eagerly validates a dump directory.
DumpManifest read_dump(const fs::path& dir);

/// Writes `manifest` plus per-layer activation blocks into `dir` (created if
/// absent). File names are taken from the LayerSpecs; empty names are filled
/// with the default `layer_<l>_*.fltd` scheme. Returns `dir`.
fs::path write_dump(const DumpManifest& manifest, std::span<const TensorBlock> activations,
                    const fs::path& dir);

/// Parameters for the synthetic dump generator.
///
/// Benign samples draw a per-channel deviation from N(0, benign_spread^2) and
/// are diffuse in every channel. Poisoned samples carry a trigger spike at a
/// fixed spatial position in the first `poison_channels` channels of every
/// layer, `trigger_level` BN standard deviations from the mean with jitter
/// `poison_spread`. In the last `staged_layers` layers every sample instead
/// sits near a per-class centre drawn from U(-class_separation,
/// class_separation), so the data fragments per class in those layers only.
struct SynthSpec {
  std::uint64_t samples = 2000;
  std::vector<std::uint32_t> channels = {16, 16, 16, 16};
  std::uint32_t height = 4;
  std::uint32_t width = 4;
  std::uint32_t classes = 10;
  std::uint32_t target_label = 0;
  double poison_rate = 0.1;
  double benign_spread = 1.0;
  double poison_spread = 0.05;
  double trigger_level = 4.0;
  std::uint32_t poison_channels = 8;
  std::uint32_t staged_layers = 0;
  double class_separation = 2.5;
};

/// Number of poisoned samples the generator emits: floor(rate * samples).
std::uint64_t synth_poison_count(const SynthSpec& spec);

fs::path synth_dump(const SynthSpec& spec, std::uint64_t seed, const fs::path& dir);

} // namespace flare
