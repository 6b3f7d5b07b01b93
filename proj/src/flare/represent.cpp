#include "flare/represent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "flare/error.hpp"
#include "flare/parallel.hpp"
#include "json.hpp"

namespace flare {

const char* to_string(AlignMode mode) noexcept {
  switch (mode) {
  case AlignMode::Density: return "density";
  case AlignMode::LiteralEq2: return "literal-eq2";
  }
  return "density";
}

AlignMode align_mode_from_string(std::string_view name) {
  if (name == "density") return AlignMode::Density;
  if (name == "literal-eq2") return AlignMode::LiteralEq2;
  throw Error(ErrorCode::InvalidArgument,
              "unknown alignment mode '" + std::string(name) + "' (density | literal-eq2)");
}

double align_value(double activation, double mean, double var, AlignMode mode) {
  if (!(var > 0.0))
    throw Error(ErrorCode::NonPositiveVariance, "variance " + std::to_string(var));
  const double deviation = activation - mean;
  if (mode == AlignMode::LiteralEq2)
    return std::exp(-deviation / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
  return std::max(std::exp(-(deviation * deviation) / (2.0 * var)), kAlignFloor);
}

void align_map(std::span<const float> map, double mean, double var, std::span<double> out,
               AlignMode mode) {
  if (!(var > 0.0))
    throw Error(ErrorCode::NonPositiveVariance, "variance " + std::to_string(var));
  if (out.size() != map.size())
    throw Error(ErrorCode::ShapeMismatch, "aligned output length differs from map length");
  const double scale = 1.0 / (2.0 * var);
  if (mode == AlignMode::LiteralEq2) {
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * var);
    for (std::size_t i = 0; i < map.size(); ++i)
      out[i] = norm * std::exp(-(map[i] - mean) * scale);
    return;
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double deviation = map[i] - mean;
    out[i] = std::max(std::exp(-(deviation * deviation) * scale), kAlignFloor);
  }
}

LayerSignature extract_signature(std::span<const double> aligned, std::uint32_t channels,
                                 std::uint32_t height, std::uint32_t width,
                                 std::uint32_t layer_index) {
  const std::size_t spatial = std::size_t{height} * width;
  if (spatial == 0)
    throw Error(ErrorCode::EmptySpatialExtent,
                "layer " + std::to_string(layer_index) + " has an empty feature map");
  if (aligned.size() != spatial * channels)
    throw Error(ErrorCode::ShapeMismatch, "aligned tensor length does not match channels*h*w");
  LayerSignature sig;
  sig.layer_index = layer_index;
  sig.values.resize(channels);
  for (std::uint32_t c = 0; c < channels; ++c) {
    const auto map = aligned.subspan(c * spatial, spatial);
    sig.values[c] = *std::min_element(map.begin(), map.end());
  }
  return sig;
}

RepresentationMatrix RepresentationMatrix::truncated(std::size_t extra) const {
  if (extra >= spans.size())
    throw Error(ErrorCode::TruncationOutOfRange,
                "cannot drop " + std::to_string(extra) + " of " + std::to_string(spans.size()) +
                    " remaining layers");
  RepresentationMatrix out;
  out.truncation = truncation + extra;
  out.spans.assign(spans.begin(), spans.end() - static_cast<std::ptrdiff_t>(extra));
  const std::size_t width = out.spans.back().offset + out.spans.back().length;
  out.values = Matrix(rows(), width);
  for (std::size_t i = 0; i < rows(); ++i) {
    const auto src = values.row(i).first(width);
    std::copy(src.begin(), src.end(), out.values.row(i).begin());
  }
  return out;
}

RepresentationMatrix build_representations(const DumpManifest& manifest, std::size_t k,
                                           AlignMode mode, unsigned threads) {
  const std::size_t layer_count = manifest.layer_count();
  if (layer_count == 0 || k >= layer_count)
    throw Error(ErrorCode::TruncationOutOfRange, "k=" + std::to_string(k) + " with L=" +
                                                     std::to_string(layer_count) +
                                                     " (need 0 <= k <= L-1)");
  const std::size_t kept = layer_count - k;

  RepresentationMatrix reps;
  reps.truncation = k;
  std::size_t width = 0;
  for (std::size_t pos = 0; pos < kept; ++pos) {
    const auto& layer = manifest.layers[pos];
    reps.spans.push_back({layer.index, width, layer.channels});
    width += layer.channels;
  }
  const std::size_t n = manifest.sample_count;
  reps.values = Matrix(n, width);

  // One layer resident at a time.
  for (std::size_t pos = 0; pos < kept; ++pos) {
    const auto& layer = manifest.layers[pos];
    const auto block = manifest.load_activations(pos);
    const std::size_t spatial = layer.spatial();
    const std::size_t per_sample = std::size_t{layer.channels} * spatial;
    const std::size_t offset = reps.spans[pos].offset;

    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> aligned(per_sample);
      for (std::size_t i = begin; i < end; ++i) {
        const std::span<const float> sample(block.values.data() + i * per_sample, per_sample);
        for (std::uint32_t c = 0; c < layer.channels; ++c) {
          align_map(sample.subspan(c * spatial, spatial), layer.bn_mean[c], layer.bn_var[c],
                    std::span(aligned).subspan(c * spatial, spatial), mode);
        }
        const auto sig =
            extract_signature(aligned, layer.channels, layer.height, layer.width, layer.index);
        for (std::uint32_t c = 0; c < layer.channels; ++c) {
          if (!std::isfinite(sig.values[c]))
            throw Error(ErrorCode::NonFiniteValue,
                        "aligned value of sample " + std::to_string(i) + ", layer " +
                            std::to_string(layer.index) + ", channel " + std::to_string(c) +
                            " overflows");
          reps.values(i, offset + c) = sig.values[c];
        }
      }
    });
  }
  return reps;
}

void write_representations(const fs::path& path, const RepresentationMatrix& reps) {
  TensorBlock block;
  block.shape = {reps.rows(), reps.cols()};
  block.values.reserve(reps.rows() * reps.cols());
  for (double v : reps.values.data()) block.values.push_back(static_cast<float>(v));
  write_tensor(path, block);

  nlohmann::ordered_json sidecar;
  sidecar["truncation"] = reps.truncation;
  auto spans = nlohmann::ordered_json::array();
  for (const auto& s : reps.spans)
    spans.push_back({{"layer", s.layer_index}, {"offset", s.offset}, {"length", s.length}});
  sidecar["layers"] = std::move(spans);
  std::ofstream out(fs::path(path.string() + ".json"), std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create sidecar for " + path.string());
  out << sidecar.dump(2) << '\n';
}

RepresentationMatrix read_representations(const fs::path& path) {
  const auto block = read_tensor(path);
  if (block.shape.size() != 2)
    throw Error(ErrorCode::ShapeMismatch, path.filename().string() + ": expected a 2-D block");
  const fs::path sidecar_path(path.string() + ".json");
  if (!fs::exists(sidecar_path))
    throw Error(ErrorCode::MissingFile, sidecar_path.string() + " does not exist");
  nlohmann::json sidecar;
  try {
    std::ifstream in(sidecar_path);
    sidecar = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, sidecar_path.filename().string() + ": " + e.what());
  }

  RepresentationMatrix reps;
  reps.truncation = sidecar.value("truncation", std::size_t{0});
  std::size_t expected_offset = 0;
  for (const auto& s : sidecar.at("layers")) {
    LayerSpan span{s.at("layer").get<std::uint32_t>(), s.at("offset").get<std::size_t>(),
                   s.at("length").get<std::size_t>()};
    if (span.offset != expected_offset)
      throw Error(ErrorCode::InvalidManifest, "layer spans must be contiguous");
    expected_offset += span.length;
    reps.spans.push_back(span);
  }
  if (expected_offset != block.shape[1])
    throw Error(ErrorCode::ShapeMismatch, "layer spans cover " + std::to_string(expected_offset) +
                                              " columns, block has " +
                                              std::to_string(block.shape[1]));
  std::vector<double> values(block.values.begin(), block.values.end());
  reps.values = Matrix(block.shape[0], block.shape[1], std::move(values));
  return reps;
}

} // namespace flare
