#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "flare/matrix.hpp"
#include "flare/tensor_store.hpp"

namespace flare {

enum class AlignMode {
  /// exp(-(a - mu)^2 / (2 var)), bounded in (0, 1].
  Density,
  /// The unnormalised-deviation Gaussian density
  /// exp(-(a - mu) / (2 var)) / sqrt(2 pi var). Not bounded; kept for audits.
  LiteralEq2,
};

/// Density-mode values are floored here so that deviations beyond ~38 standard
/// deviations stay positive instead of underflowing to 0.
inline constexpr double kAlignFloor = std::numeric_limits<double>::min();

const char* to_string(AlignMode mode) noexcept;
AlignMode align_mode_from_string(std::string_view name);

double align_value(double activation, double mean, double var, AlignMode mode = AlignMode::Density);

/// Aligns one feature map. `out` must have the same length as `map`.
void align_map(std::span<const float> map, double mean, double var, std::span<double> out,
               AlignMode mode = AlignMode::Density);

struct LayerSignature {
  std::uint32_t layer_index = 0;
  std::vector<double> values; // one abnormal value per channel
};

/// Per-channel minimum of an aligned [channels, height, width] tensor.
LayerSignature extract_signature(std::span<const double> aligned, std::uint32_t channels,
                                 std::uint32_t height, std::uint32_t width,
                                 std::uint32_t layer_index = 0);

struct LayerSpan {
  std::uint32_t layer_index = 0;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const LayerSpan&, const LayerSpan&) = default;
};

/// Rows are samples; columns are the concatenated layer signatures of layers
/// 1..L-k in layer order, then channel order.
struct RepresentationMatrix {
  Matrix values;
  std::vector<LayerSpan> spans;
  std::size_t truncation = 0;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }

  /// Drops `extra` more trailing layers. Result rows are prefixes of these rows.
  RepresentationMatrix truncated(std::size_t extra) const;
};

RepresentationMatrix build_representations(const DumpManifest& manifest, std::size_t k,
                                           AlignMode mode = AlignMode::Density,
                                           unsigned threads = 1);

/// Caches a representation matrix as an [N, d] tensor file plus a JSON sidecar
/// (`<path>.json`) listing layer spans and the truncation depth.
void write_representations(const fs::path& path, const RepresentationMatrix& reps);
RepresentationMatrix read_representations(const fs::path& path);

} // namespace flare
