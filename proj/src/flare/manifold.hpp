#pragma once

// Manifold reduction: exact k-NN graph, smoothed fuzzy memberships, and a
// force-directed embedding in the style of UMAP.

#include <cstdint>
#include <optional>
#include <vector>

#include "flare/matrix.hpp"

namespace flare {

/// Exact Euclidean neighbours, row-major n x k. Self is excluded; each row is
/// sorted by (distance, index).
struct KnnGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> distances;

  std::uint32_t neighbor(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
  double distance(std::size_t i, std::size_t j) const { return distances[i * k + j]; }
};

/// Throws KTooLarge unless 1 <= k < points.rows().
KnnGraph knn(const Matrix& points, std::size_t k, unsigned threads = 1);

struct FuzzyEdge {
  std::uint32_t head = 0;
  std::uint32_t tail = 0;
  double weight = 0.0;
};

struct FuzzyGraph {
  std::size_t n = 0;
  std::vector<double> rho;   // distance to the nearest neighbour
  std::vector<double> sigma; // smoothing bandwidth
  /// Directed memberships w(i -> neighbor j), aligned with the KnnGraph rows.
  std::vector<double> directed;
  /// Probabilistic union, stored in both directions, sorted by (head, tail).
  std::vector<FuzzyEdge> edges;

  double weight(std::uint32_t i, std::uint32_t j) const;
};

struct SmoothingResult {
  double sigma = 0.0;
  double membership_sum = 0.0;
  int iterations = 0;
};

inline constexpr double kSmoothingTolerance = 1e-5;
inline constexpr int kSmoothingMaxIterations = 64;

/// Calibrates one point. `distances` is that point's sorted neighbour row.
SmoothingResult smooth_point(std::span<const double> distances, double target);

FuzzyGraph smooth_memberships(const KnnGraph& graph, unsigned threads = 1);

/// a, b of the low-dimensional similarity 1 / (1 + a d^(2b)), fitted by least
/// squares to the min_dist / spread target curve on 300 samples of [0, 3 spread].
struct CurveParams {
  double a = 0.0;
  double b = 0.0;
};
CurveParams fit_curve(double spread, double min_dist);

struct EmbedParams {
  std::size_t dims = 2;
  std::size_t epochs = 200;
  double min_dist = 0.1;
  double spread = 1.0;
  double negative_sample_rate = 5.0;
  double learning_rate = 1.0;
  double repulsion_strength = 1.0;
  bool deterministic = true;
  unsigned threads = 1;
};

struct Embedding {
  Matrix coords;
  std::uint64_t seed = 0;
  bool spectral_init = false;
};

/// Spectral layout from the normalised Laplacian of the union graph: the
/// eigenvectors after the trivial one, scaled so the largest |coordinate| is
/// 10. Returns nullopt when the eigensolver does not converge or n <= dims + 1.
std::optional<Matrix> spectral_layout(const FuzzyGraph& graph, std::size_t dims);

Embedding embed(const FuzzyGraph& graph, const EmbedParams& params, std::uint64_t seed);

} // namespace flare
