#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "flare/manifold.hpp"
#include "flare/parallel.hpp"

namespace flare {

namespace {

// Memberships are evaluated on distances divided by the mean neighbour
// distance, which makes the calibration exactly scale-free: scaling every
// input by c scales rho and sigma by c and leaves the weights unchanged.
struct ScaledRow {
  std::vector<double> gaps; // max(0, d - rho) / scale
  double scale = 0.0;
};

ScaledRow scale_row(std::span<const double> distances) {
  ScaledRow row;
  const double rho = distances.front();
  row.scale = std::accumulate(distances.begin(), distances.end(), 0.0) /
              static_cast<double>(distances.size());
  row.gaps.resize(distances.size(), 0.0);
  if (row.scale > 0.0)
    for (std::size_t j = 0; j < distances.size(); ++j)
      row.gaps[j] = std::max(0.0, distances[j] - rho) / row.scale;
  return row;
}

double membership(double scaled_gap, double unit_sigma) {
  return scaled_gap > 0.0 ? std::exp(-scaled_gap / unit_sigma) : 1.0;
}

double membership_sum(const ScaledRow& row, double unit_sigma) {
  double sum = 0.0;
  for (double g : row.gaps) sum += membership(g, unit_sigma);
  return sum;
}

// Bisection on sigma / scale, bracket (0, inf) starting at 1.
std::pair<double, int> solve_unit_sigma(const ScaledRow& row, double target) {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double mid = 1.0;
  int it = 0;
  for (; it < kSmoothingMaxIterations; ++it) {
    const double sum = membership_sum(row, mid);
    if (std::abs(sum - target) < kSmoothingTolerance) break;
    if (sum > target) {
      hi = mid;
      mid = (lo + hi) / 2.0;
    } else {
      lo = mid;
      mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
    }
  }
  return {mid, it};
}

} // namespace

SmoothingResult smooth_point(std::span<const double> distances, double target) {
  const auto row = scale_row(distances);
  if (row.scale == 0.0) return {0.0, static_cast<double>(distances.size()), 0};
  const auto [unit, it] = solve_unit_sigma(row, target);
  return {unit * row.scale, membership_sum(row, unit), it};
}

double FuzzyGraph::weight(std::uint32_t i, std::uint32_t j) const {
  const auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{i, j},
                                   [](const FuzzyEdge& e, const std::pair<std::uint32_t, std::uint32_t>& key) {
                                     return std::tie(e.head, e.tail) < std::tie(key.first, key.second);
                                   });
  if (it == edges.end() || it->head != i || it->tail != j) return 0.0;
  return it->weight;
}

FuzzyGraph smooth_memberships(const KnnGraph& graph, unsigned threads) {
  const std::size_t n = graph.n;
  const std::size_t k = graph.k;
  const double target = std::log2(static_cast<double>(k));

  FuzzyGraph fuzzy;
  fuzzy.n = n;
  fuzzy.rho.resize(n);
  fuzzy.sigma.resize(n);
  fuzzy.directed.resize(n * k);

  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::span<const double> row(graph.distances.data() + i * k, k);
      const auto scaled = scale_row(row);
      fuzzy.rho[i] = row.front();
      if (scaled.scale == 0.0) {
        fuzzy.sigma[i] = 0.0;
        std::fill_n(fuzzy.directed.begin() + static_cast<std::ptrdiff_t>(i * k), k, 1.0);
        continue;
      }
      const double unit = solve_unit_sigma(scaled, target).first;
      fuzzy.sigma[i] = unit * scaled.scale;
      for (std::size_t j = 0; j < k; ++j) fuzzy.directed[i * k + j] = membership(scaled.gaps[j], unit);
    }
  });

  // Pair up w(i->j) and w(j->i) under a canonical (low, high) key.
  struct Half {
    std::uint32_t low, high;
    bool from_low;
    double w;
  };
  std::vector<Half> halves;
  halves.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto a = static_cast<std::uint32_t>(i);
      const auto b = graph.neighbor(i, j);
      const double w = fuzzy.directed[i * k + j];
      halves.push_back({std::min(a, b), std::max(a, b), a < b, w});
    }
  }
  std::sort(halves.begin(), halves.end(), [](const Half& x, const Half& y) {
    return std::tie(x.low, x.high, x.from_low) < std::tie(y.low, y.high, y.from_low);
  });

  for (std::size_t p = 0; p < halves.size();) {
    double w1 = 0.0, w2 = 0.0;
    std::size_t q = p;
    for (; q < halves.size() && halves[q].low == halves[p].low && halves[q].high == halves[p].high; ++q)
      (halves[q].from_low ? w1 : w2) = halves[q].w;
    const double w = w1 + w2 - w1 * w2;
    if (w > 0.0) {
      fuzzy.edges.push_back({halves[p].low, halves[p].high, w});
      fuzzy.edges.push_back({halves[p].high, halves[p].low, w});
    }
    p = q;
  }
  std::sort(fuzzy.edges.begin(), fuzzy.edges.end(), [](const FuzzyEdge& x, const FuzzyEdge& y) {
    return std::tie(x.head, x.tail) < std::tie(y.head, y.tail);
  });
  return fuzzy;
}

} // namespace flare
