#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "flare/error.hpp"
#include "flare/manifold.hpp"
#include "flare/parallel.hpp"

namespace flare {

KnnGraph knn(const Matrix& points, std::size_t k, unsigned threads) {
  const std::size_t n = points.rows();
  if (k < 1 || k >= n)
    throw Error(ErrorCode::KTooLarge,
                "k=" + std::to_string(k) + " needs 1 <= k < N=" + std::to_string(n));

  KnnGraph graph;
  graph.n = n;
  graph.k = k;
  graph.indices.resize(n * k);
  graph.distances.resize(n * k);

  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::uint32_t>> candidates(n - 1);
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        candidates[m++] = {squared_distance(points.row(i), points.row(j)),
                           static_cast<std::uint32_t>(j)};
      }
      // pair ordering is (distance, index): ties go to the lower index
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                        candidates.end());
      for (std::size_t j = 0; j < k; ++j) {
        graph.indices[i * k + j] = candidates[j].second;
        graph.distances[i * k + j] = std::sqrt(candidates[j].first);
      }
    }
  });
  return graph;
}

} // namespace flare
