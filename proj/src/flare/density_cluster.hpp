#pragma once

// Density hierarchy over an embedding: core distances, mutual reachability,
// minimum spanning tree, single-linkage dendrogram and the condensed tree with
// its cluster-stability measures.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flare/matrix.hpp"
#include "json.hpp"

namespace flare {

/// d_mreach(i, j) = max(core_i, core_j, |x_i - x_j|), with core_i the distance
/// from i to its min_pts-th nearest other point.
class MutualReachability {
public:
  MutualReachability(const Matrix& points, std::vector<double> core)
      : points_(&points), core_(std::move(core)) {}

  std::size_t size() const { return core_.size(); }
  double core(std::size_t i) const { return core_[i]; }
  std::span<const double> core_distances() const { return core_; }
  double distance(std::size_t i, std::size_t j) const;
  double operator()(std::size_t i, std::size_t j) const;

private:
  const Matrix* points_;
  std::vector<double> core_;
};

/// The returned accessor references `points`, which must outlive it.
/// Throws MinPtsTooLarge unless 1 <= min_pts < N.
MutualReachability mutual_reachability(const Matrix& points, std::size_t min_pts,
                                       unsigned threads = 1);

struct MstEdge {
  std::uint32_t a = 0; // a < b
  std::uint32_t b = 0;
  double weight = 0.0;

  friend bool operator==(const MstEdge&, const MstEdge&) = default;
};

/// Prim's algorithm on the dense reachability graph. Edges are returned sorted
/// by (weight, a, b).
std::vector<MstEdge> build_mst(const MutualReachability& reach);

/// One merge of the single-linkage dendrogram. Leaves are 0..n-1; merge m
/// creates node n + m.
struct Merge {
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double distance = 0.0;
  std::uint32_t size = 0;
};

/// Processes MST edges in (weight, a, b) order.
std::vector<Merge> single_linkage(std::span<const MstEdge> mst, std::size_t n);

/// lambda = 1 / distance. Zero distances use 1 / eps with eps = 1e-3 times the
/// smallest positive distance (1e-3 when there is none).
double zero_distance_epsilon(std::span<const Merge> merges);

using ClusterId = std::uint32_t;

struct PointDeparture {
  std::uint32_t point = 0;
  double lambda = 0.0;
};

struct CondensedNode {
  ClusterId id = 0;
  std::optional<ClusterId> parent;
  std::vector<ClusterId> children;
  double lambda_birth = 0.0;
  double lambda_death = 0.0;
  std::size_t size = 0; // points in the cluster at birth
  std::vector<PointDeparture> departures;
};

/// Row of the flat condensed-tree table: `child` is either a point
/// (child_is_point) departing at `lambda`, or a cluster born at `lambda`.
struct CondensedRow {
  ClusterId parent = 0;
  std::uint32_t child = 0;
  bool child_is_point = false;
  double lambda = 0.0;
  std::size_t child_size = 0;
};

class CondensedTree {
public:
  CondensedTree() : CondensedTree(0, 2, {}) {}

  /// Builds from flat rows. Cluster ids must be 0..m-1 with 0 the root and
  /// every non-root cluster appearing exactly once as a child.
  CondensedTree(std::size_t n_points, std::size_t min_cluster_size, std::vector<CondensedRow> rows);

  static constexpr ClusterId root() { return 0; }
  std::size_t point_count() const { return n_points_; }
  std::size_t min_cluster_size() const { return min_cluster_size_; }
  std::size_t cluster_count() const { return nodes_.size(); }
  const std::vector<CondensedNode>& nodes() const { return nodes_; }
  const std::vector<CondensedRow>& rows() const { return rows_; }

  /// Throws UnknownCluster.
  const CondensedNode& node(ClusterId id) const;

  /// Every point in the subtree rooted at `id`, ascending.
  std::vector<std::uint32_t> members(ClusterId id) const;

  /// Clusters reachable from `id` within `max_depth` levels (id itself at 0),
  /// as (cluster, depth) in breadth-first order.
  std::vector<std::pair<ClusterId, std::size_t>> descendants(ClusterId id, std::size_t max_depth) const;

private:
  std::size_t n_points_;
  std::size_t min_cluster_size_;
  std::vector<CondensedRow> rows_;
  std::vector<CondensedNode> nodes_;
};

CondensedTree condense(std::span<const MstEdge> mst, std::size_t n, std::size_t min_cluster_size);

struct ClusterStability {
  ClusterId cluster = 0;
  double lambda_start = 0.0; // min member lambda
  double lambda_end = 0.0;   // max member lambda
  double kappa = 0.0;        // lambda_end - lambda_start
};

/// Range stability: members are the points departing the node directly plus
/// the members of its sub-clusters, the latter counted at the lambda where
/// the node divides.
ClusterStability kappa(const CondensedTree& tree, ClusterId id);

/// Classic summed stability: sum over departures of (lambda - lambda_birth),
/// weighted by departing size. Diagnostic only.
double summed_stability(const CondensedTree& tree, ClusterId id);

struct RootSplit {
  ClusterId first = 0;
  ClusterId second = 0;
};

/// The two children of the root, or nullopt when the root never splits.
std::optional<RootSplit> root_split(const CondensedTree& tree);

/// Nodes with lambda_birth, lambda_death, size and kappa, plus the
/// birth/death alternative and summed stability as diagnostics.
nlohmann::ordered_json tree_to_json(const CondensedTree& tree);

} // namespace flare
