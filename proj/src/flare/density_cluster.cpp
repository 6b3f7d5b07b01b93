#include "flare/density_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <tuple>

#include "flare/error.hpp"
#include "flare/parallel.hpp"

namespace flare {

double MutualReachability::distance(std::size_t i, std::size_t j) const {
  return std::sqrt(squared_distance(points_->row(i), points_->row(j)));
}

double MutualReachability::operator()(std::size_t i, std::size_t j) const {
  return std::max({core_[i], core_[j], distance(i, j)});
}

MutualReachability mutual_reachability(const Matrix& points, std::size_t min_pts, unsigned threads) {
  const std::size_t n = points.rows();
  if (min_pts < 1 || min_pts >= n)
    throw Error(ErrorCode::MinPtsTooLarge, "min_pts=" + std::to_string(min_pts) +
                                               " needs 1 <= min_pts < N=" + std::to_string(n));
  std::vector<double> core(n);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> d2(n - 1);
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) d2[m++] = squared_distance(points.row(i), points.row(j));
      const auto nth = d2.begin() + static_cast<std::ptrdiff_t>(min_pts - 1);
      std::nth_element(d2.begin(), nth, d2.end());
      core[i] = std::sqrt(*nth);
    }
  });
  return MutualReachability(points, std::move(core));
}

std::vector<MstEdge> build_mst(const MutualReachability& reach) {
  const std::size_t n = reach.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, inf);
  std::vector<std::uint32_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t u = 0; u < n; ++u) {
      if (in_tree[u]) continue;
      const double w = reach(current, u);
      if (w < best[u] || (w == best[u] && current < from[u])) {
        best[u] = w;
        from[u] = static_cast<std::uint32_t>(current);
      }
      if (next == n || best[u] < best[next]) next = u;
    }
    in_tree[next] = 1;
    const auto a = std::min<std::uint32_t>(from[next], static_cast<std::uint32_t>(next));
    const auto b = std::max<std::uint32_t>(from[next], static_cast<std::uint32_t>(next));
    edges.push_back({a, b, best[next]});
    current = next;
  }
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
  });
  return edges;
}

std::vector<Merge> single_linkage(std::span<const MstEdge> mst, std::size_t n) {
  std::vector<MstEdge> sorted(mst.begin(), mst.end());
  std::sort(sorted.begin(), sorted.end(), [](const MstEdge& x, const MstEdge& y) {
    return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
  });

  std::vector<std::uint32_t> parent(2 * n);
  std::iota(parent.begin(), parent.end(), 0u);
  std::vector<std::uint32_t> size(2 * n, 1);
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  std::vector<Merge> merges;
  merges.reserve(sorted.size());
  auto next = static_cast<std::uint32_t>(n);
  for (const auto& e : sorted) {
    const auto ra = find(e.a);
    const auto rb = find(e.b);
    if (ra == rb) continue;
    merges.push_back({ra, rb, e.weight, size[ra] + size[rb]});
    parent[ra] = parent[rb] = next;
    size[next] = size[ra] + size[rb];
    ++next;
  }
  return merges;
}

double zero_distance_epsilon(std::span<const Merge> merges) {
  double smallest = std::numeric_limits<double>::infinity();
  for (const auto& m : merges)
    if (m.distance > 0.0) smallest = std::min(smallest, m.distance);
  return std::isinf(smallest) ? 1e-3 : smallest * 1e-3;
}

CondensedTree::CondensedTree(std::size_t n_points, std::size_t min_cluster_size,
                             std::vector<CondensedRow> rows)
    : n_points_(n_points), min_cluster_size_(min_cluster_size), rows_(std::move(rows)) {
  std::size_t clusters = 1;
  for (const auto& r : rows_)
    if (!r.child_is_point) ++clusters;
  nodes_.resize(clusters);
  for (std::size_t i = 0; i < clusters; ++i) nodes_[i].id = static_cast<ClusterId>(i);
  nodes_[0].size = n_points;

  std::vector<char> seen_cluster(clusters, 0);
  std::vector<char> seen_point(n_points, 0);
  for (const auto& r : rows_) {
    if (r.parent >= clusters)
      throw Error(ErrorCode::UnknownCluster, "row references cluster " + std::to_string(r.parent));
    auto& parent = nodes_[r.parent];
    if (r.child_is_point) {
      if (r.child >= n_points || seen_point[r.child]++)
        throw Error(ErrorCode::InvalidArgument,
                    "point " + std::to_string(r.child) + " departs twice or is out of range");
      parent.departures.push_back({r.child, r.lambda});
    } else {
      if (r.child == 0 || r.child >= clusters || seen_cluster[r.child]++)
        throw Error(ErrorCode::UnknownCluster, "bad child cluster " + std::to_string(r.child));
      auto& child = nodes_[r.child];
      child.parent = r.parent;
      child.lambda_birth = r.lambda;
      child.size = r.child_size;
      parent.children.push_back(r.child);
    }
  }
  for (auto& node : nodes_) {
    double death = node.lambda_birth;
    for (const auto& d : node.departures) death = std::max(death, d.lambda);
    for (auto c : node.children) death = std::max(death, nodes_[c].lambda_birth);
    node.lambda_death = death;
  }
}

const CondensedNode& CondensedTree::node(ClusterId id) const {
  if (id >= nodes_.size())
    throw Error(ErrorCode::UnknownCluster, "cluster " + std::to_string(id) + " not in tree of " +
                                               std::to_string(nodes_.size()));
  return nodes_[id];
}

std::vector<std::uint32_t> CondensedTree::members(ClusterId id) const {
  std::vector<std::uint32_t> out;
  std::vector<ClusterId> stack = {node(id).id};
  while (!stack.empty()) {
    const auto& n = nodes_[stack.back()];
    stack.pop_back();
    for (const auto& d : n.departures) out.push_back(d.point);
    stack.insert(stack.end(), n.children.begin(), n.children.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<ClusterId, std::size_t>> CondensedTree::descendants(ClusterId id,
                                                                          std::size_t max_depth) const {
  std::vector<std::pair<ClusterId, std::size_t>> out = {{node(id).id, 0}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto [c, depth] = out[i];
    if (depth == max_depth) continue;
    for (auto child : nodes_[c].children) out.emplace_back(child, depth + 1);
  }
  return out;
}

CondensedTree condense(std::span<const MstEdge> mst, std::size_t n, std::size_t min_cluster_size) {
  if (min_cluster_size < 2)
    throw Error(ErrorCode::InvalidArgument, "min_cluster_size must be >= 2");
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "empty point set");
  if (mst.size() + 1 != n)
    throw Error(ErrorCode::InvalidArgument, "a spanning tree over " + std::to_string(n) +
                                                " points has " + std::to_string(n - 1) + " edges");
  std::vector<CondensedRow> rows;
  if (n == 1) {
    rows.push_back({0, 0, true, 0.0, 1});
    return CondensedTree(n, min_cluster_size, std::move(rows));
  }

  const auto merges = single_linkage(mst, n);
  const double eps = zero_distance_epsilon(merges);
  const std::size_t root = 2 * n - 2;
  auto size_of = [&](std::size_t node) -> std::size_t {
    return node < n ? 1 : merges[node - n].size;
  };
  auto bfs = [&](std::size_t from) {
    std::vector<std::size_t> order = {from};
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i] < n) continue;
      const auto& m = merges[order[i] - n];
      order.push_back(m.left);
      order.push_back(m.right);
    }
    return order;
  };

  std::vector<ClusterId> label(2 * n - 1, 0);
  std::vector<char> ignore(2 * n - 1, 0);
  ClusterId next_label = 1;
  auto fall_out = [&](std::size_t subtree, ClusterId parent, double lambda) {
    for (auto s : bfs(subtree)) {
      if (s < n) rows.push_back({parent, static_cast<std::uint32_t>(s), true, lambda, 1});
      ignore[s] = 1;
    }
  };

  for (auto node : bfs(root)) {
    if (node < n || ignore[node]) continue;
    const auto& m = merges[node - n];
    const double lambda = m.distance > 0.0 ? 1.0 / m.distance : 1.0 / eps;
    const auto parent = label[node];
    const auto left_size = size_of(m.left);
    const auto right_size = size_of(m.right);
    const bool left_ok = left_size >= min_cluster_size;
    const bool right_ok = right_size >= min_cluster_size;

    if (left_ok && right_ok) {
      for (auto [child, sz] : {std::pair{m.left, left_size}, std::pair{m.right, right_size}}) {
        label[child] = next_label++;
        rows.push_back({parent, label[child], false, lambda, sz});
      }
    } else if (!left_ok && !right_ok) {
      fall_out(m.left, parent, lambda);
      fall_out(m.right, parent, lambda);
    } else if (!left_ok) {
      label[m.right] = parent;
      fall_out(m.left, parent, lambda);
    } else {
      label[m.left] = parent;
      fall_out(m.right, parent, lambda);
    }
  }
  return CondensedTree(n, min_cluster_size, std::move(rows));
}

ClusterStability kappa(const CondensedTree& tree, ClusterId id) {
  const auto& node = tree.node(id);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& d : node.departures) {
    lo = std::min(lo, d.lambda);
    hi = std::max(hi, d.lambda);
  }
  for (auto c : node.children) {
    const double split = tree.node(c).lambda_birth;
    lo = std::min(lo, split);
    hi = std::max(hi, split);
  }
  if (lo > hi) lo = hi = node.lambda_birth;
  return {id, lo, hi, hi - lo};
}

double summed_stability(const CondensedTree& tree, ClusterId id) {
  const auto& node = tree.node(id);
  double s = 0.0;
  for (const auto& d : node.departures) s += d.lambda - node.lambda_birth;
  for (auto c : node.children) {
    const auto& child = tree.node(c);
    s += (child.lambda_birth - node.lambda_birth) * static_cast<double>(child.size);
  }
  return s;
}

std::optional<RootSplit> root_split(const CondensedTree& tree) {
  const auto& root = tree.node(CondensedTree::root());
  if (root.children.size() != 2) return std::nullopt;
  return RootSplit{root.children[0], root.children[1]};
}

nlohmann::ordered_json tree_to_json(const CondensedTree& tree) {
  nlohmann::ordered_json j;
  j["point_count"] = tree.point_count();
  j["min_cluster_size"] = tree.min_cluster_size();
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& node : tree.nodes()) {
    const auto stab = kappa(tree, node.id);
    nlohmann::ordered_json n;
    n["id"] = node.id;
    n["parent"] = node.parent ? nlohmann::ordered_json(*node.parent) : nlohmann::ordered_json(nullptr);
    n["children"] = node.children;
    n["lambda_birth"] = node.lambda_birth;
    n["lambda_death"] = node.lambda_death;
    n["member_count"] = node.size;
    n["departures"] = node.departures.size();
    n["kappa"] = stab.kappa;
    n["lambda_start"] = stab.lambda_start;
    n["lambda_end"] = stab.lambda_end;
    n["birth_death_span"] = node.lambda_death - node.lambda_birth;
    n["summed_stability"] = summed_stability(tree, node.id);
    nodes.push_back(std::move(n));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

} // namespace flare
