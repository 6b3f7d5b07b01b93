#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "flare/density_cluster.hpp"
#include "flare/error.hpp"
#include "flare/rng.hpp"
#include "support/oracles.hpp"

using namespace flare;

namespace {

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected flare::Error");
  return ErrorCode::InvalidArgument;
}

oracle::Points to_points(const Matrix& m) {
  oracle::Points p(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) p[i].assign(m.row(i).begin(), m.row(i).end());
  return p;
}

Matrix blobs(std::size_t per_blob, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(2 * per_blob, 2);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    m(i, 0) = rng.normal() * 0.5 + (i < per_blob ? 0.0 : gap);
    m(i, 1) = rng.normal() * 0.5;
  }
  return m;
}

std::vector<oracle::Edge> to_oracle(const std::vector<MstEdge>& mst) {
  std::vector<oracle::Edge> out;
  for (const auto& e : mst) out.push_back({e.a, e.b, e.weight});
  return out;
}

CondensedTree tree_for(const Matrix& pts, std::size_t min_pts, std::size_t mcs) {
  const auto reach = mutual_reachability(pts, min_pts);
  return condense(build_mst(reach), pts.rows(), mcs);
}

// Each tree node's point set must appear in the replay with the same kappa,
// birth and children count.
void check_against_replay(const Matrix& pts, std::size_t min_pts, std::size_t mcs) {
  const auto reach = mutual_reachability(pts, min_pts);
  const auto mst = build_mst(reach);
  const auto tree = condense(mst, pts.rows(), mcs);
  const auto replay = oracle::replay(pts.rows(), to_oracle(mst), mcs);
  REQUIRE(tree.cluster_count() == replay.size());
  std::map<std::set<std::size_t>, const oracle::ReplayCluster*> by_points;
  for (const auto& c : replay) by_points[c.points] = &c;
  for (const auto& node : tree.nodes()) {
    const auto m = tree.members(node.id);
    const std::set<std::size_t> key(m.begin(), m.end());
    REQUIRE(by_points.count(key) == 1);
    const auto& c = *by_points[key];
    CHECK(node.children.size() == c.children.size());
    CHECK(node.lambda_birth == c.birth);
    CHECK(node.departures.size() == c.departures.size());
    CHECK(kappa(tree, node.id).kappa == oracle::replay_kappa(c));
  }
}

} // namespace

TEST_CASE("mutual reachability") {
  SUBCASE("identical points") {
    const Matrix same(4, 2, 1.5);
    const auto r = mutual_reachability(same, 2);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(r(i, j) == 0.0);
  }
  SUBCASE("hand case") {
    const Matrix pts(4, 1, std::vector<double>{0.0, 1.0, 2.0, 10.0});
    const auto r = mutual_reachability(pts, 2);
    CHECK(r.core_distances()[0] == 2.0);
    CHECK(r.core_distances()[1] == 1.0);
    CHECK(r.core_distances()[2] == 2.0);
    CHECK(r.core_distances()[3] == 9.0);
    CHECK(r(0, 1) == 2.0);
    CHECK(r(1, 2) == 2.0);
    CHECK(r(0, 2) == 2.0);
    CHECK(r(2, 3) == 9.0);
    CHECK(r(0, 3) == 10.0);
  }
  SUBCASE("matches the dense oracle and dominates distance") {
    Rng rng(4);
    Matrix pts(30, 3);
    for (double& v : pts.data()) v = rng.normal();
    const auto expect = oracle::reachability(to_points(pts), 5);
    for (unsigned threads : {1u, 2u}) {
      const auto r = mutual_reachability(pts, 5, threads);
      for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < 30; ++j) {
          if (i == j) continue;
          CHECK(r(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-12));
          CHECK(r(i, j) >= r.distance(i, j));
          CHECK(r(i, j) == r(j, i));
        }
    }
  }
  SUBCASE("min_pts range") {
    const Matrix pts(5, 2, 0.0);
    CHECK(code_of([&] { mutual_reachability(pts, 5); }) == ErrorCode::MinPtsTooLarge);
    CHECK(code_of([&] { mutual_reachability(pts, 0); }) == ErrorCode::MinPtsTooLarge);
  }
}

TEST_CASE("minimum spanning tree") {
  SUBCASE("points on a path") {
    const Matrix pts(4, 1, std::vector<double>{0.0, 1.0, 3.0, 6.0});
    const auto mst = build_mst(mutual_reachability(pts, 1));
    CHECK(mst == std::vector<MstEdge>{{0, 1, 1.0}, {1, 2, 2.0}, {2, 3, 3.0}});
  }
  SUBCASE("two points") {
    const Matrix pts(2, 1, std::vector<double>{0.0, 4.0});
    const auto mst = build_mst(mutual_reachability(pts, 1));
    CHECK(mst == std::vector<MstEdge>{{0, 1, 4.0}});
  }
  SUBCASE("total weight equals Kruskal") {
    Rng rng(12);
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t n = 3 + rng.below(30);
      Matrix pts(n, 2);
      for (double& v : pts.data()) v = rng.uniform(-5, 5);
      const std::size_t min_pts = 1 + rng.below(std::min<std::size_t>(n - 1, 6));
      const auto reach = mutual_reachability(pts, min_pts);
      const auto mst = build_mst(reach);
      REQUIRE(mst.size() == n - 1);
      CHECK(std::is_sorted(mst.begin(), mst.end(), [](const MstEdge& x, const MstEdge& y) {
        return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
      }));
      std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) dense[i][j] = reach(i, j);
      std::vector<double> got, want;
      for (const auto& e : mst) got.push_back(e.weight);
      for (const auto& e : oracle::kruskal(dense)) want.push_back(e.w);
      CHECK(oracle::total_weight(got) == oracle::total_weight(want));
    }
  }
}

TEST_CASE("single linkage merges in edge order") {
  const std::vector<MstEdge> mst = {{0, 1, 1.0}, {2, 3, 1.5}, {1, 2, 4.0}};
  const auto merges = single_linkage(mst, 4);
  REQUIRE(merges.size() == 3);
  CHECK(merges[0].size == 2);
  CHECK(merges[1].size == 2);
  CHECK(merges[2].distance == 4.0);
  CHECK(merges[2].size == 4);
  CHECK(std::set<std::uint32_t>{merges[2].left, merges[2].right} == std::set<std::uint32_t>{4, 5});

  const std::vector<MstEdge> zeros = {{0, 1, 0.0}, {1, 2, 0.5}};
  CHECK(zero_distance_epsilon(single_linkage(zeros, 3)) == doctest::Approx(5e-4));
  const std::vector<MstEdge> all_zero = {{0, 1, 0.0}};
  CHECK(zero_distance_epsilon(single_linkage(all_zero, 2)) == 1e-3);
}

TEST_CASE("condensed tree on two blobs") {
  const auto pts = blobs(20, 8.0, 1);
  const auto tree = tree_for(pts, 5, 5);
  const auto split = root_split(tree);
  REQUIRE(split.has_value());
  auto a = tree.members(split->first);
  auto b = tree.members(split->second);
  if (a.front() != 0) std::swap(a, b);
  std::vector<std::uint32_t> first(20), second(20);
  std::iota(first.begin(), first.end(), 0u);
  std::iota(second.begin(), second.end(), 20u);
  CHECK(a == first);
  CHECK(b == second);
  CHECK(tree.node(split->first).parent == ClusterId{0});
  CHECK(tree.members(0).size() == 40);
}

TEST_CASE("condensed tree invariants") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix pts(60, 2);
    for (std::size_t i = 0; i < 60; ++i) {
      const double cx = static_cast<double>(i % 3) * 4.0;
      pts(i, 0) = cx + rng.normal();
      pts(i, 1) = rng.normal();
    }
    const auto tree = tree_for(pts, 4, 5);
    CHECK(tree.point_count() == 60);
    for (const auto& node : tree.nodes()) {
      // conservation: size at birth = direct departures + children sizes
      std::size_t total = node.departures.size();
      for (auto c : node.children) total += tree.node(c).size;
      CHECK(total == node.size);
      CHECK(tree.members(node.id).size() == node.size);
      CHECK(node.size >= (node.id == 0 ? 1 : tree.min_cluster_size()));
      // lambdas never decrease going down
      for (const auto& d : node.departures) CHECK(d.lambda >= node.lambda_birth);
      for (auto c : node.children) CHECK(tree.node(c).lambda_birth >= node.lambda_birth);
      CHECK(node.children.size() != 1);
      const auto k = kappa(tree, node.id);
      CHECK(k.kappa >= 0.0);
      CHECK(k.kappa == k.lambda_end - k.lambda_start);
    }
    check_against_replay(pts, 4, 5);
  }
}

TEST_CASE("condensed tree against the replay oracle") {
  check_against_replay(blobs(20, 8.0, 1), 5, 5);
  check_against_replay(blobs(30, 3.0, 2), 10, 10);
  Rng rng(77);
  Matrix noise(80, 2);
  for (double& v : noise.data()) v = rng.uniform(0, 10);
  check_against_replay(noise, 3, 4);
}

TEST_CASE("no split cases") {
  SUBCASE("min cluster size above N") {
    const auto tree = tree_for(blobs(10, 8.0, 3), 3, 50);
    CHECK(tree.cluster_count() == 1);
    CHECK_FALSE(root_split(tree).has_value());
    CHECK(tree.node(0).departures.size() == 20);
  }
  SUBCASE("equally spaced line") {
    Matrix line(30, 1);
    for (std::size_t i = 0; i < 30; ++i) line(i, 0) = static_cast<double>(i);
    const auto tree = tree_for(line, 2, 5);
    CHECK_FALSE(root_split(tree).has_value());
    // the two end points have core distance 2, everything else 1
    CHECK(kappa(tree, 0).lambda_start == 0.5);
    CHECK(kappa(tree, 0).kappa == 0.5);
  }
  SUBCASE("duplicates") {
    const Matrix same(12, 2, 3.0);
    const auto tree = tree_for(same, 3, 4);
    CHECK_FALSE(root_split(tree).has_value());
    for (const auto& d : tree.node(0).departures) CHECK(std::isfinite(d.lambda));
  }
}

TEST_CASE("kappa on a hand built tree") {
  const std::vector<CondensedRow> rows = {
      {0, 0, true, 0.5, 1}, {0, 1, true, 0.8, 1}, {0, 2, true, 1.2, 1}};
  const CondensedTree tree(3, 2, rows);
  const auto k = kappa(tree, 0);
  CHECK(k.lambda_start == 0.5);
  CHECK(k.lambda_end == 1.2);
  CHECK(k.kappa == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(summed_stability(tree, 0) == doctest::Approx(2.5));

  SUBCASE("a split counts at the dividing lambda") {
    const std::vector<CondensedRow> nested = {
        {0, 0, true, 0.3, 1}, {0, 1, false, 0.9, 2}, {0, 2, false, 0.9, 2},
        {1, 1, true, 2.0, 1}, {1, 2, true, 2.5, 1},  {2, 3, true, 1.0, 1}, {2, 4, true, 1.0, 1}};
    const CondensedTree t(5, 2, nested);
    CHECK(kappa(t, 0).kappa == doctest::Approx(0.6));
    CHECK(kappa(t, 1).kappa == doctest::Approx(0.5));
    CHECK(kappa(t, 2).kappa == 0.0);
    CHECK(t.members(0) == std::vector<std::uint32_t>{0, 1, 2, 3, 4});
    CHECK(t.members(2) == std::vector<std::uint32_t>{3, 4});
    const auto desc = t.descendants(0, 1);
    CHECK(desc.size() == 3);
    CHECK(t.descendants(1, 3).size() == 1);
    const auto j = tree_to_json(t);
    CHECK(j["nodes"].size() == 3);
  }
  SUBCASE("unknown ids") {
    CHECK(code_of([&] { tree.node(4); }) == ErrorCode::UnknownCluster);
    CHECK(code_of([&] { kappa(tree, 1); }) == ErrorCode::UnknownCluster);
    const std::vector<CondensedRow> dangling = {{3, 0, true, 1.0, 1}};
    CHECK(code_of([&] { CondensedTree(1, 2, dangling); }) == ErrorCode::UnknownCluster);
  }
}

TEST_CASE("condense argument checks") {
  const std::vector<MstEdge> mst = {{0, 1, 1.0}};
  CHECK(code_of([&] { condense(mst, 2, 1); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { condense(mst, 3, 2); }) == ErrorCode::InvalidArgument);
}
