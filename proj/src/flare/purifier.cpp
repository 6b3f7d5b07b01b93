#include "flare/purifier.hpp"

#include <algorithm>
#include <cmath>

#include "flare/error.hpp"

namespace flare {

namespace {

struct Candidate {
  SubspaceVerdict verdict;
  SubspaceClustering clustering;
};

Candidate assess(const RepresentationMatrix& full, std::size_t k, const DetectConfig& config) {
  if (k >= full.spans.size())
    throw Error(ErrorCode::TruncationOutOfRange, "k=" + std::to_string(k) + " with L=" +
                                                     std::to_string(full.spans.size()));
  auto clustering = cluster_subspace(k == 0 ? full : full.truncated(k), config);
  clustering.k = k;
  auto verdict = judge_subspace(clustering, config);
  return {verdict, std::move(clustering)};
}

struct Selection {
  SubspaceSelection summary;
  SubspaceClustering chosen;
};

Selection select(const RepresentationMatrix& full, const DetectConfig& config) {
  Selection out;
  std::optional<Candidate> best;
  for (std::size_t k = 0; k < full.spans.size(); ++k) {
    auto cand = assess(full, k, config);
    out.summary.verdicts.push_back(cand.verdict);
    if (cand.verdict.stable) {
      out.summary.k = k;
      out.chosen = std::move(cand.clustering);
      return out;
    }
    if (!best || cand.verdict.kappa_large > best->verdict.kappa_large) best = std::move(cand);
  }
  out.summary.fallback = true;
  out.summary.k = best->verdict.k;
  out.chosen = std::move(best->clustering);
  return out;
}

ClusterSummary summarize(const CondensedTree& tree, ClusterId id) {
  return {id, tree.node(id).size, kappa(tree, id)};
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

} // namespace

std::size_t ClusterConfig::resolve_min_cluster_size(std::size_t n) const {
  if (min_cluster_size != 0) return min_cluster_size;
  const auto one_percent = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n)));
  return std::max<std::size_t>(one_percent, 10);
}

void DetectConfig::validate() const {
  require(xi > 0.0, "xi must be positive");
  require(manifold.dims >= 1, "dims must be >= 1");
  require(manifold.neighbors >= 1, "neighbors must be >= 1");
  require(manifold.min_dist >= 0.0 && std::isfinite(manifold.min_dist), "min_dist must be >= 0");
  require(manifold.epochs >= 1, "epochs must be >= 1");
  require(manifold.negative_sample_rate > 0.0, "negative_sample_rate must be positive");
  require(manifold.learning_rate > 0.0, "learning_rate must be positive");
  require(cluster.min_pts >= 1, "min_pts must be >= 1");
  require(cluster.min_cluster_size == 0 || cluster.min_cluster_size >= 2,
          "min_cluster_size must be 0 (auto) or >= 2");
  require(threads >= 1, "threads must be >= 1");
}

SubspaceClustering cluster_subspace(const RepresentationMatrix& reps, const DetectConfig& config) {
  const std::size_t n = reps.rows();
  const auto graph = knn(reps.values, config.manifold.neighbors, config.threads);
  const auto fuzzy = smooth_memberships(graph, config.threads);

  EmbedParams params;
  params.dims = config.manifold.dims;
  params.epochs = config.manifold.epochs;
  params.min_dist = config.manifold.min_dist;
  params.negative_sample_rate = config.manifold.negative_sample_rate;
  params.learning_rate = config.manifold.learning_rate;
  params.deterministic = config.deterministic;
  params.threads = config.threads;
  auto embedding = embed(fuzzy, params, config.seed);

  const auto reach = mutual_reachability(embedding.coords, config.cluster.min_pts, config.threads);
  const auto mst = build_mst(reach);
  auto tree = condense(mst, n, config.cluster.resolve_min_cluster_size(n));
  auto split = root_split(tree);
  return {reps.truncation, std::move(embedding), std::move(tree), split};
}

SubspaceVerdict judge_subspace(const SubspaceClustering& clustering, const DetectConfig& config) {
  SubspaceVerdict verdict;
  verdict.k = clustering.k;
  if (!clustering.split) return verdict;
  verdict.split = true;

  const auto& tree = clustering.tree;
  const auto [a, b] = *clustering.split;
  const ClusterId large = tree.node(b).size > tree.node(a).size ? b : a;
  verdict.kappa_large = kappa(tree, large).kappa;
  for (const auto& [id, depth] : tree.descendants(large, config.depth)) {
    if (kappa(tree, id).kappa > config.xi) {
      verdict.stable = true;
      verdict.witness = id;
      verdict.witness_depth = depth;
      break;
    }
  }
  return verdict;
}

SubspaceVerdict assess_subspace(const RepresentationMatrix& full, std::size_t k,
                                const DetectConfig& config) {
  config.validate();
  return assess(full, k, config).verdict;
}

SubspaceVerdict assess_subspace(const DumpManifest& manifest, std::size_t k,
                                const DetectConfig& config) {
  config.validate();
  if (k >= manifest.layer_count())
    throw Error(ErrorCode::TruncationOutOfRange, "k=" + std::to_string(k) + " with L=" +
                                                     std::to_string(manifest.layer_count()));
  const auto reps = build_representations(manifest, k, config.align, config.threads);
  auto clustering = cluster_subspace(reps, config);
  return judge_subspace(clustering, config);
}

SubspaceSelection select_subspace(const RepresentationMatrix& full, const DetectConfig& config) {
  config.validate();
  return select(full, config).summary;
}

SubspaceSelection select_subspace(const DumpManifest& manifest, const DetectConfig& config) {
  config.validate();
  const auto full = build_representations(manifest, 0, config.align, config.threads);
  return select(full, config).summary;
}

PoisonDecision decide_poisoned(const CondensedTree& tree) {
  PoisonDecision d;
  const auto split = root_split(tree);
  if (!split) {
    d.guard_triggered = true;
    d.guard_reason = "root does not split into two clusters";
    return d;
  }
  d.first = summarize(tree, split->first);
  d.second = summarize(tree, split->second);
  const auto& c1 = *d.first;
  const auto& c2 = *d.second;
  if (c1.stability.kappa != c2.stability.kappa) {
    d.candidate = c1.stability.kappa > c2.stability.kappa ? c1.id : c2.id;
  } else {
    d.tie = true;
    d.candidate = c2.size < c1.size ? c2.id : c1.id;
  }

  auto members = tree.members(*d.candidate);
  const std::size_t n = tree.point_count();
  if (2 * members.size() > n) {
    d.guard_triggered = true;
    d.guard_reason = "candidate cluster holds " + std::to_string(members.size()) + " of " +
                     std::to_string(n) + " samples (more than half)";
    return d;
  }
  d.poisoned = std::move(members);
  return d;
}

Rates evaluate(std::span<const std::uint32_t> predicted, std::span<const std::uint8_t> truth) {
  const std::size_t n = truth.size();
  std::vector<char> flagged(n, 0);
  for (auto id : predicted) {
    if (id >= n)
      throw Error(ErrorCode::LengthMismatch, "predicted id " + std::to_string(id) +
                                                 " outside truth of length " + std::to_string(n));
    flagged[id] = 1;
  }
  std::size_t positives = 0, true_pos = 0, false_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    positives += truth[i] ? 1 : 0;
    if (flagged[i]) (truth[i] ? true_pos : false_pos) += 1;
  }
  const std::size_t negatives = n - positives;
  Rates r;
  // With no poison present there is nothing to miss.
  r.tpr = positives ? static_cast<double>(true_pos) / static_cast<double>(positives) : 1.0;
  r.fpr = negatives ? static_cast<double>(false_pos) / static_cast<double>(negatives) : 0.0;
  return r;
}

DetectionRun detect_run(const DumpManifest& manifest, const DetectConfig& config) {
  config.validate();
  DetectionRun run;
  run.representations = build_representations(manifest, 0, config.align, config.threads);
  auto selection = select(run.representations, config);

  auto& report = run.report;
  report.sample_count = manifest.sample_count;
  report.layer_count = manifest.layer_count();
  report.config = config;
  report.selection = std::move(selection.summary);
  report.decision = decide_poisoned(selection.chosen.tree);
  if (manifest.truth_flags) report.rates = evaluate(report.decision.poisoned, *manifest.truth_flags);
  run.clustering = std::move(selection.chosen);
  return run;
}

DetectionReport detect(const DumpManifest& manifest, const DetectConfig& config) {
  return detect_run(manifest, config).report;
}

} // namespace flare
