#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flare/density_cluster.hpp"
#include "flare/manifold.hpp"
#include "flare/represent.hpp"
#include "flare/tensor_store.hpp"
#include "json.hpp"

namespace flare {

struct ManifoldConfig {
  std::size_t dims = 2;
  std::size_t neighbors = 15;
  double min_dist = 0.1;
  std::size_t epochs = 200;
  double negative_sample_rate = 5.0;
  double learning_rate = 1.0;
};

struct ClusterConfig {
  std::size_t min_pts = 10;
  /// 0 selects max(ceil(0.01 N), 10).
  std::size_t min_cluster_size = 0;

  std::size_t resolve_min_cluster_size(std::size_t n) const;
};

struct DetectConfig {
  double xi = 0.02;
  std::size_t depth = 3;
  ManifoldConfig manifold;
  ClusterConfig cluster;
  AlignMode align = AlignMode::Density;
  bool deterministic = true;
  unsigned threads = 1;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument on out-of-range values.
  void validate() const;
};

/// Embedding plus condensed tree for one truncation depth.
struct SubspaceClustering {
  std::size_t k = 0;
  Embedding embedding;
  CondensedTree tree;
  std::optional<RootSplit> split;
};

/// Reduces and clusters an already-truncated representation matrix.
SubspaceClustering cluster_subspace(const RepresentationMatrix& reps, const DetectConfig& config);

struct SubspaceVerdict {
  std::size_t k = 0;
  bool stable = false;
  bool split = false;
  double kappa_large = 0.0;
  std::optional<ClusterId> witness;
  std::optional<std::size_t> witness_depth; // 0 = the larger root child itself
};

/// Stable iff the larger root child or one of its descendants within
/// config.depth levels has kappa > config.xi. No split => unstable, kappa 0.
SubspaceVerdict judge_subspace(const SubspaceClustering& clustering, const DetectConfig& config);

/// Truncates `full` (k = 0 representations) by k layers, clusters and judges.
SubspaceVerdict assess_subspace(const RepresentationMatrix& full, std::size_t k,
                                const DetectConfig& config);
SubspaceVerdict assess_subspace(const DumpManifest& manifest, std::size_t k,
                                const DetectConfig& config);

struct SubspaceSelection {
  std::size_t k = 0;
  bool fallback = false;
  std::vector<SubspaceVerdict> verdicts; // in evaluation order, k ascending
};

/// Smallest stable k in 0..L-1; without one, the evaluated k with the largest
/// kappa_large (lowest k on ties) and fallback = true.
SubspaceSelection select_subspace(const RepresentationMatrix& full, const DetectConfig& config);
SubspaceSelection select_subspace(const DumpManifest& manifest, const DetectConfig& config);

struct ClusterSummary {
  ClusterId id = 0;
  std::size_t size = 0;
  ClusterStability stability;
};

struct PoisonDecision {
  std::optional<ClusterSummary> first;
  std::optional<ClusterSummary> second;
  std::optional<ClusterId> candidate;
  bool tie = false;
  bool guard_triggered = false;
  std::string guard_reason;
  std::vector<std::uint32_t> poisoned;
};

/// Picks the higher-kappa root child (smaller one on ties) and applies the
/// no-split and majority guards.
PoisonDecision decide_poisoned(const CondensedTree& tree);

struct Rates {
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Throws LengthMismatch if an id is out of range for truth.
Rates evaluate(std::span<const std::uint32_t> predicted, std::span<const std::uint8_t> truth);

struct DetectionReport {
  std::uint64_t sample_count = 0;
  std::size_t layer_count = 0;
  DetectConfig config;
  SubspaceSelection selection;
  PoisonDecision decision;
  std::optional<Rates> rates;
};

struct DetectionRun {
  DetectionReport report;
  SubspaceClustering clustering; // at the chosen k
  RepresentationMatrix representations; // full depth
};

DetectionRun detect_run(const DumpManifest& manifest, const DetectConfig& config);
DetectionReport detect(const DumpManifest& manifest, const DetectConfig& config);

nlohmann::ordered_json config_to_json(const DetectConfig& config);
DetectConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json report_to_json(const DetectionReport& report);
DetectionReport report_from_json(const nlohmann::json& j);

} // namespace flare
