#include "flare/error.hpp"
#include "flare/purifier.hpp"

namespace flare {

namespace {

using ojson = nlohmann::ordered_json;

template <typename T>
ojson optional_json(const std::optional<T>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

ojson summary_json(const ClusterSummary& c) {
  ojson j;
  j["id"] = c.id;
  j["size"] = c.size;
  j["kappa"] = c.stability.kappa;
  j["lambda_start"] = c.stability.lambda_start;
  j["lambda_end"] = c.stability.lambda_end;
  return j;
}

ClusterSummary summary_from(const nlohmann::json& j) {
  ClusterSummary c;
  c.id = j.at("id").get<ClusterId>();
  c.size = j.at("size").get<std::size_t>();
  c.stability.cluster = c.id;
  c.stability.kappa = j.at("kappa").get<double>();
  c.stability.lambda_start = j.at("lambda_start").get<double>();
  c.stability.lambda_end = j.at("lambda_end").get<double>();
  return c;
}

} // namespace

ojson config_to_json(const DetectConfig& c) {
  ojson j;
  j["xi"] = c.xi;
  j["depth"] = c.depth;
  j["dims"] = c.manifold.dims;
  j["neighbors"] = c.manifold.neighbors;
  j["min_dist"] = c.manifold.min_dist;
  j["epochs"] = c.manifold.epochs;
  j["negative_sample_rate"] = c.manifold.negative_sample_rate;
  j["learning_rate"] = c.manifold.learning_rate;
  j["min_pts"] = c.cluster.min_pts;
  j["min_cluster_size"] = c.cluster.min_cluster_size;
  j["align"] = to_string(c.align);
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  j["seed"] = c.seed;
  return j;
}

DetectConfig config_from_json(const nlohmann::json& j) {
  DetectConfig c;
  c.xi = j.at("xi").get<double>();
  c.depth = j.at("depth").get<std::size_t>();
  c.manifold.dims = j.at("dims").get<std::size_t>();
  c.manifold.neighbors = j.at("neighbors").get<std::size_t>();
  c.manifold.min_dist = j.at("min_dist").get<double>();
  c.manifold.epochs = j.at("epochs").get<std::size_t>();
  c.manifold.negative_sample_rate = j.at("negative_sample_rate").get<double>();
  c.manifold.learning_rate = j.at("learning_rate").get<double>();
  c.cluster.min_pts = j.at("min_pts").get<std::size_t>();
  c.cluster.min_cluster_size = j.at("min_cluster_size").get<std::size_t>();
  c.align = align_mode_from_string(j.at("align").get<std::string>());
  c.deterministic = j.at("deterministic").get<bool>();
  c.threads = j.at("threads").get<unsigned>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

ojson report_to_json(const DetectionReport& r) {
  ojson j;
  j["format"] = "flare-detection-report";
  j["version"] = 1;
  j["sample_count"] = r.sample_count;
  j["layer_count"] = r.layer_count;
  j["seed"] = r.config.seed;
  j["config"] = config_to_json(r.config);
  j["min_cluster_size_used"] = r.config.cluster.resolve_min_cluster_size(r.sample_count);

  ojson sub;
  sub["chosen_k"] = r.selection.k;
  sub["fallback"] = r.selection.fallback;
  auto verdicts = ojson::array();
  for (const auto& v : r.selection.verdicts) {
    ojson vj;
    vj["k"] = v.k;
    vj["split"] = v.split;
    vj["stable"] = v.stable;
    vj["kappa_large"] = v.kappa_large;
    vj["witness"] = optional_json(v.witness);
    vj["witness_depth"] = optional_json(v.witness_depth);
    verdicts.push_back(std::move(vj));
  }
  sub["verdicts"] = std::move(verdicts);
  j["subspace"] = std::move(sub);

  const auto& d = r.decision;
  auto clusters = ojson::array();
  if (d.first) clusters.push_back(summary_json(*d.first));
  if (d.second) clusters.push_back(summary_json(*d.second));
  j["clusters"] = std::move(clusters);
  j["poisoned_cluster"] = optional_json(d.candidate);
  j["tie"] = d.tie;
  j["guard"] = {{"triggered", d.guard_triggered}, {"reason", d.guard_reason}};
  j["poisoned_count"] = d.poisoned.size();
  j["poisoned"] = d.poisoned;
  if (r.rates)
    j["metrics"] = {{"tpr", r.rates->tpr}, {"fpr", r.rates->fpr}};
  else
    j["metrics"] = nullptr;
  return j;
}

DetectionReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "flare-detection-report")
      throw Error(ErrorCode::InvalidArgument, "not a detection report");
    DetectionReport r;
    r.sample_count = j.at("sample_count").get<std::uint64_t>();
    r.layer_count = j.at("layer_count").get<std::size_t>();
    r.config = config_from_json(j.at("config"));

    const auto& sub = j.at("subspace");
    r.selection.k = sub.at("chosen_k").get<std::size_t>();
    r.selection.fallback = sub.at("fallback").get<bool>();
    for (const auto& vj : sub.at("verdicts")) {
      SubspaceVerdict v;
      v.k = vj.at("k").get<std::size_t>();
      v.split = vj.at("split").get<bool>();
      v.stable = vj.at("stable").get<bool>();
      v.kappa_large = vj.at("kappa_large").get<double>();
      v.witness = optional_from<ClusterId>(vj, "witness");
      v.witness_depth = optional_from<std::size_t>(vj, "witness_depth");
      r.selection.verdicts.push_back(v);
    }

    auto& d = r.decision;
    const auto& clusters = j.at("clusters");
    if (clusters.size() >= 1) d.first = summary_from(clusters[0]);
    if (clusters.size() >= 2) d.second = summary_from(clusters[1]);
    d.candidate = optional_from<ClusterId>(j, "poisoned_cluster");
    d.tie = j.at("tie").get<bool>();
    d.guard_triggered = j.at("guard").at("triggered").get<bool>();
    d.guard_reason = j.at("guard").at("reason").get<std::string>();
    d.poisoned = j.at("poisoned").get<std::vector<std::uint32_t>>();
    if (j.contains("metrics") && !j.at("metrics").is_null())
      r.rates = Rates{j.at("metrics").at("tpr").get<double>(), j.at("metrics").at("fpr").get<double>()};
    for (auto id : d.poisoned)
      if (id >= r.sample_count)
        throw Error(ErrorCode::InvalidArgument, "poisoned id " + std::to_string(id) + " out of range");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed report: ") + e.what());
  }
}

} // namespace flare
