#include "flare/flare.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "flare/error.hpp"
#include "flare/purifier.hpp"

struct flare_dump {
  flare::DumpManifest manifest;
};

struct flare_report {
  flare::DetectionReport report;
};

namespace {

thread_local std::string last_error;

flare_status fail(flare_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename Fn>
flare_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return FLARE_OK;
  } catch (const flare::Error& e) {
    return fail(static_cast<flare_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(FLARE_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(FLARE_INTERNAL_ERROR, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw flare::Error(flare::ErrorCode::InvalidArgument, what);
}

flare::DetectConfig to_core(const flare_config& c) {
  require(c.align == FLARE_ALIGN_DENSITY || c.align == FLARE_ALIGN_LITERAL_EQ2, "unknown align mode");
  flare::DetectConfig out;
  out.xi = c.xi;
  out.depth = c.depth;
  out.manifold.dims = c.dims;
  out.manifold.neighbors = c.neighbors;
  out.manifold.min_dist = c.min_dist;
  out.manifold.epochs = c.epochs;
  out.manifold.negative_sample_rate = c.negative_sample_rate;
  out.manifold.learning_rate = c.learning_rate;
  out.cluster.min_pts = c.min_pts;
  out.cluster.min_cluster_size = c.min_cluster_size;
  out.align = c.align == FLARE_ALIGN_DENSITY ? flare::AlignMode::Density : flare::AlignMode::LiteralEq2;
  out.deterministic = c.deterministic != 0;
  out.threads = c.threads;
  out.seed = c.seed;
  return out;
}

flare_config from_core(const flare::DetectConfig& c) {
  flare_config out;
  out.xi = c.xi;
  out.depth = static_cast<uint32_t>(c.depth);
  out.dims = static_cast<uint32_t>(c.manifold.dims);
  out.neighbors = static_cast<uint32_t>(c.manifold.neighbors);
  out.min_dist = c.manifold.min_dist;
  out.epochs = static_cast<uint32_t>(c.manifold.epochs);
  out.negative_sample_rate = c.manifold.negative_sample_rate;
  out.learning_rate = c.manifold.learning_rate;
  out.min_pts = static_cast<uint32_t>(c.cluster.min_pts);
  out.min_cluster_size = static_cast<uint32_t>(c.cluster.min_cluster_size);
  out.align = c.align == flare::AlignMode::Density ? FLARE_ALIGN_DENSITY : FLARE_ALIGN_LITERAL_EQ2;
  out.deterministic = c.deterministic ? 1 : 0;
  out.threads = c.threads;
  out.seed = c.seed;
  return out;
}

void write_text(const flare::fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw flare::Error(flare::ErrorCode::IoFailure, "cannot write " + path.string());
}

} // namespace

extern "C" {

const char* flare_version(void) { return "0.1.0"; }

const char* flare_status_name(flare_status status) {
  if (status == FLARE_OK) return "Ok";
  if (status == FLARE_INTERNAL_ERROR) return "InternalError";
  if (status >= FLARE_MISSING_FILE && status <= FLARE_MISSING_ARTIFACT)
    return flare::to_string(static_cast<flare::ErrorCode>(status));
  return "Unknown";
}

const char* flare_last_error(void) { return last_error.c_str(); }

void flare_config_init(flare_config* config) {
  if (config) *config = from_core(flare::DetectConfig{});
}

void flare_synth_params_init(flare_synth_params* params) {
  if (!params) return;
  const flare::SynthSpec d;
  params->samples = d.samples;
  params->channels = nullptr;
  params->layer_count = 0;
  params->height = d.height;
  params->width = d.width;
  params->classes = d.classes;
  params->target_label = d.target_label;
  params->poison_rate = d.poison_rate;
  params->benign_spread = d.benign_spread;
  params->poison_spread = d.poison_spread;
  params->trigger_level = d.trigger_level;
  params->poison_channels = d.poison_channels;
  params->staged_layers = d.staged_layers;
  params->class_separation = d.class_separation;
}

flare_status flare_synth(const flare_synth_params* params, uint64_t seed, const char* dir) {
  return guarded([&] {
    require(params && dir, "null argument");
    flare::SynthSpec spec;
    spec.samples = params->samples;
    if (params->channels) spec.channels.assign(params->channels, params->channels + params->layer_count);
    spec.height = params->height;
    spec.width = params->width;
    spec.classes = params->classes;
    spec.target_label = params->target_label;
    spec.poison_rate = params->poison_rate;
    spec.benign_spread = params->benign_spread;
    spec.poison_spread = params->poison_spread;
    spec.trigger_level = params->trigger_level;
    spec.poison_channels = params->poison_channels;
    spec.staged_layers = params->staged_layers;
    spec.class_separation = params->class_separation;
    flare::synth_dump(spec, seed, dir);
  });
}

flare_status flare_dump_open(const char* dir, flare_dump** out) {
  return guarded([&] {
    require(dir && out, "null argument");
    *out = nullptr;
    auto dump = std::make_unique<flare_dump>();
    dump->manifest = flare::read_dump(dir);
    *out = dump.release();
  });
}

void flare_dump_free(flare_dump* dump) { delete dump; }

uint64_t flare_dump_sample_count(const flare_dump* dump) { return dump ? dump->manifest.sample_count : 0; }

size_t flare_dump_layer_count(const flare_dump* dump) { return dump ? dump->manifest.layer_count() : 0; }

uint32_t flare_dump_class_count(const flare_dump* dump) { return dump ? dump->manifest.class_count : 0; }

int flare_dump_has_truth(const flare_dump* dump) {
  return dump && dump->manifest.truth_flags.has_value() ? 1 : 0;
}

flare_status flare_detect(const flare_dump* dump, const flare_config* config, flare_report** out) {
  return guarded([&] {
    require(dump && config && out, "null argument");
    *out = nullptr;
    auto report = std::make_unique<flare_report>();
    report->report = flare::detect(dump->manifest, to_core(*config));
    *out = report.release();
  });
}

flare_status flare_report_read(const char* path, flare_report** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = nullptr;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw flare::Error(flare::ErrorCode::MissingArtifact, std::string("no report at ") + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw flare::Error(flare::ErrorCode::InvalidArgument,
                         std::string(path) + ": malformed report: " + e.what());
    }
    auto report = std::make_unique<flare_report>();
    report->report = flare::report_from_json(j);
    *out = report.release();
  });
}

flare_status flare_report_write(const flare_report* report, const char* path) {
  return guarded([&] {
    require(report && path, "null argument");
    write_text(path, flare::report_to_json(report->report).dump(2) + "\n");
  });
}

void flare_report_free(flare_report* report) { delete report; }

uint64_t flare_report_sample_count(const flare_report* report) {
  return report ? report->report.sample_count : 0;
}

size_t flare_report_chosen_k(const flare_report* report) { return report ? report->report.selection.k : 0; }

int flare_report_used_fallback(const flare_report* report) {
  return report && report->report.selection.fallback ? 1 : 0;
}

int flare_report_guard_triggered(const flare_report* report) {
  return report && report->report.decision.guard_triggered ? 1 : 0;
}

size_t flare_report_poisoned_count(const flare_report* report) {
  return report ? report->report.decision.poisoned.size() : 0;
}

size_t flare_report_poisoned_ids(const flare_report* report, uint32_t* ids, size_t capacity) {
  if (!report) return 0;
  const auto& p = report->report.decision.poisoned;
  if (ids) std::copy_n(p.begin(), std::min(capacity, p.size()), ids);
  return p.size();
}

flare_status flare_report_metrics(const flare_report* report, double* tpr, double* fpr) {
  if (!report || !tpr || !fpr) return fail(FLARE_INVALID_ARGUMENT, "null argument");
  if (!report->report.rates) return fail(FLARE_MISSING_ARTIFACT, "report has no ground-truth metrics");
  *tpr = report->report.rates->tpr;
  *fpr = report->report.rates->fpr;
  last_error.clear();
  return FLARE_OK;
}

flare_status flare_report_config(const flare_report* report, flare_config* config) {
  if (!report || !config) return fail(FLARE_INVALID_ARGUMENT, "null argument");
  *config = from_core(report->report.config);
  last_error.clear();
  return FLARE_OK;
}

flare_status flare_evaluate(const flare_report* report, const flare_dump* dump, double* tpr, double* fpr) {
  return guarded([&] {
    require(report && dump && tpr && fpr, "null argument");
    const auto& truth = dump->manifest.truth_flags;
    if (!truth) throw flare::Error(flare::ErrorCode::MissingArtifact, "dump has no truth_flags");
    if (report->report.sample_count != truth->size())
      throw flare::Error(flare::ErrorCode::LengthMismatch,
                         "report covers " + std::to_string(report->report.sample_count) +
                             " samples, truth has " + std::to_string(truth->size()));
    const auto rates = flare::evaluate(report->report.decision.poisoned, *truth);
    *tpr = rates.tpr;
    *fpr = rates.fpr;
  });
}

flare_status flare_inspect(const char* dump_dir, const char* report_path, const flare_config* config,
                           const char* out_dir) {
  return guarded([&] {
    require(dump_dir && out_dir, "null argument");
    require(report_path || config, "either a report or a configuration is required");
    if (!flare::fs::is_directory(dump_dir))
      throw flare::Error(flare::ErrorCode::MissingArtifact, std::string("no dump at ") + dump_dir);

    flare::DetectConfig cfg;
    if (report_path) {
      flare_report* report = nullptr;
      if (!flare::fs::exists(report_path))
        throw flare::Error(flare::ErrorCode::MissingArtifact, std::string("no report at ") + report_path);
      if (auto st = flare_report_read(report_path, &report); st != FLARE_OK)
        throw flare::Error(static_cast<flare::ErrorCode>(st), last_error);
      cfg = report->report.config;
      flare_report_free(report);
    } else {
      cfg = to_core(*config);
    }

    const auto manifest = flare::read_dump(dump_dir);
    const auto run = flare::detect_run(manifest, cfg);

    const flare::fs::path out(out_dir);
    std::error_code ec;
    flare::fs::create_directories(out, ec);
    if (ec) throw flare::Error(flare::ErrorCode::IoFailure, "cannot create " + out.string());

    const auto& coords = run.clustering.embedding.coords;
    std::string csv = "x,y,truth_flag\n";
    char line[96];
    for (std::size_t i = 0; i < coords.rows(); ++i) {
      const double x = coords(i, 0);
      const double y = coords.cols() > 1 ? coords(i, 1) : 0.0;
      const int flag = manifest.truth_flags ? (*manifest.truth_flags)[i] : 0;
      std::snprintf(line, sizeof line, "%.9g,%.9g,%d\n", x, y, flag);
      csv += line;
    }
    write_text(out / "embedding.csv", csv);

    flare::TensorBlock block;
    block.shape = {coords.rows(), coords.cols()};
    block.values.reserve(coords.rows() * coords.cols());
    for (std::size_t i = 0; i < coords.rows(); ++i)
      for (std::size_t j = 0; j < coords.cols(); ++j) block.values.push_back(static_cast<float>(coords(i, j)));
    flare::write_tensor(out / "embedding.fltd", block);

    auto tree = flare::tree_to_json(run.clustering.tree);
    nlohmann::ordered_json doc;
    doc["chosen_k"] = run.clustering.k;
    doc["tree"] = std::move(tree);
    write_text(out / "condensed_tree.json", doc.dump(2) + "\n");

    flare::write_representations(out / "representations.fltd", run.representations);
  });
}

flare_status flare_validate(const char* dir) {
  return guarded([&] {
    require(dir, "null argument");
    flare::read_dump(dir);
  });
}

} // extern "C"
