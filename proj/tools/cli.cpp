#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flare/flare.h"
#include "json.hpp"

namespace flare::cli {

namespace {

using json = nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LibraryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(flare_status st) {
  // The library message already leads with the status name.
  if (st != FLARE_OK) throw LibraryError(flare_last_error());
}

/// Everything `detect` and `inspect` consume. Each field has one config key
/// and one flag (the key with '_' replaced by '-').
struct Settings {
  flare_config config;
  std::string dump;
  std::string out;

  Settings() { flare_config_init(&config); }
};

enum class Kind { Real, Count, Seed, Text, Bool };

struct Key {
  const char* name;
  Kind kind;
  const char* help;
  std::function<void(Settings&, const json&)> apply;
};

std::uint64_t as_unsigned(const json& v, const std::string& key, std::uint64_t max) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw UsageError(key + " must be a non-negative integer");
  const auto x = v.get<std::uint64_t>();
  if (x > max) throw UsageError(key + " is too large");
  return x;
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw UsageError(key + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw UsageError(key + " must be finite");
  return x;
}

std::uint32_t count(const json& v, const std::string& key, std::uint32_t min) {
  const auto x = static_cast<std::uint32_t>(as_unsigned(v, key, std::numeric_limits<std::uint32_t>::max()));
  if (x < min) throw UsageError(key + " must be >= " + std::to_string(min));
  return x;
}

double positive(const json& v, const std::string& key) {
  const double x = as_real(v, key);
  if (!(x > 0.0)) throw UsageError(key + " must be positive");
  return x;
}

std::string text(const json& v, const std::string& key) {
  if (!v.is_string()) throw UsageError(key + " must be a string");
  return v.get<std::string>();
}

const char* type_label(Kind kind) {
  switch (kind) {
  case Kind::Real: return "NUM";
  case Kind::Count: return "UINT";
  case Kind::Seed: return "UINT";
  case Kind::Bool: return "BOOL";
  case Kind::Text: return "TEXT";
  }
  return "TEXT";
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"dump", Kind::Text, "activation dump directory",
       [](Settings& s, const json& v) { s.dump = text(v, "dump"); }},
      {"out", Kind::Text, "output path",
       [](Settings& s, const json& v) { s.out = text(v, "out"); }},
      {"xi", Kind::Real, "stability threshold (> 0, default 0.02)",
       [](Settings& s, const json& v) { s.config.xi = positive(v, "xi"); }},
      {"depth", Kind::Count, "condensed-tree search depth below the larger cluster (default 3)",
       [](Settings& s, const json& v) { s.config.depth = count(v, "depth", 0); }},
      {"dims", Kind::Count, "embedding dimension (>= 1, default 2)",
       [](Settings& s, const json& v) { s.config.dims = count(v, "dims", 1); }},
      {"neighbors", Kind::Count, "k-NN graph neighbours (>= 1, default 15)",
       [](Settings& s, const json& v) { s.config.neighbors = count(v, "neighbors", 1); }},
      {"min_dist", Kind::Real, "embedding min_dist (>= 0, default 0.1)",
       [](Settings& s, const json& v) {
         const double x = as_real(v, "min_dist");
         if (x < 0.0) throw UsageError("min_dist must be >= 0");
         s.config.min_dist = x;
       }},
      {"epochs", Kind::Count, "embedding epochs (>= 1, default 200)",
       [](Settings& s, const json& v) { s.config.epochs = count(v, "epochs", 1); }},
      {"negative_sample_rate", Kind::Real, "negative samples per positive edge (default 5)",
       [](Settings& s, const json& v) { s.config.negative_sample_rate = positive(v, "negative_sample_rate"); }},
      {"learning_rate", Kind::Real, "initial SGD learning rate (default 1)",
       [](Settings& s, const json& v) { s.config.learning_rate = positive(v, "learning_rate"); }},
      {"min_pts", Kind::Count, "core-distance neighbour rank (>= 1, default 10)",
       [](Settings& s, const json& v) { s.config.min_pts = count(v, "min_pts", 1); }},
      {"min_cluster_size", Kind::Count, "0 = max(ceil(0.01 N), 10), otherwise >= 2",
       [](Settings& s, const json& v) {
         const auto x = count(v, "min_cluster_size", 0);
         if (x == 1) throw UsageError("min_cluster_size must be 0 or >= 2");
         s.config.min_cluster_size = x;
       }},
      {"align", Kind::Text, "alignment: density (default) or literal-eq2",
       [](Settings& s, const json& v) {
         const auto name = text(v, "align");
         if (name == "density")
           s.config.align = FLARE_ALIGN_DENSITY;
         else if (name == "literal-eq2")
           s.config.align = FLARE_ALIGN_LITERAL_EQ2;
         else
           throw UsageError("align must be density or literal-eq2");
       }},
      {"deterministic", Kind::Bool, "single-threaded reproducible SGD (default true)",
       [](Settings& s, const json& v) {
         if (!v.is_boolean()) throw UsageError("deterministic must be true or false");
         s.config.deterministic = v.get<bool>() ? 1 : 0;
       }},
      {"threads", Kind::Count, "worker threads (>= 1, default 1)",
       [](Settings& s, const json& v) { s.config.threads = count(v, "threads", 1); }},
      {"seed", Kind::Seed, "random seed (default 0)",
       [](Settings& s, const json& v) {
         s.config.seed = as_unsigned(v, "seed", std::numeric_limits<std::uint64_t>::max());
       }},
  };
  return table;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (name == k.name) return k;
  throw UsageError("unknown config key '" + name + "'");
}

/// Converts a flag's text to the JSON value a config file would carry.
json flag_value(const Key& key, const std::string& raw) {
  const std::string name = key.name;
  switch (key.kind) {
  case Kind::Text:
    return raw;
  case Kind::Bool:
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw UsageError(name + " must be true or false");
  case Kind::Count:
  case Kind::Seed: {
    if (!raw.empty() && raw[0] == '-') throw UsageError(name + " must be a non-negative integer");
    std::uint64_t x = 0;
    const auto [end, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), x);
    if (ec != std::errc{} || end != raw.data() + raw.size())
      throw UsageError(name + " must be a non-negative integer, got '" + raw + "'");
    return x;
  }
  case Kind::Real: {
    char* end = nullptr;
    const double x = std::strtod(raw.c_str(), &end);
    if (raw.empty() || *end != '\0') throw UsageError(name + " must be a number, got '" + raw + "'");
    return x;
  }
  }
  return nullptr;
}

std::string flag_name(const Key& key) {
  std::string flag = key.name;
  for (auto& ch : flag)
    if (ch == '_') ch = '-';
  return "--" + flag;
}

std::string keys_help() {
  std::ostringstream os;
  os << "Config file (--config): a flat JSON object; unknown keys are errors.\n"
     << "Precedence: flags > FLARE_THREADS > config file > defaults. Keys:\n";
  for (const auto& k : keys()) os << "  " << k.name << ": " << k.help << "\n";
  return os.str();
}

/// Flags shared by `detect` and `inspect`, collected as raw text.
struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App& app, const std::vector<std::string>& skip = {}) {
    app.add_option("--config", config_path, "flat JSON config file")->check(CLI::ExistingFile);
    for (const auto& k : keys()) {
      if (std::find(skip.begin(), skip.end(), k.name) != skip.end()) continue;
      opts[k.name] = app.add_option(flag_name(k), raw[k.name], k.help)->type_name(type_label(k.kind));
    }
  }

  Settings resolve() const {
    Settings s;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::exception& e) {
        throw UsageError(config_path + ": " + e.what());
      }
      if (!doc.is_object()) throw UsageError(config_path + ": expected a JSON object");
      for (const auto& [name, value] : doc.items()) find_key(name).apply(s, value);
    }
    if (const char* env = std::getenv("FLARE_THREADS"); env && *env) {
      const auto& k = find_key("threads");
      k.apply(s, flag_value(k, env));
    }
    for (const auto& [name, opt] : opts) {
      if (opt->count() == 0) continue;
      const auto& k = find_key(name);
      k.apply(s, flag_value(k, raw.at(name)));
    }
    return s;
  }
};

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Dump {
  flare_dump* handle = nullptr;
  explicit Dump(const std::string& dir) { check(flare_dump_open(dir.c_str(), &handle)); }
  ~Dump() { flare_dump_free(handle); }
  Dump(const Dump&) = delete;
  Dump& operator=(const Dump&) = delete;
};

struct Report {
  flare_report* handle = nullptr;
  Report() = default;
  explicit Report(const std::string& path) { check(flare_report_read(path.c_str(), &handle)); }
  ~Report() { flare_report_free(handle); }
  Report(const Report&) = delete;
  Report& operator=(const Report&) = delete;
};

int cmd_detect(const ConfigOptions& opts, std::ostream& out) {
  Settings s = opts.resolve();
  if (s.dump.empty()) throw UsageError("detect needs --dump (or \"dump\" in the config file)");
  if (s.out.empty()) s.out = "flare_report.json";

  Dump dump(s.dump);
  Report report;
  check(flare_detect(dump.handle, &s.config, &report.handle));
  check(flare_report_write(report.handle, s.out.c_str()));

  const auto r = report.handle;
  out << "k=" << flare_report_chosen_k(r) << " poisoned=" << flare_report_poisoned_count(r) << "/"
      << flare_report_sample_count(r) << " guard=" << (flare_report_guard_triggered(r) ? "triggered" : "off")
      << " fallback=" << (flare_report_used_fallback(r) ? "yes" : "no");
  double tpr = 0.0, fpr = 0.0;
  if (flare_report_metrics(r, &tpr, &fpr) == FLARE_OK) out << " tpr=" << fixed(tpr) << " fpr=" << fixed(fpr);
  out << " report=" << s.out << "\n";
  return flare_report_used_fallback(r) ? kExitFallback : kExitOk;
}

int cmd_eval(const std::string& report_path, const std::string& dump_dir, std::ostream& out) {
  Report report(report_path);
  Dump dump(dump_dir);
  double tpr = 0.0, fpr = 0.0;
  check(flare_evaluate(report.handle, dump.handle, &tpr, &fpr));
  out << "tpr=" << fixed(tpr) << " fpr=" << fixed(fpr) << " poisoned=" << flare_report_poisoned_count(report.handle)
      << "\n";
  return kExitOk;
}

int cmd_inspect(const ConfigOptions& opts, const std::string& report_path, std::ostream& out) {
  Settings s = opts.resolve();
  if (s.dump.empty()) throw UsageError("inspect needs --dump");
  if (s.out.empty()) s.out = "flare_inspect";
  check(flare_inspect(s.dump.c_str(), report_path.empty() ? nullptr : report_path.c_str(), &s.config,
                      s.out.c_str()));
  out << "wrote embedding.csv, embedding.fltd, condensed_tree.json, representations.fltd to " << s.out << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& dir, std::ostream& out) {
  Dump dump(dir);
  const auto d = dump.handle;
  out << "valid: " << flare_dump_sample_count(d) << " samples, " << flare_dump_layer_count(d) << " layers, "
      << flare_dump_class_count(d) << " classes, truth flags " << (flare_dump_has_truth(d) ? "present" : "absent")
      << "\n";
  return kExitOk;
}

struct SynthOptions {
  std::string out;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> channels;
  flare_synth_params params;

  SynthOptions() { flare_synth_params_init(&params); }

  void attach(CLI::App& app) {
    app.add_option("--out", out, "dump directory to create")->required();
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--samples", params.samples, "sample count N")->check(CLI::PositiveNumber);
    app.add_option("--channels", channels, "channels per layer, e.g. 16,16,16,16")->delimiter(',');
    app.add_option("--height", params.height, "feature-map height");
    app.add_option("--width", params.width, "feature-map width");
    app.add_option("--classes", params.classes, "class count K");
    app.add_option("--target-label", params.target_label, "label given to poisoned samples");
    app.add_option("--poison-rate", params.poison_rate, "poisoning rate in [0, 1)");
    app.add_option("--benign-spread", params.benign_spread, "benign deviation scale");
    app.add_option("--poison-spread", params.poison_spread, "trigger jitter");
    app.add_option("--trigger-level", params.trigger_level, "trigger offset in BN standard deviations");
    app.add_option("--poison-channels", params.poison_channels, "trigger-carrying channels per layer");
    app.add_option("--staged-layers", params.staged_layers, "trailing layers with per-class structure");
    app.add_option("--class-separation", params.class_separation, "class-centre range in staged layers");
  }

  int run(std::ostream& os) {
    if (!channels.empty()) {
      params.channels = channels.data();
      params.layer_count = channels.size();
    }
    check(flare_synth(&params, seed, out.c_str()));
    os << "wrote dump to " << out << "\n";
    return kExitOk;
  }
};

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"flare: poisoned-sample detection over activation dumps", "flare"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(flare_version()));
  app.footer("Exit codes: 0 ok, 2 completed via subspace fallback, 1 error, 64 usage.");

  auto* detect = app.add_subcommand("detect", "select a subspace, cluster and write a detection report");
  ConfigOptions detect_opts;
  detect_opts.attach(*detect);
  detect->footer(keys_help());

  auto* eval = app.add_subcommand("eval", "score a report against a dump's truth flags");
  std::string eval_report, eval_dump;
  eval->add_option("--report", eval_report, "detection report JSON")->required();
  eval->add_option("--dump", eval_dump, "dump with truth_flags")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic activation dump");
  SynthOptions synth_opts;
  synth_opts.attach(*synth);

  auto* inspect = app.add_subcommand("inspect", "export embedding and condensed tree for plotting");
  ConfigOptions inspect_opts;
  std::string inspect_report;
  inspect_opts.attach(*inspect);
  inspect->add_option("--report", inspect_report, "reuse this report's configuration");
  inspect->footer(keys_help());

  auto* validate = app.add_subcommand("validate", "check a dump directory");
  std::string validate_dump;
  validate->add_option("--dump", validate_dump, "dump directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*detect) return cmd_detect(detect_opts, out);
    if (*eval) return cmd_eval(eval_report, eval_dump, out);
    if (*synth) return synth_opts.run(out);
    if (*inspect) return cmd_inspect(inspect_opts, inspect_report, out);
    if (*validate) return cmd_validate(validate_dump, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LibraryError& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

} // namespace flare::cli
