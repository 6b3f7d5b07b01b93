// Exercises the shared library through its C header only.

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "doctest.h"
#include "flare/flare.h"
#include "json.hpp"
#include "support/temp_dir.hpp"

using testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const std::filesystem::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

flare_synth_params small_params(const uint32_t* channels, size_t layers) {
  flare_synth_params p;
  flare_synth_params_init(&p);
  p.samples = 300;
  p.channels = channels;
  p.layer_count = layers;
  p.poison_channels = 3;
  return p;
}

flare_config quick_config() {
  flare_config c;
  flare_config_init(&c);
  c.epochs = 80;
  return c;
}

} // namespace

TEST_CASE("version and status names") {
  CHECK(std::strlen(flare_version()) > 0);
  CHECK(std::string(flare_status_name(FLARE_OK)) == "Ok");
  CHECK(std::string(flare_status_name(FLARE_SHAPE_MISMATCH)) == "ShapeMismatch");
  CHECK(std::string(flare_status_name(FLARE_MISSING_ARTIFACT)) == "MissingArtifact");
  CHECK(std::string(flare_status_name(FLARE_INTERNAL_ERROR)) == "InternalError");
  CHECK(std::string(flare_status_name(static_cast<flare_status>(42))) == "Unknown");
}

TEST_CASE("default configuration") {
  flare_config c;
  std::memset(&c, 0xff, sizeof c);
  flare_config_init(&c);
  CHECK(c.xi == 0.02);
  CHECK(c.depth == 3);
  CHECK(c.dims == 2);
  CHECK(c.neighbors == 15);
  CHECK(c.min_dist == 0.1);
  CHECK(c.epochs == 200);
  CHECK(c.min_pts == 10);
  CHECK(c.min_cluster_size == 0);
  CHECK(c.align == FLARE_ALIGN_DENSITY);
  CHECK(c.deterministic == 1);
  CHECK(c.threads == 1);
  CHECK(c.seed == 0);
}

TEST_CASE("synth, open, detect, write and read back") {
  TempDir tmp;
  const uint32_t channels[] = {6, 6, 6};
  const auto params = small_params(channels, 3);
  const auto dump_dir = (tmp / "dump").string();
  REQUIRE(flare_synth(&params, 4, dump_dir.c_str()) == FLARE_OK);
  CHECK(flare_validate(dump_dir.c_str()) == FLARE_OK);

  flare_dump* dump = nullptr;
  REQUIRE(flare_dump_open(dump_dir.c_str(), &dump) == FLARE_OK);
  CHECK(flare_dump_sample_count(dump) == 300);
  CHECK(flare_dump_layer_count(dump) == 3);
  CHECK(flare_dump_class_count(dump) == 10);
  CHECK(flare_dump_has_truth(dump) == 1);

  const auto config = quick_config();
  flare_report* report = nullptr;
  REQUIRE(flare_detect(dump, &config, &report) == FLARE_OK);
  CHECK(flare_report_sample_count(report) == 300);
  CHECK(flare_report_chosen_k(report) < 3);

  const size_t total = flare_report_poisoned_count(report);
  std::vector<uint32_t> ids(total + 4, 0xffffffffu);
  CHECK(flare_report_poisoned_ids(report, ids.data(), ids.size()) == total);
  CHECK(std::is_sorted(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(total)));
  CHECK(ids[total] == 0xffffffffu);
  if (total > 1) {
    uint32_t one = 0;
    CHECK(flare_report_poisoned_ids(report, &one, 1) == total);
    CHECK(one == ids[0]);
  }

  double tpr = -1, fpr = -1, tpr2 = -1, fpr2 = -1;
  CHECK(flare_report_metrics(report, &tpr, &fpr) == FLARE_OK);
  CHECK(flare_evaluate(report, dump, &tpr2, &fpr2) == FLARE_OK);
  CHECK(tpr == tpr2);
  CHECK(fpr == fpr2);

  const auto path = (tmp / "report.json").string();
  REQUIRE(flare_report_write(report, path.c_str()) == FLARE_OK);
  flare_report* back = nullptr;
  REQUIRE(flare_report_read(path.c_str(), &back) == FLARE_OK);
  CHECK(flare_report_poisoned_count(back) == total);
  CHECK(flare_report_chosen_k(back) == flare_report_chosen_k(report));
  CHECK(flare_report_used_fallback(back) == flare_report_used_fallback(report));
  CHECK(flare_report_guard_triggered(back) == flare_report_guard_triggered(report));
  flare_config read_config;
  CHECK(flare_report_config(back, &read_config) == FLARE_OK);
  CHECK(read_config.epochs == 80);
  const auto path2 = (tmp / "report2.json").string();
  REQUIRE(flare_report_write(back, path2.c_str()) == FLARE_OK);
  CHECK(slurp(path) == slurp(path2));

  SUBCASE("inspect reruns with the report's configuration") {
    const auto out = (tmp / "inspect").string();
    REQUIRE(flare_inspect(dump_dir.c_str(), path.c_str(), nullptr, out.c_str()) == FLARE_OK);
    CHECK(line_count(tmp / "inspect" / "embedding.csv") == 301);
    CHECK(std::filesystem::exists(tmp / "inspect" / "embedding.fltd"));
    CHECK(std::filesystem::exists(tmp / "inspect" / "condensed_tree.json"));
    CHECK(std::filesystem::exists(tmp / "inspect" / "representations.fltd"));
  }

  flare_report_free(back);
  flare_report_free(report);
  flare_dump_free(dump);
}

TEST_CASE("errors come back as status codes") {
  TempDir tmp;
  flare_dump* dump = nullptr;
  CHECK(flare_dump_open((tmp / "absent").string().c_str(), &dump) == FLARE_MISSING_FILE);
  CHECK(dump == nullptr);
  CHECK(std::string(flare_last_error()).find("MissingFile") == 0);
  CHECK(flare_validate((tmp / "absent").string().c_str()) == FLARE_MISSING_FILE);

  flare_report* report = nullptr;
  CHECK(flare_report_read((tmp / "none.json").string().c_str(), &report) == FLARE_MISSING_ARTIFACT);
  std::ofstream(tmp / "junk.json") << "{not json";
  CHECK(flare_report_read((tmp / "junk.json").string().c_str(), &report) == FLARE_INVALID_ARGUMENT);

  CHECK(flare_dump_open(nullptr, &dump) == FLARE_INVALID_ARGUMENT);
  CHECK(flare_detect(nullptr, nullptr, &report) == FLARE_INVALID_ARGUMENT);

  const uint32_t channels[] = {4, 4};
  auto params = small_params(channels, 2);
  params.poison_rate = 1.5;
  CHECK(flare_synth(&params, 1, (tmp / "x").string().c_str()) == FLARE_INVALID_SPEC);

  params.poison_rate = 0.1;
  const auto dir = (tmp / "d").string();
  REQUIRE(flare_synth(&params, 1, dir.c_str()) == FLARE_OK);
  REQUIRE(flare_dump_open(dir.c_str(), &dump) == FLARE_OK);
  auto config = quick_config();
  config.xi = -1.0;
  CHECK(flare_detect(dump, &config, &report) == FLARE_INVALID_ARGUMENT);
  config = quick_config();
  config.min_pts = 1000;
  CHECK(flare_detect(dump, &config, &report) == FLARE_MIN_PTS_TOO_LARGE);
  CHECK(report == nullptr);
  flare_dump_free(dump);

  config = quick_config();
  CHECK(flare_inspect((tmp / "absent").string().c_str(), nullptr, &config,
                      (tmp / "o").string().c_str()) == FLARE_MISSING_ARTIFACT);
  CHECK(flare_inspect(dir.c_str(), (tmp / "none.json").string().c_str(), nullptr,
                      (tmp / "o").string().c_str()) == FLARE_MISSING_ARTIFACT);
  CHECK(flare_inspect(dir.c_str(), nullptr, nullptr, (tmp / "o").string().c_str()) ==
        FLARE_INVALID_ARGUMENT);
  // null handles are tolerated by the accessors
  CHECK(flare_dump_sample_count(nullptr) == 0);
  flare_dump_free(nullptr);
  flare_report_free(nullptr);
}

TEST_CASE("metrics are absent without truth flags") {
  TempDir tmp;
  const uint32_t channels[] = {5, 5};
  const auto params = small_params(channels, 2);
  const auto dir = (tmp / "d").string();
  REQUIRE(flare_synth(&params, 2, dir.c_str()) == FLARE_OK);
  const auto manifest = tmp / "d" / "manifest.json";
  auto j = nlohmann::json::parse(slurp(manifest));
  j.erase("truth_flags");
  std::ofstream(manifest, std::ios::trunc) << j.dump();

  flare_dump* dump = nullptr;
  REQUIRE(flare_dump_open(dir.c_str(), &dump) == FLARE_OK);
  CHECK(flare_dump_has_truth(dump) == 0);
  const auto config = quick_config();
  flare_report* report = nullptr;
  REQUIRE(flare_detect(dump, &config, &report) == FLARE_OK);
  double tpr = 0, fpr = 0;
  CHECK(flare_report_metrics(report, &tpr, &fpr) == FLARE_MISSING_ARTIFACT);
  CHECK(flare_evaluate(report, dump, &tpr, &fpr) == FLARE_MISSING_ARTIFACT);
  flare_report_free(report);
  flare_dump_free(dump);
}
