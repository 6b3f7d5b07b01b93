#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "flare/error.hpp"
#include "flare/represent.hpp"
#include "flare/rng.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace flare;
using testing::TempDir;

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

struct Fixture {
  DumpManifest manifest;
  std::vector<TensorBlock> acts;
};

Fixture write_fixture(const fs::path& dir, std::uint64_t n, std::vector<std::uint32_t> channels,
                      std::uint32_t h, std::uint32_t w, std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  f.manifest.sample_count = n;
  f.manifest.class_count = 2;
  f.manifest.labels.assign(n, 0);
  for (std::size_t l = 0; l < channels.size(); ++l) {
    LayerSpec layer;
    layer.index = static_cast<std::uint32_t>(l + 1);
    layer.channels = channels[l];
    layer.height = h;
    layer.width = w;
    for (std::uint32_t c = 0; c < channels[l]; ++c) {
      layer.bn_mean.push_back(static_cast<float>(rng.uniform(-1, 1)));
      layer.bn_var.push_back(static_cast<float>(rng.uniform(0.25, 3)));
    }
    TensorBlock b{{n, channels[l], h, w}, {}};
    b.values.resize(b.element_count());
    for (auto& v : b.values) v = static_cast<float>(rng.normal() * 2.0);
    f.acts.push_back(std::move(b));
    f.manifest.layers.push_back(std::move(layer));
  }
  write_dump(f.manifest, f.acts, dir);
  f.manifest = read_dump(dir);
  return f;
}

// Straight from the definition: align every element, take the channel minimum.
std::vector<double> oracle_row(const Fixture& f, std::size_t sample, std::size_t layers_used) {
  std::vector<double> row;
  for (std::size_t l = 0; l < layers_used; ++l) {
    const auto& layer = f.manifest.layers[l];
    const std::size_t hw = layer.spatial();
    for (std::uint32_t c = 0; c < layer.channels; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < hw; ++s) {
        const float a = f.acts[l].values[(sample * layer.channels + c) * hw + s];
        best = std::min(best, oracle::align(a, layer.bn_mean[c], layer.bn_var[c]));
      }
      row.push_back(best);
    }
  }
  return row;
}

} // namespace

TEST_CASE("alignment at the mean and one deviation out") {
  CHECK(align_value(0.7, 0.7, 2.0) == 1.0);
  CHECK(align_value(1.0 + std::sqrt(2.0), 1.0, 2.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(align_value(-3.0, 1.0, 0.5) == align_value(5.0, 1.0, 0.5));
  CHECK(code_of([] { align_value(1.0, 0.0, 0.0); }) == ErrorCode::NonPositiveVariance);
}

TEST_CASE("far outliers stay strictly positive") {
  CHECK(align_value(1e6, 0.0, 1e-3) == kAlignFloor);
  CHECK(align_value(1e6, 0.0, 1e-3) > 0.0);
  const std::vector<float> map = {0.0f, 50.0f, -1e30f};
  std::vector<double> out(3);
  align_map(map, 0.0, 1.0, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == kAlignFloor);
  CHECK(out[2] == kAlignFloor);
}

TEST_CASE("alignment of a map matches the scalar formula") {
  const std::vector<float> map = {-2.5f, -1.0f, 0.0f, 0.3f, 1.1f, 2.0f, 3.7f, -0.2f, 10.0f};
  std::vector<double> out(map.size());
  align_map(map, 0.4, 1.7, out);
  for (std::size_t i = 0; i < map.size(); ++i) {
    CHECK(std::abs(out[i] - oracle::align(map[i], 0.4, 1.7)) <= 1e-12);
    CHECK(out[i] > 0.0);
    CHECK(out[i] <= 1.0);
  }
  std::vector<double> wrong(3);
  CHECK(code_of([&] { align_map(map, 0.0, 1.0, wrong); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("literal alignment mode") {
  const double var = 0.8, mu = 0.1;
  const double expect = std::exp(-(1.5 - mu) / (2 * var)) / std::sqrt(2 * M_PI * var);
  CHECK(align_value(1.5, mu, var, AlignMode::LiteralEq2) == doctest::Approx(expect).epsilon(1e-14));
  // unbounded below the mean
  CHECK(align_value(-20.0, mu, var, AlignMode::LiteralEq2) > 1.0);
  CHECK(align_mode_from_string("literal-eq2") == AlignMode::LiteralEq2);
  CHECK(align_mode_from_string("density") == AlignMode::Density);
  CHECK(code_of([] { align_mode_from_string("gauss"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("signature is the per-channel minimum") {
  SUBCASE("constant map") {
    std::vector<double> aligned(2 * 3 * 3, 0.6);
    const auto sig = extract_signature(aligned, 2, 3, 3, 4);
    CHECK(sig.layer_index == 4);
    CHECK(sig.values == std::vector<double>{0.6, 0.6});
  }
  SUBCASE("single spike is recovered") {
    std::vector<double> aligned(3 * 2 * 2, 0.9);
    aligned[1 * 4 + 3] = 0.01;
    const auto sig = extract_signature(aligned, 3, 2, 2);
    CHECK(sig.values == std::vector<double>{0.9, 0.01, 0.9});
  }
  SUBCASE("random tensors against an exhaustive minimum") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const std::uint32_t c = 1 + rng.below(6), h = 1 + rng.below(5), w = 1 + rng.below(5);
      std::vector<double> aligned(c * h * w);
      for (auto& v : aligned) v = rng.uniform();
      const auto sig = extract_signature(aligned, c, h, w);
      REQUIRE(sig.values.size() == c);
      for (std::uint32_t ch = 0; ch < c; ++ch) {
        double m = 2.0;
        for (std::uint32_t s = 0; s < h * w; ++s) m = std::min(m, aligned[ch * h * w + s]);
        CHECK(sig.values[ch] == m);
      }
    }
  }
  SUBCASE("spatial permutation leaves the signature unchanged") {
    Rng rng(3);
    std::vector<double> aligned(4 * 9);
    for (auto& v : aligned) v = rng.uniform();
    const auto before = extract_signature(aligned, 4, 3, 3);
    for (std::size_t c = 0; c < 4; ++c)
      std::reverse(aligned.begin() + c * 9, aligned.begin() + (c + 1) * 9);
    CHECK(extract_signature(aligned, 4, 3, 3).values == before.values);
  }
  SUBCASE("errors") {
    std::vector<double> none;
    CHECK(code_of([&] { extract_signature(none, 2, 0, 3); }) == ErrorCode::EmptySpatialExtent);
    std::vector<double> short_one(5);
    CHECK(code_of([&] { extract_signature(short_one, 2, 1, 3); }) == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("representation matrix against the oracle") {
  TempDir tmp;
  const auto f = write_fixture(tmp.path(), 12, {4, 8, 5}, 3, 2, 21);

  const auto full = build_representations(f.manifest, 0);
  REQUIRE(full.rows() == 12);
  REQUIRE(full.cols() == 17);
  CHECK(full.truncation == 0);
  CHECK(full.spans == std::vector<LayerSpan>{{1, 0, 4}, {2, 4, 8}, {3, 12, 5}});
  for (std::size_t i = 0; i < 12; ++i) {
    const auto expect = oracle_row(f, i, 3);
    for (std::size_t j = 0; j < 17; ++j) {
      CHECK(std::abs(full.values(i, j) - expect[j]) <= 1e-12);
      CHECK(full.values(i, j) > 0.0);
      CHECK(full.values(i, j) <= 1.0);
    }
  }

  SUBCASE("truncation keeps leading layers") {
    const auto k1 = build_representations(f.manifest, 1);
    CHECK(k1.cols() == 12);
    CHECK(k1.truncation == 1);
    const auto k2 = build_representations(f.manifest, 2);
    CHECK(k2.cols() == 4);
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t j = 0; j < 12; ++j) CHECK(k1.values(i, j) == full.values(i, j));
      for (std::size_t j = 0; j < 4; ++j) CHECK(k2.values(i, j) == full.values(i, j));
    }
    const auto t = full.truncated(2);
    CHECK(t.values == k2.values);
    CHECK(t.spans == k2.spans);
    CHECK(t.truncation == 2);
  }
  SUBCASE("k must leave one layer") {
    CHECK(code_of([&] { build_representations(f.manifest, 3); }) == ErrorCode::TruncationOutOfRange);
    CHECK(code_of([&] { full.truncated(3); }) == ErrorCode::TruncationOutOfRange);
  }
  SUBCASE("threads do not change the result") {
    CHECK(build_representations(f.manifest, 0, AlignMode::Density, 4).values == full.values);
  }
  SUBCASE("literal mode is used when asked") {
    const auto lit = build_representations(f.manifest, 2, AlignMode::LiteralEq2);
    const auto& layer = f.manifest.layers[0];
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < 6; ++s)
      m = std::min(m, align_value(f.acts[0].values[s], layer.bn_mean[0], layer.bn_var[0],
                                  AlignMode::LiteralEq2));
    CHECK(lit.values(0, 0) == doctest::Approx(m).epsilon(1e-12));
  }
}

TEST_CASE("layer widths follow channel counts") {
  TempDir tmp;
  const auto f = write_fixture(tmp.path(), 3, {4, 8}, 2, 2, 2);
  CHECK(build_representations(f.manifest, 0).cols() == 12);
  CHECK(build_representations(f.manifest, 1).cols() == 4);
}

TEST_CASE("trigger channels have lower signatures on poisoned rows") {
  TempDir tmp;
  SynthSpec spec;
  spec.samples = 300;
  spec.channels = {8, 8};
  spec.poison_channels = 3;
  synth_dump(spec, 4, tmp.path());
  const auto m = read_dump(tmp.path());
  const auto reps = build_representations(m, 0);
  for (std::size_t col : {0, 1, 2, 8, 9, 10}) {
    double poison = 0, benign = 0;
    std::size_t np = 0, nb = 0;
    for (std::size_t i = 0; i < reps.rows(); ++i) {
      if ((*m.truth_flags)[i]) {
        poison += reps.values(i, col);
        ++np;
      } else {
        benign += reps.values(i, col);
        ++nb;
      }
    }
    CHECK(poison / np < benign / nb);
  }
}

TEST_CASE("representation cache round trip") {
  TempDir tmp;
  const auto f = write_fixture(tmp / "dump", 6, {3, 2}, 2, 2, 8);
  const auto reps = build_representations(f.manifest, 1);
  write_representations(tmp / "reps.fltd", reps);
  CHECK(fs::exists(tmp / "reps.fltd.json"));
  const auto back = read_representations(tmp / "reps.fltd");
  CHECK(back.spans == reps.spans);
  CHECK(back.truncation == 1);
  REQUIRE(back.rows() == reps.rows());
  REQUIRE(back.cols() == reps.cols());
  for (std::size_t i = 0; i < reps.values.data().size(); ++i)
    CHECK(back.values.data()[i] == static_cast<double>(static_cast<float>(reps.values.data()[i])));

  fs::remove(tmp / "reps.fltd.json");
  CHECK(code_of([&] { read_representations(tmp / "reps.fltd"); }) == ErrorCode::MissingFile);
}
