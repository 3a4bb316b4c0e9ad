#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "kidppg/augment.hpp"
#include "kidppg/signal.hpp"
#include "oracles.hpp"

using namespace kidppg;
using namespace kidppg::augment;

namespace {

constexpr double kFs = 32.0;

std::vector<double> harmonic(double hr, std::size_t n = 256) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double tt = static_cast<double>(t) / kFs, f = hr / 60.0;
    x[t] = std::sin(2 * std::numbers::pi * f * tt + 0.3) + 0.4 * std::sin(2 * std::numbers::pi * 2 * f * tt + 1.1) +
           0.2 * std::sin(2 * std::numbers::pi * 3 * f * tt + 2.0);
  }
  return x;
}

LabeledFrame labelled(double hr, std::size_t idx = 0, bool with_prev = true) {
  LabeledFrame lf;
  lf.frame.fs = kFs;
  lf.frame.t0 = 2.0 * static_cast<double>(idx);
  lf.frame.ppg = oracle::tone(hr / 60.0, kFs, 256);
  lf.frame.acc.assign(256 * 3, 0.25);
  lf.frame.hr = hr;
  lf.frame.index = idx;
  lf.frame.subject_id = "S1";
  lf.hr_label = hr;
  if (with_prev) {
    lf.prev = lf.frame;
    lf.prev->t0 -= 2.0;
  }
  return lf;
}

double band_db(const std::vector<double>& in, const std::vector<double>& out, double bpm) {
  const double lo = (bpm - kBandHalfWidthBpm) / 60.0, hi = (bpm + kBandHalfWidthBpm) / 60.0;
  return 10.0 * std::log10(signal::band_power(out, kFs, lo, hi) / signal::band_power(in, kFs, lo, hi));
}

}  // namespace

TEST_CASE("erase_bvp attenuates hr, 2hr, 3hr") {
  for (double hr : {60.0, 75.0, 120.0, 150.0}) {
    auto x = oracle::tone(hr / 60.0, kFs, 256);
    CHECK(band_db(x, erase_bvp(x, kFs, hr), hr) <= -20.0);
    auto h = harmonic(hr);
    auto y = erase_bvp(h, kFs, hr);
    for (int i = 1; i <= 3; ++i) CHECK(band_db(h, y, i * hr) <= -20.0);
  }
}

TEST_CASE("erase_bvp keeps an off-band tone") {
  // half the HR sits outside the transition band once hr is high enough
  auto p = oracle::tone(60.0 / 60.0, kFs, 256);
  CHECK(std::abs(band_db(p, erase_bvp(p, kFs, 120.0), 60.0)) <= 3.0);
  auto q = oracle::tone(325.0 / 60.0, kFs, 256);
  CHECK(std::abs(band_db(q, erase_bvp(q, kFs, 75.0), 325.0)) <= 3.0);
}

TEST_CASE("erase_bvp edge cases") {
  std::vector<std::string> w;
  auto x = oracle::tone(0.1, kFs, 256);
  CHECK_NOTHROW(erase_bvp(x, kFs, 4.0, &w));
  CHECK(w.size() >= 1);
  // 3hr above Nyquist is skipped silently
  std::vector<std::string> w2;
  CHECK_NOTHROW(erase_bvp(x, kFs, 330.0, &w2));
  CHECK(w2.empty());
  CHECK_THROWS_AS(erase_bvp(x, kFs, 0.0), std::invalid_argument);
}

TEST_CASE("random labels: Uniform[40, 300)") {
  std::mt19937_64 rng(1);
  double sum = 0, mn = 1e9, mx = -1e9;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = random_label(rng);
    sum += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  CHECK(std::abs(sum / n - 170.0) <= 2.0);
  CHECK(mn >= 40.0);
  CHECK(mx < 300.0);
}

TEST_CASE("adversarial example keeps acc and timestamps") {
  std::mt19937_64 rng(2);
  auto lf = labelled(90.0, 3);
  auto a = make_adversarial_example(lf, rng);
  CHECK(a.provenance == Provenance::Adversarial);
  CHECK(a.frame.acc == lf.frame.acc);
  CHECK(a.frame.t0 == lf.frame.t0);
  REQUIRE(a.prev.has_value());
  CHECK(a.prev->acc == lf.prev->acc);
  CHECK(a.hr_label >= 40.0);
  CHECK(a.hr_label < 300.0);
  CHECK(a.frame.hr == a.hr_label);
  CHECK(band_db(lf.frame.ppg, a.frame.ppg, 90.0) <= -20.0);
  CHECK(band_db(lf.prev->ppg, a.prev->ppg, 90.0) <= -20.0);
  CHECK_THROWS_AS(make_adversarial_example(a, rng), std::invalid_argument);
}

TEST_CASE("adversarial subset") {
  std::vector<LabeledFrame> ds;
  for (std::size_t i = 0; i < 100; ++i) ds.push_back(labelled(60.0 + static_cast<double>(i), i));
  std::mt19937_64 r1(5), r2(5), r3(5);
  auto a = build_adversarial_subset(ds, 0.5, r1);
  CHECK(a.size() == 50);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].frame.index > a[i - 1].frame.index);
  auto b = build_adversarial_subset(ds, 0.5, r2);
  REQUIRE(b.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].frame.index == b[i].frame.index);
    CHECK(a[i].hr_label == b[i].hr_label);
  }
  CHECK(build_adversarial_subset(ds, 0.0, r3).empty());
}

TEST_CASE("is_clean_frame") {
  auto lf = labelled(75.0);
  CHECK(is_clean_frame(lf));
  lf.hr_label = 105.0;
  CHECK_FALSE(is_clean_frame(lf));
  auto near = labelled(79.0);
  near.hr_label = 75.0;
  CHECK(is_clean_frame(near, 5.0));
  auto flat = labelled(75.0);
  flat.frame.ppg.assign(256, 0.0);
  CHECK_FALSE(is_clean_frame(flat));
}

TEST_CASE("high-HR sample") {
  CHECK_FALSE(make_high_hr_sample(labelled(160.0)).has_value());
  CHECK_FALSE(make_high_hr_sample(labelled(150.0)).has_value());
  REQUIRE(make_high_hr_sample(labelled(149.0)).has_value());

  auto lf = labelled(75.0);
  auto ctx = oracle::tone(75.0 / 60.0, kFs, 512);
  auto h = make_high_hr_sample(lf, ctx, ctx);
  REQUIRE(h.has_value());
  CHECK(h->frame.ppg.size() == 256);
  CHECK(h->frame.fs == kFs);
  CHECK(h->hr_label == 150.0);
  CHECK(h->provenance == Provenance::HighHr);
  CHECK(std::abs(signal::dominant_frequency_bpm(h->frame.ppg, kFs) - 150.0) <= 2.0);
  REQUIRE(h->prev.has_value());
  CHECK(std::abs(signal::dominant_frequency_bpm(h->prev->ppg, kFs) - 150.0) <= 2.0);
  // no context: tiling fallback, same length
  auto t = make_high_hr_sample(lf);
  REQUIRE(t.has_value());
  CHECK(t->frame.ppg.size() == 256);
}

TEST_CASE("speed-up doubles pure tones") {
  const double bin = kFs / 1024.0 * 60.0;
  for (double bpm = 40; bpm < 470; bpm += 11.7) {
    auto src = oracle::tone(bpm / 60.0, kFs, 512, 1.0, 0.4);
    auto out = speed_up_x2(src, 256, kFs);
    CHECK(std::abs(signal::dominant_frequency_bpm(out, kFs, 1.0, 959.0) - 2 * bpm) <= bin);
  }
}

TEST_CASE("merge and provenance counts") {
  std::vector<LabeledFrame> o, h, a;
  for (std::size_t i = 0; i < 100; ++i) o.push_back(labelled(70, i));
  for (std::size_t i = 0; i < 20; ++i) {
    auto x = labelled(140, i);
    x.provenance = Provenance::HighHr;
    h.push_back(x);
  }
  for (std::size_t i = 0; i < 50; ++i) {
    auto x = labelled(200, i);
    x.provenance = Provenance::Adversarial;
    a.push_back(x);
  }
  std::mt19937_64 r1(3), r2(3);
  auto m = merge_training_sets(o, h, a, r1);
  CHECK(m.size() == 170);
  auto c = provenance_counts(m);
  CHECK(c[Provenance::Original] == 100);
  CHECK(c[Provenance::HighHr] == 20);
  CHECK(c[Provenance::Adversarial] == 50);
  auto m2 = merge_training_sets(o, h, a, r2);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i].hr_label == m2[i].hr_label);
  std::mt19937_64 r3(3);
  CHECK(merge_training_sets(o, {}, {}, r3).size() == 100);
  CHECK(provenance_from_string(to_string(Provenance::HighHr)) == Provenance::HighHr);
}

TEST_CASE("augmented set round trip") {
  auto dir = std::filesystem::temp_directory_path() / "kidppg_test_aug";
  std::filesystem::remove_all(dir);
  AugmentedSet s;
  s.frames.push_back(labelled(70, 0, false));
  auto b = labelled(80, 1);
  b.provenance = Provenance::Adversarial;
  b.hr_label = 211.5;
  s.frames.push_back(b);
  s.info["seed"] = "7";
  save_augmented(s, dir);
  auto l = load_augmented(dir);
  REQUIRE(l.frames.size() == 2);
  CHECK_FALSE(l.frames[0].prev.has_value());
  REQUIRE(l.frames[1].prev.has_value());
  CHECK(l.frames[1].hr_label == 211.5);
  CHECK(l.frames[1].provenance == Provenance::Adversarial);
  CHECK(l.frames[1].frame.ppg.size() == 256);
  CHECK(l.info.at("seed") == "7");
  std::filesystem::remove_all(dir);
}
