#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "kidppg/error.hpp"
#include "kidppg/ma_filter.hpp"
#include "kidppg/synth.hpp"
#include "oracles.hpp"

using namespace kidppg;
using namespace kidppg::mafilter;

namespace {

MixFilterModel identity_model(int k1 = 5) {
  MixFilterModel m = MixFilterModel::init(k1, 1, 0, LossMode::MseFreq, 0.0);
  std::fill(m.layer1.begin(), m.layer1.end(), 0.0);
  for (int c = 0; c < 3; ++c) m.layer1[(c * 3 + c) * k1 + k1 / 2] = 1.0;
  m.layer2 = {1.0, 1.0, 1.0};
  return m;
}

std::vector<double> random_acc(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> a(3 * n);
  for (auto& v : a) v = nd(rng);
  return a;
}

// Planted artifact only (or plus a BVP tone), one activity over the record.
synth::SynthSpec planted_spec(double bvp_amp) {
  synth::SynthSpec s;
  s.subject_id = "P1";
  s.duration_s = 120.0;
  s.fs = 32.0;
  s.hr_nodes = {{0.0, 75.0}, {120.0, 75.0}};
  s.bvp_amp = {bvp_amp, 0.0, 0.0};
  s.mix_k = 5;
  s.planted_mix = {0.2, 0.5, 1.0, 0.5, 0.2,  -0.3, 0.1, 0.6, 0.1, -0.3,  0.0, 0.3, -0.4, 0.3, 0.0};
  s.acc = {{0.0, 120.0, 2.1, 0.0, {4.0, 3.0, 2.0}}, {0.0, 120.0, 2.0, 3.0, {1.0, 1.0, 1.0}}};
  s.activities = {{0.0, 120.0, "move"}};
  return s;
}

}  // namespace

TEST_CASE("predict_artifact: zeros and identity-ish model") {
  auto m = MixFilterModel::init(21, 1, 4, LossMode::MseFreq);
  std::vector<double> zeros(3 * 64, 0.0);
  for (double v : predict_artifact(m, zeros)) CHECK(v == 0.0);

  auto id = identity_model();
  std::vector<double> acc(3 * 32, 0.0);
  for (std::size_t t = 0; t < 32; ++t) acc[t * 3] = std::sin(0.3 * static_cast<double>(t));
  auto out = predict_artifact(id, acc);
  for (std::size_t t = 0; t < 32; ++t) CHECK(out[t] == doctest::Approx(acc[t * 3]));
  CHECK_THROWS_AS(predict_artifact(id, std::vector<double>(10, 0.0)), std::invalid_argument);
}

TEST_CASE("adapt_loss closed forms") {
  auto id = identity_model();
  auto acc = random_acc(256, 9);
  auto pred = predict_artifact(id, acc);
  CHECK(adapt_loss(id, acc, pred, LossMode::MseFreq) == doctest::Approx(0.0));
  CHECK(adapt_loss(id, acc, pred, LossMode::MaeFreq) == doctest::Approx(0.0));

  MixFilterModel zero = MixFilterModel::init(5, 1, 0, LossMode::MseFreq, 0.0);
  std::fill(zero.layer2.begin(), zero.layer2.end(), 0.0);
  std::vector<double> imp(256, 0.0);
  imp[0] = 1.0;
  CHECK(adapt_loss(zero, acc, imp, LossMode::MseFreq) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(adapt_loss(zero, acc, imp, LossMode::MaeFreq) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adapt_loss_grad matches finite differences") {
  for (auto mode : {LossMode::MseFreq, LossMode::MaeFreq}) {
    auto m = MixFilterModel::init(7, 3, 2, mode, 0.3);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (auto& w : m.layer2) w += 0.2 * nd(rng);
    auto acc = random_acc(128, 1);
    std::vector<double> ppg(128);
    for (auto& v : ppg) v = nd(rng);
    auto g = adapt_loss_grad(m, acc, ppg, mode);
    CHECK(g.loss == doctest::Approx(adapt_loss(m, acc, ppg, mode)));
    auto check = [&](std::vector<double>& w, const std::vector<double>& an) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double o = w[i], h = 1e-6;
        w[i] = o + h;
        const double lp = adapt_loss(m, acc, ppg, mode);
        w[i] = o - h;
        const double lm = adapt_loss(m, acc, ppg, mode);
        w[i] = o;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - an[i]) <= 1e-5 * std::max({std::abs(fd), std::abs(an[i]), 1.0}));
      }
    };
    check(m.layer1, g.g_layer1);
    check(m.layer2, g.g_layer2);
  }
}

TEST_CASE("zero target drives the artifact estimate down") {
  std::vector<Segment> segs;
  for (std::uint64_t i = 0; i < 4; ++i) segs.push_back({random_acc(256, 20 + i), std::vector<double>(256, 0.0)});
  AdaptHyperParams hp;
  hp.lr = 1e-4;
  hp.epochs = 400;
  hp.early_stop_rel = 0.0;
  const auto init = MixFilterModel::init(21, 1, 5, LossMode::MseFreq);
  auto r = train_mix_filter(segs, hp, 5);
  const double before = signal::rms(predict_artifact(init, segs[0].acc));
  const double after = signal::rms(predict_artifact(r.model, segs[0].acc));
  CHECK(after <= 1e-3 * before);
  CHECK(r.loss_trace.back() < r.loss_trace.front());
}

TEST_CASE("divergence is reported") {
  std::vector<Segment> segs{{random_acc(256, 1), random_acc(256, 2)}};
  segs[0].ppg.resize(256);
  AdaptHyperParams hp;
  hp.lr = 1e3;
  hp.epochs = 200;
  CHECK_THROWS_AS(train_mix_filter(segs, hp, 1), DivergenceError);
}

TEST_CASE("planted mixing is recovered") {
  auto ss = synth::gen_session(planted_spec(0.0), 3);
  auto a = signal::align_channels(ss.session, 32.0);
  auto segs = activity_segments(a, ss.session, "move");
  REQUIRE(segs.size() == signal::window_count(120.0, 8.0, 2.0));
  auto r = train_mix_filter(segs, AdaptHyperParams{}, 1);
  auto art = predict_artifact(r.model, a.acc);
  CHECK(signal::pearson(art, ss.truth.artifact) >= 0.99);
}

TEST_CASE("planted mixing plus BVP tone: cleaning reveals HR") {
  auto ss = synth::gen_session(planted_spec(2.0), 4);
  auto a = signal::align_channels(ss.session, 32.0);
  FilterBank bank = train_filter_bank(a, ss.session, AdaptHyperParams{}, 2);
  REQUIRE(bank.filters.count("move") == 1);
  auto cleaned = clean_session(bank, a, ss.session);
  auto raw_frames = signal::window_aligned(a, ss.session);
  auto frames = signal::window_aligned(cleaned, ss.session);
  int ok = 0, raw_motion = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (std::abs(signal::dominant_frequency_bpm(frames[i].ppg, 32.0) - 75.0) <= 2.0) ++ok;
    if (std::abs(signal::dominant_frequency_bpm(raw_frames[i].ppg, 32.0) - 126.0) <= 2.0) ++raw_motion;
  }
  CHECK(ok == static_cast<int>(frames.size()));
  CHECK(raw_motion == static_cast<int>(frames.size()));
}

TEST_CASE("remove_artifacts") {
  auto m = MixFilterModel::init(21, 1, 7, LossMode::MseFreq, 0.1);
  SampleFrame f;
  f.fs = 32;
  f.ppg = oracle::tone(1.0, 32.0, 64);
  f.acc.assign(64 * 3, 0.0);
  f.hr = 60.0;
  auto out = remove_artifacts(m, f);
  CHECK(out.ppg == f.ppg);
  CHECK(out.hr == f.hr);

  // ppg made entirely of the model's own artifact
  auto id = identity_model();
  f.acc = random_acc(64, 3);
  f.ppg = predict_artifact(id, f.acc);
  auto c = remove_artifacts(id, f);
  CHECK(signal::rms(c.ppg) <= 0.1 * signal::rms(f.ppg));
  CHECK(c.acc == f.acc);
}

TEST_CASE("model and bank persistence") {
  auto dir = std::filesystem::temp_directory_path() / "kidppg_test_mafilter";
  std::filesystem::remove_all(dir);
  auto m = MixFilterModel::init(21, 1, 7, LossMode::MaeFreq, 0.1);
  save_model(m, dir / "one");
  auto l = load_model(dir / "one");
  CHECK(l.k1 == 21);
  CHECK(l.loss == LossMode::MaeFreq);
  for (std::size_t i = 0; i < m.layer1.size(); ++i)
    CHECK(l.layer1[i] == doctest::Approx(m.layer1[i]).epsilon(1e-6));
  FilterBank b;
  b.filters["sit"] = m;
  b.filters["walk"] = identity_model(21);
  save_bank(b, dir / "bank");
  auto lb = load_bank_or_model(dir / "bank");
  CHECK(lb.filters.size() == 2);
  auto single = load_bank_or_model(dir / "one");
  CHECK(single.filters.count("") == 1);
  std::filesystem::remove_all(dir);
}
