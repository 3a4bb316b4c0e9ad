#include "doctest.h"
#include "kidppg/error.hpp"
#include "kidppg/pipeline.hpp"
#include "kidppg/synth.hpp"

using namespace kidppg;
using namespace kidppg::pipeline;

namespace {

// Short runs: a few filter epochs, two network epochs.
PipelineConfig fast(const std::string& variant) {
  auto c = PipelineConfig::for_variant(variant);
  c.filter.epochs = 20;
  c.train.epochs = 2;
  return c;
}

const std::vector<SessionRecording>& suite() {
  static const std::vector<SessionRecording> s = [] {
    std::vector<SessionRecording> out;
    for (auto& x : synth::gen_benchmark_suite(3)) out.push_back(x.session);
    return out;
  }();
  return s;
}

const eval::Fold kFold{{"S1", "S2", "S3"}, "S4"};

}  // namespace

TEST_CASE("variants") {
  auto k = Variant::named("kid-ppg");
  CHECK(k.probabilistic);
  CHECK(k.adversarial);
  CHECK(k.high_hr);
  auto p = Variant::named("prob");
  CHECK(p.probabilistic);
  CHECK_FALSE(p.adversarial);
  CHECK_FALSE(p.high_hr);
  auto pt = Variant::named("point");
  CHECK_FALSE(pt.probabilistic);
  CHECK(pt.temporal);
  CHECK(pt.adaptive);
  CHECK_THROWS_AS(Variant::named("nope"), ValidationError);
}

TEST_CASE("config round trip and validation") {
  auto c = fast("prob");
  c.seed = 42;
  c.thr = 7.5;
  auto back = PipelineConfig::from_doc(c.to_doc());
  CHECK(back.to_doc().to_string() == c.to_doc().to_string());
  CHECK(back.variant_name == "prob");
  CHECK_FALSE(back.net.to_doc().to_string().empty());
  KeyValueDoc bad;
  bad.set("eval.cl", 1.5);
  CHECK_THROWS_AS(PipelineConfig::from_doc(bad), ValidationError);
  KeyValueDoc frame;
  frame.set("net.frame_len", 128);
  CHECK_THROWS_AS(PipelineConfig::from_doc(frame), ValidationError);
}

TEST_CASE("prepared session frames link to their predecessor") {
  auto c = fast("kid-ppg");
  auto p = prepare_session(suite()[0], c);
  CHECK(p.frames.size() == signal::window_count(720.0, 8.0, 2.0));
  auto lf = labelled_frames(p);
  REQUIRE(lf.size() == p.frames.size());
  CHECK_FALSE(lf[0].prev.has_value());
  REQUIRE(lf[5].prev.has_value());
  CHECK(lf[5].prev->t0 == doctest::Approx(lf[5].frame.t0 - 2.0));
  CHECK(p.filter_traces.size() == synth::kScenarios.size());
}

TEST_CASE("kid-ppg fold: populated report, deterministic") {
  auto c = fast("kid-ppg");
  FilterCache cache;
  auto a = train_pipeline(kFold, suite(), c, &cache);
  CHECK(a.report.n == a.predictions.size());
  CHECK(a.report.n == signal::window_count(720.0, 8.0, 2.0));
  CHECK(a.report.mean_nll.has_value());
  CHECK(a.report.tpr.has_value());
  CHECK(a.report.f1.has_value());
  CHECK(a.report.per_subject.count("S4") == 1);
  CHECK(a.counts.at("original") > 0);
  CHECK(a.counts.at("adversarial") > 0);
  CHECK(a.counts.at("high_hr") > 0);
  CHECK(a.seeds.count("net_init") == 1);
  auto b = train_pipeline(kFold, suite(), c, &cache);
  CHECK(eval::report_csv(a.report) == eval::report_csv(b.report));
  CHECK(a.model.net.params() == b.model.net.params());
}

TEST_CASE("point fold: no NLL, no retention filtering") {
  auto c = fast("point");
  auto r = train_pipeline(kFold, suite(), c);
  CHECK_FALSE(r.report.mean_nll.has_value());
  CHECK_FALSE(r.report.tpr.has_value());
  CHECK(r.report.retention_pct == 100.0);
  CHECK(r.counts.at("adversarial") == 0);
  CHECK(r.counts.at("high_hr") == 0);
  std::vector<nn::HrEstimate> est;
  for (const auto& p : r.predictions) est.push_back(p.est);
  auto csv = predictions_csv(est, c.thr, c.cl);
  CHECK(csv.rfind("t_s,mu_bpm,sigma_bpm,trust_prob,keep\n", 0) == 0);
  CHECK(csv.find(",NA,") != std::string::npos);
}

TEST_CASE("stage failures name the stage") {
  auto c = fast("kid-ppg");
  try {
    auto bad = c;
    bad.thr = -1.0;
    train_pipeline(kFold, suite(), bad);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "config");
  }
  try {
    train_pipeline(eval::Fold{{"S1"}, "S9"}, suite(), c);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "ma-filter");
    CHECK(std::string(e.what()).find("S9") != std::string::npos);
  }
  auto d = c;
  d.filter.lr = 1e3;
  try {
    train_pipeline(kFold, suite(), d);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "ma-filter");
  }
}
