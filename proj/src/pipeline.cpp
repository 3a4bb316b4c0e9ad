#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/pipeline.hpp"
#include "kidppg/seed.hpp"

namespace kidppg::pipeline {

Variant Variant::named(const std::string& name) {
  Variant v;
  if (name == "kid-ppg") return v;
  if (name == "prob") {
    v.adversarial = false;
    v.high_hr = false;
    return v;
  }
  if (name == "point") {
    v.probabilistic = false;
    v.adversarial = false;
    v.high_hr = false;
    return v;
  }
  throw ValidationError("variant", "unknown variant '" + name + "' (expected point, prob or kid-ppg)");
}

std::string Variant::describe() const {
  std::string s = adaptive ? "adaptive" : "raw";
  s += probabilistic ? "+prob" : "+point";
  if (adversarial) s += "+adversarial";
  if (high_hr) s += "+high_hr";
  s += temporal ? "+attention" : "+self";
  return s;
}

void PipelineConfig::validate() const {
  if (!(windows.win_s > 0 && windows.stride_s > 0 && windows.fs > 0))
    throw ValidationError("window", "win_s, stride_s and fs must be positive");
  if (static_cast<std::size_t>(std::llround(windows.win_s * windows.fs)) != net.frame_len)
    throw ValidationError("net.frame_len", "must equal window.win_s * window.fs");
  if (!(adversarial_frac >= 0 && adversarial_frac <= 1)) throw ValidationError("augment.adversarial_frac", "outside [0,1]");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ValidationError("train.val_fraction", "outside [0,1)");
  if (!(thr > 0)) throw ValidationError("eval.thr", "must be positive");
  if (!(cl >= 0 && cl <= 1)) throw ValidationError("eval.cl", "outside [0,1]");
  if (!(filter.lr > 0) || filter.epochs < 0) throw ValidationError("filter", "lr must be positive, epochs >= 0");
  if (train.batch == 0 || train.epochs < 0) throw ValidationError("train", "batch must be positive, epochs >= 0");
  net.validate();
}

KeyValueDoc PipelineConfig::to_doc() const {
  KeyValueDoc d;
  d.set("variant", variant_name);
  d.set("variant.adaptive", variant.adaptive);
  d.set("variant.probabilistic", variant.probabilistic);
  d.set("variant.adversarial", variant.adversarial);
  d.set("variant.high_hr", variant.high_hr);
  d.set("variant.temporal", variant.temporal);
  d.set("seed", static_cast<long long>(seed));
  d.set("window.win_s", windows.win_s);
  d.set("window.stride_s", windows.stride_s);
  d.set("window.fs", windows.fs);
  d.set("filter.lr", filter.lr);
  d.set("filter.momentum", filter.momentum);
  d.set("filter.epochs", filter.epochs);
  d.set("filter.loss", mafilter::to_string(filter.loss));
  d.set("filter.k1", filter_k1);
  d.set("filter.k2", filter_k2);
  d.set("augment.adversarial_frac", adversarial_frac);
  d.set("augment.clean_tol_bpm", clean_tol_bpm);
  const auto nd = net.to_doc();
  for (const auto& [k, v] : nd.entries()) d.set(k, v);
  d.set("train.lr", train.adam.lr);
  d.set("train.batch", train.batch);
  d.set("train.epochs", train.epochs);
  d.set("train.patience", train.patience);
  d.set("train.threads", static_cast<long long>(train.threads));
  d.set("train.time_budget_s", train.time_budget_s);
  d.set("train.val_fraction", val_fraction);
  d.set("eval.thr", thr);
  d.set("eval.cl", cl);
  return d;
}

PipelineConfig PipelineConfig::for_variant(const std::string& name) {
  PipelineConfig c;
  c.variant_name = name;
  c.variant = Variant::named(name);
  c.net.probabilistic = c.variant.probabilistic;
  c.net.temporal = c.variant.temporal;
  return c;
}

PipelineConfig PipelineConfig::from_doc(const KeyValueDoc& d) {
  PipelineConfig c = for_variant(d.get_string("variant", "kid-ppg"));
  c.variant.adaptive = d.get_bool("variant.adaptive", c.variant.adaptive);
  c.variant.probabilistic = d.get_bool("variant.probabilistic", c.variant.probabilistic);
  c.variant.adversarial = d.get_bool("variant.adversarial", c.variant.adversarial);
  c.variant.high_hr = d.get_bool("variant.high_hr", c.variant.high_hr);
  c.variant.temporal = d.get_bool("variant.temporal", c.variant.temporal);
  c.seed = static_cast<std::uint64_t>(d.get_int("seed", static_cast<long long>(c.seed)));
  c.windows.win_s = d.get_double("window.win_s", c.windows.win_s);
  c.windows.stride_s = d.get_double("window.stride_s", c.windows.stride_s);
  c.windows.fs = d.get_double("window.fs", c.windows.fs);
  c.filter.lr = d.get_double("filter.lr", c.filter.lr);
  c.filter.momentum = d.get_double("filter.momentum", c.filter.momentum);
  c.filter.epochs = static_cast<int>(d.get_int("filter.epochs", c.filter.epochs));
  c.filter.loss = mafilter::loss_mode_from_string(d.get_string("filter.loss", mafilter::to_string(c.filter.loss)));
  c.filter_k1 = static_cast<int>(d.get_int("filter.k1", c.filter_k1));
  c.filter_k2 = static_cast<int>(d.get_int("filter.k2", c.filter_k2));
  c.adversarial_frac = d.get_double("augment.adversarial_frac", c.adversarial_frac);
  c.clean_tol_bpm = d.get_double("augment.clean_tol_bpm", c.clean_tol_bpm);
  if (!d.has("net.frame_len")) c.net.frame_len = static_cast<std::size_t>(std::llround(c.windows.win_s * c.windows.fs));
  KeyValueDoc nd = c.net.to_doc();
  for (const auto& [k, v] : d.with_prefix("net.")) nd.set(k, v);
  c.net = nn::NetConfig::from_doc(nd);
  c.net.probabilistic = c.variant.probabilistic;
  c.net.temporal = c.variant.temporal;
  c.train.adam.lr = d.get_double("train.lr", c.train.adam.lr);
  c.train.batch = static_cast<std::size_t>(d.get_int("train.batch", static_cast<long long>(c.train.batch)));
  c.train.epochs = static_cast<int>(d.get_int("train.epochs", c.train.epochs));
  c.train.patience = static_cast<int>(d.get_int("train.patience", c.train.patience));
  c.train.threads = static_cast<unsigned>(d.get_int("train.threads", c.train.threads));
  c.train.time_budget_s = d.get_double("train.time_budget_s", c.train.time_budget_s);
  c.val_fraction = d.get_double("train.val_fraction", c.val_fraction);
  c.thr = d.get_double("eval.thr", c.thr);
  c.cl = d.get_double("eval.cl", c.cl);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

PreparedSession prepare_session(const SessionRecording& s, const PipelineConfig& cfg, FilterCache* cache) {
  PreparedSession p;
  p.subject_id = s.subject_id;
  auto aligned = signal::align_channels(s, cfg.windows.fs);
  if (cfg.variant.adaptive) {
    mafilter::FilterBank bank;
    if (cache && cache->count(s.subject_id)) {
      bank = cache->at(s.subject_id);
    } else {
      bank = mafilter::train_filter_bank(aligned, s, cfg.filter, derive_seed(cfg.seed, "filter:" + s.subject_id),
                                         cfg.filter_k1, cfg.filter_k2, &p.filter_traces);
      if (cache) (*cache)[s.subject_id] = bank;
    }
    p.cleaned = mafilter::clean_session(bank, aligned, s);
  } else {
    p.cleaned = std::move(aligned);
  }
  p.frames = signal::window_aligned(p.cleaned, s, cfg.windows);
  return p;
}

std::vector<augment::LabeledFrame> labelled_frames(const PreparedSession& p) {
  std::vector<augment::LabeledFrame> out;
  for (std::size_t i = 0; i < p.frames.size(); ++i) {
    const auto& f = p.frames[i];
    if (!f.hr || *f.hr < augment::kLabelLo || *f.hr >= augment::kLabelHi) continue;
    augment::LabeledFrame lf;
    lf.frame = f;
    if (i > 0) lf.prev = p.frames[i - 1];
    lf.hr_label = *f.hr;
    out.push_back(std::move(lf));
  }
  return out;
}

namespace {

// 2N cleaned samples starting `back_s` seconds before the frame, or empty.
std::span<const double> context(const PreparedSession& p, const SampleFrame& f, double back_s) {
  const double fs = p.cleaned.fs;
  const long long start = std::llround((f.t0 - back_s - p.cleaned.t0) * fs);
  const std::size_t len = 2 * f.size();
  if (start < 0 || static_cast<std::size_t>(start) + len > p.cleaned.size()) return {};
  return std::span<const double>(p.cleaned.ppg).subspan(static_cast<std::size_t>(start), len);
}

}  // namespace

augment::AugmentedSet build_training_set(const std::vector<PreparedSession>& train, const PipelineConfig& cfg,
                                         std::vector<std::string>* warnings) {
  std::vector<augment::LabeledFrame> original, high;
  for (const auto& p : train) {
    auto lfs = labelled_frames(p);
    if (cfg.variant.high_hr) {
      for (const auto& lf : lfs) {
        if (!augment::is_clean_frame(lf, cfg.clean_tol_bpm)) continue;
        // previous output window is one stride earlier in output time = two strides of source
        auto hh = augment::make_high_hr_sample(lf, context(p, lf.frame, 0.0),
                                               context(p, lf.frame, 2.0 * cfg.windows.stride_s));
        if (hh) high.push_back(std::move(*hh));
      }
    }
    original.insert(original.end(), std::make_move_iterator(lfs.begin()), std::make_move_iterator(lfs.end()));
  }
  if (original.empty()) throw ValidationError("train", "no labelled training windows");
  std::vector<augment::LabeledFrame> adv;
  const auto adv_seed = derive_seed(cfg.seed, "adversarial");
  if (cfg.variant.adversarial && cfg.adversarial_frac > 0) {
    std::mt19937_64 rng(adv_seed);
    adv = augment::build_adversarial_subset(original, cfg.adversarial_frac, rng, warnings);
  }
  const auto merge_seed = derive_seed(cfg.seed, "merge");
  std::mt19937_64 rng(merge_seed);
  augment::AugmentedSet set;
  set.frames = augment::merge_training_sets(original, high, adv, rng);
  set.info["seed"] = std::to_string(cfg.seed);
  set.info["adversarial_seed"] = std::to_string(adv_seed);
  set.info["merge_seed"] = std::to_string(merge_seed);
  set.info["adversarial_frac"] = format_double(cfg.variant.adversarial ? cfg.adversarial_frac : 0.0);
  set.info["high_hr"] = cfg.variant.high_hr ? "true" : "false";
  set.info["clean_tol_bpm"] = format_double(cfg.clean_tol_bpm);
  return set;
}

static std::vector<double> normalized_input(const SampleFrame& f, std::size_t channels) {
  auto x = nn::frame_input(f, channels);
  const std::size_t n = f.size();
  for (std::size_t c = 0; c < channels; ++c) {
    auto z = signal::zscore(std::span<const double>(x).subspan(c * n, n));
    std::copy(z.begin(), z.end(), x.begin() + static_cast<std::ptrdiff_t>(c * n));
  }
  return x;
}

nn::NetSample to_sample(const augment::LabeledFrame& lf, const nn::NetConfig& net, bool temporal) {
  nn::NetSample s;
  s.cur = normalized_input(lf.frame, net.in_channels);
  if (temporal && lf.prev) s.prev = normalized_input(*lf.prev, net.in_channels);
  s.y = lf.hr_label;
  s.t = lf.frame.t_end();
  return s;
}

TrainedModel train_model(const augment::AugmentedSet& set, const PipelineConfig& cfg) {
  if (set.frames.empty()) throw ValidationError("train", "empty training set");
  std::vector<nn::NetSample> all;
  all.reserve(set.frames.size());
  for (const auto& lf : set.frames) all.push_back(to_sample(lf, cfg.net, cfg.variant.temporal));

  nn::NetConfig nc = cfg.net;
  nc.probabilistic = cfg.variant.probabilistic;
  nc.temporal = cfg.variant.temporal;
  double mean = 0.0;
  for (const auto& s : all) mean += s.y;
  mean /= static_cast<double>(all.size());
  double var = 0.0;
  for (const auto& s : all) var += (s.y - mean) * (s.y - mean);
  const double sd = std::sqrt(var / static_cast<double>(all.size()));
  nc.mu_offset = mean;
  nc.mu_scale = std::max(sd, 1.0);
  nc.sigma_scale = std::max(sd, 1.0);

  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg.seed, "val-split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(all.size())));
  std::vector<nn::NetSample> train, val;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_val ? val : train).push_back(std::move(all[idx[i]]));

  TrainedModel m{nn::HrNetwork(nc, derive_seed(cfg.seed, "net-init")), {}};
  nn::TrainOptions opt = cfg.train;
  opt.seed = derive_seed(cfg.seed, "net-shuffle");
  m.trace = nn::train_network(m.net, train, val, opt);
  return m;
}

std::vector<nn::HrEstimate> infer_frames(const nn::HrNetwork& net, const std::vector<SampleFrame>& frames) {
  std::vector<nn::HrEstimate> out;
  out.reserve(frames.size());
  const auto& nc = net.config();
  std::vector<double> prev;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto cur = normalized_input(frames[i], nc.in_channels);
    const bool self = i == 0 || !nc.temporal;
    out.push_back(net.forward(cur, self ? nullptr : &prev, frames[i].t_end()));
    prev = std::move(cur);
  }
  return out;
}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

FoldResult train_pipeline(const eval::Fold& fold, const std::vector<SessionRecording>& sessions,
                          const PipelineConfig& cfg, FilterCache* cache) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  FoldResult r;
  r.fold = fold;
  r.seeds["seed"] = cfg.seed;
  r.seeds["adversarial"] = derive_seed(cfg.seed, "adversarial");
  r.seeds["merge"] = derive_seed(cfg.seed, "merge");
  r.seeds["val_split"] = derive_seed(cfg.seed, "val-split");
  r.seeds["net_init"] = derive_seed(cfg.seed, "net-init");
  r.seeds["net_shuffle"] = derive_seed(cfg.seed, "net-shuffle");

  auto sessions_of = [&](const std::string& id) {
    std::vector<const SessionRecording*> out;
    for (const auto& s : sessions)
      if (s.subject_id == id) out.push_back(&s);
    if (out.empty()) throw ValidationError("fold", "no session for subject '" + id + "'");
    return out;
  };

  std::vector<PreparedSession> train, test;
  stage("ma-filter", [&] {
    for (const auto& id : fold.train)
      for (const auto* s : sessions_of(id)) {
        r.seeds["filter:" + id] = derive_seed(cfg.seed, "filter:" + id);
        train.push_back(prepare_session(*s, cfg, cache));
        if (!train.back().filter_traces.empty()) r.filter_traces[id] = train.back().filter_traces;
      }
    for (const auto* s : sessions_of(fold.test)) {
      r.seeds["filter:" + fold.test] = derive_seed(cfg.seed, "filter:" + fold.test);
      test.push_back(prepare_session(*s, cfg, cache));
      if (!test.back().filter_traces.empty()) r.filter_traces[fold.test] = test.back().filter_traces;
    }
    return 0;
  });

  const auto set = stage("augment", [&] { return build_training_set(train, cfg, &r.warnings); });
  for (const auto& [p, c] : augment::provenance_counts(set.frames)) r.counts[augment::to_string(p)] = c;

  r.model = stage("nn-train", [&] { return train_model(set, cfg); });

  stage("evaluate", [&] {
    for (const auto& p : test) {
      const auto est = infer_frames(r.model.net, p.frames);
      for (std::size_t i = 0; i < p.frames.size(); ++i) {
        const auto& f = p.frames[i];
        if (!f.hr) continue;
        r.predictions.push_back({est[i], *f.hr, f.subject_id, f.activity});
        r.test_frames.push_back(f);
      }
    }
    r.report = eval::evaluate(r.predictions, cfg.thr, cfg.cl);
    return 0;
  });
  return r;
}

void write_run_log(const FoldResult& r, const PipelineConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValueDoc doc = cfg.to_doc();
  doc.set("fold.test", r.fold.test);
  std::string tr;
  for (std::size_t i = 0; i < r.fold.train.size(); ++i) tr += (i ? "," : "") + r.fold.train[i];
  doc.set("fold.train", tr);
  for (const auto& [k, v] : r.seeds) doc.set("seeds." + k, std::to_string(v));
  for (const auto& [k, v] : r.counts) doc.set("count." + k, v);
  doc.set("nn.best_epoch", r.model.trace.best_epoch);
  doc.set("nn.stopped_early", r.model.trace.stopped_early);
  doc.save(dir / "run.txt");

  std::ostringstream nl;
  nl << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < r.model.trace.train_loss.size(); ++e)
    nl << e << ',' << format_double(r.model.trace.train_loss[e]) << ','
       << (e < r.model.trace.val_loss.size() ? format_double(r.model.trace.val_loss[e]) : "NA") << '\n';
  write_text(dir / "nn_loss.csv", nl.str());

  std::ostringstream fl;
  fl << "subject_id,activity,epoch,loss\n";
  for (const auto& [subj, m] : r.filter_traces)
    for (const auto& [act, trace] : m)
      for (std::size_t e = 0; e < trace.size(); ++e) fl << subj << ',' << act << ',' << e << ',' << format_double(trace[e]) << '\n';
  write_text(dir / "filter_loss.csv", fl.str());

  std::string w;
  for (const auto& s : r.warnings) w += s + "\n";
  write_text(dir / "warnings.txt", w);
}

std::string predictions_csv(const std::vector<nn::HrEstimate>& est, double thr, double cl) {
  std::ostringstream o;
  o << "t_s,mu_bpm,sigma_bpm,trust_prob,keep\n";
  for (const auto& e : est) {
    const auto d = eval::classify_trust(e, thr, cl);
    o << format_double(e.frame_time) << ',' << format_double(e.mu_hr) << ','
      << (e.probabilistic ? format_double(e.sigma_hr) : std::string("NA")) << ',' << format_double(d.trust_prob) << ','
      << (d.keep ? 1 : 0) << '\n';
  }
  return o.str();
}

}  // namespace kidppg::pipeline
