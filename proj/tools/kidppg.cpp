// kidppg: command-line front end for the heart-rate pipeline.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kidppg/augment.hpp"
#include "kidppg/error.hpp"
#include "kidppg/eval.hpp"
#include "kidppg/ingest.hpp"
#include "kidppg/kv.hpp"
#include "kidppg/ma_filter.hpp"
#include "kidppg/nn.hpp"
#include "kidppg/pipeline.hpp"
#include "kidppg/seed.hpp"
#include "kidppg/signal.hpp"
#include "kidppg/synth.hpp"

namespace fs = std::filesystem;
using namespace kidppg;

namespace {

struct Common {
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string config;
};

pipeline::PipelineConfig load_config(const Common& c, const std::string& variant = "") {
  KeyValueDoc doc;
  if (!c.config.empty()) doc = KeyValueDoc::load(c.config);
  if (!variant.empty()) doc.set("variant", variant);
  if (c.seed_set) doc.set("seed", static_cast<long long>(c.seed));
  return pipeline::PipelineConfig::from_doc(doc);
}

template <typename F>
void stage(const std::string& name, F&& f) {
  try {
    f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct TruthRow {
  double t_s = 0;
  double hr = 0;
  std::string activity;
};

std::string windows_csv(const std::vector<SampleFrame>& frames) {
  std::ostringstream o;
  o << "t_s,hr_bpm,activity\n";
  for (const auto& f : frames)
    if (f.hr) o << format_double(f.t_end()) << ',' << format_double(*f.hr) << ',' << f.activity << '\n';
  return o.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p, const std::string& header) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line) || trim(line) != header)
    throw FormatError(p.string() + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    rows.push_back(split(trim(line), ','));
  }
  return rows;
}

std::vector<TruthRow> read_truth(const fs::path& p) {
  std::vector<TruthRow> out;
  for (const auto& r : read_csv(p, "t_s,hr_bpm,activity")) {
    if (r.size() < 2) throw FormatError(p.string() + ": truth rows need t_s,hr_bpm,activity");
    out.push_back({parse_double(r[0], p.string()), parse_double(r[1], p.string()), r.size() > 2 ? r[2] : ""});
  }
  return out;
}

std::vector<nn::HrEstimate> read_predictions(const fs::path& p) {
  std::vector<nn::HrEstimate> out;
  for (const auto& r : read_csv(p, "t_s,mu_bpm,sigma_bpm,trust_prob,keep")) {
    if (r.size() != 5) throw FormatError(p.string() + ": prediction rows need 5 fields");
    nn::HrEstimate e;
    e.frame_time = parse_double(r[0], p.string());
    e.mu_hr = parse_double(r[1], p.string());
    if (r[2] == "NA") {
      e.probabilistic = false;
      e.sigma_hr = nn::kSigmaFloor;
    } else {
      e.sigma_hr = parse_double(r[2], p.string());
    }
    out.push_back(e);
  }
  return out;
}

std::vector<eval::Prediction> join(const std::vector<nn::HrEstimate>& est, const std::vector<TruthRow>& truth,
                                   const std::string& pred_name, const std::string& truth_name,
                                   const std::string& subject) {
  if (est.size() != truth.size())
    throw ValidationError("evaluate", pred_name + " has " + std::to_string(est.size()) + " rows but " + truth_name +
                                          " has " + std::to_string(truth.size()));
  std::vector<eval::Prediction> out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (std::abs(est[i].frame_time - truth[i].t_s) > 1e-6)
      throw ValidationError("evaluate", pred_name + " and " + truth_name + " disagree on t_s at row " +
                                            std::to_string(i + 1));
    out.push_back({est[i], truth[i].hr, subject, truth[i].activity});
  }
  return out;
}

// --- subcommands ------------------------------------------------------------

void cmd_synth(const Common& c, const std::string& spec_path, bool suite, const std::string& out) {
  stage("synth", [&] {
    if (suite) {
      for (const auto& s : synth::gen_benchmark_suite(c.seed)) synth::write_synth(s, fs::path(out) / s.session.subject_id);
      return;
    }
    if (spec_path.empty()) throw ValidationError("synth", "--spec or --suite is required");
    const auto spec = synth::SynthSpec::from_doc(KeyValueDoc::load(spec_path));
    synth::write_synth(synth::gen_session(spec, c.seed), out);
  });
}

void cmd_windows(const Common& c, const std::string& session, const std::string& out) {
  stage("windows", [&] {
    const auto cfg = load_config(c);
    const auto s = ingest::load_session(session);
    write_text(out, windows_csv(signal::window_stream(s, cfg.windows)));
  });
}

void cmd_train_filter(const Common& c, const std::string& session, const std::string& activity, const std::string& out) {
  stage("ma-filter", [&] {
    const auto cfg = load_config(c);
    const auto s = ingest::load_session(session);
    const auto a = signal::align_channels(s, cfg.windows.fs);
    const auto seed = derive_seed(cfg.seed, "filter:" + s.subject_id);
    std::map<std::string, std::vector<double>> traces;
    if (activity.empty() || activity == "all") {
      const auto bank = mafilter::train_filter_bank(a, s, cfg.filter, seed, cfg.filter_k1, cfg.filter_k2, &traces);
      mafilter::save_bank(bank, out);
    } else {
      const auto segs = mafilter::activity_segments(a, s, activity, cfg.windows);
      if (segs.empty()) throw ValidationError("activity", "no complete window labelled '" + activity + "'");
      const auto r = mafilter::train_mix_filter(segs, cfg.filter, seed, cfg.filter_k1, cfg.filter_k2);
      mafilter::save_model(r.model, out);
      traces[activity] = r.loss_trace;
    }
    std::ostringstream o;
    o << "activity,epoch,loss\n";
    for (const auto& [act, tr] : traces)
      for (std::size_t e = 0; e < tr.size(); ++e) o << act << ',' << e << ',' << format_double(tr[e]) << '\n';
    write_text(fs::path(out) / "loss.csv", o.str());
  });
}

void cmd_clean(const Common& c, const std::string& session, const std::string& filter, const std::string& out) {
  stage("clean", [&] {
    const auto cfg = load_config(c);
    auto s = ingest::load_session(session);
    const auto bank = mafilter::load_bank_or_model(filter);
    const auto a = signal::align_channels(s, cfg.windows.fs);
    const auto cleaned = mafilter::clean_session(bank, a, s);
    // The cleaned container holds the aligned grid; acc moves with it so the
    // shift has been applied.
    SessionRecording o = s;
    o.ppg_acc_shift_s = 0.0;
    o.channels.clear();
    auto put = [&](const std::string& name, std::vector<double> v, const std::string& units) {
      Channel ch;
      ch.samples = std::move(v);
      ch.fs = cleaned.fs;
      ch.t0 = cleaned.t0;
      ch.units = units;
      o.channels[name] = std::move(ch);
    };
    put("ppg", cleaned.ppg, s.channel("ppg").units);
    const char* axes[] = {"acc_x", "acc_y", "acc_z"};
    for (std::size_t ax = 0; ax < 3; ++ax) {
      std::vector<double> v(cleaned.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = cleaned.acc[i * 3 + ax];
      put(axes[ax], std::move(v), s.channel(axes[ax]).units);
    }
    o.metadata["cleaned_with"] = fs::path(filter).filename().string();
    ingest::write_session(o, out);
  });
}

void cmd_augment(const Common& c, const std::vector<std::string>& inputs, double frac, bool high_hr,
                 const std::string& out) {
  stage("augment", [&] {
    auto cfg = load_config(c);
    cfg.variant.adaptive = false;  // inputs are already cleaned
    cfg.variant.adversarial = frac > 0;
    cfg.variant.high_hr = high_hr;
    cfg.adversarial_frac = frac;
    std::vector<pipeline::PreparedSession> prepared;
    for (const auto& in : inputs) prepared.push_back(pipeline::prepare_session(ingest::load_session(in), cfg));
    std::vector<std::string> warnings;
    auto set = pipeline::build_training_set(prepared, cfg, &warnings);
    set.info["warnings"] = std::to_string(warnings.size());
    augment::save_augmented(set, out);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  });
}

void cmd_train(const Common& c, const std::string& variant, const std::string& in, const std::string& out) {
  pipeline::PipelineConfig cfg;
  stage("config", [&] { cfg = load_config(c, variant); });
  augment::AugmentedSet set;
  stage("augment", [&] { set = augment::load_augmented(in); });
  stage("nn-train", [&] {
    const auto m = pipeline::train_model(set, cfg);
    nn::save_network(m.net, out);
    cfg.to_doc().save(fs::path(out) / "config.txt");
    std::ostringstream o;
    o << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < m.trace.train_loss.size(); ++e)
      o << e << ',' << format_double(m.trace.train_loss[e]) << ','
        << (e < m.trace.val_loss.size() ? format_double(m.trace.val_loss[e]) : "NA") << '\n';
    write_text(fs::path(out) / "loss.csv", o.str());
  });
}

void cmd_infer(const Common& c, const std::string& model, const std::string& session, const std::string& filter,
               double thr, double cl, const std::string& out) {
  stage("infer", [&] {
    const auto cfg = load_config(c);
    const auto net = nn::load_network(model);
    const auto s = ingest::load_session(session);
    auto a = signal::align_channels(s, cfg.windows.fs);
    if (!filter.empty()) a = mafilter::clean_session(mafilter::load_bank_or_model(filter), a, s);
    const auto frames = signal::window_aligned(a, s, cfg.windows);
    const auto est = pipeline::infer_frames(net, frames);
    write_text(out, pipeline::predictions_csv(est, thr, cl));
  });
}

void cmd_evaluate(const std::string& pred, const std::string& truth, double thr, double cl, const std::string& out) {
  stage("evaluate", [&] {
    const auto est = read_predictions(pred);
    const auto tr = read_truth(truth);
    const auto preds = join(est, tr, pred, truth, "all");
    const auto r = eval::evaluate(preds, thr, cl);
    write_text(out, eval::report_csv(r));
    std::cout << eval::report_table(r);
  });
}

void run_fold(const eval::Fold& fold, const std::vector<SessionRecording>& sessions, const pipeline::PipelineConfig& cfg,
              pipeline::FilterCache& cache, const fs::path& dir) {
  const auto r = pipeline::train_pipeline(fold, sessions, cfg, &cache);
  fs::create_directories(dir);
  std::vector<nn::HrEstimate> est;
  std::ostringstream truth;
  truth << "t_s,hr_bpm,activity\n";
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    est.push_back(r.predictions[i].est);
    truth << format_double(r.predictions[i].est.frame_time) << ',' << format_double(r.predictions[i].y) << ','
          << r.predictions[i].activity << '\n';
  }
  write_text(dir / "predictions.csv", pipeline::predictions_csv(est, cfg.thr, cfg.cl));
  write_text(dir / "truth.csv", truth.str());
  write_text(dir / "report.csv", eval::report_csv(r.report));
  pipeline::write_run_log(r, cfg, dir / "log");
  nn::save_network(r.model.net, dir / "model");
}

void cmd_loso(const Common& c, const std::string& data, const std::string& variant, int jobs, const std::string& out) {
  pipeline::PipelineConfig cfg;
  std::vector<SessionRecording> sessions;
  stage("config", [&] { cfg = load_config(c, variant); });
  stage("ingest", [&] {
    for (const auto& p : ingest::list_sessions(data)) sessions.push_back(ingest::load_session(p));
    if (sessions.empty()) throw ValidationError("data", "no sessions under " + data);
  });
  std::vector<eval::Fold> folds;
  stage("folds", [&] { folds = eval::loso_folds(sessions); });

  // Filters depend only on a subject's own data: train once, share across folds.
  pipeline::FilterCache cache;
  stage("ma-filter", [&] {
    if (!cfg.variant.adaptive) return;
    for (const auto& s : sessions) {
      const fs::path dir = fs::path(out) / "filters" / s.subject_id;
      if (fs::exists(dir / "manifest.txt")) {
        cache[s.subject_id] = mafilter::load_bank(dir);
        continue;
      }
      const auto a = signal::align_channels(s, cfg.windows.fs);
      cache[s.subject_id] = mafilter::train_filter_bank(a, s, cfg.filter, derive_seed(cfg.seed, "filter:" + s.subject_id),
                                                        cfg.filter_k1, cfg.filter_k2);
      mafilter::save_bank(cache[s.subject_id], dir);
    }
  });

  auto fold_dir = [&](const eval::Fold& f) { return fs::path(out) / ("fold_" + f.test); };
  if (jobs <= 1) {
    for (const auto& f : folds) run_fold(f, sessions, cfg, cache, fold_dir(f));
  } else {
    std::size_t next = 0, running = 0;
    std::map<pid_t, std::string> pids;
    bool failed = false;
    std::string fail_msg;
    while (next < folds.size() || running > 0) {
      while (running < static_cast<std::size_t>(jobs) && next < folds.size()) {
        const auto& f = folds[next++];
        std::cout.flush();
        const pid_t pid = fork();
        if (pid < 0) throw StageError("loso", "fork failed");
        if (pid == 0) {
          try {
            run_fold(f, sessions, cfg, cache, fold_dir(f));
            _exit(0);
          } catch (const std::exception& e) {
            std::cerr << "error: fold " << f.test << ": " << e.what() << '\n';
            _exit(1);
          }
        }
        pids[pid] = f.test;
        ++running;
      }
      int status = 0;
      const pid_t done = wait(&status);
      if (done < 0) break;
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        failed = true;
        fail_msg = "fold " + pids[done] + " failed";
      }
    }
    if (failed) throw StageError("loso", fail_msg);
  }

  stage("report", [&] {
    std::vector<eval::Prediction> all;
    for (const auto& f : folds) {
      const auto dir = fold_dir(f);
      auto p = join(read_predictions(dir / "predictions.csv"), read_truth(dir / "truth.csv"),
                    (dir / "predictions.csv").string(), (dir / "truth.csv").string(), f.test);
      all.insert(all.end(), p.begin(), p.end());
    }
    const auto r = eval::evaluate(all, cfg.thr, cfg.cl);
    write_text(fs::path(out) / "report.csv", eval::report_csv(r));
    const auto table = eval::report_table(r, "LOSO " + cfg.variant_name + " (" + cfg.variant.describe() + ")");
    write_text(fs::path(out) / "table.txt", table);
    cfg.to_doc().save(fs::path(out) / "config.txt");
    std::cout << table;
  });
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  stage("report", [&] {
    std::ostringstream o;
    for (const auto& in : inputs) {
      fs::path p = in;
      if (fs::is_directory(p)) p /= "report.csv";
      const auto rows = eval::parse_report_csv(read_text(p));
      auto get = [&](const std::string& m, const std::string& scope) {
        auto it = rows.find({m, scope});
        return it == rows.end() ? std::string("NA") : it->second;
      };
      std::vector<std::string> scopes;
      for (const auto& [k, v] : rows)
        if (k.first == "n" && k.second.rfind("subject:", 0) == 0) scopes.push_back(k.second);
      scopes.push_back("all");
      o << p.string() << '\n';
      o << "scope,mae_bpm,sd_ae_bpm,retention_pct,mean_nll\n";
      for (const auto& s : scopes)
        o << (s == "all" ? "Avg" : s.substr(8)) << ',' << get("mae_bpm", s) << ',' << get("sd_ae_bpm", s) << ','
          << get("retention_pct", s) << ',' << get("mean_nll", s) << '\n';
    }
    if (out.empty())
      std::cout << o.str();
    else
      write_text(out, o.str());
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KID-PPG heart-rate pipeline"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print the container format version");
  Common common;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--seed", common.seed, "Random seed")->each([&](const std::string&) { common.seed_set = true; });
    sc->add_option("--config", common.config, "key = value config file");
  };

  std::string spec, out, session, activity, filter, variant = "kid-ppg", in, model, pred, truth, data;
  std::vector<std::string> inputs;
  bool suite = false, high_hr = false;
  double frac = 0.5, thr = eval::kDefaultThr, cl = eval::kDefaultCl;
  int jobs = 1;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic session (or the 4-subject suite)");
  synth_cmd->add_option("--spec", spec, "Spec file");
  synth_cmd->add_flag("--suite", suite, "Write the benchmark suite S1..S4 under --out");
  synth_cmd->add_option("--out", out)->required();
  add_common(synth_cmd);

  auto* win_cmd = app.add_subcommand("windows", "Write window labels t_s,hr_bpm,activity");
  win_cmd->add_option("--session", session)->required();
  win_cmd->add_option("--out", out)->required();
  add_common(win_cmd);

  auto* tf_cmd = app.add_subcommand("train-filter", "Train the adaptive MA filter");
  tf_cmd->add_option("--session", session)->required();
  tf_cmd->add_option("--activity", activity, "Activity label; omit or 'all' for one filter per activity");
  tf_cmd->add_option("--out", out)->required();
  add_common(tf_cmd);

  auto* clean_cmd = app.add_subcommand("clean", "Subtract the estimated motion artifact");
  clean_cmd->add_option("--session", session)->required();
  clean_cmd->add_option("--filter", filter)->required();
  clean_cmd->add_option("--out", out)->required();
  add_common(clean_cmd);

  auto* aug_cmd = app.add_subcommand("augment", "Build the augmented training cache from cleaned sessions");
  aug_cmd->add_option("--in", inputs, "Cleaned session directories")->required();
  aug_cmd->add_option("--adversarial-frac", frac, "Fraction of adversarial examples kept")->capture_default_str();
  aug_cmd->add_flag("--high-hr", high_hr, "Add x2 speed-up examples");
  aug_cmd->add_option("--out", out)->required();
  add_common(aug_cmd);

  auto* train_cmd = app.add_subcommand("train", "Train the network on an augmented cache");
  train_cmd->add_option("--variant", variant)->check(CLI::IsMember({"point", "prob", "kid-ppg"}))->capture_default_str();
  train_cmd->add_option("--in", in, "Augmented cache directory")->required();
  train_cmd->add_option("--out", out)->required();
  add_common(train_cmd);

  auto* infer_cmd = app.add_subcommand("infer", "Predict HR for every window of a session");
  infer_cmd->add_option("--model", model)->required();
  infer_cmd->add_option("--session", session)->required();
  infer_cmd->add_option("--filter", filter, "Filter bank/model to clean the session first");
  infer_cmd->add_option("--thr", thr)->capture_default_str();
  infer_cmd->add_option("--cl", cl)->capture_default_str();
  infer_cmd->add_option("--out", out)->required();
  add_common(infer_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against window labels");
  eval_cmd->add_option("--pred", pred)->required();
  eval_cmd->add_option("--truth", truth)->required();
  eval_cmd->add_option("--thr", thr)->capture_default_str();
  eval_cmd->add_option("--cl", cl)->capture_default_str();
  eval_cmd->add_option("--out", out)->required();
  add_common(eval_cmd);

  auto* loso_cmd = app.add_subcommand("loso", "Leave-one-subject-out run over a data root");
  loso_cmd->add_option("--data", data)->required();
  loso_cmd->add_option("--variant", variant)->check(CLI::IsMember({"point", "prob", "kid-ppg"}))->capture_default_str();
  loso_cmd->add_option("--jobs", jobs, "Folds run in parallel (processes)")->capture_default_str();
  loso_cmd->add_option("--out", out)->required();
  add_common(loso_cmd);

  auto* report_cmd = app.add_subcommand("report", "Summarize report.csv files");
  report_cmd->add_option("--in", inputs, "report.csv files or LOSO output directories")->required();
  report_cmd->add_option("--out", out, "Write here instead of stdout");
  add_common(report_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (version) {
    std::cout << "format_version " << ingest::kFormatVersion << '\n';
    return 0;
  }
  try {
    if (*synth_cmd) cmd_synth(common, spec, suite, out);
    else if (*win_cmd) cmd_windows(common, session, out);
    else if (*tf_cmd) cmd_train_filter(common, session, activity, out);
    else if (*clean_cmd) cmd_clean(common, session, filter, out);
    else if (*aug_cmd) cmd_augment(common, inputs, frac, high_hr, out);
    else if (*train_cmd) cmd_train(common, variant, in, out);
    else if (*infer_cmd) cmd_infer(common, model, session, filter, thr, cl, out);
    else if (*eval_cmd) cmd_evaluate(pred, truth, thr, cl, out);
    else if (*loso_cmd) cmd_loso(common, data, variant, jobs, out);
    else if (*report_cmd) cmd_report(inputs, out);
    else {
      std::cerr << app.help();
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
