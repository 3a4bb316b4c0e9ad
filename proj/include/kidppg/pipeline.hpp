#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kidppg/augment.hpp"
#include "kidppg/eval.hpp"
#include "kidppg/kv.hpp"
#include "kidppg/ma_filter.hpp"
#include "kidppg/nn.hpp"
#include "kidppg/signal.hpp"

namespace kidppg::pipeline {

// One row of the model matrix.
struct Variant {
  bool adaptive = true;
  bool probabilistic = true;
  bool adversarial = true;
  bool high_hr = true;
  bool temporal = true;

  // "point": adaptive + attention, L1 point estimate.
  // "prob": adaptive + attention, Gaussian head, no guided augmentation.
  // "kid-ppg": everything on.
  static Variant named(const std::string& name);
  std::string describe() const;
};

struct PipelineConfig {
  std::string variant_name = "kid-ppg";
  Variant variant;
  signal::WindowOptions windows;
  mafilter::AdaptHyperParams filter;
  int filter_k1 = 21;
  int filter_k2 = 1;
  double adversarial_frac = 0.5;
  double clean_tol_bpm = augment::kCleanTolBpm;
  nn::NetConfig net;
  nn::TrainOptions train;
  double val_fraction = 0.15;
  double thr = eval::kDefaultThr;
  double cl = eval::kDefaultCl;
  std::uint64_t seed = 1;

  void validate() const;
  KeyValueDoc to_doc() const;
  // Starts from the named variant's defaults, then applies any overrides.
  static PipelineConfig from_doc(const KeyValueDoc& doc);
  static PipelineConfig for_variant(const std::string& name);
};

// A session after the MA stage, windowed, with labels.
struct PreparedSession {
  std::string subject_id;
  signal::AlignedSignals cleaned;  // raw when the variant is not adaptive
  std::vector<SampleFrame> frames;  // consecutive windows, stride apart
  std::map<std::string, std::vector<double>> filter_traces;
};

// Per-subject filter banks, reused across folds.
using FilterCache = std::map<std::string, mafilter::FilterBank>;

PreparedSession prepare_session(const SessionRecording& s, const PipelineConfig& cfg, FilterCache* cache = nullptr);

// Original labelled frames (prev = preceding window) of one prepared session.
std::vector<augment::LabeledFrame> labelled_frames(const PreparedSession& p);

// Original + high-HR + adversarial frames of the training sessions, merged.
augment::AugmentedSet build_training_set(const std::vector<PreparedSession>& train, const PipelineConfig& cfg,
                                         std::vector<std::string>* warnings = nullptr);

// z-scored network inputs.
nn::NetSample to_sample(const augment::LabeledFrame& lf, const nn::NetConfig& net, bool temporal);

struct TrainedModel {
  nn::HrNetwork net;
  nn::TrainTrace trace;
};
TrainedModel train_model(const augment::AugmentedSet& set, const PipelineConfig& cfg);

// Estimates for consecutive frames of one session; frame i attends to i-1,
// the first frame to itself.
std::vector<nn::HrEstimate> infer_frames(const nn::HrNetwork& net, const std::vector<SampleFrame>& frames);

struct FoldResult {
  eval::Fold fold;
  std::vector<eval::Prediction> predictions;
  std::vector<SampleFrame> test_frames;  // labelled test windows, same order as predictions
  eval::MetricsReport report;
  TrainedModel model;
  std::map<std::string, std::size_t> counts;  // training set per provenance
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::map<std::string, std::vector<double>>> filter_traces;  // subject -> activity -> trace
  std::vector<std::string> warnings;
};

// MA filters for train and test subjects -> augmentation of training windows
// -> network training -> evaluation on the test subject. Failures are
// rethrown as StageError naming the stage.
FoldResult train_pipeline(const eval::Fold& fold, const std::vector<SessionRecording>& sessions,
                          const PipelineConfig& cfg, FilterCache* cache = nullptr);

// Config snapshot, seeds and loss traces (nn_loss.csv, filter_loss.csv).
void write_run_log(const FoldResult& r, const PipelineConfig& cfg, const std::filesystem::path& dir);

// predictions.csv: t_s,mu_bpm,sigma_bpm,trust_prob,keep
std::string predictions_csv(const std::vector<nn::HrEstimate>& est, double thr, double cl);

}  // namespace kidppg::pipeline
