#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kidppg/signal.hpp"
#include "kidppg/types.hpp"

namespace kidppg::mafilter {

enum class LossMode { MseFreq, MaeFreq };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

// Linear two-layer convolutional map from 3-axis acceleration to a motion
// artifact estimate. No bias terms, so the map is exactly linear.
//   layer1: 3 out x 3 in x k1, index (o * 3 + c) * k1 + j
//   layer2: 1 out x 3 in x k2, index c * k2 + j
struct MixFilterModel {
  int k1 = 21;
  int k2 = 1;
  std::uint64_t seed = 0;
  LossMode loss = LossMode::MseFreq;
  std::vector<double> layer1;
  std::vector<double> layer2;

  // layer1 ~ Normal(0, init_std); layer2 starts as a unit merge (centre tap
  // of each input channel = 1).
  static MixFilterModel init(int k1, int k2, std::uint64_t seed, LossMode loss, double init_std = 1e-3);
  void check() const;
};

struct AdaptHyperParams {
  double lr = 1e-7;
  double momentum = 1e-2;
  int epochs = 500;
  LossMode loss = LossMode::MseFreq;
  double early_stop_rel = 1e-6;
};

// One training pair: acc is row-major N x 3, ppg has N samples.
struct Segment {
  std::vector<double> acc;
  std::vector<double> ppg;
};

struct TrainResult {
  MixFilterModel model;
  std::vector<double> loss_trace;  // mean segment loss per epoch, entry 0 = before training
};

std::vector<double> predict_artifact(const MixFilterModel& m, std::span<const double> acc);

double adapt_loss(const MixFilterModel& m, std::span<const double> acc, std::span<const double> ppg, LossMode mode);

// Loss and exact gradient (layer1 then layer2, same layouts as the model).
struct LossGrad {
  double loss = 0.0;
  std::vector<double> g_layer1;
  std::vector<double> g_layer2;
};
LossGrad adapt_loss_grad(const MixFilterModel& m, std::span<const double> acc, std::span<const double> ppg,
                         LossMode mode);

// SGD with momentum (buf = momentum * buf + g; w -= lr * buf), one segment
// per step in the given order. Throws DivergenceError on a non-finite loss.
TrainResult train_mix_filter(const std::vector<Segment>& segments, const AdaptHyperParams& hp,
                             std::uint64_t init_seed, int k1 = 21, int k2 = 1);

// x_bvp = x_ppg - artifact; acc, timestamps and labels pass through.
SampleFrame remove_artifacts(const MixFilterModel& m, const SampleFrame& frame);

// Filters keyed by activity label.
struct FilterBank {
  std::map<std::string, MixFilterModel> filters;
};

// Windows lying entirely inside intervals labelled `activity`.
std::vector<Segment> activity_segments(const signal::AlignedSignals& a, const SessionRecording& s,
                                       const std::string& activity, const signal::WindowOptions& opts = {});

// Trains one filter per activity label present in the session's track.
FilterBank train_filter_bank(const signal::AlignedSignals& a, const SessionRecording& s,
                             const AdaptHyperParams& hp, std::uint64_t seed, int k1 = 21, int k2 = 1,
                             std::map<std::string, std::vector<double>>* traces = nullptr);

// Subtracts the artifact estimate over the full aligned record. Samples inside
// an activity interval use that activity's filter; transitions use the
// nearest preceding interval's filter (the first one before any interval).
signal::AlignedSignals clean_session(const FilterBank& bank, const signal::AlignedSignals& a,
                                     const SessionRecording& s);

// Model directory: manifest.txt (k1, k2, seed, loss_mode) + layer1.f32, layer2.f32.
void save_model(const MixFilterModel& m, const std::filesystem::path& dir);
MixFilterModel load_model(const std::filesystem::path& dir);
// Bank directory: manifest.txt with activity.<label> = <subdir>, one model per subdir.
void save_bank(const FilterBank& b, const std::filesystem::path& dir);
FilterBank load_bank(const std::filesystem::path& dir);
// Either a bank or a single model (registered under the empty label, applied everywhere).
FilterBank load_bank_or_model(const std::filesystem::path& dir);

}  // namespace kidppg::mafilter
