#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kidppg/kv.hpp"
#include "kidppg/types.hpp"

namespace kidppg::synth {

// Acceleration source active over [start_s, end_s): a tone (bandwidth 0) or
// band-limited Gaussian noise centred on freq_hz. amp is the per-axis peak
// amplitude for tones and the per-axis RMS * sqrt(2) for noise.
struct AccComponent {
  double start_s = 0.0;
  double end_s = 0.0;
  double freq_hz = 1.0;
  double bandwidth_hz = 0.0;
  std::array<double, 3> amp{0.0, 0.0, 0.0};
};

struct SynthSpec {
  std::string subject_id = "S1";
  double duration_s = 60.0;
  double fs = 32.0;
  std::vector<HrPoint> hr_nodes;  // piecewise-linear trajectory
  std::array<double, 3> bvp_amp{1.0, 0.4, 0.2};
  std::vector<AccComponent> acc;
  int mix_k = 1;
  std::vector<double> planted_mix;  // 3 x mix_k, index c * mix_k + j; same-padded correlation
  double noise_std = 0.0;
  // Pulse-shape drift in [0, 1]: harmonics 2 and 3 get slow sinusoidal
  // phase (up to +-pi/2) and amplitude (up to +-40%) modulation, periods
  // 40-90 s. 0 keeps the waveform shape fixed.
  double morph_drift = 0.0;
  std::vector<std::pair<double, double>> erasures;  // BVP amplitude gated to 0
  std::vector<ActivityInterval> activities;

  void validate() const;
  KeyValueDoc to_doc() const;
  static SynthSpec from_doc(const KeyValueDoc& doc);
};

// Ground truth for oracle comparisons. ppg = bvp + artifact + noise holds to
// rounding; noise absorbs the f32 quantization of the stored PPG.
struct SynthTruth {
  std::vector<double> bvp;
  std::vector<double> artifact;
  std::vector<double> noise;
  std::vector<double> hr;  // instantaneous trajectory per sample
};

struct SynthSession {
  SessionRecording session;
  SynthTruth truth;
  SynthSpec spec;
};

SynthSession gen_session(const SynthSpec& spec, std::uint64_t seed);

// Instantaneous HR of a piecewise-linear trajectory (clamped at the ends).
double trajectory_at(const std::vector<HrPoint>& nodes, double t);

// Scenario labels of the benchmark suite, in session order.
inline constexpr std::array<const char*, 5> kScenarios = {"a_clean", "b_motion", "c_overlap", "d_erasure", "e_ramp"};
inline constexpr int kSuiteSubjects = 4;

// Four subjects S1..S4, each a single session made of the five scenario
// segments (activity labels above) with a subject-specific planted filter.
std::vector<SynthSession> gen_benchmark_suite(std::uint64_t seed);

// Spec for one subject of the suite (exposed for targeted tests).
SynthSpec benchmark_spec(int subject, std::uint64_t seed);

// Writes the ingest container plus truth/bvp.f32 and truth/artifact.f32.
void write_synth(const SynthSession& s, const std::filesystem::path& dir);

}  // namespace kidppg::synth
