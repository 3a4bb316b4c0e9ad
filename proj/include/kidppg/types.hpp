#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kidppg {

using Bpm = double;

constexpr double kBpmPerHz = 60.0;

// One sampled sensor stream. Samples are held as double in memory; on disk
// they are f32, so anything loaded from a container is f32-representable.
struct Channel {
  std::vector<double> samples;
  double fs = 0.0;  // Hz
  double t0 = 0.0;  // s
  std::string units;

  double duration() const { return fs > 0 ? static_cast<double>(samples.size()) / fs : 0.0; }
  double t_end() const { return t0 + duration(); }
};

struct HrPoint {
  double t_s = 0.0;
  Bpm hr = 0.0;
};

struct ActivityInterval {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;
};

inline const char* const kRequiredChannels[] = {"ppg", "acc_x", "acc_y", "acc_z"};

struct SessionRecording {
  std::string subject_id;
  std::map<std::string, Channel> channels;
  std::vector<HrPoint> hr_track;
  std::vector<ActivityInterval> activity_track;
  double ppg_acc_shift_s = 0.0;
  // Free-form metadata carried through the manifest (e.g. "scenario").
  std::map<std::string, std::string> metadata;

  const Channel& channel(const std::string& name) const;
  Channel& channel(const std::string& name);
  double t_start() const;  // latest start over required channels
  double t_end() const;    // earliest end over required channels
  // Label of the activity interval containing t, or "" if none.
  std::string activity_at(double t) const;
};

// One analysis window on the common grid. acc is stored row-major N x 3.
struct SampleFrame {
  double t0 = 0.0;
  double fs = 0.0;
  std::vector<double> ppg;
  std::vector<double> acc;
  std::optional<Bpm> hr;
  std::string subject_id;
  std::string activity;
  std::size_t index = 0;  // position within its session's window sequence

  std::size_t size() const { return ppg.size(); }
  double t_end() const { return t0 + static_cast<double>(ppg.size()) / fs; }
  double acc_at(std::size_t t, std::size_t axis) const { return acc[t * 3 + axis]; }
};

}  // namespace kidppg
