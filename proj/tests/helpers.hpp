#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kidppg/types.hpp"

namespace testutil {

// Session with sinusoidal PPG at a constant HR, zero-ish ACC, one activity.
inline kidppg::SessionRecording make_session(double duration_s, double fs_ppg = 64.0, double fs_acc = 32.0,
                                             double hr_bpm = 75.0, const std::string& id = "T1") {
  kidppg::SessionRecording s;
  s.subject_id = id;
  auto& ppg = s.channels["ppg"];
  ppg.fs = fs_ppg;
  ppg.units = "au";
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs_ppg));
  for (std::size_t t = 0; t < n; ++t)
    ppg.samples.push_back(std::sin(2 * std::numbers::pi * hr_bpm / 60.0 * static_cast<double>(t) / fs_ppg));
  for (const char* ax : {"acc_x", "acc_y", "acc_z"}) {
    auto& c = s.channels[ax];
    c.fs = fs_acc;
    c.units = "g";
    c.samples.assign(static_cast<std::size_t>(std::llround(duration_s * fs_acc)), 0.0);
  }
  for (double t = 0.0; t <= duration_s + 1e-9; t += 2.0) s.hr_track.push_back({t, hr_bpm});
  s.activity_track.push_back({0.0, duration_s, "rest"});
  return s;
}

}  // namespace testutil
