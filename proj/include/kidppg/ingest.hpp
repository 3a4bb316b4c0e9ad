#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kidppg/types.hpp"

namespace kidppg::ingest {

constexpr int kFormatVersion = 1;

struct Violation {
  std::string field;
  std::string rule;
};

// Container layout (one directory per session):
//   manifest.txt   key = value lines; channel.<name> = fs:<Hz>,count:<n>,dtype:f32le,units:<text>
//   <name>.f32     raw little-endian f32 samples
//   hr.csv         t_s,hr_bpm
//   activity.csv   start_s,end_s,label
//
// ppg_acc_shift_s is stored raw and applied on load by adding it to the ACC
// channels' t0; write_session undoes it so write/load round-trips.
SessionRecording load_session(const std::filesystem::path& dir);
void write_session(const SessionRecording& s, const std::filesystem::path& dir);

std::vector<Violation> validate_session(const SessionRecording& s);

// Throws ValidationError on the first violation.
void require_valid(const SessionRecording& s);

// Sorted subdirectories of `root` that contain a manifest.txt.
std::vector<std::filesystem::path> list_sessions(const std::filesystem::path& root);

}  // namespace kidppg::ingest
