#include "kidppg/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kidppg/error.hpp"
#include "kidppg/kv.hpp"

namespace kidppg {

const Channel& SessionRecording::channel(const std::string& name) const {
  auto it = channels.find(name);
  if (it == channels.end()) throw FormatError("session " + subject_id + ": missing channel '" + name + "'");
  return it->second;
}

Channel& SessionRecording::channel(const std::string& name) {
  auto it = channels.find(name);
  if (it == channels.end()) throw FormatError("session " + subject_id + ": missing channel '" + name + "'");
  return it->second;
}

double SessionRecording::t_start() const {
  double t = -1e300;
  for (const char* name : kRequiredChannels) t = std::max(t, channel(name).t0);
  return t;
}

double SessionRecording::t_end() const {
  double t = 1e300;
  for (const char* name : kRequiredChannels) t = std::min(t, channel(name).t_end());
  return t;
}

std::string SessionRecording::activity_at(double t) const {
  for (const auto& a : activity_track)
    if (t >= a.start_s && t < a.end_s) return a.label;
  return "";
}

namespace ingest {

namespace {

bool is_acc(const std::string& name) { return name.rfind("acc_", 0) == 0; }

std::vector<std::string> csv_rows(const std::filesystem::path& path, const std::string& header) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != header)
    throw FormatError(path.string() + ": expected header '" + header + "'");
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(trim(line));
  }
  return rows;
}

}  // namespace

std::vector<Violation> validate_session(const SessionRecording& s) {
  std::vector<Violation> v;
  if (s.subject_id.empty()) v.push_back({"subject_id", "must be non-empty"});
  for (const char* name : kRequiredChannels) {
    if (!s.channels.contains(name)) v.push_back({std::string("channels.") + name, "required channel missing"});
  }
  for (const auto& [name, c] : s.channels) {
    if (!(c.fs > 0.0)) v.push_back({"channels." + name + ".fs", "must be > 0"});
    if (!std::all_of(c.samples.begin(), c.samples.end(), [](double x) { return std::isfinite(x); }))
      v.push_back({"channels." + name + ".samples", "must be finite"});
    if (name.find(',') != std::string::npos || name.find('=') != std::string::npos)
      v.push_back({"channels." + name, "name must not contain ',' or '='"});
  }
  bool hr_range_ok = true, hr_order_ok = true;
  for (std::size_t i = 0; i < s.hr_track.size(); ++i) {
    const auto& p = s.hr_track[i];
    if (!(p.hr > 0.0 && p.hr <= 300.0) || !std::isfinite(p.t_s)) hr_range_ok = false;
    if (i > 0 && !(p.t_s > s.hr_track[i - 1].t_s)) hr_order_ok = false;
  }
  if (!hr_range_ok) v.push_back({"hr_track", "hr values must lie in (0, 300] BPM"});
  if (!hr_order_ok) v.push_back({"hr_track", "times must be strictly increasing"});
  bool act_ok = true;
  for (std::size_t i = 0; i < s.activity_track.size(); ++i) {
    const auto& a = s.activity_track[i];
    if (!(a.end_s > a.start_s)) act_ok = false;
    if (i > 0 && a.start_s < s.activity_track[i - 1].end_s) act_ok = false;
    if (a.label.find(',') != std::string::npos) act_ok = false;
  }
  if (!act_ok) v.push_back({"activity_track", "intervals must be non-empty, sorted and non-overlapping"});
  if (!std::isfinite(s.ppg_acc_shift_s)) v.push_back({"ppg_acc_shift_s", "must be finite"});
  return v;
}

void require_valid(const SessionRecording& s) {
  auto v = validate_session(s);
  if (!v.empty()) throw ValidationError(v.front().field, v.front().rule);
}

void write_session(const SessionRecording& s, const std::filesystem::path& dir) {
  require_valid(s);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  KeyValueDoc m;
  m.set("format_version", kFormatVersion);
  m.set("subject_id", s.subject_id);
  m.set("ppg_acc_shift_s", s.ppg_acc_shift_s);
  for (const auto& [k, val] : s.metadata) m.set("meta." + k, val);
  for (const auto& [name, c] : s.channels) {
    m.set("channel." + name, "fs:" + format_double(c.fs) + ",count:" + std::to_string(c.samples.size()) +
                                 ",dtype:f32le,units:" + (c.units.empty() ? "au" : c.units));
    const double raw_t0 = is_acc(name) ? c.t0 - s.ppg_acc_shift_s : c.t0;
    if (raw_t0 != 0.0) m.set("t0." + name, raw_t0);
    write_f32(dir / (name + ".f32"), c.samples);
  }
  m.save(dir / "manifest.txt");

  std::string hr = "t_s,hr_bpm\n";
  for (const auto& p : s.hr_track) hr += format_double(p.t_s) + "," + format_double(p.hr) + "\n";
  write_text(dir / "hr.csv", hr);
  std::string act = "start_s,end_s,label\n";
  for (const auto& a : s.activity_track)
    act += format_double(a.start_s) + "," + format_double(a.end_s) + "," + a.label + "\n";
  write_text(dir / "activity.csv", act);
}

SessionRecording load_session(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.txt"))
    throw FormatError(dir.string() + ": no manifest.txt");
  const auto m = KeyValueDoc::load(dir / "manifest.txt");
  const auto version = m.require_int("format_version");
  if (version != kFormatVersion)
    throw FormatError(m.origin() + ": unsupported format_version " + std::to_string(version));

  SessionRecording s;
  s.subject_id = m.require("subject_id");
  s.ppg_acc_shift_s = m.get_double("ppg_acc_shift_s", 0.0);
  for (const auto& [k, v] : m.with_prefix("meta.")) s.metadata[k.substr(5)] = v;

  for (const auto& [key, value] : m.with_prefix("channel.")) {
    const std::string name = key.substr(8);
    Channel c;
    std::size_t count = 0;
    bool have_fs = false, have_count = false;
    for (const auto& field : split(value, ',')) {
      const auto colon = field.find(':');
      if (colon == std::string::npos) throw FormatError(m.origin() + ": " + key + ": malformed field '" + field + "'");
      const std::string fk = field.substr(0, colon);
      const std::string fv = field.substr(colon + 1);
      const std::string ctx = m.origin() + ": " + key + "." + fk;
      if (fk == "fs") {
        c.fs = parse_double(fv, ctx);
        have_fs = true;
      } else if (fk == "count") {
        count = static_cast<std::size_t>(parse_int(fv, ctx));
        have_count = true;
      } else if (fk == "dtype") {
        if (fv != "f32le") throw FormatError(ctx + ": unsupported dtype '" + fv + "'");
      } else if (fk == "units") {
        c.units = fv;
      }
    }
    if (!have_fs || !have_count) throw FormatError(m.origin() + ": " + key + ": fs and count are required");
    const auto payload = dir / (name + ".f32");
    if (!std::filesystem::exists(payload)) throw FormatError(dir.string() + ": missing payload for channel '" + name + "'");
    const std::size_t actual = f32_count(payload);
    if (actual != count)
      throw CorruptionError(payload.string() + ": manifest declares " + std::to_string(count) + " samples, payload has " +
                            std::to_string(actual));
    c.samples = read_f32(payload);
    c.t0 = m.get_double("t0." + name, 0.0);
    if (is_acc(name)) c.t0 += s.ppg_acc_shift_s;
    s.channels.emplace(name, std::move(c));
  }
  for (const char* name : kRequiredChannels)
    if (!s.channels.contains(name)) throw FormatError(dir.string() + ": missing channel '" + name + "'");

  if (std::filesystem::exists(dir / "hr.csv")) {
    for (const auto& row : csv_rows(dir / "hr.csv", "t_s,hr_bpm")) {
      const auto f = split(row, ',');
      if (f.size() != 2) throw FormatError((dir / "hr.csv").string() + ": malformed row '" + row + "'");
      s.hr_track.push_back({parse_double(f[0], "hr.csv t_s"), parse_double(f[1], "hr.csv hr_bpm")});
    }
  }
  if (std::filesystem::exists(dir / "activity.csv")) {
    for (const auto& row : csv_rows(dir / "activity.csv", "start_s,end_s,label")) {
      const auto f = split(row, ',');
      if (f.size() != 3) throw FormatError((dir / "activity.csv").string() + ": malformed row '" + row + "'");
      s.activity_track.push_back({parse_double(f[0], "activity.csv start_s"), parse_double(f[1], "activity.csv end_s"), f[2]});
    }
  }
  require_valid(s);
  return s;
}

std::vector<std::filesystem::path> list_sessions(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(root)) throw IoError("not a directory: " + root.string());
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.txt")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ingest
}  // namespace kidppg
