#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kidppg {

// Flat `key = value` text document used for manifests and config files.
// Lines starting with '#' and blank lines are ignored. Key order is kept so
// that writing is deterministic.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValueDoc load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, std::size_t value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  // Throws FormatError naming the key and origin when absent or malformed.
  std::string require(const std::string& key) const;
  double require_double(const std::string& key) const;
  long long require_int(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;

  // Keys starting with `prefix`, in document order.
  std::vector<std::pair<std::string, std::string>> with_prefix(const std::string& prefix) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  const std::string& origin() const { return origin_; }

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_ = "<memory>";
};

// Shortest round-tripping decimal text for a double.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);
std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

// Raw little-endian f32 payload I/O.
void write_f32(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const std::filesystem::path& path);
std::size_t f32_count(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace kidppg
