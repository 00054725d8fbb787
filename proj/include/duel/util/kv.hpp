#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Small text helpers for the key-value formats used by configs, manifests,
// and reports.
namespace duel::util {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string lowercase(std::string_view s);

/// "key = value" lines in order. Blank lines and '#' comments are skipped;
/// a line without '=' throws ConfigError naming the line number.
std::vector<std::pair<std::string, std::string>> parse_kv_lines(std::string_view text);

/// One "[section]" block of a flat-sectioned file.
struct Section {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
  int line = 0;
};

/// Entries before the first header land in a section named "".
std::vector<Section> parse_sections(std::string_view text);

int to_int(std::string_view value, std::string_view key);
std::int64_t to_int64(std::string_view value, std::string_view key);
std::uint64_t to_uint64(std::string_view value, std::string_view key);
double to_double(std::string_view value, std::string_view key);
bool to_bool(std::string_view value, std::string_view key);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// Keeps large freed blocks in the heap instead of returning them to the
/// OS, so per-step graph buffers do not page-fault on every allocation.
/// Idempotent; a no-op outside glibc.
void tune_allocator();

}  // namespace duel::util
