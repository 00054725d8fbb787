#include "duel/util/kv.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "duel/error.hpp"

namespace duel::util {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

namespace {

bool is_skippable(const std::string& line) { return line.empty() || line[0] == '#'; }

std::pair<std::string, std::string> parse_entry(const std::string& line, int lineno) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
  }
  auto key = trim(std::string_view(line).substr(0, eq));
  if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
  return {key, trim(std::string_view(line).substr(eq + 1))};
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_kv_lines(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  int lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    const auto line = trim(raw);
    if (is_skippable(line)) continue;
    out.push_back(parse_entry(line, lineno));
  }
  return out;
}

std::vector<Section> parse_sections(std::string_view text) {
  std::vector<Section> out(1);
  int lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    const auto line = trim(raw);
    if (is_skippable(line)) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header '" + line + "'");
      }
      out.push_back(Section{trim(std::string_view(line).substr(1, line.size() - 2)), {}, lineno});
      continue;
    }
    out.back().entries.push_back(parse_entry(line, lineno));
  }
  if (out.front().entries.empty()) out.erase(out.begin());
  return out;
}

namespace {

template <typename I>
I parse_integral(std::string_view value, std::string_view key) {
  I out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("key '" + std::string(key) + "': expected an integer, got '" + std::string(value) + "'");
  }
  return out;
}

}  // namespace

int to_int(std::string_view value, std::string_view key) { return parse_integral<int>(value, key); }

std::int64_t to_int64(std::string_view value, std::string_view key) {
  return parse_integral<std::int64_t>(value, key);
}

std::uint64_t to_uint64(std::string_view value, std::string_view key) {
  return parse_integral<std::uint64_t>(value, key);
}

double to_double(std::string_view value, std::string_view key) {
  const std::string s(value);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("key '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view value, std::string_view key) {
  const auto v = lowercase(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true/false, got '" + std::string(value) + "'");
}

std::string format_double(double value) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw InputError("failed writing " + path);
}

void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace duel::util
