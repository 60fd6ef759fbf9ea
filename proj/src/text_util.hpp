#pragma once

// Internal text helpers shared by the serialization code paths.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nebula/errors.hpp"

namespace nebula::text {

// 17 significant digits: round-trips any double exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse '" + s + "' as a number (" + context + ")");
  }
}

inline long long parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse '" + s + "' as an integer (" + context + ")");
  }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream ofs(path);
  if (!ofs) throw IoError("cannot open '" + path.string() + "' for writing");
  return ofs;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream ifs(path);
  if (!ifs) throw IoError("cannot open '" + path.string() + "' for reading");
  return ifs;
}

inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream ifs = open_in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(ifs, line)) {
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("malformed key=value line in '" + path.string() + "': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline const std::string& require_key(const std::map<std::string, std::string>& kv,
                                      const std::string& key,
                                      const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw IoError("missing key '" + key + "' in '" + path.string() + "'");
  return it->second;
}

}  // namespace nebula::text
