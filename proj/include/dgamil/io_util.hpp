// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgamil/common.hpp"

namespace dgamil {

static_assert(std::endian::native == std::endian::little,
              "file payloads are little-endian; big-endian hosts need byte swaps");

// All binary containers share one layout: a fixed-length single-line textual
// header ("MAGIC key=value ..." padded with spaces) followed by a raw f32le
// payload.
inline constexpr size_t kHeaderLen = 256;

inline void write_fixed_header(std::ostream& os, const std::string& content) {
  if (content.size() + 1 > kHeaderLen)
    throw FormatError("header too long (" + std::to_string(content.size()) + " bytes)");
  std::string line = content;
  line.resize(kHeaderLen - 1, ' ');
  line.push_back('\n');
  os.write(line.data(), static_cast<std::streamsize>(line.size()));
}

inline std::string read_fixed_header(std::istream& is, const std::string& magic) {
  std::string line(kHeaderLen, '\0');
  is.read(line.data(), static_cast<std::streamsize>(kHeaderLen));
  if (is.gcount() != static_cast<std::streamsize>(kHeaderLen))
    throw FormatError("header: file shorter than the fixed header");
  if (line.back() != '\n') throw FormatError("header: missing terminator");
  if (line.compare(0, magic.size(), magic) != 0 ||
      (line.size() > magic.size() && line[magic.size()] != ' '))
    throw FormatError("header: bad magic string (expected " + magic + ")");
  line.pop_back();
  while (!line.empty() && line.back() == ' ') line.pop_back();
  return line;
}

inline std::map<std::string, std::string> parse_kv(const std::string& header) {
  std::map<std::string, std::string> kv;
  std::istringstream is(header);
  std::string tok;
  is >> tok;  // magic
  while (is >> tok) {
    const size_t eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("header: malformed token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline const std::string& kv_get(const std::map<std::string, std::string>& kv,
                                 const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("header: missing field '" + key + "'");
  return it->second;
}

inline int64_t kv_i64(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stoll(kv_get(kv, key));
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    throw FormatError("header: field '" + key + "' is not an integer");
  }
}

inline uint64_t kv_u64(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stoull(kv_get(kv, key));
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    throw FormatError("header: field '" + key + "' is not an unsigned integer");
  }
}

inline double kv_f64(const std::map<std::string, std::string>& kv, const std::string& key) {
  try {
    return std::stod(kv_get(kv, key));
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    throw FormatError("header: field '" + key + "' is not a number");
  }
}

// %.17g guarantees an exact double round-trip through text.
inline std::string f64_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_f32_payload(std::ostream& os, const std::vector<float>& data) {
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline std::vector<float> read_f32_payload(std::istream& is, size_t count, const char* what) {
  std::vector<float> data(count);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
  const size_t got = static_cast<size_t>(is.gcount()) / sizeof(float);
  if (got != count)
    throw FormatError(std::string(what) + ": payload truncated, expected " + std::to_string(count) +
                      " f32 values, got " + std::to_string(got));
  return data;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace dgamil
