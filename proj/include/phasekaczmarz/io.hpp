#ifndef PHASEKACZMARZ_IO_HPP
#define PHASEKACZMARZ_IO_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pkz {

/// Parse failure with file/line context. Maps to the I/O error exit path.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an observation's digest does not match the system it is used
/// with. Semantically a mismatch between inputs, not an I/O failure.
class DigestMismatchError : public std::runtime_error {
 public:
  explicit DigestMismatchError(const std::string& what)
      : std::runtime_error(what) {}
};

namespace io {

/// 17 significant digits: enough for exact double round-trips.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string to_hex16(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

/// Whole-token finite double, or ParseError mentioning where it came from.
inline double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(where + ": bad numeric field '" + std::string(tok) + "'");
  if (!std::isfinite(v))
    throw ParseError(where + ": non-finite value '" + std::string(tok) + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view tok, const std::string& where) {
  std::uint64_t v = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(where + ": bad integer field '" + std::string(tok) + "'");
  return v;
}

inline std::uint64_t parse_hex16(std::string_view tok, const std::string& where) {
  std::uint64_t v = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v, 16);
  if (ec != std::errc() || ptr != last)
    throw ParseError(where + ": bad hex field '" + std::string(tok) + "'");
  return v;
}

/// FNV-1a over explicit little-endian words, so the value is byte-order
/// independent even though we hash doubles.
class Fnv1a64 {
 public:
  void feed_u64(std::uint64_t w) {
    for (int i = 0; i < 8; ++i) {
      hash_ ^= (w >> (8 * i)) & 0xFFu;
      hash_ *= 0x100000001B3ull;
    }
  }
  void feed_double(double x) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    feed_u64(bits);
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  // Ignore a single trailing blank line from a final newline.
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << content;
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace io
}  // namespace pkz

#endif  // PHASEKACZMARZ_IO_HPP
