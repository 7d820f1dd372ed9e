#pragma once

// Location tokens: the bracketed seven-number text form of a box used inside
// questions and answers, plus the normalized regression space.
//
// Text order is [x1,x2,y1,y2,z1,z2,yaw] where (x1,x2), (y1,y2), (z1,z2) are the
// extents of the *unrotated* box about its center; yaw rotates about the center.

#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>

#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"

namespace llalign {

/// Seven values in [0,1].
struct NormBox7 {
  std::array<double, 7> v{};
  bool operator==(const NormBox7&) const = default;
};

namespace box_codec {

/// Value in tenths, rounded half away from zero.
inline long long to_tenths(double v) { return std::llround(v * 10.0); }

inline void append_tenths(std::string& out, long long t) {
  if (t < 0) out.push_back('-');
  const long long a = t < 0 ? -t : t;
  out += std::to_string(a / 10);
  out.push_back('.');
  out.push_back(static_cast<char>('0' + a % 10));
}

inline std::array<double, 7> extents(const Box7& b) {
  return {b.cx - 0.5 * b.l, b.cx + 0.5 * b.l, b.cy - 0.5 * b.w, b.cy + 0.5 * b.w,
          b.cz - 0.5 * b.h, b.cz + 0.5 * b.h, b.yaw};
}

inline std::string to_text(const Box7& b) {
  std::string out = "[";
  const auto e = extents(b);
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (i) out.push_back(',');
    append_tenths(out, to_tenths(e[i]));
  }
  out.push_back(']');
  return out;
}

/// The box that to_text(b) denotes exactly (extents and yaw on the 0.1 grid).
inline Box7 quantize(const Box7& b) {
  auto e = extents(b);
  for (double& v : e) v = static_cast<double>(to_tenths(v)) / 10.0;
  return {0.5 * (e[0] + e[1]), 0.5 * (e[2] + e[3]), 0.5 * (e[4] + e[5]),
          e[1] - e[0],         e[3] - e[2],         e[5] - e[4],
          wrap_yaw(e[6])};
}

namespace detail {

struct Cursor {
  std::string_view s;
  std::size_t pos = 0;

  bool done() const { return pos >= s.size(); }
  char peek() const { return done() ? '\0' : s[pos]; }
  void skip_ws() {
    while (!done() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) {
      throw ParseError(std::string("expected '") + c + "'", pos);
    }
    ++pos;
  }
  double number() {
    skip_ws();
    const std::size_t start = pos;
    if (peek() == '-' || peek() == '+') ++pos;
    std::size_t digits = 0;
    while (!done() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos, ++digits;
    if (peek() == '.') {
      ++pos;
      while (!done() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos, ++digits;
    }
    if (digits == 0) throw ParseError("expected a number", start);
    return std::strtod(std::string(s.substr(start, pos - start)).c_str(), nullptr);
  }
};

}  // namespace detail

/// Inverse of to_text. Throws ParseError with the offending character offset.
inline Box7 from_text(std::string_view text) {
  detail::Cursor cur{text};
  cur.expect('[');
  std::array<double, 7> e{};
  std::array<std::size_t, 7> offsets{};
  std::size_t n = 0;
  while (true) {
    const std::size_t at = cur.pos;
    const double v = cur.number();
    if (n == e.size()) throw ParseError("more than 7 numbers in box", at);
    offsets[n] = at;
    e[n++] = v;
    cur.skip_ws();
    if (cur.peek() == ',') {
      ++cur.pos;
      continue;
    }
    if (cur.peek() == ']') break;
    throw ParseError("expected ',' or ']'", cur.pos);
  }
  if (n != e.size()) {
    throw ParseError("box needs 7 numbers, got " + std::to_string(n), cur.pos);
  }
  ++cur.pos;
  cur.skip_ws();
  if (!cur.done()) throw ParseError("trailing characters after box", cur.pos);
  static constexpr std::array<const char*, 3> axes = {"x", "y", "z"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(e[2 * a + 1] > e[2 * a])) {
      throw ParseError(std::string("inverted or empty ") + axes[a] + " extent",
                       offsets[2 * a + 1]);
    }
  }
  return {0.5 * (e[0] + e[1]), 0.5 * (e[2] + e[3]), 0.5 * (e[4] + e[5]),
          e[1] - e[0],         e[3] - e[2],         e[5] - e[4],
          wrap_yaw(e[6])};
}

inline NormBox7 normalize(const Box7& b, const Range& r) {
  if (b.cx < r.x_min || b.cx > r.x_max || b.cy < r.y_min || b.cy > r.y_max || b.cz < r.z_min ||
      b.cz > r.z_max) {
    throw DataError("box center outside range");
  }
  const double ex = r.x_max - r.x_min, ey = r.y_max - r.y_min, ez = r.z_max - r.z_min;
  NormBox7 n{{(b.cx - r.x_min) / ex, (b.cy - r.y_min) / ey, (b.cz - r.z_min) / ez, b.l / ex,
              b.w / ey, b.h / ez, (b.yaw + kPi) / (2.0 * kPi)}};
  for (double v : n.v) {
    if (v < 0.0 || v > 1.0) throw DataError("box size exceeds the range extent");
  }
  return n;
}

inline Box7 denormalize(const NormBox7& n, const Range& r) {
  const double ex = r.x_max - r.x_min, ey = r.y_max - r.y_min, ez = r.z_max - r.z_min;
  return {r.x_min + n.v[0] * ex, r.y_min + n.v[1] * ey, r.z_min + n.v[2] * ez,
          n.v[3] * ex,           n.v[4] * ey,           n.v[5] * ez,
          n.v[6] * 2.0 * kPi - kPi};
}

}  // namespace box_codec
}  // namespace llalign
