#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "llalign/errors.hpp"

namespace llalign {

inline constexpr double kPi = std::numbers::pi;

/// Axis-aligned world bounds in meters, ego at the origin.
struct Range {
  double x_min = -54.0, x_max = 54.0;
  double y_min = -54.0, y_max = 54.0;
  double z_min = -5.0, z_max = 3.0;

  void validate() const {
    if (!(x_min < x_max) || !(y_min < y_max) || !(z_min < z_max)) {
      throw ConfigError("range requires min < max on every axis");
    }
  }
  bool contains_xy(double x, double y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  bool contains(double x, double y, double z) const {
    return contains_xy(x, y) && z >= z_min && z < z_max;
  }
  bool operator==(const Range&) const = default;
};

/// Wraps an angle into [-pi, pi).
inline double wrap_yaw(double yaw) {
  double w = std::fmod(yaw + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  w -= kPi;
  if (w >= kPi) w -= 2.0 * kPi;  // fmod rounding can land exactly on +pi
  return w;
}

/// 7-DoF box: center, size (length along heading, width, height), yaw.
struct Box7 {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;

  bool valid() const { return l > 0 && w > 0 && h > 0 && yaw >= -kPi && yaw < kPi; }
  std::array<double, 7> as_array() const { return {cx, cy, cz, l, w, h, yaw}; }
  static Box7 from_array(const std::array<double, 7>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
  }
  bool operator==(const Box7&) const = default;
};

// ---------------------------------------------------------------------------
// Categories and statuses

enum class Category : std::uint8_t { kCar, kPedestrian, kBus, kTruck, kConstructionVehicle };
inline constexpr std::size_t kNumCategories = 5;
inline constexpr std::array<Category, kNumCategories> kAllCategories = {
    Category::kCar, Category::kPedestrian, Category::kBus, Category::kTruck,
    Category::kConstructionVehicle};

enum class Status : std::uint8_t { kMoving, kStationary };

inline std::string_view category_id(Category c) {
  static constexpr std::array<std::string_view, kNumCategories> names = {
      "car", "pedestrian", "bus", "truck", "construction_vehicle"};
  return names[static_cast<std::size_t>(c)];
}

inline Category category_from_id(std::string_view s) {
  for (Category c : kAllCategories) {
    if (category_id(c) == s) return c;
  }
  throw DataError("unknown category '" + std::string(s) + "'");
}

/// Category as it appears in generated sentences.
inline std::string_view category_word(Category c) {
  static constexpr std::array<std::string_view, kNumCategories> words = {
      "car", "pedestrian", "bus", "truck", "construction vehicle"};
  return words[static_cast<std::size_t>(c)];
}

inline std::string_view category_plural(Category c) {
  static constexpr std::array<std::string_view, kNumCategories> words = {
      "cars", "pedestrians", "buses", "trucks", "construction vehicles"};
  return words[static_cast<std::size_t>(c)];
}

/// Pedestrians "stand", vehicles "park".
inline std::string_view status_word(Status s, Category c) {
  if (s == Status::kMoving) return "moving";
  return c == Category::kPedestrian ? "standing" : "parked";
}

inline std::string_view status_id(Status s) { return s == Status::kMoving ? "moving" : "stationary"; }

inline Status status_from_id(std::string_view s) {
  if (s == "moving") return Status::kMoving;
  if (s == "stationary" || s == "parked" || s == "standing") return Status::kStationary;
  throw DataError("unknown status '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Ego-centric views. Ego heading is +x; azimuth grows counter-clockwise
// (towards +y, i.e. to the left).

enum class ViewId : std::uint8_t { kFront, kFrontRight, kFrontLeft, kBack, kBackRight, kBackLeft };
inline constexpr std::size_t kNumViews = 6;
inline constexpr std::array<ViewId, kNumViews> kAllViews = {
    ViewId::kFront, ViewId::kFrontRight, ViewId::kFrontLeft,
    ViewId::kBack,  ViewId::kBackRight,  ViewId::kBackLeft};

inline std::size_t view_index(ViewId v) { return static_cast<std::size_t>(v); }

inline std::string_view view_name(ViewId v) {
  static constexpr std::array<std::string_view, kNumViews> names = {
      "front", "front right", "front left", "back", "back right", "back left"};
  return names[view_index(v)];
}

inline ViewId view_from_name(std::string_view s) {
  for (ViewId v : kAllViews) {
    if (view_name(v) == s) return v;
  }
  // accept the underscore spelling used on command lines
  std::string alt(s);
  std::replace(alt.begin(), alt.end(), '_', ' ');
  for (ViewId v : kAllViews) {
    if (view_name(v) == alt) return v;
  }
  throw DataError("unknown view '" + std::string(s) + "'");
}

/// Bitmask over the six views (bit i = ViewId index i).
using ViewSet = std::uint8_t;
inline constexpr ViewSet kAllViewsMask = 0x3F;
inline ViewSet view_bit(ViewId v) { return static_cast<ViewSet>(1u << view_index(v)); }

/// Half-open 60 degree wedges centred on the six camera directions.
inline ViewId sector_of_azimuth(double a) {
  constexpr double t30 = kPi / 6.0, t90 = kPi / 2.0, t150 = 5.0 * kPi / 6.0;
  if (a >= -t30 && a < t30) return ViewId::kFront;
  if (a >= t30 && a < t90) return ViewId::kFrontLeft;
  if (a >= t90 && a < t150) return ViewId::kBackLeft;
  if (a >= t150 || a < -t150) return ViewId::kBack;
  if (a >= -t150 && a < -t90) return ViewId::kBackRight;
  return ViewId::kFrontRight;
}

inline ViewId sector_of_point(double x, double y) { return sector_of_azimuth(std::atan2(y, x)); }

// ---------------------------------------------------------------------------
// BEV polygons

struct Point2 {
  double x = 0, y = 0;
};

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Shoelace signed area (positive for counter-clockwise).
inline double signed_area(const std::vector<Point2>& poly) {
  double s = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

/// Footprint quadrilateral of a box, counter-clockwise.
struct BevPolygon {
  std::array<Point2, 4> v;

  static BevPolygon from_box(const Box7& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.l, hw = 0.5 * b.w;
    const std::array<Point2, 4> local = {{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
    BevPolygon p;
    for (std::size_t i = 0; i < 4; ++i) {
      p.v[i] = {b.cx + c * local[i].x - s * local[i].y, b.cy + s * local[i].x + c * local[i].y};
    }
    return p;
  }
  std::vector<Point2> points() const { return {v.begin(), v.end()}; }
  double area() const { return signed_area(points()); }
};

/// Sutherland-Hodgman: clip `subject` against every half-plane of the convex
/// counter-clockwise polygon `clip`.
inline std::vector<Point2> clip_convex(std::vector<Point2> subject, const std::vector<Point2>& clip) {
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !subject.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % m];
    std::vector<Point2> out;
    out.reserve(subject.size() + 2);
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& p = subject[i];
      const Point2& q = subject[(i + 1) % n];
      const double dp = cross(a, b, p);
      const double dq = cross(a, b, q);
      const bool p_in = dp >= 0.0;
      const bool q_in = dq >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double intersection_area(const BevPolygon& a, const BevPolygon& b) {
  const auto inter = clip_convex(a.points(), b.points());
  if (inter.size() < 3) return 0.0;
  return std::max(0.0, signed_area(inter));
}

/// Rotated BEV IoU of two boxes (z ignored).
inline double bev_iou(const Box7& a, const Box7& b) {
  const BevPolygon pa = BevPolygon::from_box(a);
  const BevPolygon pb = BevPolygon::from_box(b);
  const double area_a = pa.area();
  const double area_b = pb.area();
  if (!(area_a > 0.0) || !(area_b > 0.0)) {
    throw DataError("degenerate box footprint");
  }
  // Clip in a canonical order so the result is symmetric to the last bit.
  const bool swap = std::tie(a.cx, a.cy, a.l, a.w, a.yaw) > std::tie(b.cx, b.cy, b.l, b.w, b.yaw);
  const double inter = swap ? intersection_area(pb, pa) : intersection_area(pa, pb);
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace llalign
