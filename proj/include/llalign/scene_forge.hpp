#pragma once

// Synthetic outdoor scenes and LiDAR-like point clouds sampled from them.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"
#include "llalign/rng.hpp"

namespace llalign {

struct SceneObject {
  int id = 0;
  Category category = Category::kCar;
  Box7 box;
  Status status = Status::kStationary;

  double range_from_ego() const { return std::hypot(box.cx, box.cy); }
  ViewId view() const { return sector_of_point(box.cx, box.cy); }
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  double ground_z = -1.8;
  bool operator==(const Scene&) const = default;
};

struct GeneratorConfig {
  Range range;
  int min_objects = 1;
  int max_objects = 8;
  /// Relative weights in Category order.
  std::array<double, kNumCategories> category_weights = {3.0, 2.0, 1.0, 1.0, 1.0};
  double moving_probability = 0.5;
  double size_jitter = 0.15;
  double yaw_min = -kPi / 4.0;
  double yaw_max = kPi / 4.0;
  double min_ego_distance = 3.0;
  /// Centers are kept this far inside the x/y range.
  double edge_margin = 1.0;
  double ground_z = -1.8;
  double max_collision_iou = 0.05;
  int max_attempts = 1000;

  void validate() const {
    range.validate();
    if (max_objects < 1) throw ConfigError("max_objects must be >= 1");
    if (min_objects < 1 || min_objects > max_objects) {
      throw ConfigError("min_objects must lie in [1, max_objects]");
    }
    double total = 0.0;
    for (double w : category_weights) {
      if (w < 0) throw ConfigError("category weights must be non-negative");
      total += w;
    }
    if (!(total > 0)) throw ConfigError("category weights sum to zero");
    if (moving_probability < 0 || moving_probability > 1) {
      throw ConfigError("moving_probability must lie in [0,1]");
    }
  }
};

struct LidarConfig {
  /// Expected surface points of an object = base_density * surface area / r^2.
  double base_density = 400.0;
  int ground_points = 1500;
  double ground_min_radius = 2.0;
  double jitter_sigma = 0.02;
  /// Return intensity: a per-category reflectivity (Category order), raised
  /// by a fixed offset for moving objects.
  std::array<double, kNumCategories> reflectivity = {0.05, 0.15, 0.25, 0.35, 0.45};
  double moving_offset = 0.5;
  double intensity_ground = 0.0;
  double intensity_noise = 0.02;
};

/// Nominal (length, width, height) per category in meters.
inline std::array<double, 3> nominal_size(Category c) {
  switch (c) {
    case Category::kCar: return {4.5, 1.9, 1.6};
    case Category::kPedestrian: return {0.6, 0.6, 1.7};
    case Category::kBus: return {11.0, 2.9, 3.2};
    case Category::kTruck: return {7.0, 2.5, 2.8};
    case Category::kConstructionVehicle: return {5.0, 2.5, 3.0};
  }
  return {1, 1, 1};
}

inline Scene gen_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x5CE7E));
  Scene scene;
  scene.seed = seed;
  scene.ground_z = cfg.ground_z;

  const int count =
      cfg.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));
  const std::vector<double> weights(cfg.category_weights.begin(), cfg.category_weights.end());
  const Range& r = cfg.range;
  const double lo_x = r.x_min + cfg.edge_margin, hi_x = r.x_max - cfg.edge_margin;
  const double lo_y = r.y_min + cfg.edge_margin, hi_y = r.y_max - cfg.edge_margin;
  if (!(lo_x < hi_x) || !(lo_y < hi_y)) throw ConfigError("range too small for edge margin");

  int attempts = 0;
  while (static_cast<int>(scene.objects.size()) < count) {
    if (attempts++ >= cfg.max_attempts) {
      throw GenerationError("scene generation failed after " + std::to_string(cfg.max_attempts) +
                            " attempts for seed " + std::to_string(seed));
    }
    SceneObject obj;
    obj.id = static_cast<int>(scene.objects.size());
    obj.category = kAllCategories[rng.categorical(weights)];
    const auto nominal = nominal_size(obj.category);
    const double jl = rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
    const double jw = rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
    const double jh = rng.uniform(1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
    obj.box.l = nominal[0] * jl;
    obj.box.w = nominal[1] * jw;
    obj.box.h = nominal[2] * jh;
    obj.box.cx = rng.uniform(lo_x, hi_x);
    obj.box.cy = rng.uniform(lo_y, hi_y);
    obj.box.cz = cfg.ground_z + 0.5 * obj.box.h;
    obj.box.yaw = wrap_yaw(rng.uniform(cfg.yaw_min, cfg.yaw_max));
    obj.status = rng.uniform() < cfg.moving_probability ? Status::kMoving : Status::kStationary;

    if (obj.range_from_ego() < cfg.min_ego_distance) continue;
    // keep the ego footprint (a car at the origin) clear
    const Box7 ego{0, 0, 0, 4.5, 1.9, 1.6, 0};
    if (bev_iou(obj.box, ego) > 0.0) continue;
    bool collides = false;
    for (const auto& other : scene.objects) {
      if (bev_iou(obj.box, other.box) > cfg.max_collision_iou) {
        collides = true;
        break;
      }
    }
    if (collides) continue;
    scene.objects.push_back(obj);
  }
  return scene;
}

/// Checks the invariants gen_scene guarantees; used for scenes read from disk.
inline void validate_scene(const Scene& scene, const GeneratorConfig& cfg) {
  if (scene.objects.empty() || static_cast<int>(scene.objects.size()) > cfg.max_objects) {
    throw DataError("scene " + std::to_string(scene.seed) + " has an invalid object count");
  }
  for (const auto& o : scene.objects) {
    if (!cfg.range.contains_xy(o.box.cx, o.box.cy)) {
      throw DataError("object " + std::to_string(o.id) + " of scene " + std::to_string(scene.seed) +
                      " lies outside the world range");
    }
    if (!o.box.valid()) throw DataError("object " + std::to_string(o.id) + " has an invalid box");
  }
}

/// Objects whose center azimuth falls in the view's sector, in id order.
inline std::vector<SceneObject> objects_in_view(const Scene& scene, ViewId view) {
  std::vector<SceneObject> out;
  for (const auto& o : scene.objects) {
    if (o.view() == view) out.push_back(o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point clouds

struct LidarPoint {
  double x = 0, y = 0, z = 0, intensity = 0;
  bool operator==(const LidarPoint&) const = default;
};

struct PointCloud {
  std::vector<LidarPoint> points;
  std::uint64_t scene_seed = 0;
  bool operator==(const PointCloud&) const = default;
};

/// Samples one point uniformly on the five visible faces (no bottom) of `box`.
inline LidarPoint sample_box_surface(const Box7& box, Rng& rng) {
  const double l = box.l, w = box.w, h = box.h;
  const std::vector<double> face_area = {w * h, w * h, l * h, l * h, l * w};
  const std::size_t face = rng.categorical(face_area);
  const double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-0.5, 0.5);
  double lx = 0, ly = 0, lz = 0;
  switch (face) {
    case 0: lx = 0.5 * l; ly = u * w; lz = v * h; break;
    case 1: lx = -0.5 * l; ly = u * w; lz = v * h; break;
    case 2: lx = u * l; ly = 0.5 * w; lz = v * h; break;
    case 3: lx = u * l; ly = -0.5 * w; lz = v * h; break;
    default: lx = u * l; ly = v * w; lz = 0.5 * h; break;
  }
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {box.cx + c * lx - s * ly, box.cy + s * lx + c * ly, box.cz + lz, 0.0};
}

inline double visible_surface_area(const Box7& b) {
  return 2.0 * (b.w * b.h + b.l * b.h) + b.l * b.w;
}

/// Expected surface point count before range filtering.
inline double expected_surface_points(const SceneObject& o, const LidarConfig& cfg) {
  const double r = std::max(1.0, o.range_from_ego());
  return cfg.base_density * visible_surface_area(o.box) / (r * r);
}

inline PointCloud sample_lidar(const Scene& scene, const Range& range, const LidarConfig& cfg) {
  Rng rng(derive_seed(scene.seed, 0x11DA4));
  PointCloud cloud;
  cloud.scene_seed = scene.seed;

  auto emit = [&](LidarPoint p, double intensity) {
    if (cfg.jitter_sigma > 0) {
      p.x += cfg.jitter_sigma * rng.normal();
      p.y += cfg.jitter_sigma * rng.normal();
      p.z += cfg.jitter_sigma * rng.normal();
    }
    if (cfg.intensity_noise > 0) intensity += rng.uniform(-cfg.intensity_noise, cfg.intensity_noise);
    p.intensity = std::clamp(intensity, 0.0, 1.0);
    if (range.contains(p.x, p.y, p.z)) cloud.points.push_back(p);
  };

  for (const auto& obj : scene.objects) {
    const double lambda = expected_surface_points(obj, cfg);
    std::size_t n = static_cast<std::size_t>(std::floor(lambda));
    if (rng.uniform() < lambda - std::floor(lambda)) ++n;
    const double base = cfg.reflectivity[static_cast<std::size_t>(obj.category)] +
                        (obj.status == Status::kMoving ? cfg.moving_offset : 0.0);
    for (std::size_t i = 0; i < n; ++i) emit(sample_box_surface(obj.box, rng), base);
  }

  // Ground: radius log-uniform so that areal density falls off as 1/r^2.
  const double r_max = std::hypot(std::max(std::abs(range.x_min), std::abs(range.x_max)),
                                  std::max(std::abs(range.y_min), std::abs(range.y_max)));
  const double log_lo = std::log(cfg.ground_min_radius), log_hi = std::log(r_max);
  for (int i = 0; i < cfg.ground_points; ++i) {
    const double rad = std::exp(rng.uniform(log_lo, log_hi));
    const double az = rng.uniform(-kPi, kPi);
    emit({rad * std::cos(az), rad * std::sin(az), scene.ground_z, 0.0}, cfg.intensity_ground);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// File formats

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    const auto& b = o.box;
    objs.push_back({{"id", o.id},
                    {"category", category_id(o.category)},
                    {"box", {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}},
                    {"status", status_id(o.status)}});
  }
  return {{"seed", s.seed}, {"ground_z", s.ground_z}, {"objects", objs}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ground_z = j.at("ground_z").get<double>();
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.id = jo.at("id").get<int>();
    o.category = category_from_id(jo.at("category").get<std::string>());
    o.status = status_from_id(jo.at("status").get<std::string>());
    const auto a = jo.at("box").get<std::array<double, 7>>();
    o.box = Box7::from_array(a);
    s.objects.push_back(o);
  }
  return s;
}

inline constexpr char kPointMagic[4] = {'L', 'L', 'P', 'C'};
inline constexpr std::uint32_t kPointVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}
inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}
inline float get_f32(const std::string& in, std::size_t at) {
  const std::uint32_t bits = get_u32(in, at);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}
}  // namespace detail

/// Little-endian: "LLPC", version u32, count u32, then count x 4 float32.
inline std::string encode_point_cloud(const PointCloud& cloud) {
  std::string out(kPointMagic, 4);
  detail::put_u32(out, kPointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(cloud.points.size()));
  for (const auto& p : cloud.points) {
    detail::put_f32(out, static_cast<float>(p.x));
    detail::put_f32(out, static_cast<float>(p.y));
    detail::put_f32(out, static_cast<float>(p.z));
    detail::put_f32(out, static_cast<float>(p.intensity));
  }
  return out;
}

inline PointCloud decode_point_cloud(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kPointMagic, 4) != 0) {
    throw DataError("not an LLPC point-cloud file");
  }
  if (detail::get_u32(bytes, 4) != kPointVersion) throw DataError("unsupported LLPC version");
  const std::uint32_t n = detail::get_u32(bytes, 8);
  if (bytes.size() != 12 + 16ull * n) throw DataError("truncated LLPC file");
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = 12 + 16ull * i;
    cloud.points.push_back({detail::get_f32(bytes, at), detail::get_f32(bytes, at + 4),
                            detail::get_f32(bytes, at + 8), detail::get_f32(bytes, at + 12)});
  }
  return cloud;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace llalign
