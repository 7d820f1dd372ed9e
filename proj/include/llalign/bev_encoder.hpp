#pragma once

// Voxelization of point clouds and the column encoder that collapses voxel
// statistics along z into a bird's-eye-view feature map.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

#include "llalign/autograd.hpp"
#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"
#include "llalign/nn.hpp"
#include "llalign/optim.hpp"
#include "llalign/scene_forge.hpp"

namespace llalign {

inline constexpr int kVoxelFeatures = 6;

struct VoxelSize {
  double dx = 0.6, dy = 0.6, dz = 0.5;
};

struct GridDims {
  int x = 0, y = 0, z = 0;
  bool operator==(const GridDims&) const = default;
};

namespace detail {
inline int divide_exact(double extent, double size, const char* axis) {
  if (!(size > 0)) throw ConfigError(std::string("voxel size on ") + axis + " must be positive");
  const double q = extent / size;
  const double r = std::round(q);
  if (r < 1 || std::abs(q - r) > 1e-9 * std::max(1.0, q)) {
    throw ConfigError(std::string("voxel size does not divide the range extent on ") + axis);
  }
  return static_cast<int>(r);
}
}  // namespace detail

inline GridDims grid_dims(const Range& range, const VoxelSize& vs) {
  range.validate();
  return {detail::divide_exact(range.x_max - range.x_min, vs.dx, "x"),
          detail::divide_exact(range.y_max - range.y_min, vs.dy, "y"),
          detail::divide_exact(range.z_max - range.z_min, vs.dz, "z")};
}

struct Voxel {
  int ix = 0, iy = 0, iz = 0;
  /// [log1p(count), mean offset x/y/z from the voxel center, max z, mean intensity]
  std::array<double, kVoxelFeatures> features{};
};

/// Occupied voxels only, sorted by (ix, iy, iz).
struct VoxelGrid {
  GridDims dims;
  VoxelSize size;
  Range range;
  std::vector<Voxel> voxels;

  /// Voxel center in meters.
  std::array<double, 3> center(int ix, int iy, int iz) const {
    return {range.x_min + (ix + 0.5) * size.dx, range.y_min + (iy + 0.5) * size.dy,
            range.z_min + (iz + 0.5) * size.dz};
  }
};

/// Index of `p` or nullopt when outside the half-open range.
inline std::optional<std::array<int, 3>> voxel_index(const LidarPoint& p, const Range& range,
                                                      const VoxelSize& vs, const GridDims& dims) {
  const int ix = static_cast<int>(std::floor((p.x - range.x_min) / vs.dx));
  const int iy = static_cast<int>(std::floor((p.y - range.y_min) / vs.dy));
  const int iz = static_cast<int>(std::floor((p.z - range.z_min) / vs.dz));
  if (ix < 0 || iy < 0 || iz < 0 || ix >= dims.x || iy >= dims.y || iz >= dims.z) return std::nullopt;
  if (!range.contains(p.x, p.y, p.z)) return std::nullopt;
  return std::array<int, 3>{ix, iy, iz};
}

/// Per-voxel statistics. Points are accumulated in a canonical order so the
/// result does not depend on the input order.
inline VoxelGrid voxelize(const PointCloud& cloud, const Range& range, const VoxelSize& vs) {
  VoxelGrid g{grid_dims(range, vs), vs, range, {}};
  struct Entry {
    long key;
    const LidarPoint* p;
  };
  std::vector<Entry> entries;
  entries.reserve(cloud.points.size());
  for (const auto& p : cloud.points) {
    if (auto idx = voxel_index(p, range, vs, g.dims)) {
      const long key = (static_cast<long>((*idx)[0]) * g.dims.y + (*idx)[1]) * g.dims.z + (*idx)[2];
      entries.push_back({key, &p});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.key, a.p->x, a.p->y, a.p->z, a.p->intensity) <
           std::tie(b.key, b.p->x, b.p->y, b.p->z, b.p->intensity);
  });
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    double sx = 0, sy = 0, sz = 0, si = 0, zmax = -std::numeric_limits<double>::infinity();
    for (; j < entries.size() && entries[j].key == entries[i].key; ++j) {
      const auto& p = *entries[j].p;
      sx += p.x;
      sy += p.y;
      sz += p.z;
      si += p.intensity;
      zmax = std::max(zmax, p.z);
    }
    const long key = entries[i].key;
    Voxel v;
    v.iz = static_cast<int>(key % g.dims.z);
    v.iy = static_cast<int>((key / g.dims.z) % g.dims.y);
    v.ix = static_cast<int>(key / (static_cast<long>(g.dims.z) * g.dims.y));
    const double n = static_cast<double>(j - i);
    const auto c = g.center(v.ix, v.iy, v.iz);
    v.features = {std::log1p(n), sx / n - c[0], sy / n - c[1], sz / n - c[2], zmax, si / n};
    g.voxels.push_back(v);
    i = j;
  }
  return g;
}

/// Column-major flattening input: (X*Y) x (6*Z), row = ix * Y + iy, empty
/// voxels contribute zeros.
inline Matrix column_features(const VoxelGrid& g) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(g.dims.x) * g.dims.y,
                          static_cast<Eigen::Index>(kVoxelFeatures) * g.dims.z);
  for (const auto& v : g.voxels) {
    const Eigen::Index row = static_cast<Eigen::Index>(v.ix) * g.dims.y + v.iy;
    for (int f = 0; f < kVoxelFeatures; ++f) m(row, v.iz * kVoxelFeatures + f) = v.features[static_cast<std::size_t>(f)];
  }
  return m;
}

/// C x H x W feature map stored token-major: tokens is (H*W) x C with
/// row = ix * W + iy.
struct BevGrid {
  int channels = 0, height = 0, width = 0;
  Matrix tokens;

  double at(int c, int ix, int iy) const { return tokens(static_cast<Eigen::Index>(ix) * width + iy, c); }
  bool finite() const { return tokens.allFinite(); }
};

class BevEncoder {
 public:
  BevEncoder() = default;
  /// Each voxel's statistics are lifted to `voxel_width` values by a shared
  /// map, the z stack of every column is projected to `channels`, and a 3x3
  /// neighborhood map mixes adjacent columns.
  BevEncoder(ParamStore& ps, const GridDims& dims, int channels, Rng& rng, int voxel_width = 16)
      : dims_(dims), channels_(channels), voxel_width_(voxel_width) {
    if (channels <= 0 || voxel_width <= 0) throw ConfigError("BEV channel count must be positive");
    lift_ = Linear::make(ps, "encoder.lift", kVoxelFeatures, voxel_width, ParamGroup::kEncoder, rng);
    proj_ = Linear::make(ps, "encoder.proj", static_cast<Eigen::Index>(voxel_width) * dims.z, channels,
                         ParamGroup::kEncoder, rng);
    mix_ = Linear::make(ps, "encoder.mix", 9 * static_cast<Eigen::Index>(channels), channels, ParamGroup::kEncoder, rng);
    // Row i*9+k of the gathered matrix is neighbor k of cell i; the extra
    // zero row at index X*Y pads the border.
    const int cells = dims.x * dims.y;
    neighbors_.reserve(static_cast<std::size_t>(cells) * 9);
    for (int ix = 0; ix < dims.x; ++ix) {
      for (int iy = 0; iy < dims.y; ++iy) {
        for (int dx = -1; dx <= 1; ++dx) {
          for (int dy = -1; dy <= 1; ++dy) {
            const int jx = ix + dx, jy = iy + dy;
            const bool inside = jx >= 0 && jx < dims.x && jy >= 0 && jy < dims.y;
            neighbors_.push_back(inside ? jx * dims.y + jy : cells);
          }
        }
      }
    }
  }

  /// Per column: z = proj(flatten_z(tanh(lift(voxel features)))); then
  /// tanh(z + mix(3x3 neighborhood of tanh(z))). Differentiable in the encoder params.
  ag::Var forward(const Matrix& columns) const {
    const Eigen::Index cells = static_cast<Eigen::Index>(dims_.x) * dims_.y;
    if (columns.rows() != cells || columns.cols() != static_cast<Eigen::Index>(kVoxelFeatures) * dims_.z) {
      throw Error("column feature shape does not match the encoder");
    }
    const auto voxels = ag::reshape(ag::Var(columns), cells * dims_.z, kVoxelFeatures);
    const auto lifted = ag::tanh(lift_(voxels));
    const auto z = proj_(ag::reshape(lifted, cells, static_cast<Eigen::Index>(dims_.z) * voxel_width_));
    const auto h = ag::tanh(z);
    const auto padded = ag::vcat({h, ag::Var(Matrix::Zero(1, channels_))});
    const auto neigh = ag::reshape(ag::gather_rows(padded, neighbors_), cells, 9 * static_cast<Eigen::Index>(channels_));
    return ag::tanh(ag::add(z, mix_(neigh)));
  }

  BevGrid encode(const VoxelGrid& g) const {
    if (!(g.dims == dims_)) throw Error("voxel grid dims do not match the encoder");
    ag::NoGradGuard ng;
    return {channels_, dims_.x, dims_.y, forward(column_features(g)).value()};
  }

  const GridDims& dims() const { return dims_; }
  int channels() const { return channels_; }

 private:
  GridDims dims_;
  int channels_ = 0, voxel_width_ = 0;
  Linear lift_, proj_, mix_;
  std::vector<int> neighbors_;
};

// ---------------------------------------------------------------------------
// Stage-0 per-cell classification pretraining

/// Cell classes are category x {stationary, moving} plus empty.
inline constexpr int kCellClasses = 2 * kNumCategories + 1;
inline constexpr int kEmptyCell = 2 * kNumCategories;

inline int cell_class(const SceneObject& o) {
  return 2 * static_cast<int>(o.category) + (o.status == Status::kMoving ? 1 : 0);
}

/// Label of each BEV cell: the class of the object whose footprint overlaps
/// the cell most, else empty.
inline std::vector<int> cell_labels(const Scene& scene, const Range& range, const VoxelSize& vs,
                                    const GridDims& dims) {
  std::vector<int> labels(static_cast<std::size_t>(dims.x) * dims.y, kEmptyCell);
  std::vector<double> best(labels.size(), 0.0);
  for (const auto& o : scene.objects) {
    const auto poly = BevPolygon::from_box(o.box).points();
    double lo_x = poly[0].x, hi_x = poly[0].x, lo_y = poly[0].y, hi_y = poly[0].y;
    for (const auto& p : poly) {
      lo_x = std::min(lo_x, p.x);
      hi_x = std::max(hi_x, p.x);
      lo_y = std::min(lo_y, p.y);
      hi_y = std::max(hi_y, p.y);
    }
    const int ix0 = std::max(0, static_cast<int>(std::floor((lo_x - range.x_min) / vs.dx)));
    const int ix1 = std::min(dims.x - 1, static_cast<int>(std::floor((hi_x - range.x_min) / vs.dx)));
    const int iy0 = std::max(0, static_cast<int>(std::floor((lo_y - range.y_min) / vs.dy)));
    const int iy1 = std::min(dims.y - 1, static_cast<int>(std::floor((hi_y - range.y_min) / vs.dy)));
    for (int ix = ix0; ix <= ix1; ++ix) {
      for (int iy = iy0; iy <= iy1; ++iy) {
        const double x0 = range.x_min + ix * vs.dx, y0 = range.y_min + iy * vs.dy;
        const std::vector<Point2> cell = {{x0, y0}, {x0 + vs.dx, y0}, {x0 + vs.dx, y0 + vs.dy}, {x0, y0 + vs.dy}};
        const double a = std::abs(signed_area(clip_convex(cell, poly)));
        const std::size_t i = static_cast<std::size_t>(ix) * dims.y + iy;
        if (a > best[i]) {
          best[i] = a;
          labels[i] = cell_class(o);
        }
      }
    }
  }
  return labels;
}

struct EncoderSample {
  Matrix columns;
  std::vector<int> labels;
};

struct EncoderPretrainConfig {
  int epochs = 4;
  int batch = 8;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  /// Evaluate held-out loss every this many optimizer steps.
  int eval_every = 10;
  /// The training loss sees every object cell but only every n-th empty cell.
  int empty_stride = 8;
};

struct EncoderPretrainReport {
  std::vector<double> eval_losses;
  double cell_accuracy = 0;
  double majority_baseline = 0;
  /// Held-out cells per true class, and how many of them were predicted right.
  std::array<long, kCellClasses> class_total{};
  std::array<long, kCellClasses> class_correct{};
};

class CellHead {
 public:
  CellHead() = default;
  CellHead(ParamStore& ps, int channels, Rng& rng)
      : lin_(Linear::make(ps, "encoder_head.cls", channels, kCellClasses, ParamGroup::kEncoderHead, rng)) {}
  ag::Var operator()(const ag::Var& x) const { return lin_(x); }

 private:
  Linear lin_;
};

namespace detail {
inline std::vector<bool> all_true(std::size_t n) { return std::vector<bool>(n, true); }
/// Every object cell plus every `stride`-th empty cell.
inline std::vector<bool> object_heavy_mask(const std::vector<int>& labels, int stride) {
  std::vector<bool> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m[i] = labels[i] != kEmptyCell || i % static_cast<std::size_t>(std::max(1, stride)) == 0;
  }
  return m;
}
}  // namespace detail

/// Trains the encoder and a disposable per-cell head, then freezes the
/// encoder. Held-out accuracy is compared against always predicting the most
/// frequent training label.
inline EncoderPretrainReport pretrain_encoder(ParamStore& ps, const BevEncoder& enc,
                                              const std::vector<EncoderSample>& train,
                                              const std::vector<EncoderSample>& held_out,
                                              const EncoderPretrainConfig& cfg) {
  if (train.empty() || held_out.empty()) throw DataError("encoder pretraining needs train and held-out scenes");
  Rng rng(derive_seed(cfg.seed, 0xE4C0DE));
  const CellHead head(ps, enc.channels(), rng);
  const auto saved = ps.frozen_flags();
  ps.set_trainable_groups({ParamGroup::kEncoder, ParamGroup::kEncoderHead});
  Adam opt(AdamConfig{cfg.lr});
  EncoderPretrainReport rep;

  auto eval_loss = [&]() {
    ag::NoGradGuard ng;
    double total = 0;
    for (const auto& s : held_out) {
      total += ag::masked_cross_entropy(head(enc.forward(s.columns)), s.labels,
                                        detail::all_true(s.labels.size()))
                   .item();
    }
    return total / static_cast<double>(held_out.size());
  };

  std::vector<std::size_t> order(train.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const double lr = scheduled_lr(cfg.lr, epoch);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
      ps.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        const auto& s = train[order[i]];
        auto loss = ag::masked_cross_entropy(head(enc.forward(s.columns)), s.labels,
                                             detail::object_heavy_mask(s.labels, cfg.empty_stride));
        ag::backward(ag::scale(loss, 1.0 / static_cast<double>(e - b)));
      }
      opt.step(ps, lr);
      if (++step % cfg.eval_every == 0) rep.eval_losses.push_back(eval_loss());
    }
  }
  ps.zero_grad();

  std::array<long, kCellClasses> freq{};
  for (const auto& s : train) {
    for (int l : s.labels) ++freq[static_cast<std::size_t>(l)];
  }
  const int majority = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  long correct = 0, base = 0, total = 0;
  {
    ag::NoGradGuard ng;
    for (const auto& s : held_out) {
      const Matrix logits = head(enc.forward(s.columns)).value();
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        const int label = s.labels[static_cast<std::size_t>(i)];
        correct += (arg == label);
        ++rep.class_total[static_cast<std::size_t>(label)];
        rep.class_correct[static_cast<std::size_t>(label)] += (arg == label);
        base += (label == majority);
        ++total;
      }
    }
  }
  rep.cell_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  rep.majority_baseline = static_cast<double>(base) / static_cast<double>(total);

  ps.mark_trained("pretrain");
  ps.restore_frozen_flags(saved);
  ps.set_frozen(ParamGroup::kEncoder, true);
  ps.set_frozen(ParamGroup::kEncoderHead, true);
  return rep;
}

inline EncoderSample make_encoder_sample(const Scene& scene, const PointCloud& cloud, const Range& range,
                                         const VoxelSize& vs) {
  const auto g = voxelize(cloud, range, vs);
  return {column_features(g), cell_labels(scene, range, vs, g.dims)};
}

}  // namespace llalign
