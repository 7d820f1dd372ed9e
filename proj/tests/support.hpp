#pragma once

// Shared fixtures: tiny models, hand-built scenes and a central-difference
// gradient checker.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "llalign/model.hpp"

namespace llalign::testing {

/// 4x4 BEV grid over +-2.4 m, 4 z levels, K=3 queries, d=8.
inline ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.range = {-2.4, 2.4, -2.4, 2.4, -2.0, 2.0};
  mc.voxel = {1.2, 1.2, 1.0};
  mc.channels = 4;
  mc.voxel_width = 3;
  mc.vat.queries = 3;
  mc.vat.layers = 2;
  mc.vat.heads = 2;
  mc.vat.ff_mult = 2;
  mc.lm.width = 8;
  mc.lm.blocks = 1;
  mc.lm.heads = 2;
  mc.lm.context = 96;
  mc.lm.adapter_rank = 2;
  mc.lm.ff_mult = 2;
  mc.seed = 11;
  return mc;
}

inline SceneObject make_object(int id, Category c, double x, double y, double yaw, Status st) {
  SceneObject o;
  o.id = id;
  o.category = c;
  const double l = c == Category::kPedestrian ? 0.6 : 1.6, w = c == Category::kPedestrian ? 0.6 : 0.9;
  o.box = {x, y, -1.0, l, w, 1.6, yaw};
  o.status = st;
  return o;
}

/// Two objects inside the tiny range: a pedestrian ahead and a car behind-left.
inline Scene tiny_scene() {
  Scene s;
  s.seed = 5;
  s.ground_z = -1.8;
  s.objects = {make_object(0, Category::kPedestrian, 1.3, 0.4, 0.3, Status::kMoving),
               make_object(1, Category::kCar, -1.2, 1.1, -0.5, Status::kStationary)};
  return s;
}

/// Overwrites every parameter with seeded N(0, stddev) values, so zero-initialised
/// tensors (VPE, adapter up-projections) carry signal.
inline void randomize(ParamStore& ps, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  for (auto& p : ps.all()) {
    auto& w = p.var.mutable_value();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * rng.normal();
  }
}

/// Stands in for stage 0: labels the encoder and LM base as pretrained and
/// freezes them.
inline void mark_pretrained(Model& m) {
  for (auto& p : m.params().all()) {
    if (p.group == ParamGroup::kEncoder || p.group == ParamGroup::kLmBase) p.provenance = "pretrain";
  }
  m.params().set_frozen(ParamGroup::kEncoder, true);
  m.params().set_frozen(ParamGroup::kLmBase, true);
  m.params().set_frozen(ParamGroup::kEncoderHead, true);
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  long checked = 0;
};

/// Compares the analytic gradient of `loss` with central differences for every
/// element of every parameter accepted by `select`.
inline GradCheck check_gradients(ParamStore& ps, const std::function<ag::Var()>& loss,
                                 const std::function<bool(const Param&)>& select, double h = 1e-5) {
  ps.zero_grad();
  ag::backward(loss());
  GradCheck r;
  for (auto& p : ps.all()) {
    if (!select(p)) continue;
    const Matrix analytic = p.var.grad().size() ? p.var.grad() : Matrix::Zero(p.var.rows(), p.var.cols());
    auto& w = p.var.mutable_value();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      double plus = 0, minus = 0;
      {
        ag::NoGradGuard ng;
        w.data()[i] = keep + h;
        plus = loss().item();
        w.data()[i] = keep - h;
        minus = loss().item();
      }
      w.data()[i] = keep;
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = p.name + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace llalign::testing
