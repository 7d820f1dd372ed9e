#pragma once

// Named parameter storage with freeze flags and provenance, plus the small
// building blocks (linear, layer norm, positional encodings) shared by the
// encoder, the view-aware transformer and the language model.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "llalign/autograd.hpp"
#include "llalign/errors.hpp"
#include "llalign/rng.hpp"

namespace llalign {

/// Checkpoint sections. Each tensor belongs to exactly one.
enum class ParamGroup : std::uint8_t {
  kEncoder,      // BEV column encoder (frozen after stage 0)
  kEncoderHead,  // disposable per-cell classifier of stage 0
  kVat,          // cross-attention blocks
  kQueries,
  kVpe,
  kProjection,   // output MLP into the LM embedding space
  kLmBase,       // frozen after stage 0
  kAdapter,
  kBoxHead,
};

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kEncoderHead: return "encoder_head";
    case ParamGroup::kVat: return "vat";
    case ParamGroup::kQueries: return "queries";
    case ParamGroup::kVpe: return "vpe";
    case ParamGroup::kProjection: return "projection";
    case ParamGroup::kLmBase: return "lm_base";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kBoxHead: return "box_head";
  }
  return "?";
}

/// Groups updated by the alignment stages.
inline bool is_alignment_group(ParamGroup g) {
  return g == ParamGroup::kVat || g == ParamGroup::kQueries || g == ParamGroup::kVpe ||
         g == ParamGroup::kProjection || g == ParamGroup::kAdapter || g == ParamGroup::kBoxHead;
}

inline constexpr std::string_view kProvenanceInit = "random_init";

struct Param {
  std::string name;
  ag::Var var;
  ParamGroup group;
  bool frozen = false;
  /// "random_init" or the name of the last stage that trained it.
  std::string provenance = std::string(kProvenanceInit);
};

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  ag::Var create(const std::string& name, Matrix init, ParamGroup group) {
    if (index_.count(name)) throw Error("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({name, ag::Var(std::move(init), true), group});
    return params_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return params_[it->second];
  }
  const Param& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return params_[it->second];
  }
  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }

  void set_frozen(ParamGroup g, bool frozen) {
    for (auto& p : params_) {
      if (p.group == g) {
        p.frozen = frozen;
        p.var.set_requires_grad(!frozen);
      }
    }
  }
  void set_frozen(const std::string& name, bool frozen) {
    auto& p = get(name);
    p.frozen = frozen;
    p.var.set_requires_grad(!frozen);
  }

  /// Freezes every parameter outside `groups` and unfreezes those inside.
  void set_trainable_groups(std::initializer_list<ParamGroup> groups) {
    for (auto& p : params_) {
      const bool on = std::find(groups.begin(), groups.end(), p.group) != groups.end();
      p.frozen = !on;
      p.var.set_requires_grad(on);
    }
  }

  /// Frozen flags by name, for restoring after a temporary change.
  std::vector<bool> frozen_flags() const {
    std::vector<bool> out;
    for (const auto& p : params_) out.push_back(p.frozen);
    return out;
  }
  void restore_frozen_flags(const std::vector<bool>& flags) {
    for (std::size_t i = 0; i < params_.size() && i < flags.size(); ++i) {
      params_[i].frozen = flags[i];
      params_[i].var.set_requires_grad(!flags[i]);
    }
  }

  void mark_trained(const std::string& stage) {
    for (auto& p : params_) {
      if (!p.frozen) p.provenance = stage;
    }
  }

  std::vector<Param*> trainable() {
    std::vector<Param*> out;
    for (auto& p : params_) {
      if (!p.frozen) out.push_back(&p);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t count(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.group == g) n += static_cast<std::size_t>(p.var.value().size());
    }
    return n;
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

inline Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

/// Glorot-scaled normal.
inline Matrix xavier(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  return normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), rng);
}

inline Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
inline Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

}  // namespace init

struct Linear {
  ag::Var w, b;

  static Linear make(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out,
                     ParamGroup g, Rng& rng) {
    return {ps.create(name + ".w", init::xavier(in, out, rng), g),
            ps.create(name + ".b", init::zeros(1, out), g)};
  }
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

struct LayerNorm {
  ag::Var gamma, beta;

  static LayerNorm make(ParamStore& ps, const std::string& name, Eigen::Index width, ParamGroup g) {
    return {ps.create(name + ".gamma", init::ones(1, width), g),
            ps.create(name + ".beta", init::zeros(1, width), g)};
  }
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

/// Standard 1D sinusoidal position table (T x D).
inline Matrix sinusoid_1d(Eigen::Index length, Eigen::Index width) {
  Matrix pe(length, width);
  for (Eigen::Index p = 0; p < length; ++p) {
    for (Eigen::Index i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  }
  return pe;
}

/// 2D sinusoidal table for an H x W grid (row = h * W + w): the first half of
/// the channels encode h, the second half w.
inline Matrix sinusoid_2d(Eigen::Index h, Eigen::Index w, Eigen::Index width) {
  const Eigen::Index half = width / 2;
  const Matrix ph = sinusoid_1d(h, half);
  const Matrix pw = sinusoid_1d(w, width - half);
  Matrix pe(h * w, width);
  for (Eigen::Index i = 0; i < h; ++i) {
    for (Eigen::Index j = 0; j < w; ++j) {
      pe.row(i * w + j) << ph.row(i), pw.row(j);
    }
  }
  return pe;
}

}  // namespace llalign
