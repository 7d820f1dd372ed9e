#pragma once

// Adam with the epoch-halving learning-rate schedule.

#include <cmath>
#include <map>
#include <string>

#include "llalign/errors.hpp"
#include "llalign/nn.hpp"

namespace llalign {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// base * 0.5^floor(epoch / 2), epochs counted from 0.
inline double scheduled_lr(double base, int epoch) {
  if (epoch < 0) throw Error("epoch must be non-negative");
  return base * std::ldexp(1.0, -(epoch / 2));
}

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter that holds a gradient. A frozen parameter
  /// holding a gradient is a broken freeze contract and aborts the step before
  /// anything is written.
  void step(ParamStore& ps, double lr) {
    for (const auto& p : ps.all()) {
      if (p.frozen && p.var.grad().size() != 0 && !p.var.grad().isZero(0.0)) {
        throw Error("attempt to update frozen tensor " + p.name);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : ps.all()) {
      if (p.frozen || p.var.grad().size() == 0) continue;
      auto [it, fresh] = moments_.try_emplace(p.name);
      auto& [m, v] = it->second;
      if (fresh) {
        m = Matrix::Zero(p.var.rows(), p.var.cols());
        v = Matrix::Zero(p.var.rows(), p.var.cols());
      }
      const Matrix& g = p.var.grad();
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      auto& w = p.var.mutable_value();
      w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

}  // namespace llalign
