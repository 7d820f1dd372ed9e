#pragma once

// View-aware transformer: learnable queries cross-attend to BEV tokens that
// carry per-sector view embeddings, then an MLP maps them into the language
// model's embedding space.

#include <functional>
#include <string>
#include <vector>

#include "llalign/autograd.hpp"
#include "llalign/bev_encoder.hpp"
#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"
#include "llalign/nn.hpp"

namespace llalign {

/// View of every BEV cell (row = ix * W + iy), from the azimuth of its center.
inline std::vector<ViewId> assign_sectors(int h, int w, const Range& range) {
  std::vector<ViewId> out(static_cast<std::size_t>(h) * w);
  const double dx = (range.x_max - range.x_min) / h, dy = (range.y_max - range.y_min) / w;
  for (int ix = 0; ix < h; ++ix) {
    for (int iy = 0; iy < w; ++iy) {
      out[static_cast<std::size_t>(ix) * w + iy] =
          sector_of_point(range.x_min + (ix + 0.5) * dx, range.y_min + (iy + 0.5) * dy);
    }
  }
  return out;
}

/// Adds view embedding columns to the cells of active sectors and the sum of
/// the active columns to every query. Inputs are not modified.
inline std::pair<ag::Var, ag::Var> inject_vpe(const ag::Var& bev_tokens, const ag::Var& queries,
                                              ViewSet active, const ag::Var& vpe,
                                              const std::vector<ViewId>& sectors) {
  if ((active & kAllViewsMask) == 0) throw Error("view embedding injection needs at least one active view");
  if (vpe.rows() != bev_tokens.cols() || vpe.cols() != static_cast<Eigen::Index>(kNumViews)) {
    throw Error("view embedding must be C x 6");
  }
  if (static_cast<Eigen::Index>(sectors.size()) != bev_tokens.rows()) throw Error("sector map size mismatch");
  std::vector<std::uint8_t> cell_masks(sectors.size());
  for (std::size_t i = 0; i < sectors.size(); ++i) cell_masks[i] = view_bit(sectors[i]) & active;
  std::vector<std::uint8_t> query_masks(static_cast<std::size_t>(queries.rows()), active & kAllViewsMask);
  return {ag::add_masked_columns(bev_tokens, vpe, std::move(cell_masks)),
          ag::add_masked_columns(queries, vpe, std::move(query_masks))};
}

enum class VatMode : std::uint8_t {
  kFull,      // query transformer with view embeddings
  kNoVpe,     // query transformer only
  kMlpOnly,   // mean-pooled BEV through an MLP, no transformer
};

inline std::string_view vat_mode_name(VatMode m) {
  switch (m) {
    case VatMode::kFull: return "full";
    case VatMode::kNoVpe: return "no_vpe";
    case VatMode::kMlpOnly: return "mlp_only";
  }
  return "?";
}
inline VatMode vat_mode_from_name(std::string_view s) {
  for (auto m : {VatMode::kFull, VatMode::kNoVpe, VatMode::kMlpOnly}) {
    if (vat_mode_name(m) == s) return m;
  }
  throw ConfigError("unknown VAT mode '" + std::string(s) + "' (valid: full, no_vpe, mlp_only)");
}

struct VatConfig {
  int queries = 16;
  int layers = 2;
  int heads = 4;
  int ff_mult = 2;
  VatMode mode = VatMode::kFull;
  /// Restrict cross-attention to cells of active sectors.
  bool mask_inactive = false;
  /// Amplitude of the fixed positional table added to BEV tokens.
  double position_scale = 1.0;
};

/// Debug observations of one forward pass.
struct VatTrace {
  ViewSet active = 0;
  /// Number of BEV cells that received a view embedding.
  std::size_t injected_cells = 0;
  /// Attention probabilities per layer and head.
  std::vector<std::vector<Matrix>> attention;
};

class Vat {
 public:
  Vat() = default;
  Vat(ParamStore& ps, const VatConfig& cfg, int channels, int height, int width, const Range& range,
      int out_width, Rng& rng)
      : cfg_(cfg), channels_(channels), out_width_(out_width) {
    if (cfg.queries <= 0) throw ConfigError("query count must be positive");
    if (cfg.layers < 0 || cfg.heads <= 0 || channels % cfg.heads != 0) {
      throw ConfigError("VAT heads must divide the BEV channel count");
    }
    sectors_ = assign_sectors(height, width, range);
    pos_ = cfg.position_scale * sinusoid_2d(height, width, channels);
    if (cfg.mode == VatMode::kMlpOnly) {
      pool1_ = Linear::make(ps, "vat.pool_mlp1", channels, out_width, ParamGroup::kProjection, rng);
      pool2_ = Linear::make(ps, "vat.pool_mlp2", out_width, static_cast<Eigen::Index>(cfg.queries) * out_width,
                            ParamGroup::kProjection, rng);
      return;
    }
    queries_ = ps.create("vat.queries", init::normal(cfg.queries, channels, 1.0, rng), ParamGroup::kQueries);
    if (cfg.mode == VatMode::kFull) {
      vpe_ = ps.create("vat.vpe", init::zeros(channels, kNumViews), ParamGroup::kVpe);
    }
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "vat.block" + std::to_string(l);
      Block b;
      b.ln_q = LayerNorm::make(ps, p + ".ln_q", channels, ParamGroup::kVat);
      b.ln_kv = LayerNorm::make(ps, p + ".ln_kv", channels, ParamGroup::kVat);
      b.wq = Linear::make(ps, p + ".wq", channels, channels, ParamGroup::kVat, rng);
      b.wk = Linear::make(ps, p + ".wk", channels, channels, ParamGroup::kVat, rng);
      b.wv = Linear::make(ps, p + ".wv", channels, channels, ParamGroup::kVat, rng);
      b.wo = Linear::make(ps, p + ".wo", channels, channels, ParamGroup::kVat, rng);
      b.ln_ff = LayerNorm::make(ps, p + ".ln_ff", channels, ParamGroup::kVat);
      b.ff1 = Linear::make(ps, p + ".ff1", channels, static_cast<Eigen::Index>(cfg.ff_mult) * channels,
                           ParamGroup::kVat, rng);
      b.ff2 = Linear::make(ps, p + ".ff2", static_cast<Eigen::Index>(cfg.ff_mult) * channels, channels,
                           ParamGroup::kVat, rng);
      blocks_.push_back(b);
    }
    ln_out_ = LayerNorm::make(ps, "vat.ln_out", channels, ParamGroup::kVat);
    out1_ = Linear::make(ps, "vat.out_mlp1", channels, out_width, ParamGroup::kProjection, rng);
    out2_ = Linear::make(ps, "vat.out_mlp2", out_width, out_width, ParamGroup::kProjection, rng);
  }

  /// K x d soft prompts for one BEV map and active view set.
  ag::Var forward(const BevGrid& bev, ViewSet active, VatTrace* trace = nullptr) const {
    if (bev.channels != channels_ || bev.tokens.rows() != static_cast<Eigen::Index>(sectors_.size())) {
      throw Error("BEV grid shape does not match the VAT");
    }
    if ((active & kAllViewsMask) == 0) throw Error("at least one view must be active");
    if (trace) {
      trace->active = active;
      trace->injected_cells = 0;
      trace->attention.clear();
    }
    if (cfg_.mode == VatMode::kMlpOnly) {
      const auto pooled = ag::mean_rows(ag::Var(bev.tokens));
      const auto h = ag::gelu(pool1_(pooled));
      return ag::reshape(pool2_(h), cfg_.queries, out_width_);
    }
    ag::Var kv(bev.tokens);
    ag::Var q = queries_;
    if (cfg_.mode == VatMode::kFull) {
      std::tie(kv, q) = inject_vpe(kv, q, active, vpe_, sectors_);
      if (trace) {
        for (ViewId s : sectors_) trace->injected_cells += (view_bit(s) & active) ? 1 : 0;
      }
    }
    kv = ag::add(kv, ag::Var(pos_));
    ag::AttentionOptions opt;
    opt.heads = cfg_.heads;
    if (cfg_.mask_inactive) {
      opt.key_mask.resize(sectors_.size());
      for (std::size_t i = 0; i < sectors_.size(); ++i) opt.key_mask[i] = (view_bit(sectors_[i]) & active) != 0;
    }
    for (const auto& b : blocks_) {
      std::vector<Matrix> probs;
      if (trace) opt.probs_out = &probs;
      const auto kvn = b.ln_kv(kv);
      const auto a = ag::attention(b.wq(b.ln_q(q)), b.wk(kvn), b.wv(kvn), opt);
      q = ag::add(q, b.wo(a));
      q = ag::add(q, b.ff2(ag::gelu(b.ff1(b.ln_ff(q)))));
      if (trace) trace->attention.push_back(std::move(probs));
    }
    return out2_(ag::gelu(out1_(ln_out_(q))));
  }

  const VatConfig& config() const { return cfg_; }
  const std::vector<ViewId>& sectors() const { return sectors_; }
  int out_width() const { return out_width_; }

 private:
  struct Block {
    LayerNorm ln_q, ln_kv, ln_ff;
    Linear wq, wk, wv, wo, ff1, ff2;
  };

  VatConfig cfg_;
  int channels_ = 0, out_width_ = 0;
  std::vector<ViewId> sectors_;
  Matrix pos_;
  ag::Var queries_, vpe_;
  std::vector<Block> blocks_;
  LayerNorm ln_out_;
  Linear out1_, out2_, pool1_, pool2_;
};

}  // namespace llalign
