#pragma once

// The assembled model: frozen BEV encoder, view-aware transformer, micro LM
// with adapters and box head, plus per-record loss and inference.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "llalign/bev_encoder.hpp"
#include "llalign/box_codec.hpp"
#include "llalign/lang_forge.hpp"
#include "llalign/micro_lm.hpp"
#include "llalign/nn.hpp"
#include "llalign/vat.hpp"
#include "llalign/vocab.hpp"

namespace llalign {

struct ModelConfig {
  Range range{-14.4, 14.4, -14.4, 14.4, -5.0, 3.0};
  VoxelSize voxel{1.2, 1.2, 0.5};
  int channels = 32;
  /// Per-voxel lift width of the encoder.
  int voxel_width = 16;
  VatConfig vat;
  LmConfig lm;
  std::uint64_t seed = 0;
};

class Model {
 public:
  Model(const ModelConfig& cfg, Vocab vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
    const auto dims = grid_dims(cfg.range, cfg.voxel);
    // Separate streams so changing one component's shape leaves the others' init intact.
    Rng r_enc(derive_seed(cfg.seed, 1)), r_vat(derive_seed(cfg.seed, 2)), r_lm(derive_seed(cfg.seed, 3)),
        r_box(derive_seed(cfg.seed, 4));
    encoder_ = BevEncoder(ps_, dims, cfg.channels, r_enc, cfg.voxel_width);
    vat_ = Vat(ps_, cfg.vat, cfg.channels, dims.x, dims.y, cfg.range, cfg.lm.width, r_vat);
    lm_ = MicroLm(ps_, cfg.lm, vocab_.size(), r_lm);
    box_head_ = BoxHead(ps_, cfg.lm.width, r_box);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const BevEncoder& encoder() const { return encoder_; }
  const Vat& vat() const { return vat_; }
  const MicroLm& lm() const { return lm_; }
  const BoxHead& box_head() const { return box_head_; }

  BevGrid encode(const PointCloud& cloud) const { return encoder_.encode(voxelize(cloud, cfg_.range, cfg_.voxel)); }

  ag::Var visual(const BevGrid& bev, ViewSet active, VatTrace* trace = nullptr) const {
    return vat_.forward(bev, active, trace);
  }

  /// Copies values, freeze flags and provenance of every parameter present in
  /// both models (shapes must agree), optionally restricted to some groups.
  /// Returns the number of tensors copied.
  std::size_t copy_state_from(const Model& other, const std::vector<ParamGroup>& only = {}) {
    std::size_t n = 0;
    for (auto& p : ps_.all()) {
      if (!other.ps_.contains(p.name)) continue;
      if (!only.empty() && std::find(only.begin(), only.end(), p.group) == only.end()) continue;
      const auto& src = other.ps_.get(p.name);
      if (src.var.rows() != p.var.rows() || src.var.cols() != p.var.cols()) {
        throw Error("shape mismatch copying parameter " + p.name);
      }
      p.var.mutable_value() = src.var.value();
      p.frozen = src.frozen;
      p.var.set_requires_grad(!src.frozen);
      p.provenance = src.provenance;
      ++n;
    }
    return n;
  }

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  ParamStore ps_;
  BevEncoder encoder_;
  Vat vat_;
  MicroLm lm_;
  BoxHead box_head_;
};

/// LOC anchors are inserted only for visual grounding answers.
inline bool uses_loc_tokens(Task t) { return t == Task::kVisualGrounding; }

inline TokenSeq record_sequence(const Vocab& vocab, const DatasetRecord& r) {
  return build_sequence(vocab, r.question, r.answer, uses_loc_tokens(r.task));
}

struct LossParts {
  ag::Var total;
  double ce = 0;
  double box = 0;
};

/// Masked answer cross-entropy plus box_weight * mean squared error of the
/// normalized boxes read out at LOC anchors.
inline LossParts compute_loss(const Model& model, const BevGrid& bev, const DatasetRecord& r,
                              double box_weight = 1.0) {
  if ((r.views & kAllViewsMask) == 0) throw DataError("record " + std::to_string(r.id) + " has no active view");
  const auto seq = record_sequence(model.vocab(), r);
  const auto out = model.lm().forward(model.visual(bev, r.views), seq.ids);
  const std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
  const std::vector<bool> mask(seq.answer_mask.begin() + 1, seq.answer_mask.end());
  const auto ce = ag::masked_cross_entropy(out.logits, targets, mask);
  LossParts parts{ce, ce.item(), 0.0};
  if (r.task == Task::kVisualGrounding) {
    if (seq.loc_positions.empty()) {
      throw DataError("visual grounding record " + std::to_string(r.id) + " has no location anchors");
    }
    if (seq.loc_positions.size() != r.gt_boxes.size()) {
      throw DataError("record " + std::to_string(r.id) + " anchor count does not match its boxes");
    }
    std::vector<int> rows;
    for (auto j : seq.loc_positions) rows.push_back(static_cast<int>(out.text_row(j)));
    Matrix target(static_cast<Eigen::Index>(r.gt_boxes.size()), 7);
    for (std::size_t i = 0; i < r.gt_boxes.size(); ++i) {
      const auto n = box_codec::normalize(r.gt_boxes[i], model.config().range);
      for (int c = 0; c < 7; ++c) target(static_cast<Eigen::Index>(i), c) = n.v[static_cast<std::size_t>(c)];
    }
    const auto l2 = ag::mse(regress_boxes(out.hidden, rows, model.box_head()), target);
    parts.box = l2.item();
    parts.total = ag::add(ce, ag::scale(l2, box_weight));
  }
  return parts;
}

struct Prediction {
  std::vector<TokenId> ids;
  std::string text;
  /// One box per generated LOC anchor.
  std::vector<Box7> boxes;
};

inline Prediction predict(const Model& model, const BevGrid& bev, ViewSet active, const std::string& question,
                          int max_len = 96, VatTrace* trace = nullptr) {
  ag::NoGradGuard ng;
  const auto visual = model.visual(bev, active, trace);
  auto prompt = build_prompt(model.vocab(), question).ids;
  Prediction p;
  p.ids = model.lm().generate(visual, prompt, max_len);
  p.text = model.vocab().decode(p.ids);
  std::vector<int> rows;
  std::vector<TokenId> full = prompt;
  full.insert(full.end(), p.ids.begin(), p.ids.end());
  full.push_back(SpecialTokens::kEos);
  std::vector<std::size_t> locs;
  for (std::size_t j = prompt.size(); j + 1 < full.size(); ++j) {
    if (full[j] == SpecialTokens::kLoc) locs.push_back(j);
  }
  if (!locs.empty()) {
    const auto out = model.lm().forward(visual, full);
    for (auto j : locs) rows.push_back(static_cast<int>(out.text_row(j)));
    const Matrix nb = regress_boxes(out.hidden, rows, model.box_head()).value();
    for (const auto& n : to_norm_boxes(nb)) p.boxes.push_back(box_codec::denormalize(n, model.config().range));
  }
  return p;
}

/// Teacher-forced box readout for a visual grounding record (one box per
/// ground-truth anchor).
inline std::vector<Box7> regress_record_boxes(const Model& model, const BevGrid& bev, const DatasetRecord& r) {
  ag::NoGradGuard ng;
  const auto seq = record_sequence(model.vocab(), r);
  if (seq.loc_positions.empty()) return {};
  const auto out = model.lm().forward(model.visual(bev, r.views), seq.ids);
  std::vector<int> rows;
  for (auto j : seq.loc_positions) rows.push_back(static_cast<int>(out.text_row(j)));
  std::vector<Box7> boxes;
  for (const auto& n : to_norm_boxes(regress_boxes(out.hidden, rows, model.box_head()).value())) {
    boxes.push_back(box_codec::denormalize(n, model.config().range));
  }
  return boxes;
}

}  // namespace llalign
