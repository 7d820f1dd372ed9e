#pragma once

// Small decoder-only language model with low-rank adapters, the sequence
// layout that prepends visual soft prompts, greedy decoding and the box
// regression head.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "llalign/autograd.hpp"
#include "llalign/box_codec.hpp"
#include "llalign/errors.hpp"
#include "llalign/nn.hpp"
#include "llalign/optim.hpp"
#include "llalign/vocab.hpp"

namespace llalign {

struct LmConfig {
  int width = 64;
  int blocks = 2;
  int heads = 4;
  int context = 256;
  int adapter_rank = 4;
  int ff_mult = 4;
};

/// Text part of a training/inference sequence:
/// [BOS] question [SEP] answer [EOS].
struct TokenSeq {
  std::vector<TokenId> ids;
  /// True where the token is a supervised prediction target.
  std::vector<bool> answer_mask;
  /// Indices into ids of LOC tokens.
  std::vector<std::size_t> loc_positions;
};

/// Answer token ids with a LOC token placed before the opening bracket of
/// every box inside a bracketed list.
inline std::vector<TokenId> insert_loc_tokens(const std::vector<TokenId>& answer, const Vocab& vocab) {
  const TokenId open = vocab.id("["), comma = vocab.id(",");
  std::vector<TokenId> out;
  out.reserve(answer.size() + 4);
  for (std::size_t i = 0; i < answer.size(); ++i) {
    if (answer[i] == open && i > 0 && (answer[i - 1] == open || answer[i - 1] == comma)) {
      out.push_back(SpecialTokens::kLoc);
    }
    out.push_back(answer[i]);
  }
  return out;
}

inline TokenSeq build_sequence(const Vocab& vocab, const std::string& question, const std::string& answer,
                               bool with_loc) {
  TokenSeq s;
  s.ids.push_back(SpecialTokens::kBos);
  for (TokenId t : vocab.encode(question)) s.ids.push_back(t);
  s.ids.push_back(SpecialTokens::kSep);
  s.answer_mask.assign(s.ids.size(), false);
  auto ans = vocab.encode(answer);
  if (with_loc) ans = insert_loc_tokens(ans, vocab);
  for (TokenId t : ans) {
    if (t == SpecialTokens::kLoc) s.loc_positions.push_back(s.ids.size());
    s.ids.push_back(t);
    s.answer_mask.push_back(true);
  }
  s.ids.push_back(SpecialTokens::kEos);
  s.answer_mask.push_back(true);
  return s;
}

/// Question-only prefix for generation: [BOS] question [SEP].
inline TokenSeq build_prompt(const Vocab& vocab, const std::string& question) {
  TokenSeq s;
  s.ids.push_back(SpecialTokens::kBos);
  for (TokenId t : vocab.encode(question)) s.ids.push_back(t);
  s.ids.push_back(SpecialTokens::kSep);
  s.answer_mask.assign(s.ids.size(), false);
  return s;
}

struct LmOutput {
  /// Row j predicts text token j + 1; (n - 1) x V.
  ag::Var logits;
  /// Final hidden states of the whole input, (1 + K + n - 2) x d.
  ag::Var hidden;
  /// Row of `hidden` holding text token j is text_row(j).
  std::size_t visual_count = 0;
  std::size_t text_row(std::size_t j) const { return j == 0 ? 0 : visual_count + j; }
};

class MicroLm {
 public:
  MicroLm() = default;
  MicroLm(ParamStore& ps, const LmConfig& cfg, std::size_t vocab_size, Rng& rng) : cfg_(cfg) {
    if (cfg.width <= 0 || cfg.heads <= 0 || cfg.width % cfg.heads != 0) {
      throw ConfigError("LM heads must divide the LM width");
    }
    if (cfg.adapter_rank <= 0 || cfg.context < 4) throw ConfigError("invalid LM adapter rank or context");
    const Eigen::Index d = cfg.width;
    embed_ = ps.create("lm.embed", init::normal(static_cast<Eigen::Index>(vocab_size), d, 0.1, rng),
                       ParamGroup::kLmBase);
    for (int l = 0; l < cfg.blocks; ++l) {
      const std::string p = "lm.block" + std::to_string(l);
      Block b;
      b.ln1 = LayerNorm::make(ps, p + ".ln1", d, ParamGroup::kLmBase);
      b.wq = Linear::make(ps, p + ".wq", d, d, ParamGroup::kLmBase, rng);
      b.wk = Linear::make(ps, p + ".wk", d, d, ParamGroup::kLmBase, rng);
      b.wv = Linear::make(ps, p + ".wv", d, d, ParamGroup::kLmBase, rng);
      b.wo = Linear::make(ps, p + ".wo", d, d, ParamGroup::kLmBase, rng);
      b.ln2 = LayerNorm::make(ps, p + ".ln2", d, ParamGroup::kLmBase);
      b.ff1 = Linear::make(ps, p + ".ff1", d, static_cast<Eigen::Index>(cfg.ff_mult) * d, ParamGroup::kLmBase, rng);
      b.ff2 = Linear::make(ps, p + ".ff2", static_cast<Eigen::Index>(cfg.ff_mult) * d, d, ParamGroup::kLmBase, rng);
      const Eigen::Index r = cfg.adapter_rank;
      const double a_std = 1.0 / std::sqrt(static_cast<double>(d));
      b.aq = ps.create(p + ".adapter_q.down", init::normal(d, r, a_std, rng), ParamGroup::kAdapter);
      b.bq = ps.create(p + ".adapter_q.up", init::zeros(r, d), ParamGroup::kAdapter);
      b.av = ps.create(p + ".adapter_v.down", init::normal(d, r, a_std, rng), ParamGroup::kAdapter);
      b.bv = ps.create(p + ".adapter_v.up", init::zeros(r, d), ParamGroup::kAdapter);
      blocks_.push_back(b);
    }
    ln_f_ = LayerNorm::make(ps, "lm.ln_f", d, ParamGroup::kLmBase);
    pos_ = sinusoid_1d(cfg.context, d);
  }

  /// Hidden states for already-embedded inputs (L x d), causal.
  ag::Var forward_embedded(const ag::Var& x0, bool adapters = true) const {
    const Eigen::Index len = x0.rows();
    if (len > cfg_.context) {
      throw DataError("sequence of length " + std::to_string(len) + " exceeds the context window of " +
                      std::to_string(cfg_.context));
    }
    ag::Var x = ag::add(x0, ag::Var(Matrix(pos_.topRows(len))));
    ag::AttentionOptions opt;
    opt.heads = cfg_.heads;
    opt.causal = true;
    for (const auto& b : blocks_) {
      const auto h = b.ln1(x);
      ag::Var q = b.wq(h), v = b.wv(h);
      if (adapters) {
        q = ag::add(q, ag::matmul(ag::matmul(h, b.aq), b.bq));
        v = ag::add(v, ag::matmul(ag::matmul(h, b.av), b.bv));
      }
      x = ag::add(x, b.wo(ag::attention(q, b.wk(h), v, opt)));
      x = ag::add(x, b.ff2(ag::gelu(b.ff1(b.ln2(x)))));
    }
    return ln_f_(x);
  }

  ag::Var embed(const std::vector<TokenId>& ids) const {
    return ag::gather_rows(embed_, std::vector<int>(ids.begin(), ids.end()));
  }

  /// Input layout: [emb(BOS); visual (K x d); emb(text[1 .. n-2])]. The
  /// final text token is never an input.
  LmOutput forward(const ag::Var& visual, const std::vector<TokenId>& text, bool adapters = true) const {
    if (text.size() < 2) throw DataError("text sequence needs at least two tokens");
    if (visual.cols() != cfg_.width) throw Error("visual prompt width does not match the LM");
    const std::size_t k = static_cast<std::size_t>(visual.rows());
    const std::size_t total = k + text.size() - 1;
    if (total > static_cast<std::size_t>(cfg_.context)) {
      throw DataError("sequence too long: " + std::to_string(k) + " visual + " + std::to_string(text.size()) +
                      " text tokens exceeds context " + std::to_string(cfg_.context));
    }
    std::vector<ag::Var> parts = {embed({text[0]}), visual};
    if (text.size() > 2) parts.push_back(embed(std::vector<TokenId>(text.begin() + 1, text.end() - 1)));
    const auto hidden = forward_embedded(ag::vcat(parts), adapters);
    const auto rows = ag::slice_rows(hidden, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(text.size() - 1));
    return {ag::matmul_nt(rows, embed_), hidden, k};
  }

  /// Greedy decoding after `prompt`. PAD and BOS are never emitted; ties go
  /// to the lowest id. Returns the generated ids without the final EOS.
  std::vector<TokenId> generate(const ag::Var& visual, std::vector<TokenId> prompt, int max_len) const {
    ag::NoGradGuard ng;
    std::vector<TokenId> out;
    const int room = cfg_.context - static_cast<int>(visual.rows()) - static_cast<int>(prompt.size());
    max_len = std::min(max_len, room);
    for (int step = 0; step < max_len; ++step) {
      // The last position's logits come from a dummy trailing token.
      prompt.push_back(SpecialTokens::kPad);
      const auto o = forward(visual, prompt);
      prompt.pop_back();
      const auto last = o.logits.value().row(o.logits.rows() - 1);
      TokenId best = -1;
      double best_v = -std::numeric_limits<double>::infinity();
      for (Eigen::Index t = 0; t < last.size(); ++t) {
        if (t == SpecialTokens::kPad || t == SpecialTokens::kBos) continue;
        if (last(t) > best_v) {
          best_v = last(t);
          best = static_cast<TokenId>(t);
        }
      }
      if (best == SpecialTokens::kEos) break;
      out.push_back(best);
      prompt.push_back(best);
    }
    return out;
  }

  const LmConfig& config() const { return cfg_; }
  const ag::Var& embedding() const { return embed_; }

 private:
  struct Block {
    LayerNorm ln1, ln2;
    Linear wq, wk, wv, wo, ff1, ff2;
    ag::Var aq, bq, av, bv;
  };

  LmConfig cfg_;
  ag::Var embed_;
  std::vector<Block> blocks_;
  LayerNorm ln_f_;
  Matrix pos_;
};

/// d -> d (GELU) -> 7 (sigmoid): a normalized box per anchor row.
class BoxHead {
 public:
  BoxHead() = default;
  BoxHead(ParamStore& ps, int width, Rng& rng)
      : l1_(Linear::make(ps, "box_head.mlp1", width, width, ParamGroup::kBoxHead, rng)),
        l2_(Linear::make(ps, "box_head.mlp2", width, 7, ParamGroup::kBoxHead, rng)) {}

  ag::Var operator()(const ag::Var& hidden_rows) const { return ag::sigmoid(l2_(ag::gelu(l1_(hidden_rows)))); }

 private:
  Linear l1_, l2_;
};

/// Box readouts at the given rows of the final hidden states.
inline ag::Var regress_boxes(const ag::Var& hidden, const std::vector<int>& rows, const BoxHead& head) {
  if (rows.empty()) throw DataError("no anchor positions for box regression");
  return head(ag::gather_rows(hidden, rows));
}

inline std::vector<NormBox7> to_norm_boxes(const Matrix& m) {
  std::vector<NormBox7> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    NormBox7 b;
    for (int j = 0; j < 7; ++j) b.v[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage-0 language pretraining

struct LmPretrainConfig {
  int epochs = 3;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  /// Zero rows standing in for the visual prompts, so positions match later stages.
  int visual_rows = 16;
};

struct LmPretrainReport {
  std::vector<double> epoch_losses;
  double held_out_perplexity = 0;
  double unigram_perplexity = 0;
};

namespace detail {
inline std::vector<int> next_targets(const TokenSeq& s) { return {s.ids.begin() + 1, s.ids.end()}; }
}  // namespace detail

/// Mean next-token negative log-likelihood of every text target of `s`.
inline ag::Var lm_text_loss(const MicroLm& lm, const TokenSeq& s, int visual_rows, bool adapters) {
  const ag::Var visual(Matrix::Zero(visual_rows, lm.config().width));
  const auto out = lm.forward(visual, s.ids, adapters);
  return ag::masked_cross_entropy(out.logits, detail::next_targets(s), std::vector<bool>(s.ids.size() - 1, true));
}

/// Next-token training of the base LM on text alone, then freezes it.
/// Held-out perplexity is compared with an add-one unigram model.
inline LmPretrainReport pretrain_lm(ParamStore& ps, const MicroLm& lm, std::size_t vocab_size,
                                    const std::vector<TokenSeq>& train, const std::vector<TokenSeq>& held_out,
                                    const LmPretrainConfig& cfg) {
  if (train.empty() || held_out.empty()) throw DataError("LM pretraining needs train and held-out text");
  const auto saved = ps.frozen_flags();
  ps.set_trainable_groups({ParamGroup::kLmBase});
  Adam opt(AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0x1A9E));
  LmPretrainReport rep;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const double lr = scheduled_lr(cfg.lr, epoch);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
      ps.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        auto loss = lm_text_loss(lm, train[order[i]], cfg.visual_rows, false);
        total += loss.item();
        ag::backward(ag::scale(loss, 1.0 / static_cast<double>(e - b)));
      }
      opt.step(ps, lr);
    }
    rep.epoch_losses.push_back(total / static_cast<double>(train.size()));
  }
  ps.zero_grad();

  std::vector<double> freq(vocab_size, 1.0);
  double n_train = static_cast<double>(vocab_size);
  for (const auto& s : train) {
    for (int t : detail::next_targets(s)) {
      freq[static_cast<std::size_t>(t)] += 1;
      n_train += 1;
    }
  }
  double nll = 0, uni = 0, count = 0;
  {
    ag::NoGradGuard ng;
    for (const auto& s : held_out) {
      const double n = static_cast<double>(s.ids.size() - 1);
      nll += lm_text_loss(lm, s, cfg.visual_rows, false).item() * n;
      for (int t : detail::next_targets(s)) uni -= std::log(freq[static_cast<std::size_t>(t)] / n_train);
      count += n;
    }
  }
  rep.held_out_perplexity = std::exp(nll / count);
  rep.unigram_perplexity = std::exp(uni / count);

  ps.mark_trained("pretrain");
  ps.restore_frozen_flags(saved);
  ps.set_frozen(ParamGroup::kLmBase, true);
  return rep;
}

}  // namespace llalign
