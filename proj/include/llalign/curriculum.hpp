#pragma once

// Staged training: per-stage datasets with cached BEV maps, the training
// loop with the halving schedule, and evaluation over held-out records.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "llalign/lang_forge.hpp"
#include "llalign/metrics.hpp"
#include "llalign/model.hpp"
#include "llalign/optim.hpp"
#include "llalign/scene_forge.hpp"

namespace llalign {

enum class Stage : std::uint8_t { kAlignSingleView, kAlignPanoramic, kPerception, kInstruction };
inline constexpr std::array<Stage, 4> kAllStages = {Stage::kAlignSingleView, Stage::kAlignPanoramic,
                                                    Stage::kPerception, Stage::kInstruction};

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kAlignSingleView: return "align_single_view";
    case Stage::kAlignPanoramic: return "align_panoramic";
    case Stage::kPerception: return "perception";
    case Stage::kInstruction: return "instruction";
  }
  return "?";
}

inline std::vector<Task> stage_tasks(Stage s) {
  switch (s) {
    case Stage::kAlignSingleView: return {Task::kCaptionView};
    case Stage::kAlignPanoramic: return {Task::kCaptionPanoramic};
    case Stage::kPerception: return {Task::kGroundedCaptioning, Task::kVisualGrounding};
    case Stage::kInstruction: return {Task::kQa};
  }
  return {};
}

/// How the scenes of a record set are produced.
struct SceneSource {
  GeneratorConfig gen;
  LidarConfig lidar;
  Range range;
};

/// Records with the BEV map of each referenced scene.
struct RecordSet {
  std::vector<DatasetRecord> records;
  std::map<std::uint64_t, std::shared_ptr<const BevGrid>> bev;

  const BevGrid& bev_of(const DatasetRecord& r) const {
    auto it = bev.find(r.scene_seed);
    if (it == bev.end()) throw DataError("no BEV map for scene " + std::to_string(r.scene_seed));
    return *it->second;
  }
  RecordSet filtered(const std::vector<Task>& tasks) const {
    RecordSet out;
    out.bev = bev;
    for (const auto& r : records) {
      if (std::find(tasks.begin(), tasks.end(), r.task) != tasks.end()) out.records.push_back(r);
    }
    return out;
  }
  RecordSet head(std::size_t n) const {
    RecordSet out{{records.begin(), records.begin() + static_cast<long>(std::min(n, records.size()))}, bev};
    return out;
  }
};

/// Worker threads used to encode BEV maps (results do not depend on it).
inline int& worker_threads() {
  static int n = 1;
  return n;
}

/// Encodes every scene referenced by the set's records with the model's
/// (frozen) encoder.
inline void attach_bev(RecordSet& set, const Model& model,
                       const std::function<PointCloud(std::uint64_t)>& load_cloud) {
  std::vector<std::uint64_t> todo;
  for (const auto& r : set.records) {
    if (!set.bev.count(r.scene_seed) && std::find(todo.begin(), todo.end(), r.scene_seed) == todo.end()) {
      todo.push_back(r.scene_seed);
    }
  }
  std::vector<std::shared_ptr<const BevGrid>> out(todo.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < todo.size(); i += step) {
      out[i] = std::make_shared<const BevGrid>(model.encode(load_cloud(todo[i])));
    }
  };
  const std::size_t n = static_cast<std::size_t>(std::max(1, worker_threads()));
  if (n == 1 || todo.size() < 2) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex mu;
    for (std::size_t t = 0; t < n; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, n);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }
  for (std::size_t i = 0; i < todo.size(); ++i) set.bev[todo[i]] = out[i];
}

inline void attach_bev(RecordSet& set, const Model& model, const SceneSource& src) {
  attach_bev(set, model, [&](std::uint64_t seed) {
    return sample_lidar(gen_scene(seed, src.gen), src.range, src.lidar);
  });
}

struct TrainLogRow {
  long step = 0;
  std::string stage;
  double loss_ce = 0;
  double loss_box = 0;
  double lr = 0;
};

struct TrainOptions {
  int epochs = 6;
  int batch = 8;
  double lr = 1e-3;
  double box_weight = 1.0;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps (<= 0: no limit).
  long max_steps = 0;
  /// Called after every epoch (e.g. to write a checkpoint).
  std::function<void(int epoch)> on_epoch;
  std::vector<TrainLogRow>* log = nullptr;
};

struct StageResult {
  long steps = 0;
  double final_loss = 0;
  double first_loss = 0;
};

/// True once the encoder and LM base carry stage-0 weights.
inline bool has_stage0(const ParamStore& ps) {
  for (const auto& p : ps.all()) {
    if ((p.group == ParamGroup::kEncoder || p.group == ParamGroup::kLmBase) && p.provenance == kProvenanceInit) {
      return false;
    }
  }
  return true;
}

/// Trains the alignment parameters on the stage's records. Batches hold
/// consecutive records of a per-epoch seeded permutation.
inline StageResult train_stage(Model& model, Stage stage, const RecordSet& data, const TrainOptions& opt) {
  if (!has_stage0(model.params())) throw Error("stage 0 (encoder and LM pretraining) has not been run");
  const RecordSet set = data.filtered(stage_tasks(stage));
  if (set.records.empty()) throw DataError("no records for stage " + std::string(stage_name(stage)));
  auto& ps = model.params();
  ps.set_trainable_groups({ParamGroup::kVat, ParamGroup::kQueries, ParamGroup::kVpe, ParamGroup::kProjection,
                           ParamGroup::kAdapter, ParamGroup::kBoxHead});
  Adam adam(AdamConfig{opt.lr});
  StageResult res;
  std::vector<std::size_t> order(set.records.size());
  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, 0xC0FFEE00 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    const double lr = scheduled_lr(opt.lr, epoch);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      ps.zero_grad();
      double ce = 0, box = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto& r = set.records[order[i]];
        auto parts = compute_loss(model, set.bev_of(r), r, opt.box_weight);
        ce += parts.ce;
        box += parts.box;
        ag::backward(ag::scale(parts.total, 1.0 / static_cast<double>(e - b)));
      }
      adam.step(ps, lr);
      ce /= static_cast<double>(e - b);
      box /= static_cast<double>(e - b);
      if (res.steps == 0) res.first_loss = ce + opt.box_weight * box;
      res.final_loss = ce + opt.box_weight * box;
      ++res.steps;
      if (opt.log) opt.log->push_back({res.steps, std::string(stage_name(stage)), ce, box, lr});
      if (opt.max_steps > 0 && res.steps >= opt.max_steps) break;
    }
    if (opt.on_epoch) opt.on_epoch(epoch);
    if (opt.max_steps > 0 && res.steps >= opt.max_steps) break;
  }
  ps.zero_grad();
  ps.mark_trained(std::string(stage_name(stage)));
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

inline constexpr int kMaxAnswerTokens = 120;

/// Reference text in the tokenizer's canonical spacing.
inline std::string canonical_answer(const Vocab& vocab, const std::string& answer) {
  return vocab.decode(vocab.encode(answer));
}

inline metrics::CaptionScores evaluate_captions(const Model& model, const RecordSet& set) {
  std::vector<std::string> cand, ref;
  metrics::Tally em;
  for (const auto& r : set.records) {
    if (r.task != Task::kCaptionView && r.task != Task::kCaptionPanoramic) continue;
    const auto p = predict(model, set.bev_of(r), r.views, r.question, kMaxAnswerTokens);
    cand.push_back(p.text);
    ref.push_back(canonical_answer(model.vocab(), r.answer));
    em.add(metrics::exact_match(cand.back(), ref.back()));
  }
  if (cand.empty()) throw DataError("no caption records to evaluate");
  metrics::CaptionScores s;
  for (int n = 1; n <= 4; ++n) s.bleu[static_cast<std::size_t>(n - 1)] = metrics::bleu(cand, ref, n);
  s.exact_match = em.rate();
  s.count = em.total;
  return s;
}

/// Grounded-captioning category accuracy and mIoU of regressed boxes read out
/// at the generated LOC anchors of visual grounding answers.
inline metrics::GroundingScores evaluate_grounding(const Model& model, const RecordSet& set) {
  metrics::GroundingScores s;
  metrics::Tally acc;
  std::vector<metrics::BoxGroup> groups;
  for (const auto& r : set.records) {
    if (r.task == Task::kGroundedCaptioning) {
      const auto p = predict(model, set.bev_of(r), r.views, r.question, kMaxAnswerTokens);
      acc.add(metrics::answer_category(p.text) == r.category);
    } else if (r.task == Task::kVisualGrounding) {
      const auto p = predict(model, set.bev_of(r), r.views, r.question, kMaxAnswerTokens);
      groups.push_back({*r.category, p.boxes, r.gt_boxes});
    }
  }
  s.acc5 = acc.rate();
  s.captioning_count = acc.total;
  s.miou = metrics::bev_miou(groups);
  s.grounding_count = static_cast<long>(groups.size());
  return s;
}

inline metrics::AccuracyBreakdown evaluate_qa(const Model& model, const RecordSet& set) {
  std::vector<std::string> preds;
  std::vector<DatasetRecord> recs;
  for (const auto& r : set.records) {
    if (r.task != Task::kQa) continue;
    preds.push_back(predict(model, set.bev_of(r), r.views, r.question, 8).text);
    recs.push_back(r);
  }
  return metrics::exact_match_accuracy(preds, recs);
}

}  // namespace llalign
