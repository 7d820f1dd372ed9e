#pragma once

// Comparison runs: pretraining-curriculum arms followed by identical QA
// fine-tuning, and the VAT ablation (mean-pooled MLP, query transformer
// without view embeddings, full VAT) on single-view captions.

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "llalign/pipeline.hpp"

namespace llalign {

enum class CurriculumArm : std::uint8_t { kNone, kCaption, kGrounding, kCaptionGrounding };

struct ExperimentOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  /// Records per training stage (0: the whole split).
  std::size_t train_records = 0;
  /// Validation records (0: the whole split).
  std::size_t val_records = 0;
  /// Epochs of every non-QA stage (0: the stage plan's).
  int epochs = 0;
  /// QA fine-tuning epochs, equal for all arms (0: the stage plan's).
  int qa_epochs = 0;
  /// Curriculum arms to run (empty: all four). C+G and None are always added.
  std::vector<CurriculumArm> curriculum_arms;
  std::function<void(const std::string&)> progress;
};

/// Builds a fresh model whose encoder and LM base are taken from `base` and
/// whose alignment parameters are initialized from `seed`.
inline std::unique_ptr<Model> arm_model(const Model& base, ModelConfig mc, std::uint64_t seed) {
  mc.seed = seed;
  auto m = std::make_unique<Model>(mc, base.vocab());
  m->copy_state_from(base, {ParamGroup::kEncoder, ParamGroup::kLmBase});
  return m;
}

namespace detail {
inline RecordSet subset_set(const Model& base, const DataBundle& data, const std::vector<DatasetRecord>& recs,
                            std::size_t n) {
  return make_record_set(base, data, spaced_subset(recs, n == 0 ? recs.size() : n));
}
inline TrainOptions arm_options(const RunConfig& cfg, Stage s, int epochs, std::uint64_t seed) {
  auto o = cfg.train_options(s);
  if (epochs > 0) o.epochs = epochs;
  o.seed = derive_seed(seed, 0x57A6E + static_cast<std::uint64_t>(s));
  return o;
}
inline void note(const ExperimentOptions& o, const std::string& msg) {
  if (o.progress) o.progress(msg);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// VAT ablation

inline constexpr std::array<VatMode, 3> kAblationArms = {VatMode::kMlpOnly, VatMode::kNoVpe, VatMode::kFull};

inline std::string_view ablation_arm_label(VatMode m) {
  switch (m) {
    case VatMode::kMlpOnly: return "MLP-only";
    case VatMode::kNoVpe: return "QTrans";
    case VatMode::kFull: return "QTrans+VPE";
  }
  return "?";
}

struct VatAblationReport {
  /// seed -> arm -> scores
  std::map<std::uint64_t, std::map<VatMode, metrics::CaptionScores>> scores;
  /// Seeds where BLEU-4 satisfies MLP-only <= QTrans <= QTrans+VPE.
  int ordered_seeds = 0;
  nlohmann::json json;
  std::string text;
};

inline VatAblationReport run_vat_ablation(const RunConfig& cfg, const Model& base, const DataBundle& data,
                                          const ExperimentOptions& opt) {
  const Stage st = Stage::kAlignSingleView;
  const auto train = detail::subset_set(base, data, data.records(st, true), opt.train_records);
  const auto val = detail::subset_set(base, data, data.records(st, false), opt.val_records);
  VatAblationReport rep;
  for (auto seed : opt.seeds) {
    for (auto mode : kAblationArms) {
      detail::note(opt, "vat ablation seed " + std::to_string(seed) + " arm " + std::string(ablation_arm_label(mode)));
      ModelConfig mc = cfg.model;
      mc.vat.mode = mode;
      auto m = arm_model(base, mc, seed);
      train_stage(*m, st, train, detail::arm_options(cfg, st, opt.epochs, seed));
      rep.scores[seed][mode] = evaluate_captions(*m, val);
    }
    const auto& s = rep.scores[seed];
    if (s.at(VatMode::kMlpOnly).bleu[3] <= s.at(VatMode::kNoVpe).bleu[3] &&
        s.at(VatMode::kNoVpe).bleu[3] <= s.at(VatMode::kFull).bleu[3]) {
      ++rep.ordered_seeds;
    }
  }

  nlohmann::json arms = nlohmann::json::array();
  std::ostringstream t;
  t << "VAT ablation (single-view captions, " << val.records.size() << " held-out records)\n"
    << "  arm          seed  BLEU-1  BLEU-4  Exact\n";
  for (auto mode : kAblationArms) {
    nlohmann::json per_seed = nlohmann::json::object();
    double mean4 = 0;
    for (const auto& [seed, s] : rep.scores) {
      const auto& c = s.at(mode);
      per_seed[std::to_string(seed)] = {{"bleu", {c.bleu[0], c.bleu[1], c.bleu[2], c.bleu[3]}},
                                        {"exact_match", c.exact_match}};
      mean4 += c.bleu[3] / static_cast<double>(rep.scores.size());
      char line[128];
      std::snprintf(line, sizeof line, "  %-11s %5llu  %s  %s  %s\n", std::string(ablation_arm_label(mode)).c_str(),
                    static_cast<unsigned long long>(seed), metrics::pct(c.bleu[0]).c_str(),
                    metrics::pct(c.bleu[3]).c_str(), metrics::pct(c.exact_match).c_str());
      t << line;
    }
    arms.push_back({{"arm", ablation_arm_label(mode)},
                    {"mode", vat_mode_name(mode)},
                    {"mean_bleu4", mean4},
                    {"seeds", per_seed}});
  }
  t << "  BLEU-4 ordering MLP-only <= QTrans <= QTrans+VPE holds in " << rep.ordered_seeds << " of "
    << rep.scores.size() << " seeds\n"
    << "  reference: BLEU-4 11.37 / 15.41 / 19.26, BERT 88.14 / 90.60 / 91.32 (" << metrics::kReferenceNote
    << ")\n";
  rep.json = {{"schema_version", metrics::kReportSchemaVersion},
              {"experiment", "vat_ablation"},
              {"arms", arms},
              {"ordered_seeds", rep.ordered_seeds},
              {"seed_count", rep.scores.size()},
              {"reference",
               {{"note", metrics::kReferenceNote},
                {"bleu4", {11.37, 15.41, 19.26}},
                {"bert_score", {88.14, 90.60, 91.32}}}}};
  rep.text = t.str();
  return rep;
}

// ---------------------------------------------------------------------------
// Curriculum arms

inline constexpr std::array<CurriculumArm, 4> kCurriculumArms = {CurriculumArm::kNone, CurriculumArm::kCaption,
                                                                  CurriculumArm::kGrounding,
                                                                  CurriculumArm::kCaptionGrounding};

inline std::string_view curriculum_arm_label(CurriculumArm a) {
  switch (a) {
    case CurriculumArm::kNone: return "None";
    case CurriculumArm::kCaption: return "C";
    case CurriculumArm::kGrounding: return "G";
    case CurriculumArm::kCaptionGrounding: return "C+G";
  }
  return "?";
}

inline std::vector<Stage> curriculum_arm_stages(CurriculumArm a) {
  switch (a) {
    case CurriculumArm::kNone: return {};
    case CurriculumArm::kCaption: return {Stage::kAlignSingleView, Stage::kAlignPanoramic};
    case CurriculumArm::kGrounding: return {Stage::kPerception};
    case CurriculumArm::kCaptionGrounding:
      return {Stage::kAlignSingleView, Stage::kAlignPanoramic, Stage::kPerception};
  }
  return {};
}

struct CurriculumArmRun {
  metrics::AccuracyBreakdown qa;
  /// Alignment tensors still at their random initialization when QA training starts.
  std::size_t untrained_alignment_tensors = 0;
  long qa_steps = 0;
  double seconds = 0;
};

struct CurriculumReport {
  std::map<std::uint64_t, std::map<CurriculumArm, CurriculumArmRun>> runs;
  /// Seeds where C+G overall accuracy >= the scratch arm's.
  int cg_not_worse_seeds = 0;
  /// Mean over seeds of (C+G overall - scratch overall).
  double mean_delta = 0;
  nlohmann::json json;
  std::string text;
};

inline std::size_t untrained_alignment_tensors(const ParamStore& ps) {
  std::size_t n = 0;
  for (const auto& p : ps.all()) n += is_alignment_group(p.group) && p.provenance == kProvenanceInit;
  return n;
}

inline CurriculumReport run_curriculum_experiment(const RunConfig& cfg, const Model& base, const DataBundle& data,
                                                  const ExperimentOptions& opt) {
  std::map<Stage, RecordSet> sets;
  for (auto s : {Stage::kAlignSingleView, Stage::kAlignPanoramic, Stage::kPerception, Stage::kInstruction}) {
    sets.emplace(s, detail::subset_set(base, data, data.records(s, true), opt.train_records));
  }
  const auto qa_val = detail::subset_set(base, data, data.records(Stage::kInstruction, false), opt.val_records);

  std::vector<CurriculumArm> chosen;
  for (auto arm : kCurriculumArms) {
    const auto& want = opt.curriculum_arms;
    if (want.empty() || arm == CurriculumArm::kNone || arm == CurriculumArm::kCaptionGrounding ||
        std::find(want.begin(), want.end(), arm) != want.end()) {
      chosen.push_back(arm);
    }
  }
  CurriculumReport rep;
  for (auto seed : opt.seeds) {
    for (auto arm : chosen) {
      const auto t0 = std::chrono::steady_clock::now();
      detail::note(opt, "curriculum seed " + std::to_string(seed) + " arm " + std::string(curriculum_arm_label(arm)));
      auto m = arm_model(base, cfg.model, seed);
      for (auto s : curriculum_arm_stages(arm)) train_stage(*m, s, sets.at(s), detail::arm_options(cfg, s, opt.epochs, seed));
      CurriculumArmRun run;
      run.untrained_alignment_tensors = untrained_alignment_tensors(m->params());
      const auto res = train_stage(*m, Stage::kInstruction, sets.at(Stage::kInstruction),
                                   detail::arm_options(cfg, Stage::kInstruction, opt.qa_epochs, seed));
      run.qa_steps = res.steps;
      run.qa = evaluate_qa(*m, qa_val);
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rep.runs[seed][arm] = run;
    }
    const auto& r = rep.runs[seed];
    const double d = r.at(CurriculumArm::kCaptionGrounding).qa.overall.rate() - r.at(CurriculumArm::kNone).qa.overall.rate();
    rep.cg_not_worse_seeds += d >= 0;
    rep.mean_delta += d / static_cast<double>(opt.seeds.size());
  }

  // Pooled over seeds.
  std::map<CurriculumArm, metrics::AccuracyBreakdown> pooled;
  for (const auto& [seed, arms] : rep.runs) {
    for (const auto& [arm, run] : arms) {
      auto& p = pooled[arm];
      p.overall.correct += run.qa.overall.correct;
      p.overall.total += run.qa.overall.total;
      for (const auto& [k, v] : run.qa.cells) {
        p.cells[k].correct += v.correct;
        p.cells[k].total += v.total;
      }
    }
  }

  std::ostringstream t;
  t << "Curriculum arms (QA exact-match accuracy pooled over " << opt.seeds.size() << " seeds, " << qa_val.records.size()
    << " held-out questions per seed)\n  arm  ";
  for (QaType qt : kAllQaTypes) {
    char h[40];
    std::snprintf(h, sizeof h, " %-10s H0/H1/All    ", std::string(qa_type_name(qt)).c_str());
    t << h;
  }
  t << "overall\n";
  nlohmann::json arms_json = nlohmann::json::array();
  for (auto arm : chosen) {
    const auto& p = pooled[arm];
    char lab[16];
    std::snprintf(lab, sizeof lab, "  %-4s ", std::string(curriculum_arm_label(arm)).c_str());
    t << lab;
    nlohmann::json cells = nlohmann::json::object();
    for (QaType qt : kAllQaTypes) {
      const std::string name(qa_type_name(qt));
      for (const char* h : {"H0", "H1", "All"}) {
        auto it = p.cells.find(name + "/" + h);
        const metrics::Tally tl = it == p.cells.end() ? metrics::Tally{} : it->second;
        cells[name + "/" + h] = metrics::tally_json(tl);
        t << (it == p.cells.end() ? std::string("   n/a") : metrics::pct(tl.rate())) << (std::string(h) == "All" ? "   " : "/");
      }
    }
    t << metrics::pct(p.overall.rate()) << "\n";
    nlohmann::json per_seed = nlohmann::json::object();
    for (const auto& [seed, arms] : rep.runs) {
      const auto& run = arms.at(arm);
      per_seed[std::to_string(seed)] = {{"overall", metrics::tally_json(run.qa.overall)},
                                        {"untrained_alignment_tensors", run.untrained_alignment_tensors},
                                        {"qa_steps", run.qa_steps}};
    }
    arms_json.push_back({{"arm", curriculum_arm_label(arm)},
                         {"overall", metrics::tally_json(p.overall)},
                         {"cells", cells},
                         {"seeds", per_seed}});
  }
  char tail[160];
  std::snprintf(tail, sizeof tail, "  C+G >= None in %d of %zu seeds; mean overall delta %+.2f points\n",
                rep.cg_not_worse_seeds, opt.seeds.size(), 100.0 * rep.mean_delta);
  t << tail << "  reference overall: None 41.2 / C 47.4 / G 46.5 / C+G 48.6 (" << metrics::kReferenceNote << ")\n";
  rep.json = {{"schema_version", metrics::kReportSchemaVersion},
              {"experiment", "curriculum"},
              {"arms", arms_json},
              {"cg_not_worse_seeds", rep.cg_not_worse_seeds},
              {"mean_delta", rep.mean_delta},
              {"seed_count", opt.seeds.size()},
              {"reference",
               {{"note", metrics::kReferenceNote},
                {"overall", {{"None", 41.2}, {"C", 47.4}, {"G", 46.5}, {"C+G", 48.6}}}}}};
  rep.text = t.str();
  return rep;
}

}  // namespace llalign
