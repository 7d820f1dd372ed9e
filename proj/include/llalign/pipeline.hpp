#pragma once

// Glue between configs, datasets and models: stage-0 pretraining, per-stage
// record sets with cached BEV maps, and the stage sequence with checkpoints.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "llalign/checkpoint.hpp"
#include "llalign/config.hpp"
#include "llalign/curriculum.hpp"
#include "llalign/dataset_store.hpp"

namespace llalign {

/// Everything a run reads: records plus scene and cloud lookup.
struct DataBundle {
  GeneratedData data;
  std::function<Scene(std::uint64_t)> scene;
  std::function<PointCloud(std::uint64_t)> cloud;

  const std::vector<DatasetRecord>& records(Stage s, bool train) const {
    const auto& d = data.stages.at(s);
    return train ? d.train : d.val;
  }
};

/// Generates the config's data in memory (identical to what gen-data writes).
inline DataBundle in_memory_bundle(const RunConfig& cfg) {
  DataBundle b;
  b.data = generate_all(cfg);
  const auto gen = cfg.generator();
  const auto src = cfg.scene_source();
  b.scene = [gen](std::uint64_t seed) { return gen_scene(seed, gen); };
  b.cloud = [gen, src](std::uint64_t seed) { return stored_cloud(gen_scene(seed, gen), src); };
  return b;
}

/// Reads a dataset written by write_dataset. The store must outlive the bundle.
inline DataBundle store_bundle(const DatasetStore& store) {
  DataBundle b;
  for (auto s : kAllStages) b.data.stages[s] = {store.records(s, "train"), store.records(s, "val")};
  b.data.lm_text = {store.text_records("train"), store.text_records("val")};
  b.data.encoder_train = store.encoder_seeds("train");
  b.data.encoder_val = store.encoder_seeds("val");
  b.scene = [&store](std::uint64_t seed) { return store.scene(seed); };
  b.cloud = [&store](std::uint64_t seed) { return store.cloud(seed); };
  return b;
}

/// Evenly spaced subset of at most n records; keeps the task proportions of
/// splits that are grouped by task.
inline std::vector<DatasetRecord> spaced_subset(const std::vector<DatasetRecord>& recs, std::size_t n) {
  if (n >= recs.size()) return recs;
  std::vector<DatasetRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(recs[i * recs.size() / n]);
  return out;
}

struct Stage0Report {
  EncoderPretrainReport encoder;
  LmPretrainReport lm;
};

/// Trains the encoder (per-cell classification) and the base LM (text), then
/// freezes both.
inline Stage0Report run_stage0(Model& model, const RunConfig& cfg, const DataBundle& data) {
  const auto& p = cfg.pretrain;
  auto samples = [&](const std::vector<std::uint64_t>& seeds) {
    std::vector<EncoderSample> out;
    for (auto s : seeds) out.push_back(make_encoder_sample(data.scene(s), data.cloud(s), cfg.model.range, cfg.model.voxel));
    return out;
  };
  Stage0Report rep;
  EncoderPretrainConfig ec;
  ec.epochs = p.encoder_epochs;
  ec.batch = p.encoder_batch;
  ec.lr = p.encoder_lr;
  ec.seed = derive_seed(cfg.seed, 0xE0);
  rep.encoder = pretrain_encoder(model.params(), model.encoder(), samples(data.data.encoder_train),
                                 samples(data.data.encoder_val), ec);

  auto seqs = [&](const std::vector<DatasetRecord>& recs) {
    std::vector<TokenSeq> out;
    for (const auto& r : recs) out.push_back(record_sequence(model.vocab(), r));
    return out;
  };
  LmPretrainConfig lc;
  lc.epochs = p.lm_epochs;
  lc.batch = p.lm_batch;
  lc.lr = p.lm_lr;
  lc.seed = derive_seed(cfg.seed, 0x1E);
  lc.visual_rows = cfg.model.vat.queries;
  rep.lm = pretrain_lm(model.params(), model.lm(), model.vocab().size(), seqs(data.data.lm_text.train),
                       seqs(data.data.lm_text.val), lc);
  return rep;
}

/// Records with BEV maps from the model's frozen encoder.
inline RecordSet make_record_set(const Model& model, const DataBundle& data, std::vector<DatasetRecord> recs) {
  RecordSet set{std::move(recs), {}};
  attach_bev(set, model, data.cloud);
  return set;
}

/// Stage groups accepted by `train --stage`.
inline std::vector<Stage> stages_for(std::string_view group) {
  if (group == "align") return {Stage::kAlignSingleView, Stage::kAlignPanoramic};
  if (group == "perception") return {Stage::kPerception};
  if (group == "instruction") return {Stage::kInstruction};
  if (group == "all") return {kAllStages.begin(), kAllStages.end()};
  throw ConfigError("unknown stage '" + std::string(group) + "' (valid: align, perception, instruction, all)");
}

/// Name of the checkpoint a stage starts from.
inline std::string prerequisite_checkpoint(Stage s) {
  switch (s) {
    case Stage::kAlignSingleView: return "pretrain";
    case Stage::kAlignPanoramic: return std::string(stage_name(Stage::kAlignSingleView));
    case Stage::kPerception: return std::string(stage_name(Stage::kAlignPanoramic));
    case Stage::kInstruction: return std::string(stage_name(Stage::kPerception));
  }
  return "";
}

/// Trains one stage, writing <ckpt_root>/<stage>/epoch_<e> after every epoch
/// and <ckpt_root>/<stage> at the end.
inline StageResult train_stage_with_checkpoints(Model& model, const RunConfig& cfg, Stage s, const RecordSet& train,
                                                const std::filesystem::path& ckpt_root,
                                                std::vector<TrainLogRow>* log) {
  auto opt = cfg.train_options(s);
  opt.log = log;
  const std::string name(stage_name(s));
  const auto hash = config_hash(cfg);
  opt.on_epoch = [&](int epoch) {
    save_checkpoint(ckpt_root / name / ("epoch_" + std::to_string(epoch)), model,
                    {hash, cfg.seed, name, epoch + 1, derive_seed(opt.seed, 0xC0FFEE00 + epoch + 1)});
  };
  const auto res = train_stage(model, s, train, opt);
  save_checkpoint(ckpt_root / name, model, {hash, cfg.seed, name, opt.epochs, derive_seed(opt.seed, 0xC0FFEE00 + opt.epochs)});
  return res;
}

inline std::string log_csv(const std::vector<TrainLogRow>& rows) {
  std::string out = "step,stage,loss_ce,loss_box,lr\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%s,%.17g,%.17g,%.17g\n", r.step, r.stage.c_str(), r.loss_ce, r.loss_box, r.lr);
    out += buf;
  }
  return out;
}

}  // namespace llalign
