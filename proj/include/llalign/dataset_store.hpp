#pragma once

// On-disk dataset: per-stage JSONL splits, stage-0 text splits, one scene per
// line in scenes.jsonl, optional LLPC clouds and a manifest with counts, seed
// ranges and the producing config hash.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "llalign/config.hpp"
#include "llalign/lang_forge.hpp"
#include "llalign/scene_forge.hpp"

namespace llalign {

/// Mix of the stage-0 language-model text.
inline TaskMix pretrain_text_mix() { return {{"caption", 0.4}, {"grounding", 0.3}, {"qa", 0.3}}; }

/// Clouds as stored on disk (float32 coordinates), so regenerated and loaded
/// clouds are identical.
inline PointCloud stored_cloud(const Scene& scene, const SceneSource& src) {
  return decode_point_cloud(encode_point_cloud(sample_lidar(scene, src.range, src.lidar)));
}

/// Records of every split a config defines, generated in memory.
struct GeneratedData {
  std::map<Stage, Dataset> stages;
  Dataset lm_text;
  std::vector<std::uint64_t> encoder_train, encoder_val;
};

inline GeneratedData generate_all(const RunConfig& cfg) {
  GeneratedData g;
  const auto gen = cfg.generator();
  for (auto s : kAllStages) {
    const auto tasks = stage_tasks(s);
    TaskMix mix;
    for (auto t : tasks) mix[std::string(task_name(t))] = 1.0;
    Dataset d;
    d.train = generate_split(cfg.train_seeds(s), cfg.data.at(s).train, mix, gen);
    d.val = generate_split(cfg.val_seeds(s), cfg.data.at(s).val, mix, gen);
    g.stages[s] = std::move(d);
  }
  g.lm_text.train = generate_split(cfg.pretrain_seeds(), cfg.pretrain.lm_records, pretrain_text_mix(), gen);
  g.lm_text.val = generate_split(cfg.pretrain_val_seeds(), cfg.pretrain.lm_val_records, pretrain_text_mix(), gen);
  for (std::size_t i = 0; i < cfg.pretrain.encoder_scenes; ++i) {
    g.encoder_train.push_back(cfg.pretrain_seeds().begin + i % cfg.pretrain_seeds().size());
  }
  for (std::size_t i = 0; i < cfg.pretrain.encoder_val_scenes; ++i) {
    g.encoder_val.push_back(cfg.pretrain_val_seeds().begin + i % cfg.pretrain_val_seeds().size());
  }
  return g;
}

namespace detail {
inline nlohmann::json split_manifest(const std::vector<DatasetRecord>& recs, const SeedRange& seeds) {
  return {{"records", recs.size()}, {"seed_range", {seeds.begin, seeds.end}}, {"counts", record_counts(recs)}};
}
}  // namespace detail

/// Writes the dataset of `cfg` under `dir`. Returns the number of scenes written.
inline std::size_t write_dataset(const RunConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto g = generate_all(cfg);
  fs::create_directories(dir);
  nlohmann::json stages = nlohmann::json::object();
  std::set<std::uint64_t> seeds;
  for (const auto& [s, d] : g.stages) {
    const auto sd = dir / std::string(stage_name(s));
    fs::create_directories(sd);
    write_file((sd / "train.jsonl").string(), records_to_jsonl(d.train));
    write_file((sd / "val.jsonl").string(), records_to_jsonl(d.val));
    for (const auto* split : {&d.train, &d.val}) {
      for (const auto& r : *split) seeds.insert(r.scene_seed);
    }
    stages[std::string(stage_name(s))] = {{"train", detail::split_manifest(d.train, cfg.train_seeds(s))},
                                          {"val", detail::split_manifest(d.val, cfg.val_seeds(s))}};
  }
  const auto pd = dir / "pretrain";
  fs::create_directories(pd);
  write_file((pd / "text_train.jsonl").string(), records_to_jsonl(g.lm_text.train));
  write_file((pd / "text_val.jsonl").string(), records_to_jsonl(g.lm_text.val));
  seeds.insert(g.encoder_train.begin(), g.encoder_train.end());
  seeds.insert(g.encoder_val.begin(), g.encoder_val.end());

  const auto gen = cfg.generator();
  const auto src = cfg.scene_source();
  std::string scenes;
  if (cfg.write_clouds) fs::create_directories(dir / "clouds");
  for (auto seed : seeds) {
    const Scene scene = gen_scene(seed, gen);
    scenes += scene_to_json(scene).dump() + "\n";
    if (cfg.write_clouds) {
      write_file((dir / "clouds" / (std::to_string(seed) + ".llpc")).string(),
                 encode_point_cloud(sample_lidar(scene, src.range, src.lidar)));
    }
  }
  write_file((dir / "scenes.jsonl").string(), scenes);

  nlohmann::json m;
  m["format"] = "llalign-dataset";
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["seed_range"] = {cfg.seed_begin, cfg.seed_end};
  m["stages"] = stages;
  m["pretrain"] = {{"text_train", detail::split_manifest(g.lm_text.train, cfg.pretrain_seeds())},
                   {"text_val", detail::split_manifest(g.lm_text.val, cfg.pretrain_val_seeds())},
                   {"encoder_train", g.encoder_train},
                   {"encoder_val", g.encoder_val}};
  m["scenes"] = seeds.size();
  m["clouds"] = cfg.write_clouds;
  write_file((dir / "manifest.json").string(), m.dump(2) + "\n");
  return seeds.size();
}

/// Read access to a written dataset.
class DatasetStore {
 public:
  DatasetStore(const std::filesystem::path& dir, const RunConfig& cfg) : dir_(dir), src_(cfg.scene_source()) {
    const auto mp = dir / "manifest.json";
    if (!std::filesystem::exists(mp)) throw DataError("no dataset manifest at " + mp.string());
    try {
      manifest_ = nlohmann::json::parse(read_file(mp.string()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed dataset manifest: " + std::string(e.what()));
    }
    const auto have = manifest_.at("config_hash").get<std::string>();
    const auto want = config_hash(cfg);
    if (have != want) {
      throw ConfigError("dataset config hash " + have + " does not match config hash " + want);
    }
    std::istringstream in(read_file((dir / "scenes.jsonl").string()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Scene s = scene_from_json(nlohmann::json::parse(line));
      scenes_[s.seed] = std::move(s);
    }
  }

  const nlohmann::json& manifest() const { return manifest_; }

  std::vector<DatasetRecord> records(Stage s, const std::string& split) const {
    if (split != "train" && split != "val") throw DataError("unknown split '" + split + "' (valid: train, val)");
    return records_from_jsonl(read_file((dir_ / std::string(stage_name(s)) / (split + ".jsonl")).string()));
  }
  std::vector<DatasetRecord> text_records(const std::string& split) const {
    return records_from_jsonl(read_file((dir_ / "pretrain" / ("text_" + split + ".jsonl")).string()));
  }
  std::vector<std::uint64_t> encoder_seeds(const std::string& split) const {
    return manifest_.at("pretrain").at("encoder_" + split).get<std::vector<std::uint64_t>>();
  }

  const Scene& scene(std::uint64_t seed) const {
    auto it = scenes_.find(seed);
    if (it == scenes_.end()) throw DataError("dataset has no scene " + std::to_string(seed));
    return it->second;
  }
  PointCloud cloud(std::uint64_t seed) const {
    const auto p = dir_ / "clouds" / (std::to_string(seed) + ".llpc");
    if (std::filesystem::exists(p)) return decode_point_cloud(read_file(p.string()));
    return stored_cloud(scene(seed), src_);
  }

 private:
  std::filesystem::path dir_;
  SceneSource src_;
  nlohmann::json manifest_;
  std::map<std::uint64_t, Scene> scenes_;
};

}  // namespace llalign
