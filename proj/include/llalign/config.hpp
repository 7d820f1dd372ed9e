#pragma once

// Run configuration: JSON schema, the "toy" and "paper-reference" presets,
// validation and the config hash recorded in every artifact.

#include <array>
#include <map>
#include <set>
#include <string>

#include "json.hpp"

#include "llalign/curriculum.hpp"
#include "llalign/errors.hpp"
#include "llalign/hash.hpp"
#include "llalign/model.hpp"

namespace llalign {

struct StagePlanEntry {
  int epochs = 6;
  int batch = 8;
  double lr = 1e-3;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
};

struct PretrainPlan {
  std::size_t encoder_scenes = 400;
  std::size_t encoder_val_scenes = 50;
  int encoder_epochs = 15;
  int encoder_batch = 8;
  double encoder_lr = 3e-2;
  std::size_t lm_records = 3000;
  std::size_t lm_val_records = 200;
  int lm_epochs = 3;
  int lm_batch = 8;
  double lm_lr = 2e-3;
};

struct RunConfig {
  std::string name = "toy";
  std::uint64_t seed = 0;
  ModelConfig model;
  int min_objects = 1;
  int max_objects = 4;
  double moving_probability = 0.5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double box_weight = 1.0;
  std::map<Stage, StagePlanEntry> stages;
  PretrainPlan pretrain;
  /// Scene seed pool partitioned into disjoint per-split blocks.
  std::uint64_t seed_begin = 0, seed_end = 10'000'000;
  bool write_clouds = false;
  std::map<Stage, SplitCounts> data;
  std::vector<std::uint64_t> experiment_seeds = {1, 2, 3};
  std::string data_dir = "data";
  std::string runs_dir = "runs";

  GeneratorConfig generator() const {
    GeneratorConfig g;
    g.range = model.range;
    g.min_objects = min_objects;
    g.max_objects = max_objects;
    g.moving_probability = moving_probability;
    return g;
  }
  SceneSource scene_source() const { return {generator(), LidarConfig{}, model.range}; }

  /// Disjoint scene-seed blocks: two per stage (train, val) and two for stage 0.
  SeedRange seed_block(int index) const {
    const std::uint64_t w = (seed_end - seed_begin) / 10;
    return {seed_begin + static_cast<std::uint64_t>(index) * w, seed_begin + static_cast<std::uint64_t>(index + 1) * w};
  }
  SeedRange train_seeds(Stage s) const { return seed_block(2 * static_cast<int>(s)); }
  SeedRange val_seeds(Stage s) const { return seed_block(2 * static_cast<int>(s) + 1); }
  SeedRange pretrain_seeds() const { return seed_block(8); }
  SeedRange pretrain_val_seeds() const { return seed_block(9); }

  TrainOptions train_options(Stage s) const {
    const auto& e = stages.at(s);
    TrainOptions o;
    o.epochs = e.epochs;
    o.batch = e.batch;
    o.lr = e.lr;
    o.box_weight = box_weight;
    o.seed = derive_seed(seed, 0x57A6E + static_cast<std::uint64_t>(s));
    return o;
  }

  void validate() const;
};

inline Stage stage_from_name(std::string_view s) {
  for (auto st : kAllStages) {
    if (stage_name(st) == s) return st;
  }
  throw ConfigError("unknown stage '" + std::string(s) +
                    "' (valid: align_single_view, align_panoramic, perception, instruction)");
}

inline void RunConfig::validate() const {
  model.range.validate();
  grid_dims(model.range, model.voxel);
  generator().validate();
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(model.channels, "encoder.channels");
  positive(model.voxel_width, "encoder.voxel_width");
  positive(model.vat.queries, "vat.queries");
  positive(model.vat.heads, "vat.heads");
  positive(model.vat.ff_mult, "vat.ff_mult");
  if (model.vat.layers < 0) throw ConfigError("vat.layers must be >= 0");
  if (model.channels % model.vat.heads != 0) throw ConfigError("vat.heads must divide encoder.channels");
  positive(model.lm.width, "lm.width");
  positive(model.lm.blocks, "lm.blocks");
  positive(model.lm.heads, "lm.heads");
  positive(model.lm.context, "lm.context");
  positive(model.lm.adapter_rank, "lm.adapter_rank");
  positive(model.lm.ff_mult, "lm.ff_mult");
  if (model.lm.width % model.lm.heads != 0) throw ConfigError("lm.heads must divide lm.width");
  if (model.lm.width % 2 != 0) throw ConfigError("lm.width must be even");
  if (model.channels % 4 != 0) throw ConfigError("encoder.channels must be a multiple of 4");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer betas must lie in [0,1)");
  positive(eps, "optimizer.eps");
  if (box_weight < 0) throw ConfigError("optimizer.box_weight must be >= 0");
  for (auto s : kAllStages) {
    if (!stages.count(s)) throw ConfigError("missing stage plan for " + std::string(stage_name(s)));
    const auto& e = stages.at(s);
    positive(e.epochs, "stage epochs");
    positive(e.batch, "stage batch");
    positive(e.lr, "stage lr");
    if (!data.count(s)) throw ConfigError("missing data counts for " + std::string(stage_name(s)));
  }
  positive(pretrain.encoder_epochs, "pretrain.encoder_epochs");
  positive(pretrain.lm_epochs, "pretrain.lm_epochs");
  positive(pretrain.encoder_lr, "pretrain.encoder_lr");
  positive(pretrain.lm_lr, "pretrain.lm_lr");
  positive(pretrain.encoder_batch, "pretrain.encoder_batch");
  positive(pretrain.lm_batch, "pretrain.lm_batch");
  if (seed_end <= seed_begin || (seed_end - seed_begin) < 10) {
    throw ConfigError("data.seed_range must span at least 10 seeds");
  }
  if (experiment_seeds.empty()) throw ConfigError("experiment_seeds must not be empty");
}

// ---------------------------------------------------------------------------
// Presets

inline RunConfig toy_config() {
  RunConfig c;
  c.name = "toy";
  c.model.range = {-14.4, 14.4, -14.4, 14.4, -5.0, 3.0};
  c.model.voxel = {1.2, 1.2, 0.5};
  c.model.channels = 32;
  c.model.voxel_width = 16;
  c.model.vat = VatConfig{16, 2, 4, 2, VatMode::kFull, false, 0.2};
  c.model.lm = LmConfig{64, 2, 4, 256, 4, 4};
  c.stages[Stage::kAlignSingleView] = {8, 2, 3e-3};
  c.stages[Stage::kAlignPanoramic] = {6, 2, 2e-3};
  c.stages[Stage::kPerception] = {8, 2, 3e-3};
  c.stages[Stage::kInstruction] = {6, 2, 2e-3};
  c.data[Stage::kAlignSingleView] = {2000, 200};
  c.data[Stage::kAlignPanoramic] = {1000, 100};
  c.data[Stage::kPerception] = {2000, 200};
  c.data[Stage::kInstruction] = {2000, 300};
  return c;
}

/// Constants of the original setup; documents the reference configuration and
/// is far beyond desk scale.
inline RunConfig paper_reference_config() {
  RunConfig c;
  c.name = "paper-reference";
  c.model.range = {-54.0, 54.0, -54.0, 54.0, -5.0, 3.0};
  c.model.voxel = {0.6, 0.6, 0.5};
  c.model.channels = 64;
  c.model.voxel_width = 16;
  c.model.vat = VatConfig{576, 2, 8, 4, VatMode::kFull, false, 1.0};
  c.model.lm = LmConfig{768, 12, 12, 2048, 8, 4};
  c.max_objects = 8;
  for (auto s : kAllStages) c.stages[s] = {6, 8, 1e-4};
  c.data[Stage::kAlignSingleView] = {20000, 2000};
  c.data[Stage::kAlignPanoramic] = {20000, 2000};
  c.data[Stage::kPerception] = {20000, 2000};
  c.data[Stage::kInstruction] = {20000, 2000};
  return c;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& r = c.model.range;
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["world"] = {{"range", {r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max}},
                {"voxel", {c.model.voxel.dx, c.model.voxel.dy, c.model.voxel.dz}}};
  j["encoder"] = {{"channels", c.model.channels}, {"voxel_width", c.model.voxel_width}};
  const auto& v = c.model.vat;
  j["vat"] = {{"queries", v.queries},
              {"layers", v.layers},
              {"heads", v.heads},
              {"ff_mult", v.ff_mult},
              {"mode", vat_mode_name(v.mode)},
              {"mask_inactive", v.mask_inactive},
              {"position_scale", v.position_scale}};
  const auto& l = c.model.lm;
  j["lm"] = {{"width", l.width},         {"blocks", l.blocks},   {"heads", l.heads},
             {"context", l.context},     {"adapter_rank", l.adapter_rank}, {"ff_mult", l.ff_mult}};
  j["scenes"] = {{"min_objects", c.min_objects},
                 {"max_objects", c.max_objects},
                 {"moving_probability", c.moving_probability}};
  j["optimizer"] = {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"box_weight", c.box_weight}};
  json stages = json::object();
  for (const auto& [s, e] : c.stages) {
    stages[std::string(stage_name(s))] = {{"epochs", e.epochs}, {"batch", e.batch}, {"lr", e.lr}};
  }
  j["stages"] = stages;
  const auto& p = c.pretrain;
  j["pretrain"] = {{"encoder_scenes", p.encoder_scenes}, {"encoder_val_scenes", p.encoder_val_scenes},
                   {"encoder_epochs", p.encoder_epochs}, {"encoder_batch", p.encoder_batch},
                   {"encoder_lr", p.encoder_lr},         {"lm_records", p.lm_records},
                   {"lm_val_records", p.lm_val_records}, {"lm_epochs", p.lm_epochs},
                   {"lm_batch", p.lm_batch},             {"lm_lr", p.lm_lr}};
  json counts = json::object();
  for (const auto& [s, n] : c.data) counts[std::string(stage_name(s))] = {{"train", n.train}, {"val", n.val}};
  j["data"] = {{"seed_range", {c.seed_begin, c.seed_end}}, {"write_clouds", c.write_clouds}, {"records", counts}};
  j["experiment_seeds"] = c.experiment_seeds;
  j["paths"] = {{"data", c.data_dir}, {"runs", c.runs_dir}};
  return j;
}

namespace detail {

/// Reads members of one JSON object and rejects keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + path_ + "." + it.key());
    }
  }
  template <typename T>
  void opt(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key " + path_ + "." + key + " has the wrong type");
    }
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }
  std::string sub(const char* key) const { return path_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Missing keys keep the toy defaults; unknown keys and wrong types are errors.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c = toy_config();
  {
    detail::ObjectReader root(j, "config");
    root.opt("name", c.name);
    root.opt("seed", c.seed);
    if (root.has("world")) {
      detail::ObjectReader w(root.at("world"), root.sub("world"));
      std::array<double, 6> r{};
      std::array<double, 3> vx{};
      auto& R = c.model.range;
      r = {R.x_min, R.x_max, R.y_min, R.y_max, R.z_min, R.z_max};
      vx = {c.model.voxel.dx, c.model.voxel.dy, c.model.voxel.dz};
      w.opt("range", r);
      w.opt("voxel", vx);
      R = {r[0], r[1], r[2], r[3], r[4], r[5]};
      c.model.voxel = {vx[0], vx[1], vx[2]};
    }
    if (root.has("encoder")) {
      detail::ObjectReader e(root.at("encoder"), root.sub("encoder"));
      e.opt("channels", c.model.channels);
      e.opt("voxel_width", c.model.voxel_width);
    }
    if (root.has("vat")) {
      detail::ObjectReader v(root.at("vat"), root.sub("vat"));
      auto& vc = c.model.vat;
      v.opt("queries", vc.queries);
      v.opt("layers", vc.layers);
      v.opt("heads", vc.heads);
      v.opt("ff_mult", vc.ff_mult);
      std::string mode(vat_mode_name(vc.mode));
      v.opt("mode", mode);
      vc.mode = vat_mode_from_name(mode);
      v.opt("mask_inactive", vc.mask_inactive);
      v.opt("position_scale", vc.position_scale);
    }
    if (root.has("lm")) {
      detail::ObjectReader l(root.at("lm"), root.sub("lm"));
      auto& lc = c.model.lm;
      l.opt("width", lc.width);
      l.opt("blocks", lc.blocks);
      l.opt("heads", lc.heads);
      l.opt("context", lc.context);
      l.opt("adapter_rank", lc.adapter_rank);
      l.opt("ff_mult", lc.ff_mult);
    }
    if (root.has("scenes")) {
      detail::ObjectReader s(root.at("scenes"), root.sub("scenes"));
      s.opt("min_objects", c.min_objects);
      s.opt("max_objects", c.max_objects);
      s.opt("moving_probability", c.moving_probability);
    }
    if (root.has("optimizer")) {
      detail::ObjectReader o(root.at("optimizer"), root.sub("optimizer"));
      o.opt("beta1", c.beta1);
      o.opt("beta2", c.beta2);
      o.opt("eps", c.eps);
      o.opt("box_weight", c.box_weight);
    }
    if (root.has("stages")) {
      const auto& sj = root.at("stages");
      if (!sj.is_object()) throw ConfigError("config.stages must be an object");
      for (auto it = sj.begin(); it != sj.end(); ++it) {
        const Stage st = stage_from_name(it.key());
        detail::ObjectReader e(it.value(), "config.stages." + it.key());
        auto& plan = c.stages[st];
        e.opt("epochs", plan.epochs);
        e.opt("batch", plan.batch);
        e.opt("lr", plan.lr);
      }
    }
    if (root.has("pretrain")) {
      detail::ObjectReader p(root.at("pretrain"), root.sub("pretrain"));
      auto& pp = c.pretrain;
      p.opt("encoder_scenes", pp.encoder_scenes);
      p.opt("encoder_val_scenes", pp.encoder_val_scenes);
      p.opt("encoder_epochs", pp.encoder_epochs);
      p.opt("encoder_batch", pp.encoder_batch);
      p.opt("encoder_lr", pp.encoder_lr);
      p.opt("lm_records", pp.lm_records);
      p.opt("lm_val_records", pp.lm_val_records);
      p.opt("lm_epochs", pp.lm_epochs);
      p.opt("lm_batch", pp.lm_batch);
      p.opt("lm_lr", pp.lm_lr);
    }
    if (root.has("data")) {
      detail::ObjectReader d(root.at("data"), root.sub("data"));
      std::array<std::uint64_t, 2> sr{c.seed_begin, c.seed_end};
      d.opt("seed_range", sr);
      c.seed_begin = sr[0];
      c.seed_end = sr[1];
      d.opt("write_clouds", c.write_clouds);
      if (d.has("records")) {
        const auto& rj = d.at("records");
        if (!rj.is_object()) throw ConfigError("config.data.records must be an object");
        for (auto it = rj.begin(); it != rj.end(); ++it) {
          const Stage st = stage_from_name(it.key());
          detail::ObjectReader e(it.value(), "config.data.records." + it.key());
          e.opt("train", c.data[st].train);
          e.opt("val", c.data[st].val);
        }
      }
    }
    root.opt("experiment_seeds", c.experiment_seeds);
    if (root.has("paths")) {
      detail::ObjectReader p(root.at("paths"), root.sub("paths"));
      p.opt("data", c.data_dir);
      p.opt("runs", c.runs_dir);
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + path);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the compact, key-sorted JSON of everything but the paths and
/// the cloud-dump switch, neither of which changes any record or weight.
inline std::string config_hash(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("paths");
  j["data"].erase("write_clouds");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace llalign
