// Command-line driver: dataset generation, staged training, evaluation,
// single-question inference and the comparison experiments.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "llalign/experiments.hpp"
#include "llalign/pipeline.hpp"

namespace fs = std::filesystem;
using namespace llalign;

namespace {

/// Refusal with a distinct exit code; carries both hashes in the message.
struct HashMismatch : ConfigError {
  using ConfigError::ConfigError;
};

struct Common {
  std::string config_path;
  std::string data_dir;
  std::string run_dir;
  int threads = 1;
  bool trace = false;

  RunConfig config() const { return load_config(config_path); }
  fs::path data(const RunConfig& c) const { return data_dir.empty() ? fs::path(c.data_dir) : fs::path(data_dir); }
  fs::path run(const RunConfig& c) const { return run_dir.empty() ? fs::path(c.runs_dir) : fs::path(run_dir); }
};

int default_threads() {
  if (const char* e = std::getenv("LLALIGN_THREADS")) {
    try {
      return std::max(1, std::stoi(e));
    } catch (const std::exception&) {
      throw ConfigError(std::string("LLALIGN_THREADS is not an integer: ") + e);
    }
  }
  return 1;
}

void check_hash(const CheckpointInfo& info, const RunConfig& cfg, const fs::path& where) {
  const auto want = config_hash(cfg);
  if (info.config_hash != want) {
    throw HashMismatch("checkpoint " + where.string() + " was produced with config hash " + info.config_hash +
                       " but the config hash is " + want);
  }
}

std::unique_ptr<Model> load_model(const RunConfig& cfg, const fs::path& ckpt) {
  const auto info = read_checkpoint_info(ckpt);
  check_hash(info, cfg, ckpt);
  auto m = std::make_unique<Model>(cfg.model, read_checkpoint_vocab(ckpt));
  load_checkpoint(ckpt, *m);
  return m;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p.string(), j.dump(2) + "\n");
}

/// Stage 0 into <run>/ckpt/pretrain; returns the pretrained model.
std::unique_ptr<Model> do_pretrain(const RunConfig& cfg, const DataBundle& data, const fs::path& run) {
  auto model = std::make_unique<Model>(cfg.model, Vocab::build(lang::grammar_corpus()));
  const auto rep = run_stage0(*model, cfg, data);
  save_checkpoint(run / "ckpt" / "pretrain", *model, {config_hash(cfg), cfg.seed, "pretrain", 0, 0});
  nlohmann::json j = {{"config_hash", config_hash(cfg)},
                      {"seed", cfg.seed},
                      {"encoder",
                       {{"cell_accuracy", rep.encoder.cell_accuracy},
                        {"majority_baseline", rep.encoder.majority_baseline},
                        {"eval_losses", rep.encoder.eval_losses}}},
                      {"lm",
                       {{"epoch_losses", rep.lm.epoch_losses},
                        {"held_out_perplexity", rep.lm.held_out_perplexity},
                        {"unigram_perplexity", rep.lm.unigram_perplexity}}}};
  write_json(run / "logs" / "pretrain.json", j);
  std::cout << "stage 0: encoder cell accuracy " << rep.encoder.cell_accuracy << " (majority "
            << rep.encoder.majority_baseline << "), LM held-out perplexity " << rep.lm.held_out_perplexity
            << " (unigram " << rep.lm.unigram_perplexity << ")\n";
  return model;
}

ViewSet parse_views(const std::string& list) {
  if (list == "all") return kAllViewsMask;
  ViewSet v = 0;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) v |= view_bit(view_from_name(item));
  }
  if (v == 0) throw DataError("--views needs at least one view");
  return v;
}

std::vector<Task> eval_tasks(const std::string& task) {
  if (task == "caption") return {Task::kCaptionView, Task::kCaptionPanoramic};
  if (task == "grounding") return {Task::kGroundedCaptioning, Task::kVisualGrounding};
  if (task == "qa") return {Task::kQa};
  throw ConfigError("unknown task '" + task + "' (valid: caption, grounding, qa)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-LiDAR alignment toolkit"};
  app.require_subcommand(1);
  Common common;
  common.threads = 1;
  app.add_option("--threads", common.threads, "worker threads for BEV encoding (default: LLALIGN_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--trace", common.trace, "print debug observations");

  auto add_common = [&](CLI::App* sub, bool need_data = true) {
    sub->add_option("--config", common.config_path, "run config JSON")->required()->check(CLI::ExistingFile);
    if (need_data) sub->add_option("--data", common.data_dir, "dataset directory (default: config paths.data)");
    sub->add_option("--run", common.run_dir, "run directory (default: config paths.runs)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic datasets");
  std::string out_dir, seed_range;
  bool clouds = false;
  gen->add_option("--config", common.config_path, "run config JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed-range", seed_range, "scene seed pool A:B split into disjoint per-split blocks");
  gen->add_flag("--clouds", clouds, "also write LLPC point clouds");

  auto* pre = app.add_subcommand("pretrain", "stage 0: encoder and language-model pretraining");
  add_common(pre);

  auto* train = app.add_subcommand("train", "alignment stages");
  add_common(train);
  std::string stage_group;
  std::string log_path;
  train->add_option("--stage", stage_group, "align, perception, instruction or all")->required();
  train->add_option("--log", log_path, "CSV training log (default: <run>/logs/train_<stage>.csv)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out records");
  add_common(ev);
  std::string task, ckpt, report_path;
  ev->add_option("--task", task, "caption, grounding or qa")->required();
  ev->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  ev->add_option("--out", report_path, "report JSON (default: <run>/reports/<task>.json)");

  auto* inf = app.add_subcommand("infer", "answer one question about one point cloud");
  inf->add_option("--config", common.config_path, "run config JSON")->required()->check(CLI::ExistingFile);
  std::string points, question, views = "all";
  inf->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  inf->add_option("--points", points, "LLPC point cloud")->required()->check(CLI::ExistingFile);
  inf->add_option("--question", question, "question text")->required();
  inf->add_option("--views", views, "comma-separated active views, or all");

  auto* abl = app.add_subcommand("ablate", "comparison experiments");
  add_common(abl);
  std::string which;
  ExperimentOptions xo;
  std::vector<std::uint64_t> seeds;
  abl->add_option("--which", which, "vat or curriculum")->required();
  abl->add_option("--seeds", seeds, "seeds (default: config experiment_seeds)")->delimiter(',');
  abl->add_option("--train-records", xo.train_records, "records per training stage (0: all)");
  abl->add_option("--val-records", xo.val_records, "held-out records (0: all)");
  abl->add_option("--epochs", xo.epochs, "epochs per pre-QA stage (0: stage plan)");
  abl->add_option("--qa-epochs", xo.qa_epochs, "QA fine-tuning epochs (0: stage plan)");
  abl->add_option("--out", report_path, "report JSON (default: <run>/reports/ablate_<which>.json)");

  auto* show = app.add_subcommand("config", "print a preset run config as JSON");
  std::string preset;
  show->add_option("--preset", preset, "toy or paper-reference")->required();
  show->add_option("--out", report_path, "write to this file instead of stdout");

  try {
    common.threads = default_threads();
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    worker_threads() = common.threads;
    if (*show) {
      RunConfig c;
      if (preset == "toy") {
        c = toy_config();
      } else if (preset == "paper-reference") {
        c = paper_reference_config();
      } else {
        throw ConfigError("unknown preset '" + preset + "' (valid: toy, paper-reference)");
      }
      const auto text = config_to_json(c).dump(2) + "\n";
      if (report_path.empty()) {
        std::cout << text;
      } else {
        write_file(report_path, text);
      }
      return 0;
    }
    if (*train) stages_for(stage_group);  // reject a bad stage name before touching any file
    const RunConfig cfg = common.config();

    if (*gen) {
      RunConfig c = cfg;
      if (!seed_range.empty()) {
        const auto colon = seed_range.find(':');
        if (colon == std::string::npos) throw ConfigError("--seed-range must look like A:B");
        try {
          c.seed_begin = std::stoull(seed_range.substr(0, colon));
          c.seed_end = std::stoull(seed_range.substr(colon + 1));
        } catch (const std::exception&) {
          throw ConfigError("--seed-range must look like A:B with integers");
        }
      }
      if (clouds) c.write_clouds = true;
      c.validate();
      const auto n = write_dataset(c, out_dir);
      std::cout << "wrote dataset to " << out_dir << " (" << n << " scenes, config hash " << config_hash(c) << ")\n";
      return 0;
    }

    if (*inf) {
      auto model = load_model(cfg, ckpt);
      const auto cloud = decode_point_cloud(read_file(points));
      const auto bev = model->encode(cloud);
      VatTrace trace;
      const auto p = predict(*model, bev, parse_views(views), question, kMaxAnswerTokens, &trace);
      std::cout << p.text << "\n";
      for (const auto& b : p.boxes) std::cout << box_codec::to_text(box_codec::quantize(b)) << "\n";
      if (common.trace) {
        std::cerr << "trace: active views";
        for (ViewId v : kAllViews) {
          if (trace.active & view_bit(v)) std::cerr << " [" << view_name(v) << "]";
        }
        std::cerr << "; view embedding injected into " << trace.injected_cells << " of " << bev.tokens.rows()
                  << " BEV cells\n";
      }
      return 0;
    }

    const fs::path data_dir = common.data(cfg), run = common.run(cfg);
    // A checkpoint from another config is refused before the dataset is read.
    std::unique_ptr<Model> eval_model;
    if (*ev) eval_model = load_model(cfg, ckpt);
    const DatasetStore store(data_dir, cfg);
    const DataBundle data = store_bundle(store);

    if (*pre) {
      do_pretrain(cfg, data, run);
      return 0;
    }

    if (*train) {
      const auto stages = stages_for(stage_group);
      std::unique_ptr<Model> model;
      const fs::path prereq = run / "ckpt" / prerequisite_checkpoint(stages.front());
      if (stage_group == "all" && !fs::exists(prereq / "manifest.json")) {
        model = do_pretrain(cfg, data, run);
      } else {
        if (!fs::exists(prereq / "manifest.json")) {
          throw DataError("missing prerequisite checkpoint " + prereq.string());
        }
        model = load_model(cfg, prereq);
      }
      std::vector<TrainLogRow> log;
      for (auto s : stages) {
        const auto set = make_record_set(*model, data, data.records(s, true));
        const auto res = train_stage_with_checkpoints(*model, cfg, s, set, run / "ckpt", &log);
        std::cout << stage_name(s) << ": " << res.steps << " steps, loss " << res.first_loss << " -> "
                  << res.final_loss << "\n";
      }
      const fs::path lp = log_path.empty() ? run / "logs" / ("train_" + stage_group + ".csv") : fs::path(log_path);
      if (lp.has_parent_path()) fs::create_directories(lp.parent_path());
      write_file(lp.string(), log_csv(log));
      return 0;
    }

    if (*ev) {
      auto& model = eval_model;
      const auto tasks = eval_tasks(task);
      std::vector<DatasetRecord> recs;
      for (auto s : kAllStages) {
        for (const auto& r : data.records(s, false)) {
          if (std::find(tasks.begin(), tasks.end(), r.task) != tasks.end()) recs.push_back(r);
        }
      }
      const auto set = make_record_set(*model, data, recs);
      metrics::RawResults raw;
      if (task == "caption") raw.caption = evaluate_captions(*model, set);
      if (task == "grounding") raw.grounding = evaluate_grounding(*model, set);
      if (task == "qa") raw.qa = evaluate_qa(*model, set);
      auto rep = metrics::assemble_report(raw);
      const auto info = read_checkpoint_info(ckpt);
      rep.json["config_hash"] = config_hash(cfg);
      rep.json["seed"] = cfg.seed;
      rep.json["checkpoint_stage"] = info.stage;
      rep.json["task"] = task;
      const fs::path out = report_path.empty() ? run / "reports" / (task + ".json") : fs::path(report_path);
      write_json(out, rep.json);
      std::cout << rep.text;
      return 0;
    }

    if (*abl) {
      if (which != "vat" && which != "curriculum") {
        throw ConfigError("unknown experiment '" + which + "' (valid: vat, curriculum)");
      }
      xo.seeds = seeds.empty() ? cfg.experiment_seeds : seeds;
      xo.progress = [](const std::string& m) { std::cerr << m << "\n"; };
      const fs::path pre_ckpt = run / "ckpt" / "pretrain";
      auto base = fs::exists(pre_ckpt / "manifest.json") ? load_model(cfg, pre_ckpt) : do_pretrain(cfg, data, run);
      nlohmann::json j;
      std::string text;
      if (which == "vat") {
        auto rep = run_vat_ablation(cfg, *base, data, xo);
        j = rep.json;
        text = rep.text;
      } else {
        auto rep = run_curriculum_experiment(cfg, *base, data, xo);
        j = rep.json;
        text = rep.text;
      }
      j["config_hash"] = config_hash(cfg);
      j["seed"] = cfg.seed;
      write_json(report_path.empty() ? run / "reports" / ("ablate_" + which + ".json") : fs::path(report_path), j);
      std::cout << text;
      return 0;
    }
  } catch (const HashMismatch& e) {
    std::cerr << "refusing: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
