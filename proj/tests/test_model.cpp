#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "llalign/checkpoint.hpp"
#include "llalign/config.hpp"
#include "llalign/curriculum.hpp"
#include "support.hpp"

using namespace llalign;
using namespace llalign::testing;
namespace fs = std::filesystem;

namespace {

Vocab grammar_vocab() { return Vocab::build(lang::grammar_corpus()); }

PointCloud tiny_cloud(const ModelConfig& mc) {
  return sample_lidar(tiny_scene(), mc.range, LidarConfig{});
}

DatasetRecord tiny_grounding_record() {
  auto r = make_visual_grounding(tiny_scene(), Category::kPedestrian, ViewId::kFront);
  REQUIRE(r);
  return *r;
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("llalign_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// BEV encoder

TEST_CASE("voxelization ignores point order") {
  const auto mc = tiny_model_config();
  auto cloud = tiny_cloud(mc);
  const auto a = column_features(voxelize(cloud, mc.range, mc.voxel));
  Rng rng(1);
  rng.shuffle(cloud.points);
  const auto b = column_features(voxelize(cloud, mc.range, mc.voxel));
  CHECK(a == b);
}

TEST_CASE("bev shape depends on the config only") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{5}, std::size_t{400}}) {
    auto cloud = tiny_cloud(mc);
    cloud.points.resize(std::min(n, cloud.points.size()));
    const auto bev = m.encode(cloud);
    CHECK(bev.channels == 4);
    CHECK(bev.height == 4);
    CHECK(bev.width == 4);
    CHECK(bev.tokens.rows() == 16);
    CHECK(bev.finite());
  }
  CHECK_THROWS_AS(grid_dims({-2.4, 2.4, -2.4, 2.4, -2, 2}, {1.1, 1.2, 1.0}), ConfigError);
}

TEST_CASE("bev encoder gradients match central differences") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  randomize(m.params(), 21, 0.5);
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    PointCloud cloud;
    for (int i = 0; i < 5; ++i) {
      cloud.points.push_back({rng.uniform(-2.3, 2.3), rng.uniform(-2.3, 2.3), rng.uniform(-1.9, 1.9), rng.uniform()});
    }
    const Matrix cols = column_features(voxelize(cloud, mc.range, mc.voxel));
    Matrix w(16, 4);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const auto r = check_gradients(
        m.params(), [&] { return ag::dot_const(m.encoder().forward(cols), w); },
        [](const Param& p) { return p.group == ParamGroup::kEncoder; });
    CHECK(r.checked > 0);
    CHECK_MESSAGE(r.max_rel < 1e-3, r.worst);
  }
}

// ---------------------------------------------------------------------------
// VAT

TEST_CASE("sector map covers every cell once") {
  const auto s = assign_sectors(8, 8, {-4, 4, -4, 4, -1, 1});
  CHECK(s.size() == 64);
  std::array<int, kNumViews> counts{};
  for (auto v : s) ++counts[view_index(v)];
  CHECK(std::accumulate(counts.begin(), counts.end(), 0) == 64);
  for (int c : counts) CHECK(c > 0);
  // Cell (ix=7, iy=4) sits at x = 3.5, y = 0.5: straight ahead.
  CHECK(s[7 * 8 + 4] == ViewId::kFront);
  CHECK(s[0 * 8 + 4] == ViewId::kBack);
}

TEST_CASE("zero view embedding makes the view set irrelevant") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  const auto bev = m.encode(tiny_cloud(mc));
  const Matrix ref = m.visual(bev, kAllViewsMask).value();
  for (ViewSet v = 1; v < 64; ++v) CHECK(m.visual(bev, v).value() == ref);
}

TEST_CASE("nonzero view embedding distinguishes views") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  randomize(m.params(), 3, 0.5);
  const auto bev = m.encode(tiny_cloud(mc));
  const Matrix a = m.visual(bev, view_bit(ViewId::kFront)).value();
  const Matrix b = m.visual(bev, view_bit(ViewId::kBack)).value();
  CHECK((a - b).norm() > 0);
  VatTrace trace;
  m.visual(bev, view_bit(ViewId::kFront), &trace);
  std::size_t front = 0;
  for (auto s : m.vat().sectors()) front += s == ViewId::kFront;
  CHECK(trace.injected_cells == front);
}

TEST_CASE("permuting queries permutes the outputs") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  randomize(m.params(), 9, 0.5);
  const auto bev = m.encode(tiny_cloud(mc));
  const Matrix before = m.visual(bev, kAllViewsMask).value();
  auto& q = m.params().get("vat.queries").var.mutable_value();
  const Matrix original = q;
  const std::vector<int> perm = {2, 0, 1};
  for (int i = 0; i < 3; ++i) q.row(i) = original.row(perm[static_cast<std::size_t>(i)]);
  const Matrix after = m.visual(bev, kAllViewsMask).value();
  for (int i = 0; i < 3; ++i) CHECK((after.row(i) - before.row(perm[static_cast<std::size_t>(i)])).norm() < 1e-12);
}

// ---------------------------------------------------------------------------
// LM

TEST_CASE("tokenizer round trip on the grammar") {
  const Vocab v = grammar_vocab();
  for (const auto& s : lang::grammar_corpus()) CHECK(v.decode(v.encode(s)) == canonical_text(s));
  GeneratorConfig g;
  g.range = {-14.4, 14.4, -14.4, 14.4, -5, 3};
  g.max_objects = 4;
  for (const auto& r : generate_split({0, 1000}, 300, {{"caption", 1}, {"grounding", 1}, {"qa", 1}}, g)) {
    CHECK(v.decode(v.encode(r.question)) == canonical_text(r.question));
    CHECK(v.decode(v.encode(r.answer)) == canonical_text(r.answer));
  }
  CHECK(Vocab::from_json(v.to_json()) == v);
  CHECK_THROWS(v.encode("a zebra"));
}

TEST_CASE("logits are causal") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  randomize(m.params(), 4, 0.5);
  const auto bev = m.encode(tiny_cloud(mc));
  const auto seq = record_sequence(m.vocab(), tiny_grounding_record());
  const auto vis = m.visual(bev, kAllViewsMask);
  const Matrix base = m.lm().forward(vis, seq.ids).logits.value();
  for (std::size_t t = 1; t + 1 < seq.ids.size(); t += 5) {
    auto ids = seq.ids;
    ids[t] = ids[t] == 20 ? 21 : 20;
    const Matrix changed = m.lm().forward(vis, ids).logits.value();
    // Row j depends on text inputs 0..j.
    for (std::size_t j = 0; j < t; ++j) CHECK((changed.row(static_cast<Eigen::Index>(j)) - base.row(static_cast<Eigen::Index>(j))).norm() < 1e-12);
    CHECK((changed.row(static_cast<Eigen::Index>(t)) - base.row(static_cast<Eigen::Index>(t))).norm() > 0);
  }
}

TEST_CASE("adapters are neutral at initialisation") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  const auto bev = m.encode(tiny_cloud(mc));
  const auto r = tiny_grounding_record();
  const auto seq = record_sequence(m.vocab(), r);
  const auto vis = m.visual(bev, r.views);
  const std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
  const std::vector<bool> mask(seq.answer_mask.begin() + 1, seq.answer_mask.end());
  const double with = ag::masked_cross_entropy(m.lm().forward(vis, seq.ids, true).logits, targets, mask).item();
  const double without = ag::masked_cross_entropy(m.lm().forward(vis, seq.ids, false).logits, targets, mask).item();
  CHECK(std::abs(with - without) < 1e-6);
}

TEST_CASE("location anchors follow the boxes") {
  const Vocab v = grammar_vocab();
  const auto r = tiny_grounding_record();
  const auto seq = record_sequence(v, r);
  CHECK(seq.loc_positions.size() == r.gt_boxes.size());
  for (auto j : seq.loc_positions) CHECK(seq.ids[j] == SpecialTokens::kLoc);
  CHECK(seq.answer_mask.size() == seq.ids.size());
}

// ---------------------------------------------------------------------------
// training

TEST_CASE("adam matches a handwritten trace") {
  ParamStore ps;
  auto w = ps.create("w", Matrix::Constant(1, 1, 0.5), ParamGroup::kVat);
  Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  // Loss 0.5 * (w - 2)^2 with gradient (w - 2).
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    ps.zero_grad();
    ag::backward(ag::scale(ag::mse(w, Matrix::Constant(1, 1, 2.0)), 0.5));
    const double g = x - 2.0;
    CHECK(std::abs(w.grad()(0, 0) - g) < 1e-15);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    adam.step(ps, 0.1);
    CHECK(std::abs(w.value()(0, 0) - x) < 1e-15);
    // By hand: the first bias-corrected step is lr * g / |g|; the next two
    // come to 0.69976 and 0.79910 (5 digits).
    if (t == 1) CHECK(std::abs(x - 0.6) < 1e-9);
    if (t == 2) CHECK(std::abs(x - 0.69976) < 1e-5);
    if (t == 3) CHECK(std::abs(x - 0.79910) < 1e-5);
  }
}

TEST_CASE("frozen parameters with gradients abort the step") {
  ParamStore ps;
  auto w = ps.create("w", Matrix::Constant(1, 1, 1.0), ParamGroup::kLmBase);
  ag::backward(ag::sum(w));
  ps.get("w").frozen = true;
  Adam adam;
  CHECK_THROWS(adam.step(ps, 0.1));
}

TEST_CASE("learning rate halves every two epochs") {
  CHECK(scheduled_lr(1e-4, 0) == 1e-4);
  CHECK(scheduled_lr(1e-4, 1) == 1e-4);
  CHECK(scheduled_lr(1e-4, 2) == 5e-5);
  CHECK(scheduled_lr(1e-4, 5) == 2.5e-5);
  CHECK_THROWS(scheduled_lr(1e-4, -1));
}

TEST_CASE("loss is the sum of its parts") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  randomize(m.params(), 6, 0.3);
  const auto bev = m.encode(tiny_cloud(mc));
  const auto r = tiny_grounding_record();
  for (double lambda : {0.0, 0.5, 2.0}) {
    const auto parts = compute_loss(m, bev, r, lambda);
    CHECK(parts.box > 0);
    CHECK(std::abs(parts.total.item() - (parts.ce + lambda * parts.box)) < 1e-12);
  }
}

TEST_CASE("stage training touches exactly the alignment tensors") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  mark_pretrained(m);
  RecordSet set;
  set.records.push_back(tiny_grounding_record());
  set.records.back().id = 1;
  set.bev[set.records.back().scene_seed] = std::make_shared<const BevGrid>(m.encode(tiny_cloud(mc)));
  std::map<std::string, Matrix> before;
  for (const auto& p : m.params().all()) before[p.name] = p.var.value();
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch = 1;
  opt.lr = 1e-2;
  const auto res = train_stage(m, Stage::kPerception, set, opt);
  CHECK(res.steps == 3);
  for (const auto& p : m.params().all()) {
    const bool changed = p.var.value() != before[p.name];
    CHECK_MESSAGE(changed == is_alignment_group(p.group), p.name);
  }
}

TEST_CASE("training refuses to start without stage 0") {
  const auto mc = tiny_model_config();
  Model m(mc, grammar_vocab());
  RecordSet set;
  set.records.push_back(tiny_grounding_record());
  CHECK_THROWS(train_stage(m, Stage::kPerception, set, TrainOptions{}));
}

// ---------------------------------------------------------------------------
// persistence

TEST_CASE("checkpoint round trip is byte exact") {
  const auto mc = tiny_model_config();
  Model a(mc, grammar_vocab());
  randomize(a.params(), 12, 1.0);
  mark_pretrained(a);
  const auto d1 = scratch_dir("ck1"), d2 = scratch_dir("ck2");
  save_checkpoint(d1, a, {"abc", 7, "perception", 3, 99});
  Model b(mc, read_checkpoint_vocab(d1));
  const auto info = load_checkpoint(d1, b);
  CHECK(info.stage == "perception");
  CHECK(info.epoch == 3);
  CHECK(info.rng_state == 99);
  save_checkpoint(d2, b, info);
  for (const char* f : {"tensors.bin", "manifest.json", "vocab.json"}) {
    CHECK(read_file((d1 / f).string()) == read_file((d2 / f).string()));
  }
  for (const auto& p : b.params().all()) {
    if (p.group == ParamGroup::kEncoderHead) continue;
    CHECK(p.frozen == a.params().get(p.name).frozen);
    CHECK(p.provenance == a.params().get(p.name).provenance);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto mc = tiny_model_config();
  Model a(mc, grammar_vocab());
  const auto d = scratch_dir("ck_bad");
  save_checkpoint(d, a, {"abc", 7, "pretrain", 0, 0});
  auto blob = read_file((d / "tensors.bin").string());
  blob[blob.size() / 2] ^= 0x01;
  write_file((d / "tensors.bin").string(), blob);
  Model b(mc, grammar_vocab());
  CHECK_THROWS(load_checkpoint(d, b));
  auto other = mc;
  other.lm.width = 16;
  other.lm.heads = 2;
  save_checkpoint(d, a, {"abc", 7, "pretrain", 0, 0});
  Model c(other, grammar_vocab());
  CHECK_THROWS(load_checkpoint(d, c));
}

TEST_CASE("config json round trip, hash and validation") {
  for (const auto& c : {toy_config(), paper_reference_config()}) {
    c.validate();
    const auto back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_to_json(back) == config_to_json(c));
  }
  CHECK(config_hash(toy_config()) != config_hash(paper_reference_config()));
  auto paths = toy_config();
  paths.data_dir = "elsewhere";
  CHECK(config_hash(paths) == config_hash(toy_config()));

  auto j = config_to_json(toy_config());
  j["vat"]["heads"] = 5;
  CHECK_THROWS_AS(config_from_json(j).validate(), ConfigError);
  j = config_to_json(toy_config());
  j["surprise"] = 1;
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
  j = config_to_json(toy_config());
  j["lm"]["width"] = "wide";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);
  CHECK_THROWS_AS(stage_from_name("warmup"), ConfigError);
}
