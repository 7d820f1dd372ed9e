#include <cmath>
#include <numbers>
#include <regex>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "llalign/box_codec.hpp"
#include "llalign/lang_forge.hpp"
#include "llalign/scene_forge.hpp"
#include "llalign/vocab.hpp"

using namespace llalign;

namespace {

GeneratorConfig small_gen() {
  GeneratorConfig g;
  g.range = {-14.4, 14.4, -14.4, 14.4, -5.0, 3.0};
  g.max_objects = 4;
  return g;
}

Box7 random_box(Rng& rng, const Range& r) {
  return {rng.uniform(r.x_min + 3, r.x_max - 3), rng.uniform(r.y_min + 3, r.y_max - 3), rng.uniform(-2, 1),
          rng.uniform(0.3, 6), rng.uniform(0.3, 3), rng.uniform(0.5, 3),
          rng.uniform(-std::numbers::pi, std::numbers::pi)};
}

double tenth(double v) { return std::round(v * 10.0) / 10.0; }  // std::round rounds half away from zero

// Independent answer oracle: parses the question back into its template slots and
// recomputes the answer straight from scene geometry.
Category category_of(const std::string& w) {
  for (Category c : kAllCategories) {
    if (category_word(c) == w || category_plural(c) == w) return c;
  }
  throw std::runtime_error("oracle: unknown category " + w);
}

std::string oracle_answer(const DatasetRecord& r, const Scene& s) {
  auto dist = [](const SceneObject& a, const SceneObject& b) {
    return std::hypot(a.box.cx - b.box.cx, a.box.cy - b.box.cy);
  };
  auto ego = [](const SceneObject& a) { return std::hypot(a.box.cx, a.box.cy); };
  auto unique = [&](Category c) {
    const SceneObject* hit = nullptr;
    int n = 0;
    for (const auto& o : s.objects) {
      if (o.category == c) hit = &o, ++n;
    }
    if (n != 1) throw std::runtime_error("oracle: reference category is not unique");
    return *hit;
  };
  auto count = [&](Category c) {
    int n = 0;
    for (const auto& o : s.objects) n += o.category == c;
    return n;
  };
  auto closest = [&](const SceneObject& ref, std::optional<Category> c) {
    const SceneObject* best = nullptr;
    for (const auto& o : s.objects) {
      if (o.id == ref.id || (c && o.category != *c)) continue;
      if (!best || dist(o, ref) < dist(*best, ref)) best = &o;
    }
    if (!best) throw std::runtime_error("oracle: nothing close");
    return *best;
  };
  auto yn = [](bool b) { return std::string(b ? "yes" : "no"); };
  auto status = [](const SceneObject& o) {
    if (o.status == Status::kMoving) return std::string("moving");
    return std::string(o.category == Category::kPedestrian ? "standing" : "parked");
  };

  switch (r.task) {
    case Task::kCaptionView:
    case Task::kCaptionPanoramic: return rederive_answer(r, s);
    case Task::kGroundedCaptioning: {
      const auto open = r.question.find('['), close = r.question.find(']');
      const Box7 asked = box_codec::from_text(r.question.substr(open, close - open + 1));
      for (const auto& o : s.objects) {
        if (box_codec::quantize(o.box) == asked) {
          return "There is a " + std::string(category_word(o.category)) + " at the location " +
                 box_codec::to_text(o.box) + ".";
        }
      }
      throw std::runtime_error("oracle: no object at the grounded location");
    }
    case Task::kVisualGrounding: {
      std::smatch m;
      static const std::regex q(R"(There (?:is|are) (\d+) (.+) in (.+) of you\. What (?:is its|are their) locations?\?)");
      if (!std::regex_match(r.question, m, q)) throw std::runtime_error("oracle: grounding question");
      const Category c = category_of(m[2]);
      const ViewId v = view_from_name(m[3].str());
      std::vector<SceneObject> hits;
      for (const auto& o : s.objects) {
        if (o.category == c && o.view() == v) hits.push_back(o);
      }
      std::stable_sort(hits.begin(), hits.end(), [&](const auto& a, const auto& b) { return ego(a) < ego(b); });
      if (std::to_string(hits.size()) != m[1].str()) return "<count mismatch>";
      std::string list = "[";
      for (std::size_t i = 0; i < hits.size(); ++i) list += (i ? "," : "") + box_codec::to_text(hits[i].box);
      list += "]";
      if (hits.size() == 1) return "The " + std::string(category_word(c)) + " is located at " + list + ".";
      return "The " + m[1].str() + " " + std::string(category_plural(c)) + " are located at " + list + ".";
    }
    case Task::kQa: break;
  }
  static const std::regex any_near(R"(Are there any (.+) within 10 meters of the (.+)\?)"),
      any(R"(Are there any (.+)\?)"), count_view(R"(How many (.+) are in the (.+) view\?)"),
      count_near(R"(How many objects are within 10 meters of the (.+)\?)"),
      nearest_view(R"(What is the nearest object in the (.+) view\?)"),
      closest_obj(R"(What is the object closest to the (.+)\?)"),
      status_near(R"(What is the status of the (.+) closest to the (.+)\?)"),
      status_of(R"(What is the status of the (.+)\?)"), more(R"(Are there more (.+) than (.+)\?)"),
      closer(R"(Is the (.+) closer than the (.+)\?)");
  std::smatch m;
  const std::string& q = r.question;
  if (std::regex_match(q, m, any_near)) {
    const auto ref = unique(category_of(m[2]));
    const Category c = category_of(m[1]);
    bool hit = false;
    for (const auto& o : s.objects) hit = hit || (o.id != ref.id && o.category == c && dist(o, ref) < 10.0);
    return yn(hit);
  }
  if (std::regex_match(q, m, any)) return yn(count(category_of(m[1])) > 0);
  if (std::regex_match(q, m, count_view)) {
    const Category c = category_of(m[1]);
    const ViewId v = view_from_name(m[2].str());
    int n = 0;
    for (const auto& o : s.objects) n += o.category == c && o.view() == v;
    return std::to_string(n);
  }
  if (std::regex_match(q, m, count_near)) {
    const auto ref = unique(category_of(m[1]));
    int n = 0;
    for (const auto& o : s.objects) n += o.id != ref.id && dist(o, ref) < 10.0;
    return std::to_string(n);
  }
  if (std::regex_match(q, m, nearest_view)) {
    const ViewId v = view_from_name(m[1].str());
    const SceneObject* best = nullptr;
    for (const auto& o : s.objects) {
      if (o.view() == v && (!best || ego(o) < ego(*best))) best = &o;
    }
    if (!best) throw std::runtime_error("oracle: empty view");
    return std::string(category_word(best->category));
  }
  if (std::regex_match(q, m, closest_obj)) {
    return std::string(category_word(closest(unique(category_of(m[1])), std::nullopt).category));
  }
  if (std::regex_match(q, m, status_near)) {
    return status(closest(unique(category_of(m[2])), category_of(m[1])));
  }
  if (std::regex_match(q, m, status_of)) return status(unique(category_of(m[1])));
  if (std::regex_match(q, m, more)) return yn(count(category_of(m[1])) > count(category_of(m[2])));
  if (std::regex_match(q, m, closer)) {
    return yn(ego(unique(category_of(m[1]))) < ego(unique(category_of(m[2]))));
  }
  throw std::runtime_error("oracle: unrecognized question " + q);
}

}  // namespace

// ---------------------------------------------------------------------------
// box text and normalization

TEST_CASE("box text examples") {
  CHECK(box_codec::to_text({0, 0, 0, 4, 2, 1.5, 0}) == "[-2.0,2.0,-1.0,1.0,-0.8,0.8,0.0]");
  const Box7 b = box_codec::from_text("[-9.0,-8.7,27.6,27.9,-1.0,-0.2,-1.2]");
  CHECK(b.cx == doctest::Approx(-8.85));
  CHECK(b.l == doctest::Approx(0.3));
  CHECK(b.cy == doctest::Approx(27.75));
  CHECK(b.w == doctest::Approx(0.3));
  CHECK(b.cz == doctest::Approx(-0.6));
  CHECK(b.h == doctest::Approx(0.8));
  CHECK(b.yaw == doctest::Approx(-1.2));
  const Box7 u = box_codec::from_text("[0.0,1.0,0.0,1.0,0.0,1.0,0.0]");
  CHECK(u == Box7{0.5, 0.5, 0.5, 1, 1, 1, 0});
}

TEST_CASE("box text parse errors carry offsets") {
  CHECK_THROWS_AS(box_codec::from_text("[1.0,0.0,0.0,1.0,0.0,1.0,0.0]"), ParseError);
  CHECK_THROWS_AS(box_codec::from_text("[0,1,0,1,0,1]"), ParseError);
  CHECK_THROWS_AS(box_codec::from_text("[0,1,0,1,0,1,x]"), ParseError);
  CHECK_THROWS_AS(box_codec::from_text("[0,1,0,1,0,1,0] tail"), ParseError);
  try {
    box_codec::from_text("[0.0,1.0,0.0,1.0,0.0,1.0,0.0,2.0]");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 29);  // start of the eighth number
  }
}

TEST_CASE("box text round trip sweep") {
  Rng rng(99);
  const std::regex grammar(R"(\[(-?\d+\.\d)(,-?\d+\.\d){6}\])");
  const Range r{-54, 54, -54, 54, -5, 3};
  for (int i = 0; i < 5000; ++i) {
    const Box7 b = random_box(rng, r);
    const auto text = box_codec::to_text(b);
    REQUIRE(std::regex_match(text, grammar));
    const Box7 back = box_codec::from_text(text);
    const double x1 = tenth(b.cx - b.l / 2), x2 = tenth(b.cx + b.l / 2);
    const double y1 = tenth(b.cy - b.w / 2), y2 = tenth(b.cy + b.w / 2);
    const double z1 = tenth(b.cz - b.h / 2), z2 = tenth(b.cz + b.h / 2);
    CHECK(std::abs(back.cx - (x1 + x2) / 2) < 1e-9);
    CHECK(std::abs(back.l - (x2 - x1)) < 1e-9);
    CHECK(std::abs(back.cy - (y1 + y2) / 2) < 1e-9);
    CHECK(std::abs(back.w - (y2 - y1)) < 1e-9);
    CHECK(std::abs(back.cz - (z1 + z2) / 2) < 1e-9);
    CHECK(std::abs(back.h - (z2 - z1)) < 1e-9);
    CHECK(std::abs(wrap_yaw(back.yaw) - wrap_yaw(tenth(b.yaw))) < 1e-9);
    CHECK(box_codec::to_text(back) == text);
  }
}

TEST_CASE("box normalization") {
  const Range r{-54, 54, -54, 54, -5, 3};
  CHECK(box_codec::normalize({0, 0, 0, 1, 1, 1, 0}, r).v[0] == 0.5);
  CHECK(box_codec::normalize({0, 0, 0, 1, 1, 1, -std::numbers::pi}, r).v[6] == 0.0);
  CHECK(box_codec::normalize({0, 0, 0, 1, 1, 1, std::nextafter(std::numbers::pi, 0.0)}, r).v[6] > 1.0 - 1e-12);
  CHECK_THROWS_AS(box_codec::normalize({60, 0, 0, 1, 1, 1, 0}, r), DataError);
  Rng rng(4);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box7 b = random_box(rng, r);
    const auto n = box_codec::normalize(b, r);
    for (double v : n.v) CHECK((v >= 0.0 && v <= 1.0));
    const Box7 back = box_codec::denormalize(n, r);
    const auto x = b.as_array(), y = back.as_array();
    for (int k = 0; k < 7; ++k) worst = std::max(worst, std::abs(x[k] - y[k]));
  }
  CHECK(worst < 1e-6);
}

// ---------------------------------------------------------------------------
// scenes and clouds

TEST_CASE("scene generation is deterministic and valid") {
  const auto g = small_gen();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene a = gen_scene(seed, g), b = gen_scene(seed, g);
    CHECK(a == b);
    CHECK(scene_to_json(a).dump() == scene_to_json(b).dump());
    REQUIRE(!a.objects.empty());
    CHECK(a.objects.size() <= 4);
    for (const auto& o : a.objects) {
      CHECK(g.range.contains_xy(o.box.cx, o.box.cy));
      CHECK(o.box.valid());
    }
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
      for (std::size_t j = i + 1; j < a.objects.size(); ++j) CHECK(bev_iou(a.objects[i].box, a.objects[j].box) <= 0.05);
    }
  }
}

TEST_CASE("category weights and minimum count are honoured") {
  auto g = small_gen();
  g.min_objects = 3;
  g.category_weights = {1, 0, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = gen_scene(seed, g);
    CHECK(s.objects.size() >= 3);
    for (const auto& o : s.objects) CHECK(o.category == Category::kCar);
  }
}

TEST_CASE("every object lies in exactly one view") {
  const auto g = small_gen();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = gen_scene(seed, g);
    std::map<int, int> hits;
    for (ViewId v : kAllViews) {
      for (const auto& o : objects_in_view(s, v)) {
        ++hits[o.id];
        // Independent sector check: six 60-degree sectors, front centred on +x.
        double deg = std::atan2(o.box.cy, o.box.cx) * 180.0 / std::numbers::pi;
        CHECK(view_index(v) == view_index(sector_of_azimuth(deg * std::numbers::pi / 180.0)));
      }
    }
    for (const auto& o : s.objects) CHECK(hits[o.id] == 1);
  }
  Scene s;
  s.objects = {{0, Category::kCar, {10, 0, 0, 4, 2, 1.5, 0}, Status::kStationary},
               {1, Category::kCar, {-10, 0, 0, 4, 2, 1.5, 0}, Status::kStationary}};
  const auto front = objects_in_view(s, ViewId::kFront);
  REQUIRE(front.size() == 1);
  CHECK(front[0].id == 0);
}

TEST_CASE("lidar points stay in range and on surfaces") {
  const auto g = small_gen();
  LidarConfig lc;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = gen_scene(seed, g);
    const auto cloud = sample_lidar(s, g.range, lc);
    CHECK(cloud == sample_lidar(s, g.range, lc));
    REQUIRE(!cloud.points.empty());
    for (const auto& p : cloud.points) {
      CHECK(g.range.contains(p.x, p.y, p.z));
      CHECK((p.intensity >= 0.0 && p.intensity <= 1.0));
      // Distance to the nearest generated surface: ground plane or a box face.
      double best = std::abs(p.z - s.ground_z);
      for (const auto& o : s.objects) {
        const double c = std::cos(o.box.yaw), sn = std::sin(o.box.yaw);
        const double lx = c * (p.x - o.box.cx) + sn * (p.y - o.box.cy);
        const double ly = -sn * (p.x - o.box.cx) + c * (p.y - o.box.cy);
        const double lz = p.z - o.box.cz;
        const double hx = o.box.l / 2, hy = o.box.w / 2, hz = o.box.h / 2;
        const double ox = std::max(std::abs(lx) - hx, 0.0), oy = std::max(std::abs(ly) - hy, 0.0),
                     oz = std::max(std::abs(lz) - hz, 0.0);
        const double outside = std::sqrt(ox * ox + oy * oy + oz * oz);
        const double inside = std::min({hx - std::abs(lx), hy - std::abs(ly), hz - std::abs(lz)});
        best = std::min(best, outside > 0 ? outside : inside);
      }
      CHECK(best < 3 * std::sqrt(3.0) * lc.jitter_sigma);
    }
  }
  LidarConfig exact = lc;
  exact.jitter_sigma = 0;
  const Scene s = gen_scene(3, g);
  for (const auto& p : sample_lidar(s, g.range, exact).points) {
    double best = std::abs(p.z - s.ground_z);
    for (const auto& o : s.objects) {
      const double c = std::cos(o.box.yaw), sn = std::sin(o.box.yaw);
      const double lx = c * (p.x - o.box.cx) + sn * (p.y - o.box.cy);
      const double ly = -sn * (p.x - o.box.cx) + c * (p.y - o.box.cy);
      const double lz = p.z - o.box.cz;
      const double hx = o.box.l / 2, hy = o.box.w / 2, hz = o.box.h / 2;
      if (std::abs(lx) <= hx + 1e-9 && std::abs(ly) <= hy + 1e-9 && std::abs(lz) <= hz + 1e-9) {
        best = std::min(best, std::min({hx - std::abs(lx), hy - std::abs(ly), hz - std::abs(lz)}));
      }
    }
    CHECK(best < 1e-6);
  }
}

TEST_CASE("surface density falls off as 1/r^2") {
  LidarConfig lc;
  const Range r{-54, 54, -54, 54, -5, 3};
  double near_total = 0, far_total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (double dist : {10.0, 20.0}) {
      Scene s;
      s.seed = seed;
      s.objects = {{0, Category::kCar, {dist, 0, -1.0, 4.5, 1.9, 1.6, 0}, Status::kStationary}};
      LidarConfig no_ground = lc;
      no_ground.ground_points = 0;
      (dist == 10.0 ? near_total : far_total) += static_cast<double>(sample_lidar(s, r, no_ground).points.size());
    }
  }
  CHECK(std::abs(near_total / far_total - 4.0) < 0.4);
}

TEST_CASE("point cloud file round trip") {
  const auto g = small_gen();
  const auto cloud = sample_lidar(gen_scene(8, g), g.range, LidarConfig{});
  const auto bytes = encode_point_cloud(cloud);
  CHECK(bytes.substr(0, 4) == "LLPC");
  CHECK(bytes.size() == 12 + 16 * cloud.points.size());
  const auto back = decode_point_cloud(bytes);
  REQUIRE(back.points.size() == cloud.points.size());
  for (std::size_t i = 0; i < back.points.size(); ++i) {
    CHECK(back.points[i].x == static_cast<double>(static_cast<float>(cloud.points[i].x)));
  }
  CHECK(encode_point_cloud(back) == bytes);
  CHECK_THROWS(decode_point_cloud("LLPX" + bytes.substr(4)));
  CHECK_THROWS(decode_point_cloud(bytes.substr(0, bytes.size() - 3)));
}

TEST_CASE("scene json round trip") {
  const auto g = small_gen();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = gen_scene(seed, g);
    CHECK(scene_from_json(nlohmann::json::parse(scene_to_json(s).dump())) == s);
  }
}

// ---------------------------------------------------------------------------
// language records

TEST_CASE("caption templates") {
  Scene s;
  s.objects = {{0, Category::kCar, {10, 1, -1, 4.5, 1.9, 1.6, 0}, Status::kStationary},
               {1, Category::kCar, {14, -2, -1, 4.5, 1.9, 1.6, 0}, Status::kStationary}};
  const auto r = make_caption(s, ViewId::kFront, lang::CaptionFamily::kDescribe);
  CHECK(r.answer.find("2 cars") != std::string::npos);
  CHECK(r.answer.find("parked") != std::string::npos);
  CHECK(r.question.rfind("This is the car's front view.", 0) == 0);
  const auto empty = make_caption(s, ViewId::kBackLeft, lang::CaptionFamily::kDescribe);
  CHECK(empty.answer == lang::kEmptyView);
  CHECK(empty.question.rfind("This is the car's back left view.", 0) == 0);
}

TEST_CASE("grounding templates") {
  Scene s;
  s.objects = {{0, Category::kCar, {20, 1, -1, 4.5, 1.9, 1.6, 0.1}, Status::kMoving},
               {1, Category::kCar, {5, -1, -1, 4.5, 1.9, 1.6, 0}, Status::kStationary},
               {2, Category::kPedestrian, {8, 3, -1, 0.6, 0.6, 1.7, 0}, Status::kMoving}};
  const auto two = make_visual_grounding(s, Category::kCar, ViewId::kFront);
  REQUIRE(two);
  CHECK(two->question == "There are 2 cars in front of you. What are their locations?");
  CHECK(two->answer.find("[[") != std::string::npos);
  REQUIRE(two->gt_boxes.size() == 2);
  CHECK(two->gt_boxes[0].cx == 5);  // nearer first
  CHECK(two->answer.find(box_codec::to_text(s.objects[1].box)) < two->answer.find(box_codec::to_text(s.objects[0].box)));
  const auto one = make_visual_grounding(s, Category::kPedestrian, ViewId::kFront);
  REQUIRE(one);
  CHECK(one->question == "There is 1 pedestrian in front of you. What is its location?");
  CHECK(!make_visual_grounding(s, Category::kBus, ViewId::kFront));

  const auto gc = make_grounded_captioning(s, s.objects[2]);
  const auto text = box_codec::to_text(s.objects[2].box);
  CHECK(gc.question == "What is at the location " + text + "?");
  CHECK(gc.answer == "There is a pedestrian at the location " + text + ".");
  const auto open = gc.question.find('['), close = gc.question.find(']');
  CHECK(box_codec::from_text(gc.question.substr(open, close - open + 1)) == box_codec::quantize(s.objects[2].box));
  int words = 0;
  for (Category c : kAllCategories) words += gc.answer.find(std::string(category_word(c))) != std::string::npos;
  CHECK(words == 1);
}

TEST_CASE("qa answers follow the scene") {
  Scene s;
  s.objects = {{0, Category::kBus, {8, 0, -1, 11, 2.9, 3.2, 0}, Status::kStationary},
               {1, Category::kCar, {20, 2, -1, 4.5, 1.9, 1.6, 0}, Status::kMoving},
               {2, Category::kCar, {12, 6, -1, 4.5, 1.9, 1.6, 0}, Status::kMoving},
               {3, Category::kCar, {15, -5, -1, 4.5, 1.9, 1.6, 0}, Status::kStationary},
               {4, Category::kPedestrian, {-6, 3, -1, 0.6, 0.6, 1.7, 0}, Status::kMoving}};
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (QaType t : kAllQaTypes) {
      for (Hops h : {Hops::kH0, Hops::kH1}) {
        const auto r = make_qa(s, t, h, seed);
        CHECK(oracle_answer(r, s) == r.answer);
        CHECK(r.qa_type == t);
        CHECK(r.hops == h);
        CHECK(r.views == kAllViewsMask);
      }
    }
  }
  // Independent count of front cars.
  int front_cars = 0;
  for (const auto& o : s.objects) front_cars += o.category == Category::kCar && o.view() == ViewId::kFront;
  bool saw_count = false;
  for (std::uint64_t seed = 0; seed < 200 && !saw_count; ++seed) {
    const auto r = make_qa(s, QaType::kCounting, Hops::kH0, seed);
    if (r.question == "How many cars are in the front view?") {
      CHECK(r.answer == std::to_string(front_cars));
      saw_count = true;
    }
  }
  CHECK(saw_count);
}

TEST_CASE("generated records are sound, closed and in the grammar") {
  const auto g = small_gen();
  const Vocab vocab = Vocab::build(lang::grammar_corpus());
  const auto answers = lang::qa_answer_vocabulary();
  const std::set<std::string> closed(answers.begin(), answers.end());
  const auto recs = generate_split({1000, 3000}, 600, {{"caption", 1}, {"grounding", 1}, {"qa", 1}}, g);
  CHECK(recs.size() == 600);
  std::set<std::uint64_t> seeds;
  for (const auto& r : recs) {
    r.validate();
    seeds.insert(r.scene_seed);
    const Scene s = gen_scene(r.scene_seed, g);
    CHECK(oracle_answer(r, s) == r.answer);
    for (const auto* text : {&r.question, &r.answer}) {
      for (const auto& tok : split_tokens(canonical_text(*text))) CHECK_MESSAGE(vocab.contains(tok), tok);
    }
    if (r.task == Task::kQa) CHECK(closed.count(r.answer));
    if (r.task == Task::kVisualGrounding) {
      CHECK(!r.gt_boxes.empty());
      for (const auto& b : r.gt_boxes) CHECK(r.answer.find(box_codec::to_text(b)) != std::string::npos);
    }
  }
  CHECK(generate_split({1000, 3000}, 600, {{"caption", 1}, {"grounding", 1}, {"qa", 1}}, g) == recs);
  for (auto seed : seeds) CHECK((seed >= 1000 && seed < 3000));
}

TEST_CASE("quota allocation") {
  const auto q = allocate_quotas({{"caption", 0.5}, {"grounding", 0.25}, {"qa", 0.25}}, 1000);
  std::size_t caption = 0, grounding = 0, qa = 0;
  for (const auto& [t, n] : q) {
    if (t == Task::kCaptionView || t == Task::kCaptionPanoramic) caption += n;
    if (t == Task::kGroundedCaptioning || t == Task::kVisualGrounding) grounding += n;
    if (t == Task::kQa) qa += n;
  }
  CHECK(caption == 500);
  CHECK(grounding == 250);
  CHECK(qa == 250);
}

TEST_CASE("overlapping seed ranges are rejected") {
  SplitSpec bad;
  bad.train = {0, 100};
  bad.val = {50, 150};
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("record jsonl round trip") {
  const auto recs = generate_split({0, 500}, 120, {{"caption", 1}, {"grounding", 1}, {"qa", 1}}, small_gen());
  CHECK(records_from_jsonl(records_to_jsonl(recs)) == recs);
  CHECK_THROWS(records_from_jsonl("{\"task\": \"nope\"}\n"));
}
