#pragma once

// Templated LiDAR-text pairs: view and panoramic captions, grounded
// captioning, visual grounding and reasoning QA. Every answer is a pure
// function of the scene, so records can be re-derived from scene files.

#include <algorithm>
#include <bit>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "llalign/box_codec.hpp"
#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"
#include "llalign/rng.hpp"
#include "llalign/scene_forge.hpp"

namespace llalign {

enum class Task : std::uint8_t {
  kCaptionView,
  kCaptionPanoramic,
  kGroundedCaptioning,
  kVisualGrounding,
  kQa
};
inline constexpr std::array<Task, 5> kAllTasks = {Task::kCaptionView, Task::kCaptionPanoramic,
                                                  Task::kGroundedCaptioning,
                                                  Task::kVisualGrounding, Task::kQa};

inline std::string_view task_name(Task t) {
  static constexpr std::array<std::string_view, 5> names = {
      "caption_view", "caption_panoramic", "grounded_captioning", "visual_grounding", "qa"};
  return names[static_cast<std::size_t>(t)];
}

inline Task task_from_name(std::string_view s) {
  for (Task t : kAllTasks) {
    if (task_name(t) == s) return t;
  }
  throw DataError("unknown task '" + std::string(s) + "'");
}

enum class QaType : std::uint8_t { kExistence, kCounting, kObject, kStatus, kComparison };
inline constexpr std::array<QaType, 5> kAllQaTypes = {QaType::kExistence, QaType::kCounting,
                                                      QaType::kObject, QaType::kStatus,
                                                      QaType::kComparison};
enum class Hops : std::uint8_t { kH0, kH1 };

inline std::string_view qa_type_name(QaType t) {
  static constexpr std::array<std::string_view, 5> names = {"existence", "counting", "object",
                                                            "status", "comparison"};
  return names[static_cast<std::size_t>(t)];
}
inline QaType qa_type_from_name(std::string_view s) {
  for (QaType t : kAllQaTypes) {
    if (qa_type_name(t) == s) return t;
  }
  throw DataError("unknown qa_type '" + std::string(s) + "'");
}
inline std::string_view hops_name(Hops h) { return h == Hops::kH0 ? "H0" : "H1"; }
inline Hops hops_from_name(std::string_view s) {
  if (s == "H0") return Hops::kH0;
  if (s == "H1") return Hops::kH1;
  throw DataError("unknown hops '" + std::string(s) + "'");
}

struct DatasetRecord {
  std::uint64_t id = 0;
  std::uint64_t scene_seed = 0;
  Task task = Task::kCaptionView;
  ViewSet views = 0;
  std::string question;
  std::string answer;
  std::vector<Box7> gt_boxes;
  std::optional<Category> category;  // grounding tasks
  std::optional<QaType> qa_type;
  std::optional<Hops> hops;

  bool operator==(const DatasetRecord&) const = default;

  void validate() const {
    if (views == 0) throw DataError("record has no active views");
    switch (task) {
      case Task::kCaptionView:
        if (std::popcount(static_cast<unsigned>(views)) != 1) {
          throw DataError("caption_view records need exactly one view");
        }
        break;
      case Task::kCaptionPanoramic:
      case Task::kQa:
        if (views != kAllViewsMask) throw DataError("panoramic/qa records need all six views");
        if (task == Task::kQa && (!qa_type || !hops)) {
          throw DataError("qa record without qa_type/hops");
        }
        break;
      case Task::kVisualGrounding:
        if (gt_boxes.empty()) throw DataError("visual_grounding record without boxes");
        for (const auto& b : gt_boxes) {
          if (answer.find(box_codec::to_text(b)) == std::string::npos) {
            throw DataError("visual_grounding answer does not contain its boxes");
          }
        }
        break;
      case Task::kGroundedCaptioning:
        if (gt_boxes.size() != 1) throw DataError("grounded_captioning record needs one box");
        break;
    }
  }
};

namespace lang {

enum class CaptionFamily : std::uint8_t { kDescribe, kMoving, kRisk };
inline constexpr std::array<CaptionFamily, 3> kAllCaptionFamilies = {
    CaptionFamily::kDescribe, CaptionFamily::kMoving, CaptionFamily::kRisk};

inline std::string_view caption_prompt(CaptionFamily f) {
  switch (f) {
    case CaptionFamily::kDescribe: return "How would you uniquely describe the road scene?";
    case CaptionFamily::kMoving:
      return "In the view, are there any moving objects, and provide a description of them.";
    case CaptionFamily::kRisk:
      return "From the current scene, identify any potential challenges a driver might face.";
  }
  return "";
}

inline constexpr std::string_view kEmptyView = "There are no objects in this view.";
inline constexpr std::string_view kPanoramicPrompt =
    "These are the car's six views. How would you describe the whole scene?";

inline std::string view_prefix(ViewId v) {
  return "This is the car's " + std::string(view_name(v)) + " view.";
}

inline std::string count_phrase(int n, Category c) {
  return std::to_string(n) + " " + std::string(n == 1 ? category_word(c) : category_plural(c));
}

/// "a", "a and b", "a and b and c". No commas: a comma followed by a numeral
/// would be indistinguishable from a location-token separator.
inline std::string join_list(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " and ";
    out += parts[i];
  }
  return out;
}

inline std::array<int, kNumCategories> category_counts(const std::vector<SceneObject>& objs) {
  std::array<int, kNumCategories> n{};
  for (const auto& o : objs) ++n[static_cast<std::size_t>(o.category)];
  return n;
}

/// "2 cars and 1 pedestrian" in category order; empty for no objects.
inline std::string counts_text(const std::vector<SceneObject>& objs) {
  const auto n = category_counts(objs);
  std::vector<std::string> parts;
  for (Category c : kAllCategories) {
    if (n[static_cast<std::size_t>(c)] > 0) parts.push_back(count_phrase(n[static_cast<std::size_t>(c)], c));
  }
  return join_list(parts);
}

/// Nearest object to the ego vehicle; ties broken by id.
inline const SceneObject* nearest_to_ego(const std::vector<SceneObject>& objs) {
  const SceneObject* best = nullptr;
  for (const auto& o : objs) {
    if (!best || o.range_from_ego() < best->range_from_ego()) best = &o;
  }
  return best;
}

inline std::string describe_answer(const std::vector<SceneObject>& objs) {
  const int total = static_cast<int>(objs.size());
  std::string out = std::string("There ") + (total == 1 ? "is " : "are ") + counts_text(objs) + ".";
  for (Category c : kAllCategories) {
    int moving = 0, still = 0;
    for (const auto& o : objs) {
      if (o.category != c) continue;
      (o.status == Status::kMoving ? moving : still)++;
    }
    const int n = moving + still;
    if (n == 0) continue;
    const std::string still_word(status_word(Status::kStationary, c));
    if (n == 1) {
      out += " The " + std::string(category_word(c)) + " is " +
             (moving ? "moving" : still_word) + ".";
    } else if (moving == 0 || still == 0) {
      out += " The " + std::string(category_plural(c)) + " are " +
             (moving ? "moving" : still_word) + ".";
    } else {
      out += " The " + std::string(category_plural(c)) + " are moving and " + still_word + ".";
    }
  }
  out += " The nearest object is a " + std::string(category_word(nearest_to_ego(objs)->category)) + ".";
  return out;
}

inline std::string moving_answer(const std::vector<SceneObject>& objs) {
  std::vector<SceneObject> moving;
  for (const auto& o : objs) {
    if (o.status == Status::kMoving) moving.push_back(o);
  }
  if (moving.empty()) return "No, there are no moving objects in this view.";
  return std::string("Yes, there ") + (moving.size() == 1 ? "is " : "are ") + counts_text(moving) +
         " moving.";
}

inline std::string risk_answer(const std::vector<SceneObject>& objs) {
  std::vector<SceneObject> moving;
  for (const auto& o : objs) {
    if (o.status == Status::kMoving) moving.push_back(o);
  }
  if (moving.empty()) return "There are no moving objects, so the risk is low.";
  return "The main risk is the moving " + std::string(category_word(nearest_to_ego(moving)->category)) +
         " nearby.";
}

inline std::string caption_answer(const std::vector<SceneObject>& objs, CaptionFamily f) {
  if (objs.empty()) return std::string(kEmptyView);
  switch (f) {
    case CaptionFamily::kDescribe: return describe_answer(objs);
    case CaptionFamily::kMoving: return moving_answer(objs);
    case CaptionFamily::kRisk: return risk_answer(objs);
  }
  return {};
}

inline std::string panoramic_answer(const Scene& scene) {
  std::string out;
  for (ViewId v : kAllViews) {
    const auto objs = objects_in_view(scene, v);
    if (!out.empty()) out += " ";
    out += "In the " + std::string(view_name(v)) + " view, there ";
    if (objs.empty()) {
      out += "are no objects.";
    } else {
      out += std::string(objs.size() == 1 ? "is " : "are ") + counts_text(objs) + ".";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// QA helpers

/// Categories with exactly one instance can be referred to as "the <category>".
inline std::vector<Category> unique_categories(const Scene& s) {
  const auto n = category_counts(s.objects);
  std::vector<Category> out;
  for (Category c : kAllCategories) {
    if (n[static_cast<std::size_t>(c)] == 1) out.push_back(c);
  }
  return out;
}

inline const SceneObject& only_of(const Scene& s, Category c) {
  for (const auto& o : s.objects) {
    if (o.category == c) return o;
  }
  throw DataError("category not present");
}

inline double bev_distance(const SceneObject& a, const SceneObject& b) {
  return std::hypot(a.box.cx - b.box.cx, a.box.cy - b.box.cy);
}

/// Object closest to `ref` (excluding ref), optionally restricted to a category.
inline const SceneObject* closest_to(const Scene& s, const SceneObject& ref,
                                     std::optional<Category> cat = std::nullopt) {
  const SceneObject* best = nullptr;
  for (const auto& o : s.objects) {
    if (o.id == ref.id || (cat && o.category != *cat)) continue;
    if (!best || bev_distance(o, ref) < bev_distance(*best, ref)) best = &o;
  }
  return best;
}

inline constexpr double kNearbyMeters = 10.0;

inline std::string yes_no(bool b) { return b ? "yes" : "no"; }

inline Category random_category(Rng& rng) { return kAllCategories[rng.below(kNumCategories)]; }
inline ViewId random_view(Rng& rng) { return kAllViews[rng.below(kNumViews)]; }

/// One attempt at a QA template; nullopt when unsatisfiable for this scene.
inline std::optional<std::pair<std::string, std::string>> try_qa(const Scene& s, QaType type,
                                                                 Hops hops, Rng& rng) {
  using Out = std::pair<std::string, std::string>;
  const auto uniques = unique_categories(s);
  auto pick_ref = [&]() -> std::optional<Category> {
    if (uniques.empty()) return std::nullopt;
    return uniques[rng.below(uniques.size())];
  };
  const auto counts = category_counts(s.objects);
  auto count_of = [&](Category c) { return counts[static_cast<std::size_t>(c)]; };

  if (hops == Hops::kH1 && s.objects.size() < 2) return std::nullopt;

  switch (type) {
    case QaType::kExistence: {
      const Category c = random_category(rng);
      if (hops == Hops::kH0) {
        return Out{"Are there any " + std::string(category_plural(c)) + "?", yes_no(count_of(c) > 0)};
      }
      const auto ref = pick_ref();
      if (!ref) return std::nullopt;
      const auto& r = only_of(s, *ref);
      bool any = false;
      for (const auto& o : s.objects) {
        if (o.id != r.id && o.category == c && bev_distance(o, r) < kNearbyMeters) any = true;
      }
      return Out{"Are there any " + std::string(category_plural(c)) + " within 10 meters of the " +
                     std::string(category_word(*ref)) + "?",
                 yes_no(any)};
    }
    case QaType::kCounting: {
      if (hops == Hops::kH0) {
        const Category c = random_category(rng);
        const ViewId v = random_view(rng);
        int n = 0;
        for (const auto& o : objects_in_view(s, v)) n += o.category == c;
        return Out{"How many " + std::string(category_plural(c)) + " are in the " +
                       std::string(view_name(v)) + " view?",
                   std::to_string(n)};
      }
      const auto ref = pick_ref();
      if (!ref) return std::nullopt;
      const auto& r = only_of(s, *ref);
      int n = 0;
      for (const auto& o : s.objects) n += (o.id != r.id && bev_distance(o, r) < kNearbyMeters);
      return Out{"How many objects are within 10 meters of the " + std::string(category_word(*ref)) + "?",
                 std::to_string(n)};
    }
    case QaType::kObject: {
      if (hops == Hops::kH0) {
        const ViewId v = random_view(rng);
        const auto objs = objects_in_view(s, v);
        if (objs.empty()) return std::nullopt;
        return Out{"What is the nearest object in the " + std::string(view_name(v)) + " view?",
                   std::string(category_word(nearest_to_ego(objs)->category))};
      }
      const auto ref = pick_ref();
      if (!ref) return std::nullopt;
      const auto* o = closest_to(s, only_of(s, *ref));
      return Out{"What is the object closest to the " + std::string(category_word(*ref)) + "?",
                 std::string(category_word(o->category))};
    }
    case QaType::kStatus: {
      const auto ref = pick_ref();
      if (!ref) return std::nullopt;
      const auto& r = only_of(s, *ref);
      if (hops == Hops::kH0) {
        return Out{"What is the status of the " + std::string(category_word(*ref)) + "?",
                   std::string(status_word(r.status, r.category))};
      }
      const Category c = random_category(rng);
      const auto* o = closest_to(s, r, c);
      if (!o) return std::nullopt;
      return Out{"What is the status of the " + std::string(category_word(c)) + " closest to the " +
                     std::string(category_word(*ref)) + "?",
                 std::string(status_word(o->status, o->category))};
    }
    case QaType::kComparison: {
      if (hops == Hops::kH0) {
        const Category a = random_category(rng);
        const Category b = random_category(rng);
        if (a == b) return std::nullopt;
        return Out{"Are there more " + std::string(category_plural(a)) + " than " +
                       std::string(category_plural(b)) + "?",
                   yes_no(count_of(a) > count_of(b))};
      }
      if (uniques.size() < 2) return std::nullopt;
      const Category a = uniques[rng.below(uniques.size())];
      const Category b = uniques[rng.below(uniques.size())];
      if (a == b) return std::nullopt;
      const bool closer = only_of(s, a).range_from_ego() < only_of(s, b).range_from_ego();
      return Out{"Is the " + std::string(category_word(a)) + " closer than the " +
                     std::string(category_word(b)) + "?",
                 yes_no(closer)};
    }
  }
  return std::nullopt;
}

/// Closed QA answer vocabulary.
inline std::vector<std::string> qa_answer_vocabulary() {
  std::vector<std::string> v = {"yes", "no", "moving", "parked", "standing"};
  for (int i = 0; i <= 9; ++i) v.push_back(std::to_string(i));
  for (Category c : kAllCategories) v.emplace_back(category_word(c));
  return v;
}

}  // namespace lang

// ---------------------------------------------------------------------------
// Record makers

inline DatasetRecord make_caption(const Scene& scene, std::optional<ViewId> view,
                                  lang::CaptionFamily family = lang::CaptionFamily::kDescribe) {
  DatasetRecord r;
  r.scene_seed = scene.seed;
  if (view) {
    r.task = Task::kCaptionView;
    r.views = view_bit(*view);
    r.question = lang::view_prefix(*view) + " " + std::string(lang::caption_prompt(family));
    r.answer = lang::caption_answer(objects_in_view(scene, *view), family);
  } else {
    r.task = Task::kCaptionPanoramic;
    r.views = kAllViewsMask;
    r.question = std::string(lang::kPanoramicPrompt);
    r.answer = lang::panoramic_answer(scene);
  }
  return r;
}

inline DatasetRecord make_grounded_captioning(const Scene& scene, const SceneObject& object) {
  DatasetRecord r;
  r.scene_seed = scene.seed;
  r.task = Task::kGroundedCaptioning;
  r.views = view_bit(object.view());
  const std::string loc = box_codec::to_text(object.box);
  r.question = "What is at the location " + loc + "?";
  r.answer = "There is a " + std::string(category_word(object.category)) + " at the location " + loc + ".";
  r.gt_boxes = {object.box};
  r.category = object.category;
  return r;
}

/// nullopt when no object of `category` lies in `view`.
inline std::optional<DatasetRecord> make_visual_grounding(const Scene& scene, Category category,
                                                          ViewId view) {
  std::vector<SceneObject> objs;
  for (const auto& o : objects_in_view(scene, view)) {
    if (o.category == category) objs.push_back(o);
  }
  if (objs.empty()) return std::nullopt;
  std::stable_sort(objs.begin(), objs.end(), [](const SceneObject& a, const SceneObject& b) {
    return a.range_from_ego() < b.range_from_ego();
  });
  DatasetRecord r;
  r.scene_seed = scene.seed;
  r.task = Task::kVisualGrounding;
  r.views = view_bit(view);
  r.category = category;
  const std::string where = " in " + std::string(view_name(view)) + " of you.";
  std::string list = "[";
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i) list += ",";
    list += box_codec::to_text(objs[i].box);
    r.gt_boxes.push_back(objs[i].box);
  }
  list += "]";
  if (objs.size() == 1) {
    r.question = "There is 1 " + std::string(category_word(category)) + where + " What is its location?";
    r.answer = "The " + std::string(category_word(category)) + " is located at " + list + ".";
  } else {
    const std::string n = std::to_string(objs.size());
    r.question = "There are " + n + " " + std::string(category_plural(category)) + where +
                 " What are their locations?";
    r.answer = "The " + n + " " + std::string(category_plural(category)) + " are located at " + list + ".";
  }
  return r;
}

inline DatasetRecord make_qa(const Scene& scene, QaType type, Hops hops, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x0A0A));
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (auto qa = lang::try_qa(scene, type, hops, rng)) {
      DatasetRecord r;
      r.scene_seed = scene.seed;
      r.task = Task::kQa;
      r.views = kAllViewsMask;
      r.question = std::move(qa->first);
      r.answer = std::move(qa->second);
      r.qa_type = type;
      r.hops = hops;
      return r;
    }
  }
  throw GenerationError("no satisfiable " + std::string(qa_type_name(type)) + "/" +
                        std::string(hops_name(hops)) + " template for scene " + std::to_string(scene.seed));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json record_to_json(const DatasetRecord& r) {
  nlohmann::json views = nlohmann::json::array();
  for (ViewId v : kAllViews) {
    if (r.views & view_bit(v)) views.push_back(view_name(v));
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : r.gt_boxes) boxes.push_back(b.as_array());
  nlohmann::json j = {{"id", r.id},
                      {"scene_seed", r.scene_seed},
                      {"task", task_name(r.task)},
                      {"views", views},
                      {"question", r.question},
                      {"answer", r.answer},
                      {"gt_boxes", boxes}};
  if (r.category) j["category"] = category_id(*r.category);
  if (r.qa_type) j["qa_type"] = qa_type_name(*r.qa_type);
  if (r.hops) j["hops"] = hops_name(*r.hops);
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
  r.task = task_from_name(j.at("task").get<std::string>());
  for (const auto& v : j.at("views")) r.views |= view_bit(view_from_name(v.get<std::string>()));
  r.question = j.at("question").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  for (const auto& b : j.at("gt_boxes")) r.gt_boxes.push_back(Box7::from_array(b.get<std::array<double, 7>>()));
  if (j.contains("category")) r.category = category_from_id(j["category"].get<std::string>());
  if (j.contains("qa_type")) r.qa_type = qa_type_from_name(j["qa_type"].get<std::string>());
  if (j.contains("hops")) r.hops = hops_from_name(j["hops"].get<std::string>());
  r.validate();
  return r;
}

inline std::string records_to_jsonl(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<DatasetRecord> records_from_jsonl(const std::string& text) {
  std::vector<DatasetRecord> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) out.push_back(record_from_json(nlohmann::json::parse(text.substr(start, end - start))));
    start = end + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct SeedRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;  // exclusive
  std::uint64_t size() const { return end - begin; }
  bool overlaps(const SeedRange& o) const { return begin < o.end && o.begin < end; }
};

struct SplitSpec {
  SeedRange train{0, 100000};
  SeedRange val{1000000, 1010000};
  std::size_t train_records = 2000;
  std::size_t val_records = 200;

  void validate() const {
    if (train.size() == 0 || val.size() == 0) throw DataError("empty seed range");
    if (train.overlaps(val)) throw DataError("train and val seed ranges overlap");
  }
};

/// Task (or family: caption, grounding, qa) -> weight.
using TaskMix = std::map<std::string, double>;

inline std::vector<Task> family_tasks(const std::string& key) {
  if (key == "caption") return {Task::kCaptionView, Task::kCaptionPanoramic};
  if (key == "grounding") return {Task::kGroundedCaptioning, Task::kVisualGrounding};
  return {task_from_name(key)};
}

namespace detail {
/// Largest-remainder apportionment of n among weights.
inline std::vector<std::size_t> apportion(const std::vector<double>& w, std::size_t n) {
  double total = 0;
  for (double x : w) total += x;
  if (!(total > 0)) throw DataError("task mix weights sum to zero");
  std::vector<std::size_t> out(w.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double exact = static_cast<double>(n) * w[i] / total;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++out[rem[k % rem.size()].second];
  return out;
}
}  // namespace detail

/// Deterministic per-task record counts (families split evenly between their tasks).
inline std::map<Task, std::size_t> allocate_quotas(const TaskMix& mix, std::size_t n) {
  std::vector<double> w;
  std::vector<std::string> keys;
  for (const auto& [k, v] : mix) {
    if (v < 0) throw DataError("negative task mix weight");
    keys.push_back(k);
    w.push_back(v);
  }
  const auto fam = detail::apportion(w, n);
  std::map<Task, std::size_t> out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto tasks = family_tasks(keys[i]);
    const auto sub = detail::apportion(std::vector<double>(tasks.size(), 1.0), fam[i]);
    for (std::size_t t = 0; t < tasks.size(); ++t) out[tasks[t]] += sub[t];
  }
  return out;
}

struct LangConfig {
  /// Probability that a view caption targets the view of a random object
  /// rather than a uniformly random view.
  double caption_object_view_bias = 0.7;
};

/// Generates the records of one split in-memory. Scene seeds are consumed
/// sequentially from the split's range (wrapping if exhausted).
inline std::vector<DatasetRecord> generate_split(const SeedRange& seeds, std::size_t n_records,
                                                 const TaskMix& mix, const GeneratorConfig& gen,
                                                 const LangConfig& lang_cfg = {}) {
  const auto quotas = allocate_quotas(mix, n_records);
  std::vector<DatasetRecord> out;
  out.reserve(n_records);
  std::uint64_t cursor = 0;
  auto next_scene = [&]() {
    const std::uint64_t seed = seeds.begin + (cursor++ % seeds.size());
    return gen_scene(seed, gen);
  };
  std::uint64_t qa_counter = 0;
  for (const auto& [task, count] : quotas) {
    for (std::size_t k = 0; k < count; ++k) {
      const std::uint64_t rid = out.size();
      Rng rng(derive_seed(seeds.begin, 0xD47A000 + rid));
      std::optional<DatasetRecord> rec;
      for (int tries = 0; tries < 100 && !rec; ++tries) {
        const Scene scene = next_scene();
        switch (task) {
          case Task::kCaptionView: {
            ViewId v = lang::random_view(rng);
            if (rng.uniform() < lang_cfg.caption_object_view_bias) {
              v = scene.objects[rng.below(scene.objects.size())].view();
            }
            const auto fam = lang::kAllCaptionFamilies[rng.below(3)];
            rec = make_caption(scene, v, fam);
            break;
          }
          case Task::kCaptionPanoramic: rec = make_caption(scene, std::nullopt); break;
          case Task::kGroundedCaptioning:
            rec = make_grounded_captioning(scene, scene.objects[rng.below(scene.objects.size())]);
            break;
          case Task::kVisualGrounding: {
            const auto& o = scene.objects[rng.below(scene.objects.size())];
            rec = make_visual_grounding(scene, o.category, o.view());
            break;
          }
          case Task::kQa: {
            const auto type = kAllQaTypes[(qa_counter / 2) % kAllQaTypes.size()];
            const auto hops = qa_counter % 2 == 0 ? Hops::kH0 : Hops::kH1;
            try {
              rec = make_qa(scene, type, hops, rng.next_u64());
            } catch (const GenerationError&) {
              // this scene cannot host the template; try the next scene
            }
            break;
          }
        }
      }
      if (!rec) throw GenerationError("could not generate a " + std::string(task_name(task)) + " record");
      if (task == Task::kQa) ++qa_counter;
      rec->id = rid;
      out.push_back(std::move(*rec));
    }
  }
  return out;
}

struct Dataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
};

inline Dataset build_dataset(const SplitSpec& split, const TaskMix& mix, const GeneratorConfig& gen,
                             const LangConfig& lang_cfg = {}) {
  split.validate();
  return {generate_split(split.train, split.train_records, mix, gen, lang_cfg),
          generate_split(split.val, split.val_records, mix, gen, lang_cfg)};
}

/// Per (task, qa_type, hops) counts, keyed "task[/qa_type/hops]".
inline std::map<std::string, std::size_t> record_counts(const std::vector<DatasetRecord>& records) {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records) {
    std::string key(task_name(r.task));
    if (r.qa_type) key += "/" + std::string(qa_type_name(*r.qa_type)) + "/" + std::string(hops_name(*r.hops));
    ++out[key];
  }
  return out;
}

/// Re-derives a record from its scene, given the view/family/parameters recorded in it.
/// Returns the regenerated answer; used to check answer soundness.
inline std::string rederive_answer(const DatasetRecord& r, const Scene& scene) {
  switch (r.task) {
    case Task::kCaptionView: {
      ViewId v = ViewId::kFront;
      for (ViewId c : kAllViews) {
        if (r.views & view_bit(c)) v = c;
      }
      for (auto fam : lang::kAllCaptionFamilies) {
        const auto rec = make_caption(scene, v, fam);
        if (rec.question == r.question) return rec.answer;
      }
      throw DataError("caption question does not match any family");
    }
    case Task::kCaptionPanoramic: return make_caption(scene, std::nullopt).answer;
    case Task::kGroundedCaptioning:
    case Task::kVisualGrounding:
    case Task::kQa: break;
  }
  throw DataError("rederive_answer supports caption tasks only");
}

}  // namespace llalign
