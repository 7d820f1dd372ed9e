#pragma once

// Evaluation: corpus BLEU, exact-match accuracy with type/hop breakdowns,
// BEV IoU matching and report rendering.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "llalign/errors.hpp"
#include "llalign/geometry.hpp"
#include "llalign/lang_forge.hpp"

namespace llalign::metrics {

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

/// Corpus BLEU-n over whitespace tokens, no smoothing.
inline double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n) {
  if (candidates.size() != references.size()) throw Error("BLEU needs one reference per candidate");
  if (candidates.empty()) throw Error("BLEU of an empty corpus");
  if (n < 1 || n > 4) throw Error("BLEU order must be in 1..4");
  std::vector<double> match(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto c = words(candidates[s]), r = words(references[s]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (int k = 1; k <= n; ++k) {
      std::map<std::vector<std::string>, int> ref_counts, cand_counts;
      for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= r.size(); ++i) {
        ++ref_counts[{r.begin() + static_cast<long>(i), r.begin() + static_cast<long>(i) + k}];
      }
      for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= c.size(); ++i) {
        ++cand_counts[{c.begin() + static_cast<long>(i), c.begin() + static_cast<long>(i) + k}];
      }
      for (const auto& [gram, cnt] : cand_counts) {
        auto it = ref_counts.find(gram);
        match[static_cast<std::size_t>(k - 1)] += std::min(cnt, it == ref_counts.end() ? 0 : it->second);
        total[static_cast<std::size_t>(k - 1)] += cnt;
      }
    }
  }
  double log_sum = 0;
  for (int k = 0; k < n; ++k) {
    if (match[static_cast<std::size_t>(k)] == 0 || total[static_cast<std::size_t>(k)] == 0) return 0.0;
    log_sum += std::log(match[static_cast<std::size_t>(k)] / total[static_cast<std::size_t>(k)]);
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / n);
}

/// Lowercase, single spaces, no trailing period.
inline std::string normalize_answer(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!out.empty() && out.back() == '.') out.pop_back();
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

inline bool exact_match(const std::string& pred, const std::string& gt) {
  return normalize_answer(pred) == normalize_answer(gt);
}

struct Tally {
  long correct = 0;
  long total = 0;
  double rate() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  void add(bool ok) {
    correct += ok;
    ++total;
  }
};

/// Exact-match accuracy overall and per "type/hop" and "type/All".
struct AccuracyBreakdown {
  Tally overall;
  std::map<std::string, Tally> cells;
};

inline AccuracyBreakdown exact_match_accuracy(const std::vector<std::string>& predictions,
                                              const std::vector<DatasetRecord>& records) {
  if (predictions.size() != records.size()) throw Error("one prediction per record required");
  AccuracyBreakdown b;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool ok = exact_match(predictions[i], records[i].answer);
    b.overall.add(ok);
    if (records[i].qa_type) {
      const std::string type(qa_type_name(*records[i].qa_type));
      b.cells[type + "/" + std::string(hops_name(*records[i].hops))].add(ok);
      b.cells[type + "/All"].add(ok);
    }
  }
  return b;
}

/// Category named in a grounded-captioning answer ("There is a {category} at ...").
inline std::optional<Category> answer_category(const std::string& text) {
  const std::string t = normalize_answer(text);
  std::optional<Category> found;
  std::size_t best = std::string::npos;
  for (Category c : kAllCategories) {
    const auto pos = t.find(std::string(category_word(c)));
    if (pos != std::string::npos && (best == std::string::npos || pos < best)) {
      best = pos;
      found = c;
    }
  }
  return found;
}

// ---------------------------------------------------------------------------
// BEV IoU

inline double iou(const Box7& a, const Box7& b) { return bev_iou(a, b); }

/// Greedy matching in descending IoU without reuse. Returns the IoU credited
/// to every ground-truth box (0 when unmatched).
inline std::vector<double> greedy_match(const std::vector<Box7>& pred, const std::vector<Box7>& gt) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double v = bev_iou(pred[i], gt[j]);
      if (v > 0) pairs.push_back({v, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<double> credit(gt.size(), 0.0);
  std::vector<bool> used_p(pred.size()), used_g(gt.size());
  for (const auto& pr : pairs) {
    if (used_p[pr.p] || used_g[pr.g]) continue;
    used_p[pr.p] = used_g[pr.g] = true;
    credit[pr.g] = pr.iou;
  }
  return credit;
}

struct BoxGroup {
  Category category;
  std::vector<Box7> pred;
  std::vector<Box7> gt;
};

struct MiouResult {
  std::map<Category, double> per_category;
  std::map<Category, long> gt_count;
  double overall = 0;
};

/// Mean over ground-truth boxes of their greedily matched IoU, per category.
inline MiouResult bev_miou(const std::vector<BoxGroup>& groups) {
  std::map<Category, double> sum;
  MiouResult r;
  double all = 0;
  long n = 0;
  for (const auto& g : groups) {
    for (double v : greedy_match(g.pred, g.gt)) {
      sum[g.category] += v;
      ++r.gt_count[g.category];
      all += v;
      ++n;
    }
  }
  for (const auto& [c, s] : sum) r.per_category[c] = s / static_cast<double>(r.gt_count[c]);
  r.overall = n ? all / static_cast<double>(n) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kReferenceNote = "published reference values (real data, 7B model; not reproducible at desk scale)";

struct CaptionScores {
  std::array<double, 4> bleu{};
  double exact_match = 0;
  long count = 0;
};

struct GroundingScores {
  double acc5 = 0;
  long captioning_count = 0;
  MiouResult miou;
  long grounding_count = 0;
};

struct RawResults {
  std::optional<CaptionScores> caption;
  std::optional<GroundingScores> grounding;
  std::optional<AccuracyBreakdown> qa;
};

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

inline nlohmann::json tally_json(const Tally& t) {
  return {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.rate()}};
}

struct Report {
  nlohmann::json json;
  std::string text;
};

inline Report assemble_report(const RawResults& raw) {
  Report rep;
  rep.json = {{"schema_version", kReportSchemaVersion}};
  std::ostringstream t;
  if (raw.caption) {
    const auto& c = *raw.caption;
    rep.json["caption"] = {{"bleu", {c.bleu[0], c.bleu[1], c.bleu[2], c.bleu[3]}},
                           {"exact_match", c.exact_match},
                           {"bert_score", "n/a"},
                           {"count", c.count},
                           {"reference", {{"note", kReferenceNote}, {"bleu", {40.98, 29.96, 23.43, 19.26}}}}};
    t << "Captioning (" << c.count << " samples)\n"
      << "  BLEU-1  BLEU-2  BLEU-3  BLEU-4  BERT   Exact\n"
      << " " << pct(c.bleu[0]) << "  " << pct(c.bleu[1]) << "  " << pct(c.bleu[2]) << "  " << pct(c.bleu[3])
      << "  n/a  " << pct(c.exact_match) << "\n"
      << "  reference: 40.98   29.96   23.43   19.26  (" << kReferenceNote << ")\n\n";
  }
  if (raw.grounding) {
    const auto& g = *raw.grounding;
    nlohmann::json per = nlohmann::json::object();
    for (Category c : kAllCategories) {
      auto it = g.miou.per_category.find(c);
      per[std::string(category_id(c))] = it == g.miou.per_category.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
    }
    rep.json["grounding"] = {
        {"acc19", "n/a"},
        {"acc5", g.acc5},
        {"captioning_count", g.captioning_count},
        {"miou", g.miou.overall},
        {"miou_per_category", per},
        {"grounding_count", g.grounding_count},
        {"reference",
         {{"note", kReferenceNote},
          {"acc19", 34.4},
          {"acc5", 63.1},
          {"miou_car", 14.3},
          {"miou_per_category",
           {{"car", 11.94}, {"pedestrian", 9.05}, {"bus", 11.23}, {"truck", 8.09}, {"construction_vehicle", 9.40}}}}}};
    t << "Grounding (" << g.captioning_count << " captioning, " << g.grounding_count << " grounding samples)\n"
      << "  ACC-19  ACC-5   mIoU\n"
      << "   n/a  " << pct(g.acc5) << " " << pct(g.miou.overall) << "\n"
      << "  reference: ACC-19 34.4  ACC-5 63.1  mIoU 14.3  (" << kReferenceNote << ")\n"
      << "  per-category mIoU:";
    for (Category c : kAllCategories) {
      auto it = g.miou.per_category.find(c);
      t << "  " << category_id(c) << " " << (it == g.miou.per_category.end() ? std::string("  n/a") : pct(it->second));
    }
    t << "\n  reference per-category: car 11.94  pedestrian 9.05  bus 11.23  truck 8.09  construction_vehicle 9.40\n\n";
  }
  if (raw.qa) {
    const auto& q = *raw.qa;
    nlohmann::json cells = nlohmann::json::object();
    for (const auto& [k, v] : q.cells) cells[k] = tally_json(v);
    rep.json["qa"] = {{"overall", tally_json(q.overall)},
                      {"cells", cells},
                      {"reference", {{"note", kReferenceNote}, {"overall_c_plus_g", 48.6}}}};
    t << "Question answering (" << q.overall.total << " samples)\n  type         H0      H1      All\n";
    for (QaType qt : kAllQaTypes) {
      const std::string name(qa_type_name(qt));
      char line[96];
      auto cell = [&](const std::string& h) {
        auto it = q.cells.find(name + "/" + h);
        return it == q.cells.end() ? std::string("   n/a") : pct(it->second.rate());
      };
      std::snprintf(line, sizeof line, "  %-10s %s  %s  %s\n", name.c_str(), cell("H0").c_str(), cell("H1").c_str(),
                    cell("All").c_str());
      t << line;
    }
    t << "  overall   " << pct(q.overall.rate()) << "\n  reference: overall 48.6 (" << kReferenceNote << ")\n";
  }
  rep.text = t.str();
  return rep;
}

}  // namespace llalign::metrics
