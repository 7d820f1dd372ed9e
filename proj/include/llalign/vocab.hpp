#pragma once

// Word-level tokenizer over the closed synthetic grammar. Numerals and the
// location-token punctuation are split into single characters.

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "llalign/errors.hpp"
#include "llalign/lang_forge.hpp"

namespace llalign {

using TokenId = int;

struct SpecialTokens {
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kLoc = 4;
};

inline constexpr std::array<std::string_view, 5> kSpecialNames = {"<bos>", "<eos>", "<pad>", "<sep>",
                                                                  "<loc>"};
inline constexpr std::string_view kCharTokens = "0123456789-.,[]";

inline bool is_char_token(char c) { return kCharTokens.find(c) != std::string_view::npos; }

/// Splits text into token strings: lowercased words (letters and apostrophes),
/// '?' and the single-character tokens in kCharTokens. Whitespace separates.
inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string w;
      while (i < text.size() &&
             (std::isalpha(static_cast<unsigned char>(text[i])) || text[i] == '\'')) {
        w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      out.push_back(std::move(w));
    } else if (c == '?' || is_char_token(c)) {
      out.emplace_back(1, c);
      ++i;
    } else {
      throw ParseError(std::string("unsupported character '") + c + "'", i);
    }
  }
  return out;
}

class Vocab {
 public:
  Vocab() {
    for (auto s : kSpecialNames) add(std::string(s));
    for (char c : kCharTokens) add(std::string(1, c));
    add("?");
  }

  /// Words in first-occurrence order after the fixed specials and characters.
  static Vocab build(const std::vector<std::string>& corpus) {
    if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    Vocab v;
    for (const auto& s : corpus) {
      for (auto& t : split_tokens(s)) v.add(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& t) const { return ids_.count(t) > 0; }
  TokenId id(const std::string& t) const {
    auto it = ids_.find(t);
    if (it == ids_.end()) throw DataError("out-of-vocabulary token '" + t + "'");
    return it->second;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& t : split_tokens(text)) ids.push_back(id(t));
    return ids;
  }

  /// Canonical text: single spaces between words; punctuation and numerals
  /// attach without spaces. Special tokens are dropped.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    enum class Kind { kNone, kWord, kChar, kPunct };
    Kind prev = Kind::kNone;
    for (TokenId id : ids) {
      if (id < static_cast<TokenId>(kSpecialNames.size())) continue;
      const std::string& t = token(id);
      const char c = t[0];
      Kind kind;
      if (t.size() == 1 && (c == '?' || c == '.' || c == ',' || c == ']')) {
        kind = Kind::kPunct;
      } else if (t.size() == 1 && is_char_token(c)) {
        kind = Kind::kChar;
      } else {
        kind = Kind::kWord;
      }
      bool space = false;
      if (prev != Kind::kNone) {
        if (kind == Kind::kWord) space = true;
        if (kind == Kind::kChar && prev == Kind::kWord) space = true;
      }
      if (space) out.push_back(' ');
      out += t;
      prev = kind;
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= by_id.size() || !by_id[id].empty()) throw DataError("vocabulary ids are not a bijection");
      by_id[id] = it.key();
    }
    Vocab v;
    for (std::size_t i = 0; i < kSpecialNames.size(); ++i) {
      if (by_id[i] != kSpecialNames[i]) throw DataError("vocabulary special tokens are out of place");
    }
    for (const auto& t : by_id) v.add(t);
    if (v.size() != by_id.size()) throw DataError("vocabulary has duplicate tokens");
    return v;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& t) {
    if (ids_.count(t)) return;
    ids_[t] = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Lowercase with single spaces; the fixed point of decode(encode(.)).
inline std::string canonical_text(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

namespace lang {

/// Every template sentence with every filler: enough to cover the grammar's
/// full word inventory.
inline std::vector<std::string> grammar_corpus() {
  std::vector<std::string> out;
  for (auto f : kAllCaptionFamilies) {
    for (ViewId v : kAllViews) out.push_back(view_prefix(v) + " " + std::string(caption_prompt(f)));
  }
  out.emplace_back(kEmptyView);
  out.emplace_back(kPanoramicPrompt);
  out.emplace_back("In the front view, there are no objects.");
  out.emplace_back("No, there are no moving objects in this view.");
  out.emplace_back("There are no moving objects, so the risk is low.");
  for (Category c : kAllCategories) {
    const std::string w(category_word(c)), p(category_plural(c));
    const std::string still(status_word(Status::kStationary, c));
    out.push_back("There is 1 " + w + ". The " + w + " is " + still + ". The nearest object is a " + w + ".");
    out.push_back("There are 2 " + p + ". The " + p + " are moving and " + still + ".");
    out.push_back("Yes, there are 2 " + p + " and 1 " + w + " moving.");
    out.push_back("The main risk is the moving " + w + " nearby.");
    out.push_back("What is at the location [0.0,1.0,0.0,1.0,0.0,1.0,0.0]?");
    out.push_back("There is a " + w + " at the location [0.0,1.0,0.0,1.0,0.0,1.0,0.0].");
    for (ViewId v : kAllViews) {
      out.push_back("There is 1 " + w + " in " + std::string(view_name(v)) + " of you. What is its location?");
      out.push_back("There are 2 " + p + " in " + std::string(view_name(v)) +
                    " of you. What are their locations?");
      out.push_back("How many " + p + " are in the " + std::string(view_name(v)) + " view?");
      out.push_back("What is the nearest object in the " + std::string(view_name(v)) + " view?");
    }
    out.push_back("The " + w + " is located at [[0.0,1.0,0.0,1.0,0.0,1.0,0.0]].");
    out.push_back("The 2 " + p + " are located at [[0.0,1.0,0.0,1.0,0.0,1.0,0.0],[0.0,1.0,0.0,1.0,0.0,1.0,0.0]].");
    out.push_back("Are there any " + p + "? Are there any " + p + " within 10 meters of the " + w + "?");
    out.push_back("How many objects are within 10 meters of the " + w + "?");
    out.push_back("What is the object closest to the " + w + "?");
    out.push_back("What is the status of the " + w + "? What is the status of the " + w +
                  " closest to the " + w + "?");
    out.push_back("Are there more " + p + " than " + p + "? Is the " + w + " closer than the " + w + "?");
  }
  for (const auto& a : qa_answer_vocabulary()) out.push_back(a);
  return out;
}

}  // namespace lang
}  // namespace llalign
