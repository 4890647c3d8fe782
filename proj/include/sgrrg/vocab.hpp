#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sgrrg/scene_graph.hpp"

namespace sgrrg {

/// Lowercases, splits on whitespace, and emits each punctuation character as its own token.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces.
std::string join_tokens(std::span<const std::string> tokens);

class ReportVocab {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kBos = 1;
  static constexpr int64_t kEos = 2;
  static constexpr int64_t kUnk = 3;

  ReportVocab();

  /// Words with frequency >= min_freq, ids assigned in lexicographic order
  /// after the four specials. Throws EmptyCorpus.
  static ReportVocab build(std::span<const std::string> reports, int min_freq = 3);

  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  int64_t id(const std::string& word) const;
  const std::string& word(int64_t id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::vector<int64_t> encode(std::string_view report) const;
  /// Drops specials (BOS/EOS/PAD) and joins with spaces.
  std::string decode(std::span<const int64_t> ids) const;

  nlohmann::json to_json() const;
  static ReportVocab from_json(const nlohmann::json& j);

  bool operator==(const ReportVocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int64_t> index_;
};

/// Attribute vocabulary over qualified attribute strings ("nlp|yes|normal|").
/// Id 0 is UNK; known strings take ids 1.. in lexicographic order. Each
/// category also keeps the sorted list of ids observed for it, which sizes its
/// classification head.
class AttributeVocab {
 public:
  static constexpr int kUnk = 0;

  AttributeVocab();
  static AttributeVocab build(std::span<const SceneGraph> graphs);

  int size() const { return static_cast<int>(names_.size()); }
  int id(const std::string& qualified) const;
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

  /// Global ids observed for `category` (N^k_a = size of this list).
  const std::vector<int>& category_attributes(int category) const;
  int num_category_attributes(int category) const {
    return static_cast<int>(category_attributes(category).size());
  }
  /// Position of `id` inside category_attributes(category), or -1.
  int local_index(int category, int id) const;

  /// Fills attribute_id for every attribute (UNK when unknown).
  void assign_ids(SceneGraph& graph) const;

  nlohmann::json to_json() const;
  static AttributeVocab from_json(const nlohmann::json& j);

  bool operator==(const AttributeVocab& other) const {
    return names_ == other.names_ && per_category_ == other.per_category_;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
  std::vector<std::vector<int>> per_category_;
};

struct Vocabularies {
  ReportVocab report;
  AttributeVocab attributes;

  nlohmann::json to_json() const;
  static Vocabularies from_json(const nlohmann::json& j);
};

}  // namespace sgrrg
