#include "sgrrg/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "sgrrg/errors.hpp"

namespace sgrrg {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      tokens.emplace_back(1, raw);
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

ReportVocab::ReportVocab() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int64_t>(i));
}

ReportVocab ReportVocab::build(std::span<const std::string> reports, int min_freq) {
  if (reports.empty()) throw EmptyCorpus();
  std::map<std::string, int> counts;
  for (const auto& r : reports) {
    for (auto& t : tokenize(r)) ++counts[t];
  }
  if (counts.empty()) throw EmptyCorpus();
  ReportVocab v;
  for (const auto& [word, n] : counts) {
    if (n < min_freq || v.index_.count(word) != 0) continue;
    v.index_.emplace(word, static_cast<int64_t>(v.words_.size()));
    v.words_.push_back(word);
  }
  return v;
}

int64_t ReportVocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int64_t> ReportVocab::encode(std::string_view report) const {
  std::vector<int64_t> ids;
  for (const auto& t : tokenize(report)) ids.push_back(id(t));
  return ids;
}

std::string ReportVocab::decode(std::span<const int64_t> ids) const {
  std::vector<std::string> words;
  for (int64_t id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    words.push_back(word(id));
  }
  return join_tokens(words);
}

nlohmann::json ReportVocab::to_json() const { return words_; }

ReportVocab ReportVocab::from_json(const nlohmann::json& j) {
  ReportVocab v;
  v.words_ = j.get<std::vector<std::string>>();
  if (v.words_.size() < 4) throw Error("report vocabulary is missing its special tokens");
  v.index_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) v.index_.emplace(v.words_[i], static_cast<int64_t>(i));
  return v;
}

AttributeVocab::AttributeVocab() : names_{"<unk>"}, per_category_(kNumAnatomicalCategories) {}

AttributeVocab AttributeVocab::build(std::span<const SceneGraph> graphs) {
  std::map<std::string, std::vector<bool>> seen;  // qualified -> categories
  for (const auto& g : graphs) {
    for (const auto& a : g.attributes) {
      auto& cats = seen[a.qualified()];
      cats.resize(kNumAnatomicalCategories, false);
      cats[static_cast<std::size_t>(g.objects.at(static_cast<std::size_t>(a.owner)).category_id)] = true;
    }
  }
  AttributeVocab v;
  for (const auto& [name, cats] : seen) {
    const int id = static_cast<int>(v.names_.size());
    v.names_.push_back(name);
    v.index_.emplace(name, id);
    for (int k = 0; k < kNumAnatomicalCategories; ++k) {
      if (cats[static_cast<std::size_t>(k)]) v.per_category_[static_cast<std::size_t>(k)].push_back(id);
    }
  }
  return v;
}

int AttributeVocab::id(const std::string& qualified) const {
  auto it = index_.find(qualified);
  return it == index_.end() ? kUnk : it->second;
}

const std::vector<int>& AttributeVocab::category_attributes(int category) const {
  if (category < 0 || category >= kNumAnatomicalCategories) throw UnknownCategory(category);
  return per_category_[static_cast<std::size_t>(category)];
}

int AttributeVocab::local_index(int category, int id) const {
  const auto& ids = category_attributes(category);
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  return (it != ids.end() && *it == id) ? static_cast<int>(it - ids.begin()) : -1;
}

void AttributeVocab::assign_ids(SceneGraph& graph) const {
  for (auto& a : graph.attributes) a.attribute_id = id(a.qualified());
}

nlohmann::json AttributeVocab::to_json() const {
  return {{"names", names_}, {"per_category", per_category_}};
}

AttributeVocab AttributeVocab::from_json(const nlohmann::json& j) {
  AttributeVocab v;
  v.names_ = j.at("names").get<std::vector<std::string>>();
  v.per_category_ = j.at("per_category").get<std::vector<std::vector<int>>>();
  if (v.names_.empty() || v.per_category_.size() != kNumAnatomicalCategories) {
    throw Error("malformed attribute vocabulary");
  }
  v.index_.clear();
  for (std::size_t i = 1; i < v.names_.size(); ++i) v.index_.emplace(v.names_[i], static_cast<int>(i));
  return v;
}

nlohmann::json Vocabularies::to_json() const {
  return {{"report", report.to_json()}, {"attributes", attributes.to_json()}};
}

Vocabularies Vocabularies::from_json(const nlohmann::json& j) {
  return {ReportVocab::from_json(j.at("report")), AttributeVocab::from_json(j.at("attributes"))};
}

}  // namespace sgrrg
