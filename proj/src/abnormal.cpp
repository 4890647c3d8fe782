#include "sgrrg/abnormal.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "sgrrg/errors.hpp"
#include "sgrrg/vocab.hpp"

namespace sgrrg {

const std::array<std::string_view, kNumDiseases> kDiseaseNames = {
    "No Finding",   "Enlarged Cardiomediastinum", "Cardiomegaly",     "Lung Opacity", "Lung Lesion",
    "Edema",        "Consolidation",              "Pneumonia",        "Atelectasis",  "Pneumothorax",
    "Pleural Effusion", "Pleural Other",          "Fracture",         "Support Devices",
};

DiseaseHeadImpl::DiseaseHeadImpl(int64_t feature_dim, int64_t num_diseases) {
  linear = register_module("linear", torch::nn::Linear(feature_dim, num_diseases));
}

torch::Tensor DiseaseHeadImpl::forward(const torch::Tensor& v_g) { return linear->forward(v_g); }

torch::Tensor disease_recognition_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.sizes() != labels.sizes()) throw ShapeMismatch("disease logits and labels differ in shape");
  return torch::nn::functional::binary_cross_entropy_with_logits(logits, labels.to(logits.scalar_type()));
}

torch::Tensor nas_contrastive_loss(const torch::Tensor& summaries, std::span<const int> categories,
                                   std::span<const int> labels, const ContrastiveConfig& cfg) {
  if (summaries.size(0) != static_cast<int64_t>(categories.size()) || categories.size() != labels.size()) {
    throw LengthMismatch("summaries, categories and labels are not aligned");
  }
  std::map<int, std::vector<int64_t>> groups;
  for (std::size_t i = 0; i < categories.size(); ++i) groups[categories[i]].push_back(static_cast<int64_t>(i));

  std::vector<torch::Tensor> per_category;
  for (const auto& [k, members] : groups) {
    const auto n = static_cast<int64_t>(members.size());
    if (n < 2) continue;
    auto idx = torch::tensor(members, torch::kLong);
    auto e = torch::nn::functional::normalize(summaries.index_select(0, idx),
                                              torch::nn::functional::NormalizeFuncOptions().dim(1));
    auto sim = e.matmul(e.t());
    std::vector<int64_t> y;
    for (auto m : members) y.push_back(labels[static_cast<std::size_t>(m)]);
    auto yt = torch::tensor(y, torch::kLong);
    auto same = yt.unsqueeze(0).eq(yt.unsqueeze(1)).to(sim.scalar_type());
    auto pull = ((1.0 - sim) * same).sum();
    auto push = (torch::relu(sim - cfg.margin) * (1.0 - same)).sum();
    const double scale = 1.0 / static_cast<double>(n * n);
    per_category.push_back(cfg.norm == NasNorm::kBoth ? (pull + push) * scale : pull * scale + push);
  }
  if (per_category.empty()) return torch::zeros({}, summaries.options());
  return torch::stack(per_category).mean();
}

namespace {

const std::vector<std::string> kDefaultNegators = {"no", "without", "not", "negative", "free"};

std::vector<std::vector<std::string>> tokenize_all(const std::vector<std::string>& phrases) {
  std::vector<std::vector<std::string>> out;
  for (const auto& p : phrases) {
    auto t = tokenize(p);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

KeywordMap KeywordMap::chexpert() {
  const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
      {"No Finding", {}},
      {"Enlarged Cardiomediastinum", {"enlarged cardiomediastinum", "widened mediastinum"}},
      {"Cardiomegaly", {"cardiomegaly", "enlarged heart"}},
      {"Lung Opacity", {"opacity", "opacities"}},
      {"Lung Lesion", {"nodule", "mass", "lesion"}},
      {"Edema", {"edema"}},
      {"Consolidation", {"consolidation"}},
      {"Pneumonia", {"pneumonia"}},
      {"Atelectasis", {"atelectasis"}},
      {"Pneumothorax", {"pneumothorax"}},
      {"Pleural Effusion", {"pleural effusion", "effusion"}},
      {"Pleural Other", {"pleural thickening", "blunting"}},
      {"Fracture", {"fracture"}},
      {"Support Devices", {"support device", "tube", "catheter", "pacemaker"}},
  };
  KeywordMap m;
  for (const auto& [name, phrases] : table) m.entries_.push_back({name, tokenize_all(phrases), kDefaultNegators});
  return m;
}

KeywordMap KeywordMap::from_json(const nlohmann::json& j) {
  KeywordMap m;
  for (auto name : kDiseaseNames) {
    const std::string key(name);
    if (!j.contains(key)) throw Error("keyword map is missing '" + key + "'");
    const auto& e = j.at(key);
    m.entries_.push_back({key, tokenize_all(e.value("positive", std::vector<std::string>{})),
                          e.value("negators", kDefaultNegators)});
  }
  return m;
}

KeywordMap KeywordMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open keyword map " + path);
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json KeywordMap::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : entries_) {
    std::vector<std::string> phrases;
    for (const auto& p : e.positive) phrases.push_back(join_tokens(p));
    j[e.disease] = {{"positive", phrases}, {"negators", e.negators}};
  }
  return j;
}

DiseaseLabels rule_based_labeler(std::string_view report, const KeywordMap& map) {
  std::vector<std::vector<std::string>> sentences(1);
  for (auto& tok : tokenize(report)) {
    if (tok == "." || tok == ";" || tok == "!" || tok == "?") {
      if (!sentences.back().empty()) sentences.emplace_back();
    } else {
      sentences.back().push_back(std::move(tok));
    }
  }

  DiseaseLabels labels{};
  const auto& entries = map.entries();
  const int window = map.negation_window();
  for (std::size_t d = 0; d < entries.size() && d < labels.size(); ++d) {
    const auto& e = entries[d];
    for (const auto& s : sentences) {
      for (std::size_t p = 0; p < s.size() && labels[d] == 0; ++p) {
        for (const auto& phrase : e.positive) {
          if (p + phrase.size() > s.size() || !std::equal(phrase.begin(), phrase.end(), s.begin() + static_cast<std::ptrdiff_t>(p))) {
            continue;
          }
          const std::size_t lo = p >= static_cast<std::size_t>(window) ? p - static_cast<std::size_t>(window) : 0;
          const bool negated = std::any_of(s.begin() + static_cast<std::ptrdiff_t>(lo), s.begin() + static_cast<std::ptrdiff_t>(p),
                                           [&](const std::string& t) {
                                             return std::find(e.negators.begin(), e.negators.end(), t) != e.negators.end();
                                           });
          if (!negated) {
            labels[d] = 1;
            break;
          }
        }
      }
    }
  }

  for (std::size_t d = 0; d < entries.size() && d < labels.size(); ++d) {
    if (!entries[d].positive.empty()) continue;
    bool any = false;
    for (std::size_t o = 0; o < labels.size(); ++o) {
      if (o == d || entries[o].positive.empty() || kDiseaseNames[o] == "Support Devices") continue;
      any = any || labels[o] == 1;
    }
    labels[d] = any ? 0 : 1;
  }
  return labels;
}

}  // namespace sgrrg
