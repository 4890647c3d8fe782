#pragma once

// Disease-recognition head on the pooled image feature, the normal/abnormal
// segregation contrastive loss over subgraph summaries, and a keyword labeler
// that produces 14-way disease labels from report text.

#include <torch/torch.h>

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sgrrg/config.hpp"

namespace sgrrg {

inline constexpr int kNumDiseases = 14;

/// CheXpert categories in their canonical order.
extern const std::array<std::string_view, kNumDiseases> kDiseaseNames;

using DiseaseLabels = std::array<int, kNumDiseases>;

class DiseaseHeadImpl : public torch::nn::Module {
 public:
  DiseaseHeadImpl(int64_t feature_dim, int64_t num_diseases = kNumDiseases);
  /// [B, C] -> [B, 14] logits.
  torch::Tensor forward(const torch::Tensor& v_g);

  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(DiseaseHead);

/// Mean binary cross-entropy over all sigmoid outputs. labels: [B, 14] in {0,1}.
torch::Tensor disease_recognition_loss(const torch::Tensor& logits, const torch::Tensor& labels);

struct ContrastiveConfig {
  double margin = 0.4;
  NasNorm norm = NasNorm::kBoth;
};

/// Per anatomical category with at least two summaries: same-label pairs pay
/// 1 - cos, opposite-label pairs pay max(0, cos - margin), scaled by 1/n^2.
/// Averaged over eligible categories; 0 when none is eligible.
torch::Tensor nas_contrastive_loss(const torch::Tensor& summaries, std::span<const int> categories,
                                   std::span<const int> labels, const ContrastiveConfig& cfg);

/// Disease name -> positive phrases and negators, in kDiseaseNames order.
/// An entry with no positive phrases is derived: it fires iff no other
/// pathology (everything except Support Devices) is positive.
class KeywordMap {
 public:
  struct Entry {
    std::string disease;
    std::vector<std::vector<std::string>> positive;  // tokenized phrases
    std::vector<std::string> negators;
  };

  static KeywordMap chexpert();
  static KeywordMap from_json(const nlohmann::json& j);
  static KeywordMap load(const std::string& path);
  nlohmann::json to_json() const;

  const std::vector<Entry>& entries() const { return entries_; }
  int negation_window() const { return window_; }

 private:
  std::vector<Entry> entries_;
  int window_ = 3;
};

/// Sentence-wise phrase matching; a match with a negator among the three
/// preceding tokens of its sentence is discarded.
DiseaseLabels rule_based_labeler(std::string_view report, const KeywordMap& map);

}  // namespace sgrrg
