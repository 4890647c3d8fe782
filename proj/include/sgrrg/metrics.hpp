#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgrrg/abnormal.hpp"

namespace sgrrg {

enum class BleuMode { kCorpus, kSentenceMean };

/// BLEU-n over whitespace/punctuation tokens: clipped n-gram precisions for
/// orders 1..n, geometric mean, brevity penalty. Zero match counts are
/// replaced by 1e-9. Throws LengthMismatch.
double bleu(std::span<const std::string> candidates, std::span<const std::string> references, int n,
            BleuMode mode = BleuMode::kCorpus);

/// LCS-based F-measure with beta = 1.2, averaged over pairs. Throws LengthMismatch.
double rouge_l(std::span<const std::string> candidates, std::span<const std::string> references);

struct ClinicalEfficacy {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::array<double, kNumDiseases> per_disease_f1{};
};

/// Macro P/R/F1 over the 14 diseases; 0/0 counts as 0.
ClinicalEfficacy clinical_efficacy(std::span<const DiseaseLabels> predicted, std::span<const DiseaseLabels> reference);
ClinicalEfficacy clinical_efficacy(std::span<const std::string> predicted, std::span<const std::string> reference,
                                   const KeywordMap& labeler);

struct MetricReport {
  double bleu_1 = 0.0, bleu_2 = 0.0, bleu_3 = 0.0, bleu_4 = 0.0;
  std::optional<double> meteor;  // not computed
  double rouge_l = 0.0;
  double ce_precision = 0.0, ce_recall = 0.0, ce_f1 = 0.0;
  double avg_report_length = 0.0;

  nlohmann::json to_json() const;
  /// Header plus one aligned row: BL-1 BL-2 BL-3 BL-4 RG-L P R F1.
  std::string table(const std::string& label = "model") const;
};

MetricReport evaluate_reports(std::span<const std::string> candidates, std::span<const std::string> references,
                              const KeywordMap& labeler, BleuMode mode = BleuMode::kCorpus);

}  // namespace sgrrg
