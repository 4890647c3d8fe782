#include "sgrrg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "sgrrg/errors.hpp"
#include "sgrrg/vocab.hpp"

namespace sgrrg {

namespace {

constexpr double kBleuEpsilon = 1e-9;

using Tokens = std::vector<std::string>;

void check_aligned(std::size_t a, std::size_t b) {
  if (a != b) throw LengthMismatch("candidates and references differ in length");
}

std::map<std::vector<std::string>, int> ngram_counts(const Tokens& t, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(t.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    ++counts[std::vector<std::string>(t.begin() + static_cast<std::ptrdiff_t>(i),
                                      t.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

struct BleuStats {
  std::vector<long long> matched, total;
  long long cand_len = 0, ref_len = 0;
  explicit BleuStats(int n) : matched(static_cast<std::size_t>(n), 0), total(static_cast<std::size_t>(n), 0) {}

  void add(const Tokens& c, const Tokens& r) {
    cand_len += static_cast<long long>(c.size());
    ref_len += static_cast<long long>(r.size());
    for (int k = 1; k <= static_cast<int>(matched.size()); ++k) {
      auto cc = ngram_counts(c, k);
      auto rc = ngram_counts(r, k);
      for (const auto& [g, cnt] : cc) {
        auto it = rc.find(g);
        matched[static_cast<std::size_t>(k - 1)] += std::min(cnt, it == rc.end() ? 0 : it->second);
        total[static_cast<std::size_t>(k - 1)] += cnt;
      }
    }
  }

  double score() const {
    if (cand_len == 0 || matched[0] == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t k = 0; k < matched.size(); ++k) {
      const double p = matched[k] == 0 ? kBleuEpsilon / static_cast<double>(std::max<long long>(total[k], 1))
                                       : static_cast<double>(matched[k]) / static_cast<double>(total[k]);
      log_sum += std::log(p);
    }
    const double bp =
        cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_sum / static_cast<double>(matched.size()));
  }
};

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(std::span<const std::string> candidates, std::span<const std::string> references, int n,
            BleuMode mode) {
  check_aligned(candidates.size(), references.size());
  if (n < 1 || n > 4) throw Error("BLEU order must lie in [1, 4]");
  if (candidates.empty()) return 0.0;
  if (mode == BleuMode::kCorpus) {
    BleuStats stats(n);
    for (std::size_t i = 0; i < candidates.size(); ++i) stats.add(tokenize(candidates[i]), tokenize(references[i]));
    return stats.score();
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    BleuStats stats(n);
    stats.add(tokenize(candidates[i]), tokenize(references[i]));
    sum += stats.score();
  }
  return sum / static_cast<double>(candidates.size());
}

double rouge_l(std::span<const std::string> candidates, std::span<const std::string> references) {
  check_aligned(candidates.size(), references.size());
  if (candidates.empty()) return 0.0;
  constexpr double kBeta = 1.2;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = tokenize(candidates[i]);
    const auto r = tokenize(references[i]);
    const auto l = static_cast<double>(lcs(c, r));
    if (l == 0.0) continue;
    const double prec = l / static_cast<double>(c.size());
    const double rec = l / static_cast<double>(r.size());
    sum += (1.0 + kBeta * kBeta) * prec * rec / (rec + kBeta * kBeta * prec);
  }
  return sum / static_cast<double>(candidates.size());
}

ClinicalEfficacy clinical_efficacy(std::span<const DiseaseLabels> predicted, std::span<const DiseaseLabels> reference) {
  check_aligned(predicted.size(), reference.size());
  ClinicalEfficacy ce;
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  for (std::size_t d = 0; d < kNumDiseases; ++d) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i][d] == 1;
      const bool r = reference[i][d] == 1;
      tp += (p && r) ? 1 : 0;
      fp += (p && !r) ? 1 : 0;
      fn += (!p && r) ? 1 : 0;
    }
    const double prec = ratio(tp, tp + fp);
    const double rec = ratio(tp, tp + fn);
    const double f1 = ratio(2 * prec * rec, prec + rec);
    ce.precision += prec;
    ce.recall += rec;
    ce.f1 += f1;
    ce.per_disease_f1[d] = f1;
  }
  ce.precision /= kNumDiseases;
  ce.recall /= kNumDiseases;
  ce.f1 /= kNumDiseases;
  return ce;
}

ClinicalEfficacy clinical_efficacy(std::span<const std::string> predicted, std::span<const std::string> reference,
                                   const KeywordMap& labeler) {
  check_aligned(predicted.size(), reference.size());
  std::vector<DiseaseLabels> p, r;
  for (const auto& s : predicted) p.push_back(rule_based_labeler(s, labeler));
  for (const auto& s : reference) r.push_back(rule_based_labeler(s, labeler));
  return clinical_efficacy(p, r);
}

nlohmann::json MetricReport::to_json() const {
  return {{"bleu_1", bleu_1},     {"bleu_2", bleu_2},       {"bleu_3", bleu_3},
          {"bleu_4", bleu_4},     {"rouge_l", rouge_l},     {"ce_precision", ce_precision},
          {"ce_recall", ce_recall}, {"ce_f1", ce_f1},       {"avg_report_length", avg_report_length}};
}

std::string MetricReport::table(const std::string& label) const {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-12s %7s %7s %7s %7s %7s %7s %7s %7s\n", "", "BL-1", "BL-2", "BL-3", "BL-4",
                "RG-L", "P", "R", "F1");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f\n", label.c_str(), bleu_1,
                bleu_2, bleu_3, bleu_4, rouge_l, ce_precision, ce_recall, ce_f1);
  out += buf;
  return out;
}

MetricReport evaluate_reports(std::span<const std::string> candidates, std::span<const std::string> references,
                              const KeywordMap& labeler, BleuMode mode) {
  check_aligned(candidates.size(), references.size());
  MetricReport m;
  m.bleu_1 = bleu(candidates, references, 1, mode);
  m.bleu_2 = bleu(candidates, references, 2, mode);
  m.bleu_3 = bleu(candidates, references, 3, mode);
  m.bleu_4 = bleu(candidates, references, 4, mode);
  m.rouge_l = rouge_l(candidates, references);
  const auto ce = clinical_efficacy(candidates, references, labeler);
  m.ce_precision = ce.precision;
  m.ce_recall = ce.recall;
  m.ce_f1 = ce.f1;
  double words = 0.0;
  for (const auto& c : candidates) {
    for (const auto& t : tokenize(c)) words += (t.size() == 1 && std::ispunct(static_cast<unsigned char>(t[0]))) ? 0 : 1;
  }
  m.avg_report_length = candidates.empty() ? 0.0 : words / static_cast<double>(candidates.size());
  return m;
}

}  // namespace sgrrg
