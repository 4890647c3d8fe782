#pragma once

// Inference-time scene-graph construction: a memory-aided anatomical-location
// selector on the pooled image feature and per-category attribute heads on
// region embeddings.

#include <torch/torch.h>

#include <span>
#include <vector>

#include "sgrrg/config.hpp"
#include "sgrrg/scene_graph.hpp"
#include "sgrrg/sg_encoder.hpp"
#include "sgrrg/visual_backbone.hpp"
#include "sgrrg/vocab.hpp"

namespace sgrrg {

struct SelectorOutput {
  std::vector<double> probs;
  std::vector<std::uint8_t> selected;  // selected[i] == (probs[i] > alpha)
};

/// Strict-threshold gate over probabilities.
std::vector<std::uint8_t> threshold(std::span<const double> probs, double cutoff);

class RegionSelectorImpl : public torch::nn::Module {
 public:
  explicit RegionSelectorImpl(const TrainingConfig& cfg);

  /// v'_g = W_g^T v_g: [B, d].
  torch::Tensor project_global(const torch::Tensor& v_g);
  /// Scaled slot similarities u: [B, N_p].
  torch::Tensor similarities(const torch::Tensor& v_g);
  /// Response r from the top-gamma slots (ties go to the lower slot index): [B, d].
  /// Throws GammaOutOfRange unless 1 <= gamma <= N_p.
  torch::Tensor memory_query_response(const torch::Tensor& v_g, int gamma);
  /// Dropout(GELU(Linear([v'_g, r]))).
  torch::Tensor fuse_response(const torch::Tensor& v_g_proj, const torch::Tensor& r);
  /// Selection logits [B, N_c]; goes through the memory path unless it is disabled.
  torch::Tensor logits(const torch::Tensor& v_g);
  /// Gate v* (or raw v_g without memory) through the classifier: one output per row.
  std::vector<SelectorOutput> select_regions(const torch::Tensor& v_star, double alpha);

  bool uses_memory() const { return use_memory_; }
  int gamma() const { return gamma_; }

  torch::nn::Linear global_proj{nullptr};
  torch::Tensor memory;  // P: [N_p, d]
  torch::nn::Linear query_proj{nullptr}, slot_proj{nullptr}, response_proj{nullptr};
  torch::nn::Linear fuse{nullptr};
  torch::nn::Linear classifier{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
  int gamma_;
  bool use_memory_;
  int64_t memory_dim_;
};
TORCH_MODULE(RegionSelector);

class AttributeHeadsImpl : public torch::nn::Module {
 public:
  AttributeHeadsImpl(int64_t dim, const AttributeVocab& vocab);

  /// o* = FeedForward(o): [N, D].
  torch::Tensor refine(const torch::Tensor& objects);
  /// Logits of category k's head for one refined embedding: [N^k_a].
  torch::Tensor category_logits(const torch::Tensor& refined, int category);
  /// Gamma_beta(Sigmoid(o* W^k_a)) for one object embedding o_i [D].
  std::vector<std::uint8_t> predict_attributes(const torch::Tensor& object, int category, double beta);

  /// Mean binary cross-entropy over every (object, head output) pair.
  /// `positives[i]` holds local attribute indices present on object i.
  torch::Tensor loss(const torch::Tensor& objects, std::span<const int> categories,
                     const std::vector<std::vector<int>>& positives, bool pos_weighting);

  int64_t count(int category) const;
  int64_t offset(int category) const;

  torch::nn::Linear ff{nullptr};
  torch::nn::Linear head{nullptr};  // all category heads stacked along the output axis

 private:
  std::vector<int64_t> counts_;
  std::vector<int64_t> offsets_;
};
TORCH_MODULE(AttributeHeads);

class GraphBuilderImpl : public torch::nn::Module {
 public:
  GraphBuilderImpl(const TrainingConfig& cfg, const AttributeVocab& vocab);

  /// Scene graph for one image (batch entry 0 of `v`): selected categories that
  /// also have a detection, one instance each, with predicted attributes.
  /// Returns an empty graph when nothing survives the gate.
  SceneGraph build_inference_graph(const PatchFeatures& v, std::span<const Detection> detections,
                                   SgEncoder& encoder, const AttributeVocab& vocab, double alpha, double beta,
                                   const std::string& image_id = {});

  RegionSelector selector{nullptr};
  AttributeHeads heads{nullptr};
};
TORCH_MODULE(GraphBuilder);

/// One detection per category: highest score, then smallest area.
std::vector<Detection> dedupe_detections(std::span<const Detection> detections);

}  // namespace sgrrg
