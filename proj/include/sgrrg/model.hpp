#pragma once

// The full report generator: backbone, graph construction, graph encoder,
// report decoder and the auxiliary abnormality heads, plus the joint objective.

#include <torch/torch.h>

#include <span>
#include <string>
#include <vector>

#include "sgrrg/abnormal.hpp"
#include "sgrrg/config.hpp"
#include "sgrrg/data.hpp"
#include "sgrrg/graph_builder.hpp"
#include "sgrrg/sg_decoder.hpp"
#include "sgrrg/sg_encoder.hpp"
#include "sgrrg/visual_backbone.hpp"
#include "sgrrg/vocab.hpp"

namespace sgrrg {

struct Batch {
  torch::Tensor images;          // [B, H, W, C]
  std::vector<SceneGraph> graphs;  // ground truth with attribute ids assigned
  torch::Tensor region_targets;  // [B, num_categories]
  torch::Tensor disease_labels;  // [B, 14]
  torch::Tensor input_ids;       // [B, T]: BOS w_1 .. w_n (PAD-padded)
  torch::Tensor target_ids;      // [B, T]: w_1 .. w_n EOS (PAD-padded)
  std::vector<std::string> reports;
  std::vector<std::vector<Detection>> detections;

  int64_t size() const { return images.size(0); }
};

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, const Vocabularies& vocab,
                 const TrainingConfig& cfg);

struct LossBreakdown {
  torch::Tensor gen, rs, ap, dr, con;  // scalar tensors; disabled terms are constant 0
  torch::Tensor total;

  struct Values {
    double gen = 0, rs = 0, ap = 0, dr = 0, con = 0, total = 0;
  };
  Values values() const;
};

/// L_gen + lambda L_rs + delta L_ap + eta L_dr + phi L_con with compensated
/// summation. Throws NonFiniteLoss naming the first non-finite component.
double total_loss(double gen, double rs, double ap, double dr, double con, const TrainingConfig& cfg);
/// Differentiable form of the same weighted sum.
torch::Tensor total_loss(const torch::Tensor& gen, const torch::Tensor& rs, const torch::Tensor& ap,
                         const torch::Tensor& dr, const torch::Tensor& con, const TrainingConfig& cfg);

struct Generation {
  std::string report;
  std::vector<int64_t> ids;
  std::optional<SceneGraph> graph;  // absent without the scene-graph path
};

class SgrrgModelImpl : public torch::nn::Module {
 public:
  SgrrgModelImpl(const TrainingConfig& cfg, Vocabularies vocab);

  LossBreakdown forward_train(const Batch& batch);
  std::vector<Generation> generate(const Batch& batch);
  /// Inference graphs only (no decoding).
  std::vector<SceneGraph> predict_graphs(const Batch& batch);

  /// Graph-encoder memory for the decoder, one tensor per graph (empty graph -> undefined).
  std::vector<torch::Tensor> graph_memory(const PatchFeatures& v, const std::vector<SceneGraph>& graphs,
                                          std::vector<torch::Tensor>* summaries = nullptr);

  const TrainingConfig& config() const { return cfg_; }
  const Vocabularies& vocab() const { return vocab_; }

  /// Backbone parameters (own learning rate) and everything else.
  std::vector<torch::Tensor> backbone_parameters();
  std::vector<torch::Tensor> other_parameters();

  VisualBackbone backbone{nullptr};
  GraphBuilder graph_builder{nullptr};
  SgEncoder sg_encoder{nullptr};
  ReportDecoder sg_decoder{nullptr};
  DiseaseHead abnormal{nullptr};

 private:
  TrainingConfig cfg_;
  Vocabularies vocab_;
};
TORCH_MODULE(SgrrgModel);

}  // namespace sgrrg
