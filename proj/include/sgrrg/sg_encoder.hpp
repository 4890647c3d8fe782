#pragma once

// Scene-graph encoder: object embeddings from RoI-pooled patch features,
// attribute embeddings, token-type / anatomy embeddings, and a transformer
// stack whose attention is restricted by the graph adjacency mask.

#include <torch/torch.h>

#include <span>
#include <vector>

#include "sgrrg/attention.hpp"
#include "sgrrg/config.hpp"
#include "sgrrg/scene_graph.hpp"
#include "sgrrg/visual_backbone.hpp"

namespace sgrrg {

struct NodeTokenSequence {
  torch::Tensor tokens;  // [N_s, D], objects first
  AdjacencyMask mask;
  std::vector<NodeKind> node_kinds;
  std::vector<int> anatomy_ids;  // one per object token
};

/// Padded batch of encoded graphs.
struct EncodedGraphBatch {
  torch::Tensor tokens;  // [B, N_max, D]
  torch::Tensor valid;   // bool [B, N_max]
};

/// Dense bool [N, N] copy of an adjacency mask.
torch::Tensor mask_tensor(const AdjacencyMask& mask, torch::Device device = torch::kCPU);

class SgEncoderImpl : public torch::nn::Module {
 public:
  SgEncoderImpl(const TrainingConfig& cfg, int64_t attribute_vocab_size);

  /// FeedForward(RoIPool(V^p, b_i)) for every RoI: [N, D].
  torch::Tensor embed_objects(const PatchFeatures& v, std::span<const RoiRef> rois);
  /// Objects of `graph` against batch entry `batch` of `v`.
  torch::Tensor embed_objects(const PatchFeatures& v, const SceneGraph& graph, int64_t batch = 0);

  /// Dropout(Norm(Embed(id))) per id; ids outside the table map to UNK (0).
  torch::Tensor embed_attributes(std::span<const int64_t> ids);
  /// Rows follow graph.attributes order; unassigned ids map to UNK.
  torch::Tensor embed_attributes(const SceneGraph& graph);

  /// Adds anatomy embeddings to objects (or the shared object type embedding
  /// when anatomy embeddings are disabled) and e_a to attributes, reordered
  /// to the adjacency-mask token order.
  NodeTokenSequence assemble_node_tokens(const torch::Tensor& object_embeddings,
                                         const torch::Tensor& attribute_embeddings,
                                         const SceneGraph& graph);

  /// Masked transformer stack: [N_s, D].
  torch::Tensor encode_scene_graph(const NodeTokenSequence& seq);
  EncodedGraphBatch encode_batch(const std::vector<NodeTokenSequence>& seqs);

  void set_anatomy_embedding(bool enabled) { use_anatomy_ = enabled; }
  MaskMode mask_mode() const { return mask_mode_; }

  torch::nn::Linear object_ff{nullptr};
  torch::nn::Embedding attribute_embed{nullptr};
  torch::nn::LayerNorm attribute_norm{nullptr};
  torch::Tensor attribute_type;  // e_a
  torch::Tensor object_type;     // e_o, used when anatomy embeddings are off
  torch::nn::Embedding anatomy_embed{nullptr};
  nn::EncoderStack encoder{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
  bool use_anatomy_;
  MaskMode mask_mode_;
};
TORCH_MODULE(SgEncoder);

}  // namespace sgrrg
