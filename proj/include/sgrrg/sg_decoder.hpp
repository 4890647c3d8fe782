#pragma once

// Scene-graph-aided report decoder. Each layer runs causal self-attention,
// cross-attention over the encoded visual tokens, then cross-attention over
// the scene graph (subgraph summaries by default, all graph nodes when
// subgraph attention is disabled). Without the scene graph the third
// sublayer does not exist and the decoder is a plain vision-to-text decoder.

#include <torch/torch.h>

#include <optional>
#include <span>
#include <vector>

#include "sgrrg/attention.hpp"
#include "sgrrg/config.hpp"

namespace sgrrg {

/// Max- (or mean-) pooled subgraph representation: [N_o, D].
struct SubgraphSummaries {
  torch::Tensor rows;
};

/// `groups[i]` lists the token rows of subgraph i inside `graph_tokens` [N_s, D].
SubgraphSummaries summarize_subgraphs(const torch::Tensor& graph_tokens,
                                      const std::vector<std::vector<int>>& groups, Pooling pooling);

/// Keys/values for the graph cross-attention, padded over the batch.
struct GraphMemory {
  torch::Tensor tokens;  // [B, M, D]
  torch::Tensor valid;   // bool [B, M]
};

struct ReportTokens {
  std::vector<int64_t> ids;  // BOS first; EOS last when generation stopped on it
};

class DecoderLayerImpl : public torch::nn::Module {
 public:
  DecoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim, double dropout, bool with_graph);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& visual, const GraphMemory* graph,
                        const torch::Tensor& causal);

  torch::nn::LayerNorm self_norm{nullptr}, visual_norm{nullptr}, graph_norm{nullptr}, ffn_norm{nullptr};
  nn::MultiHeadAttention self_attn{nullptr}, visual_attn{nullptr}, graph_attn{nullptr};
  nn::FeedForward ffn{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(DecoderLayer);

class ReportDecoderImpl : public torch::nn::Module {
 public:
  ReportDecoderImpl(const TrainingConfig& cfg, int64_t vocab_size);

  /// Token + learned position embeddings: [B, T, D].
  torch::Tensor embed(const torch::Tensor& ids);

  /// Hidden states Z*_L for every prefix position: [B, T, D]. `graph` must be
  /// null when the decoder was built without the scene-graph sublayer.
  torch::Tensor decode_step_stack(const torch::Tensor& text, const torch::Tensor& visual,
                                  const GraphMemory* graph);

  /// Classification head over the vocabulary.
  torch::Tensor logits(const torch::Tensor& hidden) { return head->forward(hidden); }
  torch::Tensor forward(const torch::Tensor& ids, const torch::Tensor& visual, const GraphMemory* graph);

  /// One summary tensor per sample; samples with no subgraphs get the learned null token.
  GraphMemory make_memory(const std::vector<torch::Tensor>& per_sample);

  /// Batched greedy decoding; each row starts with BOS and stops at EOS or after max_len tokens.
  std::vector<ReportTokens> greedy(const torch::Tensor& visual, const GraphMemory* graph, int max_len,
                                   int64_t bos, int64_t eos);
  /// Beam search for one sample (batch dimension 1). Width 1 equals greedy.
  ReportTokens beam(const torch::Tensor& visual, const GraphMemory* graph, int max_len, int width,
                    int64_t bos, int64_t eos);

  bool has_graph() const { return with_graph_; }

  torch::nn::Embedding token_embed{nullptr};
  torch::nn::Embedding position_embed{nullptr};
  std::vector<DecoderLayer> layers;
  torch::nn::LayerNorm final_norm{nullptr};
  torch::nn::Linear head{nullptr};
  torch::Tensor null_token;

 private:
  bool with_graph_;
  int64_t max_positions_;
};
TORCH_MODULE(ReportDecoder);

/// Mean token cross-entropy over non-PAD targets. logits [B, T, V], targets [B, T].
torch::Tensor generation_loss(const torch::Tensor& logits, const torch::Tensor& targets, int64_t pad_id);

}  // namespace sgrrg
