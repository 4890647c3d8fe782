#pragma once

// Transformer building blocks shared by the vision encoder, the scene-graph
// encoder and the report decoder. Attention is written out explicitly so the
// graph mask semantics stay under our control.

#include <torch/torch.h>

#include "sgrrg/config.hpp"

namespace sgrrg::nn {

/// Logit assigned to excluded positions. exp() of it underflows to exactly 0,
/// and a fully excluded row still softmaxes to finite values.
inline constexpr double kMaskedLogit = -1e30;

struct AttentionMask {
  /// bool, broadcastable to [B, Tq, Tk]; undefined means unrestricted.
  torch::Tensor allowed;
  /// How `allowed` is applied. Multiplicative is the literal Hadamard form
  /// (masked logits become 0, not excluded).
  MaskMode mode = MaskMode::kAdditive;
  /// bool [B, Tk]; invalid keys are always excluded additively (padding).
  torch::Tensor key_valid;
};

/// bool [t, t], true on and below the diagonal.
torch::Tensor causal_mask(int64_t t, torch::Device device = torch::kCPU);

struct AttentionOutput {
  torch::Tensor output;   // [B, Tq, D]
  torch::Tensor weights;  // [B, H, Tq, Tk]
};

class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t dim, int64_t heads);

  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& memory,
                        const AttentionMask& mask = {});
  AttentionOutput forward_with_weights(const torch::Tensor& query, const torch::Tensor& memory,
                                       const AttentionMask& mask = {});

  int64_t heads() const { return heads_; }

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};

 private:
  int64_t dim_;
  int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(int64_t dim, int64_t hidden, double dropout);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(FeedForward);

/// Pre-norm encoder block: x + Attn(LN(x)), then x + FFN(LN(x)).
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim, double dropout);
  torch::Tensor forward(const torch::Tensor& x, const AttentionMask& mask = {});

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  FeedForward ffn{nullptr};

 private:
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(EncoderLayer);

class EncoderStackImpl : public torch::nn::Module {
 public:
  EncoderStackImpl(int64_t layers, int64_t dim, int64_t heads, int64_t ffn_dim, double dropout);
  torch::Tensor forward(torch::Tensor x, const AttentionMask& mask = {});

  std::vector<EncoderLayer> layers;
  torch::nn::LayerNorm final_norm{nullptr};
};
TORCH_MODULE(EncoderStack);

}  // namespace sgrrg::nn
