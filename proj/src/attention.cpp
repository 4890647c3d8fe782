#include "sgrrg/attention.hpp"

#include <cmath>

#include "sgrrg/errors.hpp"

namespace sgrrg::nn {

torch::Tensor causal_mask(int64_t t, torch::Device device) {
  return torch::ones({t, t}, torch::TensorOptions().dtype(torch::kBool).device(device)).tril();
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) throw ShapeMismatch("head count must divide the model width");
  q_proj = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& memory,
                                              const AttentionMask& mask) {
  return forward_with_weights(query, memory, mask).output;
}

AttentionOutput MultiHeadAttentionImpl::forward_with_weights(const torch::Tensor& query,
                                                             const torch::Tensor& memory,
                                                             const AttentionMask& mask) {
  const int64_t b = query.size(0);
  const int64_t tq = query.size(1);
  const int64_t tk = memory.size(1);
  const int64_t hd = dim_ / heads_;

  auto split = [&](const torch::Tensor& x, int64_t t) {
    return x.view({b, t, heads_, hd}).transpose(1, 2);  // [B, H, T, hd]
  };
  auto q = split(q_proj->forward(query), tq);
  auto k = split(k_proj->forward(memory), tk);
  auto v = split(v_proj->forward(memory), tk);

  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  if (mask.allowed.defined()) {
    auto allowed = mask.allowed.dim() == 3 ? mask.allowed.unsqueeze(1) : mask.allowed;
    if (mask.mode == MaskMode::kAdditive) {
      scores = scores.masked_fill(allowed.logical_not(), kMaskedLogit);
    } else {
      scores = scores * allowed.to(scores.scalar_type());
    }
  }
  if (mask.key_valid.defined()) {
    scores = scores.masked_fill(mask.key_valid.logical_not().view({b, 1, 1, tk}), kMaskedLogit);
  }
  auto weights = torch::softmax(scores, -1);
  auto ctx = torch::matmul(weights, v).transpose(1, 2).contiguous().view({b, tq, dim_});
  return {out_proj->forward(ctx), weights};
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, int64_t hidden, double dropout) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2->forward(drop_->forward(torch::gelu(fc1->forward(x))));
}

EncoderLayerImpl::EncoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim, double dropout) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ffn = register_module("ffn", FeedForward(dim, ffn_dim, dropout));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const AttentionMask& mask) {
  auto h = norm1->forward(x);
  auto y = x + drop_->forward(attn->forward(h, h, mask));
  return y + drop_->forward(ffn->forward(norm2->forward(y)));
}

EncoderStackImpl::EncoderStackImpl(int64_t n, int64_t dim, int64_t heads, int64_t ffn_dim, double dropout) {
  for (int64_t i = 0; i < n; ++i) {
    layers.push_back(register_module("layer" + std::to_string(i), EncoderLayer(dim, heads, ffn_dim, dropout)));
  }
  final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor EncoderStackImpl::forward(torch::Tensor x, const AttentionMask& mask) {
  for (auto& layer : layers) x = layer->forward(x, mask);
  return final_norm->forward(x);
}

}  // namespace sgrrg::nn
