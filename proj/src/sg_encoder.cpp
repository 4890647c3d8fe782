#include "sgrrg/sg_encoder.hpp"

#include "sgrrg/errors.hpp"

namespace sgrrg {

torch::Tensor mask_tensor(const AdjacencyMask& mask, torch::Device device) {
  const int64_t n = mask.size();
  std::vector<uint8_t> bits(mask.bits().begin(), mask.bits().end());
  return torch::from_blob(bits.data(), {n, n}, torch::kUInt8).to(torch::kBool).to(device).clone();
}

SgEncoderImpl::SgEncoderImpl(const TrainingConfig& cfg, int64_t attribute_vocab_size)
    : use_anatomy_(cfg.ae), mask_mode_(cfg.mask_mode) {
  const int64_t d = cfg.hidden_dim;
  object_ff = register_module("object_ff", torch::nn::Linear(cfg.feature_dim, d));
  attribute_embed = register_module("attribute_embed", torch::nn::Embedding(attribute_vocab_size, d));
  attribute_norm = register_module("attribute_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  attribute_type = register_parameter("attribute_type", torch::randn({d}) * 0.02);
  object_type = register_parameter("object_type", torch::randn({d}) * 0.02);
  anatomy_embed = register_module("anatomy_embed", torch::nn::Embedding(kNumAnatomicalCategories, d));
  anatomy_embed->weight.data().mul_(0.02);
  encoder = register_module("encoder", nn::EncoderStack(cfg.sg_layers, d, cfg.heads, cfg.ffn_dim, cfg.dropout));
  drop_ = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor SgEncoderImpl::embed_objects(const PatchFeatures& v, std::span<const RoiRef> rois) {
  return torch::gelu(object_ff->forward(roi_pool(v, rois)));
}

torch::Tensor SgEncoderImpl::embed_objects(const PatchFeatures& v, const SceneGraph& graph, int64_t batch) {
  std::vector<RoiRef> rois;
  rois.reserve(graph.objects.size());
  for (const auto& o : graph.objects) rois.push_back({batch, o.bbox});
  return embed_objects(v, rois);
}

torch::Tensor SgEncoderImpl::embed_attributes(std::span<const int64_t> ids) {
  const int64_t vocab = attribute_embed->weight.size(0);
  std::vector<int64_t> clamped(ids.begin(), ids.end());
  for (auto& id : clamped) {
    if (id < 0 || id >= vocab) id = 0;
  }
  auto idx = torch::tensor(clamped, torch::kLong);
  return drop_->forward(attribute_norm->forward(attribute_embed->forward(idx)));
}

torch::Tensor SgEncoderImpl::embed_attributes(const SceneGraph& graph) {
  std::vector<int64_t> ids;
  ids.reserve(graph.attributes.size());
  for (const auto& a : graph.attributes) ids.push_back(a.attribute_id);
  if (ids.empty()) {
    return torch::zeros({0, attribute_embed->weight.size(1)}, attribute_embed->weight.options());
  }
  return embed_attributes(ids);
}

NodeTokenSequence SgEncoderImpl::assemble_node_tokens(const torch::Tensor& object_embeddings,
                                                      const torch::Tensor& attribute_embeddings,
                                                      const SceneGraph& graph) {
  if (object_embeddings.size(0) != static_cast<int64_t>(graph.objects.size()) ||
      attribute_embeddings.size(0) != static_cast<int64_t>(graph.attributes.size())) {
    throw ShapeMismatch("embeddings do not align with the graph");
  }
  NodeTokenSequence seq;
  seq.mask = build_adjacency_mask(graph);

  std::vector<int64_t> categories;
  for (const auto& o : graph.objects) {
    categories.push_back(o.category_id);
    seq.anatomy_ids.push_back(o.category_id);
  }
  torch::Tensor objects;
  if (use_anatomy_) {
    objects = object_embeddings + anatomy_embed->forward(torch::tensor(categories, torch::kLong));
  } else {
    objects = object_embeddings + object_type.unsqueeze(0);
  }

  std::vector<int64_t> attr_order;
  for (const auto& ref : seq.mask.token_order()) {
    seq.node_kinds.push_back(ref.kind);
    if (ref.kind == NodeKind::kAttribute) attr_order.push_back(ref.index);
  }
  if (attr_order.empty()) {
    seq.tokens = objects;
  } else {
    auto attrs = attribute_embeddings.index_select(0, torch::tensor(attr_order, torch::kLong)) +
                 attribute_type.unsqueeze(0);
    seq.tokens = torch::cat({objects, attrs}, 0);
  }
  return seq;
}

torch::Tensor SgEncoderImpl::encode_scene_graph(const NodeTokenSequence& seq) {
  nn::AttentionMask mask;
  mask.allowed = mask_tensor(seq.mask, seq.tokens.device()).unsqueeze(0);
  mask.mode = mask_mode_;
  return encoder->forward(seq.tokens.unsqueeze(0), mask).squeeze(0);
}

EncodedGraphBatch SgEncoderImpl::encode_batch(const std::vector<NodeTokenSequence>& seqs) {
  if (seqs.empty()) throw ShapeMismatch("empty graph batch");
  const int64_t b = static_cast<int64_t>(seqs.size());
  int64_t n_max = 0;
  for (const auto& s : seqs) n_max = std::max<int64_t>(n_max, s.tokens.size(0));
  const auto opts = seqs.front().tokens.options();
  const int64_t d = seqs.front().tokens.size(1);

  std::vector<torch::Tensor> padded;
  auto allowed = torch::zeros({b, n_max, n_max}, torch::kBool);
  auto valid = torch::zeros({b, n_max}, torch::kBool);
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    const int64_t n = s.tokens.size(0);
    padded.push_back(n < n_max ? torch::cat({s.tokens, torch::zeros({n_max - n, d}, opts)}, 0) : s.tokens);
    allowed[i].narrow(0, 0, n).narrow(1, 0, n).copy_(mask_tensor(s.mask));
    for (int64_t j = n; j < n_max; ++j) allowed[i][j][j] = true;
    valid[i].narrow(0, 0, n).fill_(true);
  }
  nn::AttentionMask mask;
  mask.allowed = allowed;
  mask.mode = mask_mode_;
  mask.key_valid = valid;
  return {encoder->forward(torch::stack(padded), mask), valid};
}

}  // namespace sgrrg
