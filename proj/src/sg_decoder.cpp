#include "sgrrg/sg_decoder.hpp"

#include <algorithm>

#include "sgrrg/errors.hpp"

namespace sgrrg {

SubgraphSummaries summarize_subgraphs(const torch::Tensor& graph_tokens,
                                      const std::vector<std::vector<int>>& groups, Pooling pooling) {
  std::vector<torch::Tensor> rows;
  rows.reserve(groups.size());
  for (const auto& group : groups) {
    if (group.empty()) throw ShapeMismatch("subgraph without tokens");
    std::vector<int64_t> idx(group.begin(), group.end());
    auto members = graph_tokens.index_select(0, torch::tensor(idx, torch::kLong));
    rows.push_back(pooling == Pooling::kMax ? std::get<0>(members.max(0)) : members.mean(0));
  }
  if (rows.empty()) return {torch::zeros({0, graph_tokens.size(1)}, graph_tokens.options())};
  return {torch::stack(rows)};
}

DecoderLayerImpl::DecoderLayerImpl(int64_t dim, int64_t heads, int64_t ffn_dim, double dropout, bool with_graph) {
  auto ln = [&] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})); };
  self_norm = register_module("self_norm", ln());
  self_attn = register_module("self_attn", nn::MultiHeadAttention(dim, heads));
  visual_norm = register_module("visual_norm", ln());
  visual_attn = register_module("visual_attn", nn::MultiHeadAttention(dim, heads));
  if (with_graph) {
    graph_norm = register_module("graph_norm", ln());
    graph_attn = register_module("graph_attn", nn::MultiHeadAttention(dim, heads));
  }
  ffn_norm = register_module("ffn_norm", ln());
  ffn = register_module("ffn", nn::FeedForward(dim, ffn_dim, dropout));
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& visual,
                                        const GraphMemory* graph, const torch::Tensor& causal) {
  nn::AttentionMask self_mask;
  self_mask.allowed = causal;
  auto h = self_norm->forward(x);
  auto z = x + drop_->forward(self_attn->forward(h, h, self_mask));

  z = z + drop_->forward(visual_attn->forward(visual_norm->forward(z), visual));

  if (graph != nullptr) {
    nn::AttentionMask graph_mask;
    graph_mask.key_valid = graph->valid;
    z = z + drop_->forward(graph_attn->forward(graph_norm->forward(z), graph->tokens, graph_mask));
  }
  return z + drop_->forward(ffn->forward(ffn_norm->forward(z)));
}

ReportDecoderImpl::ReportDecoderImpl(const TrainingConfig& cfg, int64_t vocab_size)
    : with_graph_(cfg.sg), max_positions_(cfg.max_positions) {
  const int64_t d = cfg.hidden_dim;
  token_embed = register_module("token_embed", torch::nn::Embedding(vocab_size, d));
  token_embed->weight.data().mul_(0.02);
  position_embed = register_module("position_embed", torch::nn::Embedding(cfg.max_positions, d));
  position_embed->weight.data().mul_(0.02);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    layers.push_back(register_module("layer" + std::to_string(i),
                                     DecoderLayer(d, cfg.heads, cfg.ffn_dim, cfg.dropout, cfg.sg)));
  }
  final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  head = register_module("head", torch::nn::Linear(d, vocab_size));
  if (cfg.sg) null_token = register_parameter("null_token", torch::randn({d}) * 0.02);
}

torch::Tensor ReportDecoderImpl::embed(const torch::Tensor& ids) {
  const int64_t t = ids.size(1);
  if (t > max_positions_) throw ShapeMismatch("report prefix longer than the positional table");
  auto pos = torch::arange(t, torch::kLong);
  return token_embed->forward(ids) + position_embed->forward(pos).unsqueeze(0);
}

torch::Tensor ReportDecoderImpl::decode_step_stack(const torch::Tensor& text, const torch::Tensor& visual,
                                                   const GraphMemory* graph) {
  if (graph != nullptr && !with_graph_) throw ShapeMismatch("decoder was built without the graph sublayer");
  GraphMemory null_memory;
  if (with_graph_ && graph == nullptr) {
    null_memory = make_memory(std::vector<torch::Tensor>(static_cast<std::size_t>(text.size(0))));
    graph = &null_memory;
  }
  const auto causal = nn::causal_mask(text.size(1), text.device());
  auto z = text;
  for (auto& layer : layers) z = layer->forward(z, visual, graph, causal);
  return final_norm->forward(z);
}

torch::Tensor ReportDecoderImpl::forward(const torch::Tensor& ids, const torch::Tensor& visual,
                                         const GraphMemory* graph) {
  return logits(decode_step_stack(embed(ids), visual, graph));
}

GraphMemory ReportDecoderImpl::make_memory(const std::vector<torch::Tensor>& per_sample) {
  if (!with_graph_) throw ShapeMismatch("decoder was built without the graph sublayer");
  const int64_t b = static_cast<int64_t>(per_sample.size());
  const int64_t d = null_token.size(0);
  int64_t m = 1;
  for (const auto& s : per_sample) {
    if (s.defined()) m = std::max<int64_t>(m, s.size(0));
  }
  std::vector<torch::Tensor> rows;
  auto valid = torch::zeros({b, m}, torch::kBool);
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = per_sample[static_cast<std::size_t>(i)];
    torch::Tensor r = (s.defined() && s.size(0) > 0) ? s : null_token.unsqueeze(0);
    const int64_t n = r.size(0);
    valid[i].narrow(0, 0, n).fill_(true);
    if (n < m) r = torch::cat({r, torch::zeros({m - n, d}, r.options())}, 0);
    rows.push_back(r);
  }
  return {torch::stack(rows), valid};
}

namespace {

/// Indices of the k largest entries of a 1-D tensor, ties resolved toward lower index.
std::vector<int64_t> stable_topk(const torch::Tensor& v, int64_t k) {
  auto sorted = std::get<1>(v.sort(/*stable=*/true, /*dim=*/0, /*descending=*/true));
  auto first = sorted.narrow(0, 0, std::min<int64_t>(k, v.size(0))).contiguous();
  return {first.data_ptr<int64_t>(), first.data_ptr<int64_t>() + first.size(0)};
}

}  // namespace

std::vector<ReportTokens> ReportDecoderImpl::greedy(const torch::Tensor& visual, const GraphMemory* graph,
                                                    int max_len, int64_t bos, int64_t eos) {
  const int64_t b = visual.size(0);
  std::vector<ReportTokens> out(static_cast<std::size_t>(b));
  std::vector<bool> done(static_cast<std::size_t>(b), false);
  for (auto& r : out) r.ids.push_back(bos);
  auto ids = torch::full({b, 1}, bos, torch::kLong);
  for (int step = 0; step < max_len; ++step) {
    auto last = torch::log_softmax(forward(ids, visual, graph).select(1, ids.size(1) - 1), -1);
    std::vector<int64_t> next(static_cast<std::size_t>(b), eos);
    bool all_done = true;
    for (int64_t i = 0; i < b; ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (done[si]) continue;
      next[si] = stable_topk(last[i], 1).front();
      out[si].ids.push_back(next[si]);
      if (next[si] == eos) done[si] = true;
      all_done = all_done && done[si];
    }
    if (all_done) break;
    ids = torch::cat({ids, torch::tensor(next, torch::kLong).unsqueeze(1)}, 1);
  }
  return out;
}

ReportTokens ReportDecoderImpl::beam(const torch::Tensor& visual, const GraphMemory* graph, int max_len,
                                     int width, int64_t bos, int64_t eos) {
  struct Hypothesis {
    std::vector<int64_t> ids;
    double score = 0.0;
    bool done = false;
  };
  std::vector<Hypothesis> beams{{{bos}, 0.0, false}};
  for (int step = 0; step < max_len; ++step) {
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      if (!beams[i].done) alive.push_back(i);
    }
    if (alive.empty()) break;

    const auto a = static_cast<int64_t>(alive.size());
    const auto t = static_cast<int64_t>(beams[alive.front()].ids.size());
    auto ids = torch::empty({a, t}, torch::kLong);
    for (int64_t r = 0; r < a; ++r) {
      const auto& h = beams[alive[static_cast<std::size_t>(r)]].ids;
      ids[r].copy_(torch::tensor(h, torch::kLong));
    }
    GraphMemory expanded;
    const GraphMemory* g = nullptr;
    if (graph != nullptr) {
      expanded = {graph->tokens.expand({a, -1, -1}), graph->valid.expand({a, -1})};
      g = &expanded;
    }
    auto logp = torch::log_softmax(forward(ids, visual.expand({a, -1, -1}), g).select(1, t - 1), -1)
                    .to(torch::kDouble);

    std::vector<Hypothesis> candidates;
    for (const auto& h : beams) {
      if (h.done) candidates.push_back(h);
    }
    for (int64_t r = 0; r < a; ++r) {
      const auto& parent = beams[alive[static_cast<std::size_t>(r)]];
      for (int64_t tok : stable_topk(logp[r], width)) {
        Hypothesis c = parent;
        c.ids.push_back(tok);
        c.score += logp[r][tok].item<double>();
        c.done = tok == eos;
        candidates.push_back(std::move(c));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hypothesis& x, const Hypothesis& y) { return x.score > y.score; });
    candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(width)));
    beams = std::move(candidates);
  }
  const auto best = std::max_element(beams.begin(), beams.end(), [](const Hypothesis& x, const Hypothesis& y) {
    return x.score < y.score;
  });
  return {best->ids};
}

torch::Tensor generation_loss(const torch::Tensor& logits, const torch::Tensor& targets, int64_t pad_id) {
  if (logits.dim() != 3 || targets.dim() != 2 || logits.size(0) != targets.size(0) ||
      logits.size(1) != targets.size(1)) {
    throw LengthMismatch("logits and targets are not aligned");
  }
  const int64_t v = logits.size(2);
  auto flat_logits = logits.reshape({-1, v});
  auto flat_targets = targets.reshape({-1});
  auto keep = flat_targets.ne(pad_id);
  auto nll = -torch::log_softmax(flat_logits, -1).gather(1, flat_targets.unsqueeze(1)).squeeze(1);
  auto count = keep.sum();
  if (count.item<int64_t>() == 0) return torch::zeros({}, logits.options());
  return (nll * keep.to(nll.scalar_type())).sum() / count.to(nll.scalar_type());
}

}  // namespace sgrrg
