#include "sgrrg/graph_builder.hpp"

#include <algorithm>
#include <cmath>

#include "sgrrg/errors.hpp"

namespace sgrrg {

std::vector<std::uint8_t> threshold(std::span<const double> probs, double cutoff) {
  std::vector<std::uint8_t> out(probs.size());
  std::transform(probs.begin(), probs.end(), out.begin(), [&](double p) { return p > cutoff ? 1 : 0; });
  return out;
}

RegionSelectorImpl::RegionSelectorImpl(const TrainingConfig& cfg)
    : gamma_(cfg.gamma), use_memory_(cfg.mem), memory_dim_(cfg.memory_dim) {
  const int64_t c = cfg.feature_dim;
  const int64_t d = cfg.memory_dim;
  auto plain = [](int64_t in, int64_t out) { return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(false)); };
  // Registered even when the memory path is off.
  global_proj = register_module("global_proj", plain(c, d));
  memory = register_parameter("memory", torch::randn({cfg.memory_slots, d}) / std::sqrt(static_cast<double>(d)));
  query_proj = register_module("query_proj", plain(d, d));
  slot_proj = register_module("slot_proj", plain(d, d));
  response_proj = register_module("response_proj", plain(d, d));
  fuse = register_module("fuse", torch::nn::Linear(2 * d, d));
  classifier = register_module("classifier", torch::nn::Linear(use_memory_ ? d : c, cfg.num_categories));
  drop_ = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor RegionSelectorImpl::project_global(const torch::Tensor& v_g) {
  return global_proj->forward(v_g);
}

torch::Tensor RegionSelectorImpl::similarities(const torch::Tensor& v_g) {
  auto q = query_proj->forward(project_global(v_g));
  auto keys = slot_proj->forward(memory);
  return q.matmul(keys.t()) / std::sqrt(static_cast<double>(memory_dim_));
}

torch::Tensor RegionSelectorImpl::memory_query_response(const torch::Tensor& v_g, int gamma) {
  const int slots = static_cast<int>(memory.size(0));
  if (gamma < 1 || gamma > slots) throw GammaOutOfRange(gamma, slots);
  auto u = similarities(v_g);  // [B, N_p]
  auto order = std::get<1>(u.sort(/*stable=*/true, /*dim=*/1, /*descending=*/true)).narrow(1, 0, gamma);
  auto weights = torch::softmax(u.gather(1, order), 1);           // [B, gamma]
  auto values = response_proj->forward(memory);                  // [N_p, d]
  auto picked = values.index_select(0, order.reshape({-1})).view({order.size(0), gamma, -1});
  return (weights.unsqueeze(2) * picked).sum(1) / static_cast<double>(gamma);
}

torch::Tensor RegionSelectorImpl::fuse_response(const torch::Tensor& v_g_proj, const torch::Tensor& r) {
  return drop_->forward(torch::gelu(fuse->forward(torch::cat({v_g_proj, r}, -1))));
}

torch::Tensor RegionSelectorImpl::logits(const torch::Tensor& v_g) {
  if (!use_memory_) return classifier->forward(v_g);
  auto v_star = fuse_response(project_global(v_g), memory_query_response(v_g, gamma_));
  return classifier->forward(v_star);
}

std::vector<SelectorOutput> RegionSelectorImpl::select_regions(const torch::Tensor& v_star, double alpha) {
  auto rows = v_star.dim() == 1 ? v_star.unsqueeze(0) : v_star;
  auto probs = torch::sigmoid(classifier->forward(rows)).to(torch::kDouble).contiguous();
  std::vector<SelectorOutput> out;
  for (int64_t b = 0; b < probs.size(0); ++b) {
    const double* p = probs[b].data_ptr<double>();
    SelectorOutput s;
    s.probs.assign(p, p + probs.size(1));
    s.selected = threshold(s.probs, alpha);
    out.push_back(std::move(s));
  }
  return out;
}

AttributeHeadsImpl::AttributeHeadsImpl(int64_t dim, const AttributeVocab& vocab) {
  int64_t total = 0;
  for (int k = 0; k < kNumAnatomicalCategories; ++k) {
    offsets_.push_back(total);
    counts_.push_back(vocab.num_category_attributes(k));
    total += counts_.back();
  }
  ff = register_module("ff", torch::nn::Linear(dim, dim));
  head = register_module("head", torch::nn::Linear(dim, std::max<int64_t>(total, 1)));
}

int64_t AttributeHeadsImpl::count(int category) const {
  if (category < 0 || category >= kNumAnatomicalCategories) throw UnknownCategory(category);
  return counts_[static_cast<std::size_t>(category)];
}

int64_t AttributeHeadsImpl::offset(int category) const {
  if (category < 0 || category >= kNumAnatomicalCategories) throw UnknownCategory(category);
  return offsets_[static_cast<std::size_t>(category)];
}

torch::Tensor AttributeHeadsImpl::refine(const torch::Tensor& objects) {
  return torch::gelu(ff->forward(objects));
}

torch::Tensor AttributeHeadsImpl::category_logits(const torch::Tensor& refined, int category) {
  const int64_t n = count(category);
  return head->forward(refined).narrow(-1, offset(category), n);
}

std::vector<std::uint8_t> AttributeHeadsImpl::predict_attributes(const torch::Tensor& object, int category,
                                                                double beta) {
  const int64_t n = count(category);
  if (n == 0) return {};
  auto probs = torch::sigmoid(category_logits(refine(object), category)).to(torch::kDouble).contiguous();
  std::vector<double> p(probs.data_ptr<double>(), probs.data_ptr<double>() + n);
  return threshold(p, beta);
}

torch::Tensor AttributeHeadsImpl::loss(const torch::Tensor& objects, std::span<const int> categories,
                                       const std::vector<std::vector<int>>& positives, bool pos_weighting) {
  if (objects.size(0) != static_cast<int64_t>(categories.size()) || categories.size() != positives.size()) {
    throw LengthMismatch("attribute head inputs are not aligned");
  }
  auto all = head->forward(refine(objects));
  std::vector<torch::Tensor> logits, targets;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const int64_t n = count(categories[i]);
    if (n == 0) continue;
    logits.push_back(all[static_cast<int64_t>(i)].narrow(0, offset(categories[i]), n));
    auto t = torch::zeros({n});
    for (int j : positives[i]) {
      if (j >= 0 && j < n) t[j] = 1.0;
    }
    targets.push_back(t);
  }
  if (logits.empty()) return torch::zeros({}, objects.options());
  auto x = torch::cat(logits);
  auto y = torch::cat(targets).to(x.scalar_type());
  auto opts = torch::nn::functional::BinaryCrossEntropyWithLogitsFuncOptions();
  if (pos_weighting) {
    const double pos = y.sum().item<double>();
    const double neg = static_cast<double>(y.numel()) - pos;
    opts.pos_weight(torch::full({1}, pos > 0 ? neg / pos : 1.0, x.options()));
  }
  return torch::nn::functional::binary_cross_entropy_with_logits(x, y, opts);
}

GraphBuilderImpl::GraphBuilderImpl(const TrainingConfig& cfg, const AttributeVocab& vocab) {
  selector = register_module("selector", RegionSelector(cfg));
  heads = register_module("heads", AttributeHeads(cfg.hidden_dim, vocab));
}

std::vector<Detection> dedupe_detections(std::span<const Detection> detections) {
  std::vector<Detection> best;
  for (const auto& d : detections) {
    if (d.category < 0 || d.category >= kNumAnatomicalCategories) throw UnknownCategory(d.category);
    auto it = std::find_if(best.begin(), best.end(), [&](const Detection& b) { return b.category == d.category; });
    if (it == best.end()) {
      best.push_back(d);
    } else if (d.score > it->score || (d.score == it->score && d.bbox.area() < it->bbox.area())) {
      *it = d;
    }
  }
  std::stable_sort(best.begin(), best.end(),
                   [](const Detection& a, const Detection& b) { return a.category < b.category; });
  return best;
}

SceneGraph GraphBuilderImpl::build_inference_graph(const PatchFeatures& v, std::span<const Detection> detections,
                                                   SgEncoder& encoder, const AttributeVocab& vocab, double alpha,
                                                   double beta, const std::string& image_id) {
  SceneGraph graph;
  graph.image_id = image_id;
  auto one = v.batch() == 1 ? v : v.sample(0);
  auto v_g = global_pool(one);
  torch::Tensor v_star = v_g;
  if (selector->uses_memory()) {
    v_star = selector->fuse_response(selector->project_global(v_g),
                                     selector->memory_query_response(v_g, selector->gamma()));
  }
  const auto gate = selector->select_regions(v_star, alpha).front();

  for (const auto& d : dedupe_detections(detections)) {
    if (d.category >= static_cast<int>(gate.selected.size()) || gate.selected[static_cast<std::size_t>(d.category)] == 0) {
      continue;
    }
    ObjectNode o;
    o.category_id = d.category;
    o.bbox = d.bbox;
    o.score = d.score;
    o.instance_index = static_cast<int>(graph.objects.size());
    graph.objects.push_back(o);
  }
  if (graph.objects.empty()) return graph;

  auto objects = encoder->embed_objects(one, graph, 0);
  for (const auto& o : graph.objects) {
    const auto flags = heads->predict_attributes(objects[o.instance_index], o.category_id, beta);
    const auto& ids = vocab.category_attributes(o.category_id);
    for (std::size_t j = 0; j < flags.size() && j < ids.size(); ++j) {
      if (flags[j] == 0) continue;
      auto a = AttributeNode::from_qualified(vocab.name(ids[j]), o.instance_index);
      a.attribute_id = ids[j];
      graph.attributes.push_back(std::move(a));
    }
  }
  return graph;
}

}  // namespace sgrrg
