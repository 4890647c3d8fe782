#include "sgrrg/model.hpp"

#include <cmath>
#include <set>

#include "sgrrg/errors.hpp"

namespace sgrrg {

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices, const Vocabularies& vocab,
                 const TrainingConfig& cfg) {
  if (indices.empty()) throw ShapeMismatch("empty batch");
  Batch b;
  const auto n = static_cast<int64_t>(indices.size());
  std::vector<torch::Tensor> images;
  b.region_targets = torch::zeros({n, cfg.num_categories});
  b.disease_labels = torch::zeros({n, kNumDiseases});
  std::vector<std::vector<int64_t>> seqs;
  std::size_t longest = 0;
  for (int64_t r = 0; r < n; ++r) {
    const Sample& s = samples[indices[static_cast<std::size_t>(r)]];
    if (s.image.empty()) throw ShapeMismatch("sample " + s.image_id() + " has no image");
    images.push_back(s.image.tensor());
    SceneGraph g = s.graph;
    vocab.attributes.assign_ids(g);
    b.graphs.push_back(std::move(g));
    for (int k = 0; k < cfg.num_categories && k < static_cast<int>(s.region_flags.size()); ++k) {
      b.region_targets[r][k] = static_cast<double>(s.region_flags[static_cast<std::size_t>(k)]);
    }
    for (int d = 0; d < kNumDiseases; ++d) b.disease_labels[r][d] = static_cast<double>(s.labels[static_cast<std::size_t>(d)]);
    auto ids = vocab.report.encode(s.report);
    if (ids.size() + 1 > static_cast<std::size_t>(cfg.max_positions)) ids.resize(static_cast<std::size_t>(cfg.max_positions - 1));
    longest = std::max(longest, ids.size() + 1);
    seqs.push_back(std::move(ids));
    b.reports.push_back(s.report);
    b.detections.push_back(s.detections);
  }
  b.images = torch::stack(images);
  const auto t = static_cast<int64_t>(longest);
  b.input_ids = torch::full({n, t}, ReportVocab::kPad, torch::kLong);
  b.target_ids = torch::full({n, t}, ReportVocab::kPad, torch::kLong);
  for (int64_t r = 0; r < n; ++r) {
    const auto& ids = seqs[static_cast<std::size_t>(r)];
    auto in = b.input_ids[r];
    auto out = b.target_ids[r];
    in[0] = ReportVocab::kBos;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      in[static_cast<int64_t>(i) + 1] = ids[i];
      out[static_cast<int64_t>(i)] = ids[i];
    }
    out[static_cast<int64_t>(ids.size())] = ReportVocab::kEos;
  }
  return b;
}

LossBreakdown::Values LossBreakdown::values() const {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  return {v(gen), v(rs), v(ap), v(dr), v(con), v(total)};
}

double total_loss(double gen, double rs, double ap, double dr, double con, const TrainingConfig& cfg) {
  const std::pair<const char*, double> parts[] = {{"gen", gen}, {"rs", rs}, {"ap", ap}, {"dr", dr}, {"con", con}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) throw NonFiniteLoss(name);
  }
  const double terms[] = {gen, cfg.lambda_rs * rs, cfg.delta_ap * ap, cfg.eta_dr * dr, cfg.phi_con * con};
  // Neumaier summation: the result is the correctly rounded sum of the terms.
  double sum = 0.0;
  double carry = 0.0;
  for (double x : terms) {
    const double t = sum + x;
    carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + carry;
}

torch::Tensor total_loss(const torch::Tensor& gen, const torch::Tensor& rs, const torch::Tensor& ap,
                         const torch::Tensor& dr, const torch::Tensor& con, const TrainingConfig& cfg) {
  const std::pair<const char*, const torch::Tensor*> parts[] = {
      {"gen", &gen}, {"rs", &rs}, {"ap", &ap}, {"dr", &dr}, {"con", &con}};
  for (const auto& [name, t] : parts) {
    if (!std::isfinite(t->item<double>())) throw NonFiniteLoss(name);
  }
  return gen + cfg.lambda_rs * rs + cfg.delta_ap * ap + cfg.eta_dr * dr + cfg.phi_con * con;
}

SgrrgModelImpl::SgrrgModelImpl(const TrainingConfig& cfg, Vocabularies vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  backbone = register_module("backbone", VisualBackbone(cfg_));
  graph_builder = register_module("graph_builder", GraphBuilder(cfg_, vocab_.attributes));
  sg_encoder = register_module("sg_encoder", SgEncoder(cfg_, vocab_.attributes.size()));
  sg_decoder = register_module("sg_decoder", ReportDecoder(cfg_, vocab_.report.size()));
  abnormal = register_module("abnormal", DiseaseHead(cfg_.feature_dim, kNumDiseases));
}

std::vector<torch::Tensor> SgrrgModelImpl::backbone_parameters() { return backbone->parameters(); }

std::vector<torch::Tensor> SgrrgModelImpl::other_parameters() {
  std::set<const void*> skip;
  for (const auto& p : backbone->parameters()) skip.insert(p.unsafeGetTensorImpl());
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    if (skip.count(p.unsafeGetTensorImpl()) == 0) out.push_back(p);
  }
  return out;
}

namespace {

/// Encoded node tokens per nonempty graph, given object embeddings for each graph.
std::vector<torch::Tensor> encode_graphs(SgEncoder& encoder, const std::vector<SceneGraph>& graphs,
                                         const std::vector<torch::Tensor>& objects) {
  std::vector<NodeTokenSequence> seqs;
  std::vector<std::size_t> owners;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (graphs[i].empty()) continue;
    seqs.push_back(encoder->assemble_node_tokens(objects[i], encoder->embed_attributes(graphs[i]), graphs[i]));
    owners.push_back(i);
  }
  std::vector<torch::Tensor> out(graphs.size());
  if (seqs.empty()) return out;
  auto enc = encoder->encode_batch(seqs);
  for (std::size_t j = 0; j < owners.size(); ++j) {
    out[owners[j]] = enc.tokens[static_cast<int64_t>(j)].narrow(0, 0, seqs[j].tokens.size(0));
  }
  return out;
}

}  // namespace

std::vector<torch::Tensor> SgrrgModelImpl::graph_memory(const PatchFeatures& v, const std::vector<SceneGraph>& graphs,
                                                        std::vector<torch::Tensor>* summaries) {
  std::vector<torch::Tensor> objects(graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].empty()) objects[i] = sg_encoder->embed_objects(v, graphs[i], static_cast<int64_t>(i));
  }
  auto tokens = encode_graphs(sg_encoder, graphs, objects);
  std::vector<torch::Tensor> memory(graphs.size());
  if (summaries != nullptr) summaries->assign(graphs.size(), {});
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!tokens[i].defined()) continue;
    auto s = summarize_subgraphs(tokens[i], subgraph_token_groups(graphs[i]), cfg_.pooling).rows;
    if (summaries != nullptr) (*summaries)[i] = s;
    memory[i] = cfg_.sg_att ? s : tokens[i];
  }
  return memory;
}

LossBreakdown SgrrgModelImpl::forward_train(const Batch& batch) {
  const auto zero = torch::zeros({});
  LossBreakdown out{zero, zero, zero, zero, zero, {}};

  auto v = backbone->extract_patch_features(batch.images);
  auto visual = backbone->encode_visual(v).tokens;
  auto v_g = global_pool(v);

  if (cfg_.dr) {
    out.dr = disease_recognition_loss(abnormal->forward(v_g), batch.disease_labels);
  }

  GraphMemory memory;
  const GraphMemory* memory_ptr = nullptr;
  if (cfg_.sg) {
    auto targets = batch.region_targets;
    auto sel_logits = graph_builder->selector->logits(v_g);
    auto opts = torch::nn::functional::BinaryCrossEntropyWithLogitsFuncOptions();
    if (cfg_.pos_weighting) {
      const double pos = targets.sum().item<double>();
      const double neg = static_cast<double>(targets.numel()) - pos;
      opts.pos_weight(torch::full({1}, pos > 0 ? neg / pos : 1.0));
    }
    out.rs = torch::nn::functional::binary_cross_entropy_with_logits(sel_logits, targets, opts);

    std::vector<RoiRef> rois;
    std::vector<int> categories;
    std::vector<std::vector<int>> positives;
    std::vector<int64_t> counts;
    for (std::size_t i = 0; i < batch.graphs.size(); ++i) {
      const auto& g = batch.graphs[i];
      counts.push_back(static_cast<int64_t>(g.objects.size()));
      for (const auto& o : g.objects) {
        rois.push_back({static_cast<int64_t>(i), o.bbox});
        categories.push_back(o.category_id);
        std::vector<int> pos;
        for (const auto& a : g.attributes) {
          if (a.owner != o.instance_index) continue;
          const int local = vocab_.attributes.local_index(o.category_id, a.attribute_id);
          if (local >= 0) pos.push_back(local);
        }
        positives.push_back(std::move(pos));
      }
    }

    std::vector<torch::Tensor> per_sample(batch.graphs.size());
    if (!rois.empty()) {
      auto objects = sg_encoder->embed_objects(v, rois);
      out.ap = graph_builder->heads->loss(objects, categories, positives, cfg_.pos_weighting);
      int64_t at = 0;
      std::vector<torch::Tensor> split(batch.graphs.size());
      for (std::size_t i = 0; i < batch.graphs.size(); ++i) {
        if (counts[i] > 0) split[i] = objects.narrow(0, at, counts[i]);
        at += counts[i];
      }
      auto tokens = encode_graphs(sg_encoder, batch.graphs, split);

      std::vector<torch::Tensor> summary_rows;
      std::vector<int> sub_categories, sub_labels;
      for (std::size_t i = 0; i < batch.graphs.size(); ++i) {
        if (!tokens[i].defined()) continue;
        const auto& g = batch.graphs[i];
        auto s = summarize_subgraphs(tokens[i], subgraph_token_groups(g), cfg_.pooling).rows;
        per_sample[i] = cfg_.sg_att ? s : tokens[i];
        summary_rows.push_back(s);
        for (const auto& lbl : subgraph_labels(g)) {
          sub_categories.push_back(g.objects[static_cast<std::size_t>(lbl.object_index)].category_id);
          sub_labels.push_back(lbl.abnormal);
        }
      }
      if (cfg_.nas && !summary_rows.empty()) {
        out.con = nas_contrastive_loss(torch::cat(summary_rows, 0), sub_categories, sub_labels,
                                       {cfg_.margin, cfg_.nas_norm});
      }
    }
    memory = sg_decoder->make_memory(per_sample);
    memory_ptr = &memory;
  }

  auto logits = sg_decoder->forward(batch.input_ids, visual, memory_ptr);
  out.gen = generation_loss(logits, batch.target_ids, ReportVocab::kPad);
  out.total = total_loss(out.gen, out.rs, out.ap, out.dr, out.con, cfg_);
  return out;
}

std::vector<SceneGraph> SgrrgModelImpl::predict_graphs(const Batch& batch) {
  torch::NoGradGuard no_grad;
  auto v = backbone->extract_patch_features(batch.images);
  std::vector<SceneGraph> graphs;
  for (int64_t b = 0; b < v.batch(); ++b) {
    const auto& dets = batch.detections[static_cast<std::size_t>(b)];
    const std::string id = b < static_cast<int64_t>(batch.graphs.size()) ? batch.graphs[static_cast<std::size_t>(b)].image_id
                                                                         : std::string{};
    graphs.push_back(graph_builder->build_inference_graph(v.sample(b), dets, sg_encoder, vocab_.attributes, cfg_.alpha,
                                                          cfg_.beta, id));
  }
  return graphs;
}

std::vector<Generation> SgrrgModelImpl::generate(const Batch& batch) {
  torch::NoGradGuard no_grad;
  auto v = backbone->extract_patch_features(batch.images);
  auto visual = backbone->encode_visual(v).tokens;
  const int64_t n = v.batch();

  std::vector<Generation> out(static_cast<std::size_t>(n));
  GraphMemory memory;
  const GraphMemory* memory_ptr = nullptr;
  if (cfg_.sg) {
    auto graphs = predict_graphs(batch);
    memory = sg_decoder->make_memory(graph_memory(v, graphs));
    memory_ptr = &memory;
    for (int64_t b = 0; b < n; ++b) out[static_cast<std::size_t>(b)].graph = graphs[static_cast<std::size_t>(b)];
  }

  std::vector<ReportTokens> tokens;
  if (cfg_.decode_mode == DecodeMode::kGreedy) {
    tokens = sg_decoder->greedy(visual, memory_ptr, cfg_.max_len, ReportVocab::kBos, ReportVocab::kEos);
  } else {
    for (int64_t b = 0; b < n; ++b) {
      GraphMemory one;
      const GraphMemory* one_ptr = nullptr;
      if (memory_ptr != nullptr) {
        one = {memory.tokens.narrow(0, b, 1), memory.valid.narrow(0, b, 1)};
        one_ptr = &one;
      }
      tokens.push_back(sg_decoder->beam(visual.narrow(0, b, 1), one_ptr, cfg_.max_len, cfg_.beam_width,
                                        ReportVocab::kBos, ReportVocab::kEos));
    }
  }
  for (int64_t b = 0; b < n; ++b) {
    auto& g = out[static_cast<std::size_t>(b)];
    g.ids = tokens[static_cast<std::size_t>(b)].ids;
    g.report = vocab_.report.decode(g.ids);
  }
  return out;
}

}  // namespace sgrrg
