#pragma once

// Dense reference implementations written with plain loops over weights
// copied out of the modules, plus a central-difference gradient checker.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sgrrg/attention.hpp"
#include "sgrrg/config.hpp"
#include "sgrrg/scene_graph.hpp"
#include "sgrrg/sg_decoder.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;
using Allowed = std::function<bool(std::size_t, std::size_t)>;

inline Mat to_mat(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous();
  Mat m(static_cast<std::size_t>(c.size(0)), Vec(static_cast<std::size_t>(c.size(1))));
  const double* p = c.data_ptr<double>();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = p[i * m[i].size() + j];
  }
  return m;
}

inline Vec to_vec(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline double max_abs_diff(const Mat& a, const torch::Tensor& b) {
  const Mat bm = to_mat(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - bm[i][j]));
  }
  return worst;
}

inline Mat linear(const Mat& x, torch::nn::Linear& l) {
  const Mat w = to_mat(l->weight);  // [out, in]
  const Vec b = l->bias.defined() ? to_vec(l->bias) : Vec(w.size(), 0.0);
  Mat y(x.size(), Vec(w.size(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < x[i].size(); ++k) s += w[o][k] * x[i][k];
      y[i][o] = s;
    }
  }
  return y;
}

inline Mat layer_norm(const Mat& x, torch::nn::LayerNorm& ln) {
  const Vec g = to_vec(ln->weight);
  const Vec b = to_vec(ln->bias);
  Mat y = x;
  for (auto& row : y) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) * inv * g[j] + b[j];
  }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c[i].size(); ++j) c[i][j] += b[i][j];
  }
  return c;
}

/// Multi-head attention; excluded (query, key) pairs are dropped from the softmax.
/// With `multiplicative`, excluded pairs keep a zero logit instead.
inline Mat attention(const Mat& query, const Mat& memory, sgrrg::nn::MultiHeadAttention& mha,
                     const Allowed& allowed, bool multiplicative = false) {
  const Mat q = linear(query, mha->q_proj);
  const Mat k = linear(memory, mha->k_proj);
  const Mat v = linear(memory, mha->v_proj);
  const std::size_t d = q.front().size();
  const std::size_t heads = static_cast<std::size_t>(mha->heads());
  const std::size_t hd = d / heads;
  Mat ctx(query.size(), Vec(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      Vec logits(memory.size(), 0.0);
      std::vector<bool> keep(memory.size(), true);
      double top = -INFINITY;
      for (std::size_t j = 0; j < memory.size(); ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q[i][h * hd + e] * k[j][h * hd + e];
        s /= std::sqrt(static_cast<double>(hd));
        if (!allowed(i, j)) {
          if (multiplicative) {
            s = 0.0;
          } else {
            keep[j] = false;
            continue;
          }
        }
        logits[j] = s;
        top = std::max(top, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < memory.size(); ++j) {
        if (keep[j]) z += std::exp(logits[j] - top);
      }
      for (std::size_t j = 0; j < memory.size(); ++j) {
        if (!keep[j]) continue;
        const double p = std::exp(logits[j] - top) / z;
        for (std::size_t e = 0; e < hd; ++e) ctx[i][h * hd + e] += p * v[j][h * hd + e];
      }
    }
  }
  return linear(ctx, mha->out_proj);
}

inline Mat feed_forward(const Mat& x, sgrrg::nn::FeedForward& ff) {
  Mat h = linear(x, ff->fc1);
  for (auto& row : h) {
    for (auto& v : row) v = gelu(v);
  }
  return linear(h, ff->fc2);
}

inline Mat encoder_stack(Mat x, sgrrg::nn::EncoderStack& stack, const Allowed& allowed, bool multiplicative = false) {
  for (auto& layer : stack->layers) {
    const Mat h = layer_norm(x, layer->norm1);
    x = add(x, attention(h, h, layer->attn, allowed, multiplicative));
    x = add(x, feed_forward(layer_norm(x, layer->norm2), layer->ffn));
  }
  return layer_norm(x, stack->final_norm);
}

/// Decoder chain for one sample: causal self, visual cross, optional graph cross, FFN.
inline Mat decoder_stack(Mat x, const Mat& visual, const Mat* graph, sgrrg::ReportDecoder& dec) {
  const Allowed causal = [](std::size_t i, std::size_t j) { return j <= i; };
  const Allowed all = [](std::size_t, std::size_t) { return true; };
  for (auto& layer : dec->layers) {
    Mat h = layer_norm(x, layer->self_norm);
    x = add(x, attention(h, h, layer->self_attn, causal));
    x = add(x, attention(layer_norm(x, layer->visual_norm), visual, layer->visual_attn, all));
    if (graph != nullptr) x = add(x, attention(layer_norm(x, layer->graph_norm), *graph, layer->graph_attn, all));
    x = add(x, feed_forward(layer_norm(x, layer->ffn_norm), layer->ffn));
  }
  return layer_norm(x, dec->final_norm);
}

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
};

/// Central differences on every entry of `inputs` (double tensors with requires_grad).
inline GradCheck check_gradients(const std::function<torch::Tensor()>& f, std::vector<torch::Tensor> inputs,
                                 double step = 1e-6) {
  for (auto& t : inputs) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  f().backward();
  double diff = 0.0, an = 0.0, nn = 0.0;
  for (auto& t : inputs) {
    auto grad = t.grad().defined() ? t.grad().clone() : torch::zeros_like(t);
    auto flat = t.data().view(-1);
    auto gflat = grad.view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      double plus = 0.0, minus = 0.0;
      {
        torch::NoGradGuard guard;
        flat[i] = orig + step;
        plus = f().item<double>();
        flat[i] = orig - step;
        minus = f().item<double>();
        flat[i] = orig;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = gflat[i].item<double>();
      diff += (analytic - numeric) * (analytic - numeric);
      an += analytic * analytic;
      nn += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(an), std::sqrt(nn), 1e-12});
  return {std::sqrt(diff) / scale, std::sqrt(an)};
}

/// Random graph with 1..max_objects objects and at most max_nodes nodes in total.
inline sgrrg::SceneGraph random_graph(std::mt19937_64& rng, int max_nodes = 8, int max_objects = 4) {
  sgrrg::SceneGraph g;
  g.image_id = "random";
  std::uniform_int_distribution<int> n_obj(1, std::min(max_objects, max_nodes));
  const int objects = n_obj(rng);
  std::vector<int> cats(sgrrg::kNumAnatomicalCategories);
  for (int i = 0; i < sgrrg::kNumAnatomicalCategories; ++i) cats[static_cast<std::size_t>(i)] = i;
  std::shuffle(cats.begin(), cats.end(), rng);
  std::sort(cats.begin(), cats.begin() + objects);
  std::uniform_real_distribution<double> unit(0.0, 0.5);
  for (int i = 0; i < objects; ++i) {
    sgrrg::ObjectNode o;
    o.category_id = cats[static_cast<std::size_t>(i)];
    const double x = unit(rng), y = unit(rng);
    o.bbox = {x, y, x + 0.1 + unit(rng), y + 0.1 + unit(rng)};
    o.instance_index = i;
    g.objects.push_back(o);
  }
  std::uniform_int_distribution<int> owner(0, objects - 1);
  std::uniform_int_distribution<int> n_attr(0, max_nodes - objects);
  const int attrs = n_attr(rng);
  const char* findings[] = {"pneumothorax", "edema", "opacity", "nodule"};
  std::uniform_int_distribution<int> pick(0, 3);
  std::bernoulli_distribution yes(0.5);
  for (int i = 0; i < attrs; ++i) {
    const std::string q = std::string("anatomicalfinding|") + (yes(rng) ? "yes" : "no") + "|" + findings[pick(rng)] + "|";
    auto a = sgrrg::AttributeNode::from_qualified(q, owner(rng));
    a.attribute_id = 1 + i;
    g.attributes.push_back(a);
  }
  // Keep attributes grouped by owner, the order the serializer produces.
  std::stable_sort(g.attributes.begin(), g.attributes.end(),
                   [](const auto& a, const auto& b) { return a.owner < b.owner; });
  return g;
}

/// Small double-precision configuration for oracle and gradient checks.
inline sgrrg::TrainingConfig micro_config() {
  auto c = sgrrg::TrainingConfig::toy();
  c.image_size = 8;
  c.patch_size = 2;
  c.image_channels = 2;
  c.feature_dim = 6;
  c.hidden_dim = 8;
  c.heads = 2;
  c.ffn_dim = 12;
  c.vision_layers = c.sg_layers = c.decoder_layers = 2;
  c.memory_slots = 6;
  c.memory_dim = 4;
  c.gamma = 3;
  c.max_positions = 16;
  c.dropout = 0.0;
  return c;
}

}  // namespace oracle
