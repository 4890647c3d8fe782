// Acceptance suite: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "oracle.hpp"
#include "sgrrg/abnormal.hpp"
#include "sgrrg/data.hpp"
#include "sgrrg/graph_builder.hpp"
#include "sgrrg/metrics.hpp"
#include "sgrrg/model.hpp"
#include "sgrrg/sg_encoder.hpp"
#include "sgrrg/trainer.hpp"

using namespace sgrrg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id = 0;
  bool pass = false;
  bool asserted = true;  // false: reported only
  std::string detail;
};

std::vector<Outcome> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail, bool asserted = true) {
  g_results.push_back({id, pass, asserted, detail});
  std::printf("%s  [%d] %s: %s%s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(),
              asserted ? "" : " (stochastic, reported not asserted)");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

oracle::Allowed from_mask(const AdjacencyMask& m) {
  return [m](std::size_t i, std::size_t j) { return m.at(static_cast<int>(i), static_cast<int>(j)); };
}

TrainingConfig toy_double_config() {
  auto c = TrainingConfig::toy();
  c.dropout = 0.0;
  return c;
}

SgEncoder double_encoder(const TrainingConfig& c, uint64_t seed) {
  torch::manual_seed(seed);
  SgEncoder e(c, 64);
  e->to(torch::kDouble);
  e->eval();
  return e;
}

// ---------------------------------------------------------------------------

void masked_attention_oracle() {
  const auto t0 = Clock::now();
  const auto cfg = toy_double_config();
  auto e = double_encoder(cfg, 101);
  std::mt19937_64 rng(1);
  const int64_t d = cfg.hidden_dim;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = oracle::random_graph(rng, 8);
    const auto obj = torch::randn({static_cast<int64_t>(g.objects.size()), d}, torch::kDouble);
    const auto att = torch::randn({static_cast<int64_t>(g.attributes.size()), d}, torch::kDouble);
    const auto seq = e->assemble_node_tokens(obj, att, g);
    const auto out = e->encode_scene_graph(seq);
    const auto expect = oracle::encoder_stack(oracle::to_mat(seq.tokens), e->encoder, from_mask(seq.mask));
    worst = std::max(worst, oracle::max_abs_diff(expect, out));
  }
  const double secs = seconds_since(t0);
  report(1, "masked-attention oracle", worst <= 1e-5 && secs < 5.0,
         fmt("max |diff| %.2e over 100 graphs (<= 8 nodes, width %d), %.2f s", worst, cfg.hidden_dim, secs));
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto cfg = oracle::micro_config();
  std::vector<std::pair<std::string, oracle::GradCheck>> checks;

  {
    auto e = double_encoder(cfg, 13);
    SceneGraph g;
    g.objects = {{3, {0.0, 0.0, 0.5, 0.5}, 0}, {9, {0.5, 0.25, 1.0, 1.0}, 1}};
    g.attributes = {AttributeNode::from_qualified("nlp|yes|abnormal|", 0),
                    AttributeNode::from_qualified("anatomicalfinding|yes|edema|", 1),
                    AttributeNode::from_qualified("nlp|yes|normal|", 0)};
    for (int i = 0; i < 3; ++i) g.attributes[static_cast<std::size_t>(i)].attribute_id = 2 + i;
    const auto obj = torch::randn({2, cfg.hidden_dim}, torch::kDouble).requires_grad_(true);
    const auto att = torch::randn({3, cfg.hidden_dim}, torch::kDouble).requires_grad_(true);
    const auto probe = torch::randn({5, cfg.hidden_dim}, torch::kDouble);
    auto f = [&] { return (e->encode_scene_graph(e->assemble_node_tokens(obj, att, g)) * probe).sum(); };
    auto inputs = e->encoder->parameters();
    inputs.push_back(obj);
    inputs.push_back(att);
    checks.emplace_back("encode_scene_graph", oracle::check_gradients(f, inputs));
  }
  {
    torch::manual_seed(31);
    ReportDecoder dec(cfg, 11);
    dec->to(torch::kDouble);
    dec->eval();
    const auto text = torch::randn({1, 4, cfg.hidden_dim}, torch::kDouble).requires_grad_(true);
    const auto visual = torch::randn({1, 5, cfg.hidden_dim}, torch::kDouble).requires_grad_(true);
    const auto summaries = torch::randn({2, cfg.hidden_dim}, torch::kDouble).requires_grad_(true);
    const auto probe = torch::randn({1, 4, cfg.hidden_dim}, torch::kDouble);
    auto f = [&] {
      const auto mem = dec->make_memory({summaries});
      return (dec->decode_step_stack(text, visual, &mem) * probe).sum();
    };
    std::vector<torch::Tensor> inputs;
    for (auto& layer : dec->layers) {
      for (auto& p : layer->parameters()) inputs.push_back(p);
    }
    inputs.push_back(text);
    inputs.push_back(visual);
    inputs.push_back(summaries);
    checks.emplace_back("decode_step_stack", oracle::check_gradients(f, inputs));
  }
  {
    torch::manual_seed(9);
    const auto g = torch::randn({6, 4}, torch::kDouble).requires_grad_(true);
    const std::vector<int> cats = {1, 1, 1, 2, 2, 2};
    const std::vector<int> y = {1, 0, 1, 0, 0, 1};
    auto f = [&] { return nas_contrastive_loss(g, cats, y, {}); };
    checks.emplace_back("nas_contrastive_loss", oracle::check_gradients(f, {g}));
  }
  {
    auto c = cfg;
    c.memory_slots = 8;
    torch::manual_seed(21);
    RegionSelector s(c);
    s->to(torch::kDouble);
    s->eval();
    const auto v = torch::randn({2, cfg.feature_dim}, torch::kDouble);
    auto f = [&] { return s->memory_query_response(v, 3).pow(2).sum(); };
    std::vector<torch::Tensor> inputs = {s->memory, s->global_proj->weight, s->query_proj->weight,
                                         s->slot_proj->weight, s->response_proj->weight};
    checks.emplace_back("memory_query_response", oracle::check_gradients(f, inputs));
  }
  {
    torch::manual_seed(4);
    const auto w = torch::randn({2, 5, 7}, torch::kDouble).requires_grad_(true);
    const auto targets = torch::tensor(std::vector<int64_t>{3, 1, 4, 2, 0, 5, 6, 1, 0, 0}).view({2, 5});
    auto f = [&] { return generation_loss(w, targets, 0); };
    checks.emplace_back("generation_loss", oracle::check_gradients(f, {w}));
  }

  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : checks) {
    ok = ok && r.rel_error <= 1e-4 && r.analytic_norm > 0.0;
    detail += fmt("%s %.1e, ", name.c_str(), r.rel_error);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  report(2, "gradient suite", ok, detail + fmt("%.1f s", secs));
}

// ---------------------------------------------------------------------------

// Node identity: object category or attribute id.
int node_key(const SceneGraph& g, const TokenRef& t) {
  return t.kind == NodeKind::kObject ? g.objects[static_cast<std::size_t>(t.index)].category_id
                                     : 1000 + g.attributes[static_cast<std::size_t>(t.index)].attribute_id;
}

void permutation_equivariance() {
  const auto cfg = toy_double_config();
  auto e = double_encoder(cfg, 202);
  std::mt19937_64 rng(3);
  const int64_t d = cfg.hidden_dim;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_graph(rng, 8);
    const auto obj = torch::randn({static_cast<int64_t>(g.objects.size()), d}, torch::kDouble);
    const auto att = torch::randn({static_cast<int64_t>(g.attributes.size()), d}, torch::kDouble);

    std::vector<std::size_t> po(g.objects.size()), pa(g.attributes.size());
    std::iota(po.begin(), po.end(), 0);
    std::iota(pa.begin(), pa.end(), 0);
    std::shuffle(po.begin(), po.end(), rng);
    std::shuffle(pa.begin(), pa.end(), rng);
    SceneGraph h;
    std::map<int, int> new_index;
    for (std::size_t i = 0; i < po.size(); ++i) {
      auto o = g.objects[po[i]];
      new_index[o.instance_index] = static_cast<int>(i);
      o.instance_index = static_cast<int>(i);
      h.objects.push_back(o);
    }
    for (auto i : pa) {
      auto a = g.attributes[i];
      a.owner = new_index.at(a.owner);
      h.attributes.push_back(a);
    }
    const auto to_index = [](const std::vector<std::size_t>& p) {
      std::vector<int64_t> v(p.begin(), p.end());
      return torch::tensor(v);
    };
    const auto obj_h = obj.index_select(0, to_index(po));
    const auto att_h = pa.empty() ? att : att.index_select(0, to_index(pa));

    const auto sg = e->assemble_node_tokens(obj, att, g);
    const auto sh = e->assemble_node_tokens(obj_h, att_h, h);
    const auto out_g = e->encode_scene_graph(sg);
    const auto out_h = e->encode_scene_graph(sh);
    std::map<int, int64_t> row_h;
    for (std::size_t r = 0; r < sh.mask.token_order().size(); ++r) {
      row_h[node_key(h, sh.mask.token_order()[r])] = static_cast<int64_t>(r);
    }
    for (std::size_t r = 0; r < sg.mask.token_order().size(); ++r) {
      const auto other = row_h.at(node_key(g, sg.mask.token_order()[r]));
      worst = std::max(worst, (out_g[static_cast<int64_t>(r)] - out_h[other]).abs().max().item<double>());
    }
  }
  report(3, "permutation equivariance", worst <= 1e-5, fmt("max |diff| %.2e over 50 random permutations", worst));
}

// ---------------------------------------------------------------------------

void decoder_causality() {
  const auto cfg = TrainingConfig::toy();
  torch::manual_seed(77);
  const int64_t vocab = 60;
  ReportDecoder dec(cfg, vocab);
  dec->eval();
  torch::NoGradGuard no_grad;
  const auto visual = torch::randn({1, 64, cfg.hidden_dim});
  const auto mem = dec->make_memory({torch::randn({4, cfg.hidden_dim})});
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> tok(4, vocab - 1);
  std::uniform_int_distribution<std::size_t> len(2, 40);
  int exact = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = len(rng);
    std::vector<int64_t> a(n);
    for (auto& x : a) x = tok(rng);
    std::uniform_int_distribution<std::size_t> cut(0, n - 2);
    const std::size_t t = cut(rng);
    auto b = a;
    for (std::size_t i = t + 1; i < n; ++i) b[i] = tok(rng);
    const auto ha = dec->decode_step_stack(dec->embed(torch::tensor(a).view({1, -1})), visual, &mem);
    const auto hb = dec->decode_step_stack(dec->embed(torch::tensor(b).view({1, -1})), visual, &mem);
    const auto k = static_cast<int64_t>(t) + 1;
    if (torch::equal(ha.narrow(1, 0, k), hb.narrow(1, 0, k)) &&
        torch::equal(dec->logits(ha).narrow(1, 0, k), dec->logits(hb).narrow(1, 0, k))) {
      ++exact;
    }
  }
  report(4, "decoder causality", exact == 20,
         fmt("%d/20 random prefixes bitwise unchanged (hidden states and logits, width %d)", exact, cfg.hidden_dim));
}

// ---------------------------------------------------------------------------

void overfit() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.seed = 11;
  const auto data = generate_dataset(spec, 16);
  auto cfg = TrainingConfig::toy();
  cfg.steps = 2000;
  cfg.decode_mode = DecodeMode::kGreedy;
  cfg.seed = 1;
  Trainer trainer(cfg, build_vocab(data, 1), data);
  const auto labeler = KeywordMap::chexpert();
  std::vector<std::string> refs;
  for (const auto& s : data) refs.push_back(join_tokens(tokenize(s.report)));
  int exact = 0;
  double b4 = 0.0;
  while (trainer.current_step() < cfg.steps) {
    trainer.train(100);
    if (trainer.current_step() < 300) continue;
    const auto gens = generate_all(trainer.model(), data);
    std::vector<std::string> cands;
    exact = 0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
      cands.push_back(gens[i].report);
      exact += gens[i].report == refs[i] ? 1 : 0;
    }
    b4 = bleu(cands, refs, 4);
    if (exact == 16 && b4 >= 0.9) break;
  }
  const double secs = seconds_since(t0);
  report(5, "overfit 16 samples", exact == 16 && b4 >= 0.9 && secs < 600.0,
         fmt("%d/16 exact, BLEU-4 %.4f after %lld steps, %.0f s", exact, b4,
             static_cast<long long>(trainer.current_step()), secs));
}

// ---------------------------------------------------------------------------

struct GraphScores {
  double selection_macro_f1 = 0.0;
  double attribute_micro_f1 = 0.0;
};

GraphScores score_graphs(SgrrgModel& model, std::span<const Sample> test, const std::vector<int>& categories) {
  model->eval();
  std::vector<SceneGraph> predicted;
  for (std::size_t start = 0; start < test.size(); start += 32) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(test.size(), start + 32); ++i) idx.push_back(i);
    for (auto& g : model->predict_graphs(make_batch(test, idx, model->vocab(), model->config()))) {
      predicted.push_back(std::move(g));
    }
  }
  std::map<int, std::array<long, 3>> sel;  // tp fp fn
  long atp = 0, afp = 0, afn = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto triples = [](const SceneGraph& g) {
      std::set<int> cats;
      std::set<std::pair<int, std::string>> attrs;
      for (const auto& o : g.objects) cats.insert(o.category_id);
      for (const auto& a : g.attributes) {
        for (const auto& o : g.objects) {
          if (o.instance_index == a.owner) attrs.insert({o.category_id, a.qualified()});
        }
      }
      return std::make_pair(cats, attrs);
    };
    const auto [gc, ga] = triples(test[i].graph);
    const auto [pc, pa] = triples(predicted[i]);
    for (int k : categories) {
      const bool g = gc.count(k) != 0, p = pc.count(k) != 0;
      sel[k][0] += g && p;
      sel[k][1] += p && !g;
      sel[k][2] += g && !p;
    }
    for (const auto& x : pa) (ga.count(x) != 0 ? atp : afp) += 1;
    for (const auto& x : ga) afn += pa.count(x) == 0 ? 1 : 0;
  }
  GraphScores s;
  for (const auto& [k, c] : sel) {
    const double denom = 2.0 * c[0] + c[1] + c[2];
    s.selection_macro_f1 += denom == 0 ? 0.0 : 2.0 * c[0] / denom;
  }
  s.selection_macro_f1 /= static_cast<double>(sel.size());
  s.attribute_micro_f1 = 2.0 * atp / std::max(1.0, 2.0 * atp + afp + afn);
  return s;
}

void directional_runs(std::int64_t steps, const std::vector<std::uint64_t>& seeds) {
  SyntheticSpec train_spec, test_spec;
  train_spec.seed = 1;
  test_spec.seed = 2;
  const auto train = generate_dataset(train_spec, 1000);
  const auto test = generate_dataset(test_spec, 200);

  auto base = TrainingConfig::toy();
  base.steps = static_cast<int>(steps);
  base.decode_mode = DecodeMode::kGreedy;

  std::map<std::string, MetricReport> cache;
  std::optional<GraphScores> learnability;
  AblationOptions options;
  options.seeds = seeds;
  options.poolings = {Pooling::kMax};
  options.rows = {"Base", "SGRRG", "w/o SG", "w/o NAS", "w/o DR"};
  options.cache = &cache;
  options.progress = [](const std::string& line) { std::printf("      %s\n", line.c_str()); std::fflush(stdout); };
  options.on_trained = [&](const AblationVariant& v, const TrainingConfig& cfg, SgrrgModel& model) {
    if (v.name == "SGRRG" && cfg.seed == seeds.front() && !learnability) {
      learnability = score_graphs(model, test, train_spec.categories());
    }
  };
  const auto t0 = Clock::now();
  const auto rows = run_ablation_suite(train, test, base, options);

  if (learnability) {
    report(6, "selector/attribute learnability",
           learnability->selection_macro_f1 >= 0.9 && learnability->attribute_micro_f1 >= 0.85,
           fmt("region-selection macro-F1 %.4f, attribute micro-F1 %.4f (1000 train / 200 test, %lld steps)",
               learnability->selection_macro_f1, learnability->attribute_micro_f1, static_cast<long long>(steps)));
  } else {
    report(6, "selector/attribute learnability", false, "full model was not trained");
  }

  std::map<std::string, const AblationRow*> by_name;
  for (const auto& r : rows) by_name[r.name] = &r;
  const auto& full = by_name.at("SGRRG")->mean;
  const auto& plain = by_name.at("Base")->mean;
  std::vector<std::string> violations;
  for (const char* name : {"w/o SG", "w/o NAS", "w/o DR"}) {
    const auto& m = by_name.at(name)->mean;
    auto check = [&](const char* metric, double f, double x, double b) {
      if (!(f >= x)) violations.push_back(fmt("%s SGRRG %.4f < %s %.4f", metric, f, name, x));
      if (!(x >= b)) violations.push_back(fmt("%s %s %.4f < Base %.4f", metric, name, x, b));
    };
    check("BL-4", full.bleu_4, m.bleu_4, plain.bleu_4);
    check("F1", full.ce_f1, m.ce_f1, plain.ce_f1);
  }
  std::printf("%s", format_ablation_table(rows).c_str());
  for (const auto& r : rows) {
    std::string line = fmt("      %-8s", r.name.c_str());
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      line += fmt("  seed %llu BL-4 %.4f F1 %.4f", static_cast<unsigned long long>(r.seeds[i]), r.per_seed[i].bleu_4,
                  r.per_seed[i].ce_f1);
    }
    std::printf("%s\n", line.c_str());
  }
  std::string detail = fmt("%zu seeds, %lld steps: ", seeds.size(), static_cast<long long>(steps));
  if (violations.empty()) {
    detail += "full >= each removed variant >= Base on mean BLEU-4 and CE-F1";
  } else {
    detail += fmt("%zu violation(s): ", violations.size());
    for (std::size_t i = 0; i < violations.size(); ++i) detail += (i ? "; " : "") + violations[i];
  }
  report(7, "directional ablations", violations.empty(), detail, false);

  AblationOptions pool = options;
  pool.poolings = {Pooling::kMax, Pooling::kMean};
  pool.rows = {"SGRRG"};
  pool.seeds = {seeds.front()};
  pool.on_trained = {};
  const auto pooled = run_ablation_suite(train, test, base, pool);
  std::printf("%s", format_ablation_table(pooled).c_str());
  bool has_max = false, has_mean = false;
  for (const auto& r : pooled) {
    has_max = has_max || (r.pooling == Pooling::kMax && r.per_seed.size() == 1);
    has_mean = has_mean || (r.pooling == Pooling::kMean && r.per_seed.size() == 1);
  }
  report(8, "pooling ablation harness", has_max && has_mean && pooled.size() == 2,
         fmt("max BL-4 %.4f F1 %.4f, mean BL-4 %.4f F1 %.4f (seed %llu); %.0f s for criteria 6-8",
             pooled[0].mean.bleu_4, pooled[0].mean.ce_f1, pooled[1].mean.bleu_4, pooled[1].mean.ce_f1,
             static_cast<unsigned long long>(seeds.front()), seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void loss_arithmetic() {
  const TrainingConfig cfg;
  const double total = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, cfg);

  // Hand-set batch: one category, labels (1, 1, 0).
  const oracle::Mat g = {{1.0, 0.5, -0.2}, {0.8, 0.9, 0.1}, {0.9, 0.3, 0.0}};
  const std::vector<int> y = {1, 1, 0};
  double pull = 0.0, push = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        dot += g[i][k] * g[j][k];
        ni += g[i][k] * g[i][k];
        nj += g[j][k] * g[j][k];
      }
      const double s = dot / std::sqrt(ni * nj);
      if (y[i] == y[j]) {
        pull += 1.0 - s;
      } else {
        push += std::max(0.0, s - 0.4);
      }
    }
  }
  const double expect = (pull + push) / 9.0;
  const auto t = torch::tensor({1.0, 0.5, -0.2, 0.8, 0.9, 0.1, 0.9, 0.3, 0.0}, torch::kDouble).view({3, 3});
  const std::vector<int> cats = {4, 4, 4};
  const double got = nas_contrastive_loss(t, cats, y, {0.4, NasNorm::kBoth}).item<double>();
  report(9, "loss arithmetic", total == 1.7 && std::abs(got - expect) <= 1e-7,
         fmt("total_loss(1,1,1,1,1) = %.17g; contrastive %.10f vs oracle %.10f", total, got, expect));
}

// ---------------------------------------------------------------------------

void metrics_oracle() {
  std::ifstream in(std::string(SGRRG_TEST_DATA_DIR) + "/metric_oracle.json");
  if (!in) {
    report(10, "metrics oracle", false, "metric_oracle.json not found");
    return;
  }
  const auto j = nlohmann::json::parse(in);
  std::vector<std::string> c, r;
  for (const auto& p : j.at("pairs")) {
    c.push_back(p.at("candidate").get<std::string>());
    r.push_back(p.at("reference").get<std::string>());
  }
  double worst = 0.0;
  for (int n = 1; n <= 4; ++n) {
    worst = std::max(worst, std::abs(bleu(c, r, n) - j.at("bleu_" + std::to_string(n)).get<double>()));
    worst = std::max(worst, std::abs(bleu(c, r, n, BleuMode::kSentenceMean) -
                                     j.at("sentence_bleu_" + std::to_string(n)).get<double>()));
  }
  worst = std::max(worst, std::abs(rouge_l(c, r) - j.at("rouge_l").get<double>()));

  std::mt19937 rng(19);
  std::bernoulli_distribution pos(0.3), flip(0.2);
  double ce_worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DiseaseLabels> p(80), q(80);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (int d = 0; d < kNumDiseases; ++d) {
        q[i][d] = pos(rng);
        p[i][d] = flip(rng) ? 1 - q[i][d] : q[i][d];
      }
    }
    double prec = 0, rec = 0, f1 = 0;
    for (int d = 0; d < kNumDiseases; ++d) {
      long cm[2][2] = {{0, 0}, {0, 0}};
      for (std::size_t i = 0; i < p.size(); ++i) ++cm[q[i][d]][p[i][d]];
      const double tp = cm[1][1], fp = cm[0][1], fn = cm[1][0];
      const double pr = tp + fp == 0 ? 0 : tp / (tp + fp);
      const double re = tp + fn == 0 ? 0 : tp / (tp + fn);
      prec += pr;
      rec += re;
      f1 += pr + re == 0 ? 0 : 2 * pr * re / (pr + re);
    }
    const auto ce = clinical_efficacy(p, q);
    ce_worst = std::max({ce_worst, std::abs(ce.precision - prec / kNumDiseases), std::abs(ce.recall - rec / kNumDiseases),
                         std::abs(ce.f1 - f1 / kNumDiseases)});
  }
  report(10, "metrics oracle", worst <= 1e-6 && ce_worst <= 1e-9,
         fmt("BLEU-1..4 / ROUGE-L max |diff| %.2e on 50 pairs; CE P/R/F1 max |diff| %.2e", worst, ce_worst));
}

// ---------------------------------------------------------------------------

void serialization() {
  const auto dir = std::filesystem::temp_directory_path() / "sgrrg_acceptance";
  std::filesystem::create_directories(dir);
  SyntheticSpec spec;
  spec.seed = 23;
  const auto data = generate_dataset(spec, 40);
  const auto jsonl = (dir / "data.jsonl").string();
  write_jsonl(jsonl, data);
  const auto back = ingest_jsonl(jsonl);
  const bool round_trip = back == data;

  auto cfg = TrainingConfig::toy();
  cfg.batch_size = 8;
  cfg.steps = 30;
  cfg.seed = 5;
  const auto vocab = build_vocab(data, 1);
  Trainer a(cfg, vocab, data);
  a.train(5);
  const auto ckpt = (dir / "resume.ckpt").string();
  a.save(ckpt);
  const auto la = a.train(10);
  auto b = Trainer::load(ckpt, data);
  const auto lb = b->train(10);
  bool same_losses = la.size() == lb.size();
  for (std::size_t i = 0; same_losses && i < la.size(); ++i) {
    same_losses = la[i].losses.total == lb[i].losses.total && la[i].losses.gen == lb[i].losses.gen;
  }
  bool same_params = true;
  auto pb = b->model()->named_parameters();
  for (const auto& item : a.model()->named_parameters()) {
    same_params = same_params && torch::equal(item.value(), pb[item.key()]);
  }
  std::filesystem::remove_all(dir);
  report(11, "serialization", round_trip && same_losses && same_params,
         fmt("JSON-lines round trip %s (40 samples with images); resume after 5 steps: 10 losses %s, parameters %s",
             round_trip ? "equal" : "DIFFERENT", same_losses ? "bitwise equal" : "DIFFERENT",
             same_params ? "bitwise equal" : "DIFFERENT"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::int64_t steps = 1500;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<int> only;
  app.add_option("--ablation-steps", steps, "Training steps per run for criteria 6-8");
  app.add_option("--seeds", seeds, "Seeds for the directional ablations")->delimiter(',');
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  torch::set_num_threads(1);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  if (wanted(1)) masked_attention_oracle();
  if (wanted(2)) gradient_suite();
  if (wanted(3)) permutation_equivariance();
  if (wanted(4)) decoder_causality();
  if (wanted(5)) overfit();
  if (wanted(6) || wanted(7) || wanted(8)) directional_runs(steps, seeds);
  if (wanted(9)) loss_arithmetic();
  if (wanted(10)) metrics_oracle();
  if (wanted(11)) serialization();

  int failed = 0, reported = 0;
  for (const auto& r : g_results) {
    if (!r.pass) (r.asserted ? failed : reported) += 1;
  }
  std::printf("%zu criteria run: %d failed, %d stochastic violation(s) reported\n", g_results.size(), failed, reported);
  return failed == 0 ? 0 : 1;
}
