#include "sgrrg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>

#include "sgrrg/errors.hpp"

namespace sgrrg {

double scheduled_lr(const TrainingConfig& cfg, double peak, std::int64_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  const double span = std::max<std::int64_t>(1, cfg.steps - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return peak * (cfg.lr_min_ratio + (1.0 - cfg.lr_min_ratio) * cosine);
}

Trainer::Trainer(const TrainingConfig& cfg, Vocabularies vocab, std::span<const Sample> data)
    : cfg_(cfg), data_(data), sampler_(data, cfg.batch_size, cfg.seed) {
  cfg_.validate();
  torch::manual_seed(cfg_.seed);
  model_ = SgrrgModel(cfg_, std::move(vocab));
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(model_->backbone_parameters(), std::make_unique<torch::optim::AdamOptions>(cfg_.lr_backbone));
  groups.emplace_back(model_->other_parameters(), std::make_unique<torch::optim::AdamOptions>(cfg_.lr));
  optimizer_ = std::make_unique<torch::optim::Adam>(std::move(groups), torch::optim::AdamOptions(cfg_.lr));
  rng_state_ = generator_state();
}

StepLog Trainer::step() {
  set_generator_state(rng_state_);
  model_->train();
  const auto indices = sampler_.batch_at(static_cast<std::uint64_t>(step_));
  const auto batch = make_batch(data_, indices, model_->vocab(), cfg_);

  StepLog log;
  log.step = step_;
  log.lr_backbone = scheduled_lr(cfg_, cfg_.lr_backbone, step_);
  log.lr = scheduled_lr(cfg_, cfg_.lr, step_);
  auto& param_groups = optimizer_->param_groups();
  static_cast<torch::optim::AdamOptions&>(param_groups[0].options()).lr(log.lr_backbone);
  static_cast<torch::optim::AdamOptions&>(param_groups[1].options()).lr(log.lr);

  optimizer_->zero_grad();
  auto losses = model_->forward_train(batch);
  losses.total.backward();
  if (cfg_.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.grad_clip);
  optimizer_->step();

  log.losses = losses.values();
  rng_state_ = generator_state();
  ++step_;
  return log;
}

std::vector<StepLog> Trainer::train(std::int64_t steps, const std::function<void(const StepLog&)>& on_step) {
  if (steps < 0) steps = std::max<std::int64_t>(0, cfg_.steps - step_);
  std::vector<StepLog> logs;
  logs.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t i = 0; i < steps; ++i) {
    logs.push_back(step());
    if (on_step) on_step(logs.back());
  }
  return logs;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.put("config", cfg_.to_kv());
  ckpt.put("vocab", model_->vocab().to_json().dump());
  ckpt.put("backbone", serialize_module(*model_->backbone));
  ckpt.put("graph_builder", serialize_module(*model_->graph_builder));
  ckpt.put("sg_encoder", serialize_module(*model_->sg_encoder));
  ckpt.put("sg_decoder", serialize_module(*model_->sg_decoder));
  ckpt.put("abnormal", serialize_module(*model_->abnormal));
  std::ostringstream opt;
  torch::save(*optimizer_, opt);
  ckpt.put("optimizer", opt.str());
  std::string state(sizeof(std::int64_t), '\0');
  std::memcpy(state.data(), &step_, sizeof step_);
  ckpt.put("state", state + rng_state_);
  return ckpt;
}

void Trainer::save(const std::string& path) const { checkpoint().write(path); }

namespace {

void restore_modules(SgrrgModel& model, const Checkpoint& ckpt) {
  deserialize_module(*model->backbone, ckpt.get("backbone"));
  deserialize_module(*model->graph_builder, ckpt.get("graph_builder"));
  deserialize_module(*model->sg_encoder, ckpt.get("sg_encoder"));
  deserialize_module(*model->sg_decoder, ckpt.get("sg_decoder"));
  deserialize_module(*model->abnormal, ckpt.get("abnormal"));
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
  restore_modules(model_, ckpt);
  std::istringstream opt(ckpt.get("optimizer"));
  torch::load(*optimizer_, opt);
  const auto& state = ckpt.get("state");
  if (state.size() < sizeof(std::int64_t)) throw Error("checkpoint state segment is truncated");
  std::memcpy(&step_, state.data(), sizeof step_);
  rng_state_ = state.substr(sizeof(std::int64_t));
}

std::unique_ptr<Trainer> Trainer::load(const std::string& path, std::span<const Sample> data) {
  const auto ckpt = Checkpoint::read(path);
  const auto cfg = TrainingConfig::from_kv(ckpt.get("config"));
  auto vocab = Vocabularies::from_json(nlohmann::json::parse(ckpt.get("vocab")));
  auto trainer = std::make_unique<Trainer>(cfg, std::move(vocab), data);
  trainer->restore(ckpt);
  return trainer;
}

SgrrgModel load_model(const std::string& path) {
  const auto ckpt = Checkpoint::read(path);
  const auto cfg = TrainingConfig::from_kv(ckpt.get("config"));
  SgrrgModel model(cfg, Vocabularies::from_json(nlohmann::json::parse(ckpt.get("vocab"))));
  restore_modules(model, ckpt);
  return model;
}

std::vector<Generation> generate_all(SgrrgModel& model, std::span<const Sample> samples, int batch_size) {
  model->eval();
  std::vector<Generation> out;
  const auto b = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + b); ++i) idx.push_back(i);
    auto batch = make_batch(samples, idx, model->vocab(), model->config());
    for (auto& g : model->generate(batch)) out.push_back(std::move(g));
  }
  return out;
}

MetricReport evaluate_model(SgrrgModel& model, std::span<const Sample> samples, const KeywordMap& labeler) {
  const auto gens = generate_all(model, samples);
  std::vector<std::string> cands, refs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    cands.push_back(gens[i].report);
    refs.push_back(join_tokens(tokenize(samples[i].report)));
  }
  return evaluate_reports(cands, refs, labeler);
}

std::vector<AblationVariant> ablation_variants(const TrainingConfig& base, Pooling pooling) {
  TrainingConfig full = base;
  full.pooling = pooling;
  full.sg = full.sg_att = full.ae = full.mem = full.nas = full.dr = true;
  auto with = [&](auto edit) {
    TrainingConfig c = full;
    edit(c);
    return c;
  };
  return {
      {"Base", with([](TrainingConfig& c) { c.sg = false; c.dr = false; })},
      {"SGRRG", full},
      {"w/o SG", with([](TrainingConfig& c) { c.sg = false; })},
      {"w/o SgAtt", with([](TrainingConfig& c) { c.sg_att = false; })},
      {"w/o AE", with([](TrainingConfig& c) { c.ae = false; })},
      {"w/o MEM", with([](TrainingConfig& c) { c.mem = false; })},
      {"w/o NAS", with([](TrainingConfig& c) { c.nas = false; })},
      {"w/o DR", with([](TrainingConfig& c) { c.dr = false; })},
  };
}

namespace {

MetricReport mean_report(const std::vector<MetricReport>& runs) {
  MetricReport m;
  if (runs.empty()) return m;
  for (const auto& r : runs) {
    m.bleu_1 += r.bleu_1;
    m.bleu_2 += r.bleu_2;
    m.bleu_3 += r.bleu_3;
    m.bleu_4 += r.bleu_4;
    m.rouge_l += r.rouge_l;
    m.ce_precision += r.ce_precision;
    m.ce_recall += r.ce_recall;
    m.ce_f1 += r.ce_f1;
    m.avg_report_length += r.avg_report_length;
  }
  const double n = static_cast<double>(runs.size());
  for (double* v : {&m.bleu_1, &m.bleu_2, &m.bleu_3, &m.bleu_4, &m.rouge_l, &m.ce_precision, &m.ce_recall, &m.ce_f1,
                    &m.avg_report_length}) {
    *v /= n;
  }
  return m;
}

/// Configs that differ only in a setting their enabled paths never read train identically.
std::string run_key(TrainingConfig cfg) {
  if (!cfg.sg) {
    cfg.pooling = Pooling::kMax;
    cfg.sg_att = cfg.ae = cfg.mem = cfg.nas = true;
  }
  return cfg.to_kv();
}

}  // namespace

std::vector<AblationRow> run_ablation_suite(std::span<const Sample> train, std::span<const Sample> test,
                                            const TrainingConfig& base, const AblationOptions& options) {
  const auto vocab = build_vocab(train);
  const auto labeler = KeywordMap::chexpert();
  std::map<std::string, MetricReport> local;
  auto& cache = options.cache != nullptr ? *options.cache : local;
  std::vector<AblationRow> rows;
  for (Pooling pooling : options.poolings) {
    for (auto& variant : ablation_variants(base, pooling)) {
      if (!options.rows.empty() &&
          std::find(options.rows.begin(), options.rows.end(), variant.name) == options.rows.end()) {
        continue;
      }
      AblationRow row;
      row.name = variant.name;
      row.pooling = pooling;
      for (auto seed : options.seeds) {
        TrainingConfig cfg = variant.cfg;
        cfg.seed = seed;
        const auto key = run_key(cfg);
        auto it = cache.find(key);
        if (it == cache.end()) {
          Trainer trainer(cfg, vocab, train);
          trainer.train();
          if (options.on_trained) options.on_trained(variant, cfg, trainer.model());
          it = cache.emplace(key, evaluate_model(trainer.model(), test, labeler)).first;
        }
        if (options.progress) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%-10s %-4s seed %llu  BL-4 %.4f  F1 %.4f", variant.name.c_str(),
                        pooling == Pooling::kMax ? "max" : "mean", static_cast<unsigned long long>(seed),
                        it->second.bleu_4, it->second.ce_f1);
          options.progress(buf);
        }
        row.seeds.push_back(seed);
        row.per_seed.push_back(it->second);
      }
      row.mean = mean_report(row.per_seed);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  auto rel = [](double x, double base) { return base == 0.0 ? 0.0 : 100.0 * (x - base) / base; };
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %7s %7s %7s %8s %7s %7s %7s %8s\n", "Model", "BL1", "BL4", "RG", "AVG.D",
                "P", "R", "F1", "AVG.D");
  std::string header = buf;
  // Substituted after formatting: printf counts bytes, the delta sign is two.
  for (std::size_t pos; (pos = header.find("AVG.D")) != std::string::npos;) header.replace(pos, 5, "AVG.Δ");
  out += header;
  for (const auto& row : rows) {
    const AblationRow* base = nullptr;
    for (const auto& r : rows) {
      if (r.name == "Base" && r.pooling == row.pooling) base = &r;
    }
    const auto& m = row.mean;
    std::string nlg = "-", ce = "-";
    if (base != nullptr) {
      const auto& b = base->mean;
      const double d_nlg = (rel(m.bleu_1, b.bleu_1) + rel(m.bleu_4, b.bleu_4) + rel(m.rouge_l, b.rouge_l)) / 3.0;
      const double d_ce = (rel(m.ce_precision, b.ce_precision) + rel(m.ce_recall, b.ce_recall) + rel(m.ce_f1, b.ce_f1)) / 3.0;
      char tmp[32];
      std::snprintf(tmp, sizeof tmp, "%+.1f%%", d_nlg);
      nlg = tmp;
      std::snprintf(tmp, sizeof tmp, "%+.1f%%", d_ce);
      ce = tmp;
    }
    const std::string label = row.name + (row.pooling == Pooling::kMax ? " (max)" : " (mean)");
    std::snprintf(buf, sizeof buf, "%-16s %7.4f %7.4f %7.4f %8s %7.4f %7.4f %7.4f %8s\n", label.c_str(), m.bleu_1,
                  m.bleu_4, m.rouge_l, nlg.c_str(), m.ce_precision, m.ce_recall, m.ce_f1, ce.c_str());
    out += buf;
  }
  return out;
}

}  // namespace sgrrg
