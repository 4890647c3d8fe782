#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgrrg/checkpoint.hpp"
#include "sgrrg/config.hpp"
#include "sgrrg/data.hpp"
#include "sgrrg/metrics.hpp"
#include "sgrrg/model.hpp"

namespace sgrrg {

struct StepLog {
  std::int64_t step = 0;
  LossBreakdown::Values losses;
  double lr = 0.0;
  double lr_backbone = 0.0;
};

/// Linear warmup then cosine decay to lr_min_ratio * peak over cfg.steps.
double scheduled_lr(const TrainingConfig& cfg, double peak, std::int64_t step);

/// Teacher-forced joint training. Holds a view of `data`; the samples must
/// outlive the trainer.
class Trainer {
 public:
  Trainer(const TrainingConfig& cfg, Vocabularies vocab, std::span<const Sample> data);

  StepLog step();
  /// Runs `steps` more steps (cfg.steps - current when negative).
  std::vector<StepLog> train(std::int64_t steps = -1, const std::function<void(const StepLog&)>& on_step = {});

  Checkpoint checkpoint() const;
  void save(const std::string& path) const;
  /// Restores model, optimizer, step counter and dropout stream.
  void restore(const Checkpoint& ckpt);
  static std::unique_ptr<Trainer> load(const std::string& path, std::span<const Sample> data);

  SgrrgModel& model() { return model_; }
  const TrainingConfig& config() const { return cfg_; }
  std::int64_t current_step() const { return step_; }

 private:
  TrainingConfig cfg_;
  SgrrgModel model_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::span<const Sample> data_;
  BatchSampler sampler_;
  std::int64_t step_ = 0;
  std::string rng_state_;  // dropout stream, swapped into the global generator per step
};

/// Model-only restore (for generation and evaluation).
SgrrgModel load_model(const std::string& path);

/// Generates for every sample in order (model switched to eval mode).
std::vector<Generation> generate_all(SgrrgModel& model, std::span<const Sample> samples, int batch_size = 32);
MetricReport evaluate_model(SgrrgModel& model, std::span<const Sample> samples, const KeywordMap& labeler);

struct AblationVariant {
  std::string name;
  TrainingConfig cfg;
};

/// Base, SGRRG and one row per removed component, for one pooling mode.
std::vector<AblationVariant> ablation_variants(const TrainingConfig& base, Pooling pooling);

struct AblationRow {
  std::string name;
  Pooling pooling = Pooling::kMax;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> per_seed;
  MetricReport mean;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<Pooling> poolings = {Pooling::kMax, Pooling::kMean};
  std::vector<std::string> rows;  // empty = all
  std::function<void(const std::string&)> progress;
  /// Called once per trained (variant, seed), before evaluation.
  std::function<void(const AblationVariant&, const TrainingConfig&, SgrrgModel&)> on_trained;
  /// Scores keyed by run; when set, runs already present are not retrained.
  std::map<std::string, MetricReport>* cache = nullptr;
};

std::vector<AblationRow> run_ablation_suite(std::span<const Sample> train, std::span<const Sample> test,
                                            const TrainingConfig& base, const AblationOptions& options);

/// BL1 BL4 RG AVG.Δ | P R F1 AVG.Δ, deltas relative to the Base row of the same pooling.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace sgrrg
