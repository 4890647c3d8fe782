// Command-line front end: synth, train, generate, evaluate, ablate, graph.

#include <torch/torch.h>

#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "sgrrg/errors.hpp"
#include "sgrrg/metrics.hpp"
#include "sgrrg/trainer.hpp"

using namespace sgrrg;

namespace {

struct ConfigArgs {
  std::string preset = "toy";
  std::string file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 42;
  bool seed_given = false;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--preset", a.preset, "Base configuration: toy or paper")->check(CLI::IsMember({"toy", "paper"}));
  cmd->add_option("--config", a.file, "Flat key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "Override one key (key=value), repeatable");
}

TrainingConfig resolve_config(const ConfigArgs& a) {
  TrainingConfig cfg = a.preset == "toy" ? TrainingConfig::toy() : TrainingConfig{};
  if (!a.file.empty()) cfg = TrainingConfig::load(a.file, cfg);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed_given) cfg.seed = a.seed;
  cfg.validate();
  return cfg;
}

std::vector<Sample> read_dataset(const std::string& path) {
  auto samples = ingest_jsonl(path);
  if (samples.empty()) throw EmptyCorpus();
  return samples;
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(n, e.what());
    }
  }
  return rows;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Scene-graph aided radiology report generation"};
  app.require_subcommand(1);

  // synth
  SyntheticSpec spec;
  std::size_t synth_n = 1000;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset as JSON lines");
  synth->add_option("--out", synth_out, "Output .jsonl path")->required();
  synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--abnormal-rate", spec.abnormal_rate, "Probability that a mentioned region is abnormal");
  synth->add_option("--mention-rate", spec.mention_rate, "Probability that a region is described");
  synth->add_option("--categories", spec.num_categories, "Number of anatomical regions in use");
  synth->add_option("--canvas", spec.canvas, "Image side in pixels");
  synth->add_option("--patch", spec.patch, "Texture period (match the model patch size)");
  synth->add_option("--channels", spec.channels, "Image channels");
  synth->add_option("--noise", spec.noise, "Pixel noise standard deviation");

  // train
  ConfigArgs train_cfg;
  std::string train_data, train_out, train_resume;
  int min_freq = 3;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--data", train_data, "Training .jsonl")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--resume", train_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--min-freq", min_freq, "Minimum word frequency for the report vocabulary");
  add_config_args(train, train_cfg);
  train->add_option("--seed", train_cfg.seed, "Seed")->each([&](const std::string&) { train_cfg.seed_given = true; });

  // generate / graph
  std::string gen_ckpt, gen_data, gen_out, gen_mode;
  bool emit_graphs = false;
  std::uint64_t gen_seed = 42;
  auto* generate = app.add_subcommand("generate", "Generate reports for a dataset");
  generate->add_option("--ckpt", gen_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--data", gen_data, "Input .jsonl")->required()->check(CLI::ExistingFile);
  generate->add_option("--out", gen_out, "Output .jsonl")->required();
  generate->add_option("--decode", gen_mode, "greedy or beam (default: from the checkpoint)")
      ->check(CLI::IsMember({"greedy", "beam"}));
  generate->add_flag("--emit-graphs", emit_graphs, "Include the inference scene graph of each image");
  generate->add_option("--seed", gen_seed, "Seed");

  std::string graph_ckpt, graph_data, graph_out;
  std::uint64_t graph_seed = 42;
  auto* graph = app.add_subcommand("graph", "Emit inference scene graphs");
  graph->add_option("--ckpt", graph_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  graph->add_option("--data", graph_data, "Input .jsonl")->required()->check(CLI::ExistingFile);
  graph->add_option("--out", graph_out, "Output .jsonl")->required();
  graph->add_option("--seed", graph_seed, "Seed");

  // evaluate
  std::string eval_pred, eval_ref, eval_json, keyword_path;
  bool sentence_bleu = false;
  std::uint64_t eval_seed = 42;
  auto* evaluate = app.add_subcommand("evaluate", "Score generated reports against references");
  evaluate->add_option("--pred", eval_pred, "Predictions .jsonl (image_id, report)")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", eval_ref, "References .jsonl (image_id, report)")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--json", eval_json, "Also write the metrics as JSON here");
  evaluate->add_option("--keywords", keyword_path, "Keyword map for the disease labeler")->check(CLI::ExistingFile);
  evaluate->add_flag("--sentence-bleu", sentence_bleu, "Average sentence-level BLEU instead of corpus BLEU");
  evaluate->add_option("--seed", eval_seed, "Seed");

  // ablate
  ConfigArgs ablate_cfg;
  std::string ablate_train, ablate_test, ablate_seeds = "1,2,3", ablate_json;
  std::vector<std::string> ablate_pool = {"max", "mean"}, ablate_rows;
  auto* ablate = app.add_subcommand("ablate", "Train and score every ablation row");
  ablate->add_option("--train", ablate_train, "Training .jsonl")->required()->check(CLI::ExistingFile);
  ablate->add_option("--test", ablate_test, "Test .jsonl")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seeds");
  ablate->add_option("--pooling", ablate_pool, "Pooling modes")->check(CLI::IsMember({"max", "mean"}));
  ablate->add_option("--rows", ablate_rows, "Subset of rows (e.g. Base SGRRG \"w/o SG\")");
  ablate->add_option("--json", ablate_json, "Also write per-seed metrics as JSON here");
  add_config_args(ablate, ablate_cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      spec.validate();
      const auto samples = generate_dataset(spec, synth_n);
      write_jsonl(synth_out, samples);
      std::cerr << "wrote " << samples.size() << " samples to " << synth_out << "\n";
    } else if (*train) {
      torch::manual_seed(train_cfg.seed);
      const auto data = read_dataset(train_data);
      std::unique_ptr<Trainer> trainer;
      if (!train_resume.empty()) {
        trainer = Trainer::load(train_resume, data);
      } else {
        const auto cfg = resolve_config(train_cfg);
        trainer = std::make_unique<Trainer>(cfg, build_vocab(data, min_freq), data);
      }
      const int every = std::max(1, trainer->config().log_every);
      trainer->train(-1, [&](const StepLog& log) {
        if (log.step % every != 0 && log.step + 1 != trainer->config().steps) return;
        const auto& l = log.losses;
        std::fprintf(stderr, "step %6lld  total %.4f  gen %.4f  rs %.4f  ap %.4f  dr %.4f  con %.4f  lr %.2e\n",
                     static_cast<long long>(log.step), l.total, l.gen, l.rs, l.ap, l.dr, l.con, log.lr);
      });
      trainer->save(train_out);
      std::cerr << "saved " << train_out << " at step " << trainer->current_step() << "\n";
    } else if (*generate || *graph) {
      torch::manual_seed(*generate ? gen_seed : graph_seed);
      const auto& ckpt = *generate ? gen_ckpt : graph_ckpt;
      auto model = load_model(ckpt);
      model->eval();
      const auto data = read_dataset(*generate ? gen_data : graph_data);
      std::ofstream out(*generate ? gen_out : graph_out);
      if (!out) throw Error("cannot write output");
      if (*generate) {
        if (!gen_mode.empty()) {
          auto cfg = model->config();
          cfg.decode_mode = gen_mode == "greedy" ? DecodeMode::kGreedy : DecodeMode::kBeam;
          auto swapped = SgrrgModel(cfg, model->vocab());
          torch::NoGradGuard no_grad;
          auto src = model->named_parameters();
          for (auto& p : swapped->named_parameters()) p.value().copy_(src[p.key()]);
          model = swapped;
          model->eval();
        }
        const auto gens = generate_all(model, data);
        for (std::size_t i = 0; i < data.size(); ++i) {
          nlohmann::json row = {{"image_id", data[i].image_id()}, {"report", gens[i].report}};
          row["graph"] = (emit_graphs && gens[i].graph) ? graph_to_json(*gens[i].graph) : nlohmann::json(nullptr);
          out << row.dump() << "\n";
        }
      } else {
        for (std::size_t start = 0; start < data.size(); start += 32) {
          std::vector<std::size_t> idx;
          for (std::size_t i = start; i < std::min(data.size(), start + 32); ++i) idx.push_back(i);
          const auto batch = make_batch(data, idx, model->vocab(), model->config());
          for (const auto& g : model->predict_graphs(batch)) out << graph_to_json(g).dump() << "\n";
        }
      }
    } else if (*evaluate) {
      torch::manual_seed(eval_seed);
      const auto preds = read_jsonl(eval_pred);
      const auto refs = read_jsonl(eval_ref);
      std::map<std::string, std::string> by_id;
      for (const auto& r : refs) by_id[r.value("image_id", "")] = r.value("report", "");
      std::vector<std::string> cands, targets;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto id = preds[i].value("image_id", "");
        auto it = by_id.find(id);
        if (it == by_id.end()) {
          if (i >= refs.size()) throw LengthMismatch("no reference for prediction '" + id + "'");
          targets.push_back(refs[i].value("report", ""));
        } else {
          targets.push_back(it->second);
        }
        cands.push_back(preds[i].value("report", ""));
      }
      const auto labeler = keyword_path.empty() ? KeywordMap::chexpert() : KeywordMap::load(keyword_path);
      const auto m = evaluate_reports(cands, targets, labeler, sentence_bleu ? BleuMode::kSentenceMean : BleuMode::kCorpus);
      std::cout << m.table("model");
      std::cout << m.to_json().dump(2) << "\n";
      if (!eval_json.empty()) std::ofstream(eval_json) << m.to_json().dump(2) << "\n";
    } else if (*ablate) {
      const auto cfg = resolve_config(ablate_cfg);
      const auto train_data = read_dataset(ablate_train);
      const auto test_data = read_dataset(ablate_test);
      AblationOptions opts;
      opts.seeds = parse_seeds(ablate_seeds);
      opts.poolings.clear();
      for (const auto& p : ablate_pool) opts.poolings.push_back(p == "max" ? Pooling::kMax : Pooling::kMean);
      opts.rows = ablate_rows;
      opts.progress = [](const std::string& line) { std::cerr << line << "\n"; };
      const auto rows = run_ablation_suite(train_data, test_data, cfg, opts);
      std::cout << format_ablation_table(rows);
      if (!ablate_json.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
          nlohmann::json runs = nlohmann::json::array();
          for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
            runs.push_back({{"seed", r.seeds[i]}, {"metrics", r.per_seed[i].to_json()}});
          }
          j.push_back({{"row", r.name},
                       {"pooling", r.pooling == Pooling::kMax ? "max" : "mean"},
                       {"mean", r.mean.to_json()},
                       {"runs", runs}});
        }
        std::ofstream(ablate_json) << j.dump(2) << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
