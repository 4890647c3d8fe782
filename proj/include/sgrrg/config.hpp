#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sgrrg {

enum class MaskMode { kAdditive, kMultiplicative };
enum class Pooling { kMax, kMean };
enum class NasNorm { kBoth, kFirst };
enum class DecodeMode { kGreedy, kBeam };

/// Every knob of the model and its training run. Keys in the flat config file
/// are the field names below; enums use their lowercase names.
struct TrainingConfig {
  // Objective weights.
  double lambda_rs = 0.25;
  double delta_ap = 0.1;
  double eta_dr = 0.25;
  double phi_con = 0.1;

  // Graph construction.
  double alpha = 0.5;
  double beta = 0.5;
  int gamma = 16;
  int memory_slots = 512;
  int memory_dim = 512;

  // Normal-abnormal segregation.
  double margin = 0.4;
  NasNorm nas_norm = NasNorm::kBoth;

  // Architecture.
  int image_channels = 3;
  int image_size = 224;  // square input side; sizes the visual positional table
  int patch_size = 4;
  int feature_dim = 1024;  // C
  int hidden_dim = 512;    // D
  int vision_layers = 3;
  int sg_layers = 3;
  int decoder_layers = 3;
  int heads = 8;
  int ffn_dim = 2048;
  double dropout = 0.1;
  int max_positions = 160;
  int num_categories = 29;
  int num_diseases = 14;
  bool vision_pos_emb = true;
  MaskMode mask_mode = MaskMode::kAdditive;
  Pooling pooling = Pooling::kMax;

  // Optimization.
  double lr = 1e-4;
  double lr_backbone = 5e-5;
  double lr_min_ratio = 0.01;  // cosine floor as a fraction of the peak rate
  int warmup_steps = 0;
  double grad_clip = 1.0;
  int batch_size = 16;
  int steps = 2000;
  std::uint64_t seed = 42;
  bool pos_weighting = false;
  int log_every = 50;

  // Ablations: each flag enables its component.
  bool sg = true;
  bool sg_att = true;
  bool ae = true;
  bool mem = true;
  bool nas = true;
  bool dr = true;

  // Decoding.
  DecodeMode decode_mode = DecodeMode::kBeam;
  int beam_width = 3;
  int max_len = 120;

  /// Desk-scale preset: 2-layer stacks at width 128.
  static TrainingConfig toy();

  /// Validates invariants; throws Error.
  void validate() const;

  /// Sets one key from its string form; throws Error for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string to_kv() const;
  static TrainingConfig from_kv(const std::string& text);
  static TrainingConfig from_kv(const std::string& text, TrainingConfig base);
  static TrainingConfig load(const std::string& path);
  static TrainingConfig load(const std::string& path, TrainingConfig base);

  bool operator==(const TrainingConfig&) const = default;
};

}  // namespace sgrrg
