#pragma once

// Procedural chest-scene dataset (textured region images, scene graphs,
// templated reports, disease labels), JSON-lines I/O, vocabulary
// construction and a category-collision-biased batch sampler.

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sgrrg/abnormal.hpp"
#include "sgrrg/scene_graph.hpp"
#include "sgrrg/vocab.hpp"

namespace sgrrg {

struct SyntheticSpec {
  int canvas = 32;           // square image side in pixels
  int patch = 4;             // texture period; should match the model's patch size
  int channels = 8;
  int num_categories = 12;   // prefix of synthetic_category_order()
  double abnormal_rate = 0.3;
  double mention_rate = 0.35;
  double device_rate = 0.3;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::uint64_t texture_seed = 7;  // fixes the texture bank independently of `seed`

  void validate() const;
  /// Category ids in use, in layout order.
  std::vector<int> categories() const;
};

/// All 29 categories, most report-relevant first.
const std::vector<int>& synthetic_category_order();

/// Finding phrases the generator may attach to `category`.
const std::vector<std::string>& synthetic_findings(int category);
/// Index into kDiseaseNames for a finding phrase; -1 when unknown.
int finding_disease(const std::string& finding);
/// Categories that may carry a support device.
bool device_region(int category);

struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;  // HWC

  bool empty() const { return data.empty(); }
  torch::Tensor tensor() const;  // [H, W, C] float32 copy
  bool operator==(const Image&) const = default;
};

struct Sample {
  SceneGraph graph;            // ground truth, carries the image id
  std::string report;
  DiseaseLabels labels{};
  std::vector<std::uint8_t> region_flags;  // selector targets, one per category (29)
  std::vector<Detection> detections;       // candidate boxes for inference-time graphs
  Image image;

  const std::string& image_id() const { return graph.image_id; }
  bool operator==(const Sample&) const = default;
};

Sample generate_sample(const SyntheticSpec& spec, std::size_t index);
/// Deterministic in spec.seed; sample i only depends on (seed, i).
std::vector<Sample> generate_dataset(const SyntheticSpec& spec, std::size_t n);

/// Writes one JSON object per line; images go to "<path>.images.bin".
void write_jsonl(const std::string& path, std::span<const Sample> samples);
/// Reads the format written by write_jsonl (images optional). Lines with an
/// empty report are dropped; duplicate instances are collapsed.
/// Throws ParseError / SchemaError with 1-based line numbers.
std::vector<Sample> ingest_jsonl(const std::string& path);

Sample sample_from_json(const nlohmann::json& j, std::size_t line);
nlohmann::json sample_to_json(const Sample& s, std::int64_t image_index);

/// Report vocabulary (words with frequency >= min_freq) and attribute vocabulary
/// from ground-truth graphs. Throws EmptyCorpus.
Vocabularies build_vocab(std::span<const Sample> samples, int min_freq = 3);

/// Shuffles per epoch and fills each batch preferring samples that share one
/// mentioned category with the batch's first sample, so the contrastive loss
/// sees same-category pairs.
class BatchSampler {
 public:
  BatchSampler(std::span<const Sample> samples, int batch_size, std::uint64_t seed);

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch) const;
  /// Batch for a global step, walking epochs in order.
  std::vector<std::size_t> batch_at(std::uint64_t step) const;
  std::size_t batches_per_epoch() const;

 private:
  std::vector<std::vector<int>> categories_;
  int batch_size_;
  std::uint64_t seed_;
  mutable std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  mutable std::vector<std::vector<std::size_t>> cached_;
};

}  // namespace sgrrg
