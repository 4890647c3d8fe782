#include "sgrrg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "sgrrg/errors.hpp"

namespace sgrrg {

namespace {

constexpr char kImageMagic[8] = {'S', 'G', 'I', 'M', 'G', '0', '0', '1'};

std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (auto k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

/// Unit-RMS periodic tile, [patch * patch * channels].
std::vector<float> make_tile(std::uint64_t texture_seed, int category, int slot, int patch, int channels) {
  auto rng = keyed_rng({texture_seed, static_cast<std::uint64_t>(category), static_cast<std::uint64_t>(slot)});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(patch * patch * channels));
  double ss = 0.0;
  for (auto& x : t) {
    x = normal(rng);
    ss += x * x;
  }
  const double scale = 1.0 / std::sqrt(ss / static_cast<double>(t.size()));
  std::vector<float> out(t.size());
  std::transform(t.begin(), t.end(), out.begin(), [&](double x) { return static_cast<float>(x * scale); });
  return out;
}

/// Qualified attribute strings a category can carry, in a fixed slot order.
std::vector<std::string> attribute_catalogue(int category) {
  std::vector<std::string> out = {"nlp|yes|normal|", "nlp|yes|abnormal|"};
  for (const auto& f : synthetic_findings(category)) {
    out.push_back("anatomicalfinding|yes|" + f + "|");
    out.push_back("anatomicalfinding|no|" + f + "|");
  }
  if (device_region(category)) out.push_back("devices|yes|support device|");
  return out;
}

BBox layout_box(int slot, int count, std::mt19937_64& rng) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
  const int rows = (count + cols - 1) / cols;
  const double w = 1.0 / cols;
  const double h = 1.0 / rows;
  const double x0 = (slot % cols) * w;
  const double y0 = (slot / cols) * h;
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  auto clip = [](double v) { return std::clamp(v, 0.0, 1.0); };
  BBox b{clip(x0 - 0.2 * w + jitter(rng)), clip(y0 - 0.2 * h + jitter(rng)), clip(x0 + 1.2 * w + jitter(rng)),
         clip(y0 + 1.2 * h + jitter(rng))};
  return b;
}

void paint(Image& img, const BBox& box, const std::vector<float>& tile, int patch) {
  for (int y = 0; y < img.height; ++y) {
    const double cy = (y + 0.5) / img.height;
    if (cy < box.y_min || cy > box.y_max) continue;
    for (int x = 0; x < img.width; ++x) {
      const double cx = (x + 0.5) / img.width;
      if (cx < box.x_min || cx > box.x_max) continue;
      float* px = &img.data[static_cast<std::size_t>((y * img.width + x) * img.channels)];
      const float* t = &tile[static_cast<std::size_t>(((y % patch) * patch + (x % patch)) * img.channels)];
      for (int c = 0; c < img.channels; ++c) px[c] += t[c];
    }
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (canvas < 1 || patch < 1 || canvas % patch != 0) throw Error("canvas must be a positive multiple of patch");
  if (channels < 1) throw Error("channels must be positive");
  if (num_categories < 1 || num_categories > kNumAnatomicalCategories) {
    throw Error("num_categories must lie in [1, 29]");
  }
  auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!unit(abnormal_rate) || !unit(mention_rate) || !unit(device_rate)) throw Error("rates must lie in [0, 1]");
  if (noise < 0.0) throw Error("noise must be non-negative");
}

const std::vector<int>& synthetic_category_order() {
  static const std::vector<int> order = [] {
    std::vector<int> o = {0, 8, 22, 16, 6, 14, 28, 17, 4, 12, 2, 10};
    for (int k = 0; k < kNumAnatomicalCategories; ++k) {
      if (std::find(o.begin(), o.end(), k) == o.end()) o.push_back(k);
    }
    return o;
  }();
  return order;
}

std::vector<int> SyntheticSpec::categories() const {
  const auto& order = synthetic_category_order();
  return {order.begin(), order.begin() + std::clamp(num_categories, 0, kNumAnatomicalCategories)};
}

const std::vector<std::string>& synthetic_findings(int category) {
  static const std::vector<std::vector<std::string>> table = [] {
    const std::vector<std::string> lung = {"pneumothorax", "edema", "consolidation"};
    const std::vector<std::string> upper = {"nodule", "opacity", "pneumothorax"};
    const std::vector<std::string> mid = {"consolidation", "pneumonia", "opacity"};
    const std::vector<std::string> lower = {"atelectasis", "consolidation", "pneumonia"};
    const std::vector<std::string> hilar = {"opacity", "nodule", "edema"};
    const std::vector<std::string> angle = {"pleural effusion", "blunting", "pneumothorax"};
    const std::vector<std::string> diaphragm = {"atelectasis", "pleural effusion", "opacity"};
    const std::vector<std::string> bone = {"fracture", "lesion", "mass"};
    const std::vector<std::string> mediastinal = {"enlarged cardiomediastinum", "mass", "opacity"};
    const std::vector<std::string> vascular = {"opacity", "mass", "nodule"};
    const std::vector<std::string> cardiac = {"cardiomegaly", "edema", "enlarged cardiomediastinum"};
    return std::vector<std::vector<std::string>>{
        lung,  upper, mid,   lower, hilar, upper,       angle,       diaphragm,   lung,     upper,
        mid,   lower, hilar, upper, angle, diaphragm,   vascular,    bone,        bone,     mediastinal,
        mediastinal, vascular, cardiac, vascular, vascular, vascular, vascular, bone, mediastinal};
  }();
  if (category < 0 || category >= kNumAnatomicalCategories) throw UnknownCategory(category);
  return table[static_cast<std::size_t>(category)];
}

int finding_disease(const std::string& finding) {
  static const std::map<std::string, int> table = {
      {"enlarged cardiomediastinum", 1}, {"cardiomegaly", 2}, {"opacity", 3},      {"nodule", 4},
      {"mass", 4},                       {"lesion", 4},       {"edema", 5},        {"consolidation", 6},
      {"pneumonia", 7},                  {"atelectasis", 8},  {"pneumothorax", 9}, {"pleural effusion", 10},
      {"blunting", 11},                  {"fracture", 12},
  };
  auto it = table.find(finding);
  return it == table.end() ? -1 : it->second;
}

bool device_region(int category) {
  return category == 16 || category == 21 || category == 23 || category == 24 || category == 25;
}

torch::Tensor Image::tensor() const {
  if (data.empty()) return torch::zeros({height, width, channels});
  return torch::from_blob(const_cast<float*>(data.data()), {height, width, channels}, torch::kFloat32).clone();
}

Sample generate_sample(const SyntheticSpec& spec, std::size_t index) {
  auto rng = keyed_rng({spec.seed, static_cast<std::uint64_t>(index)});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto cats = spec.categories();
  const int count = static_cast<int>(cats.size());

  Sample s;
  s.graph.image_id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(index);
  s.region_flags.assign(kNumAnatomicalCategories, 0);

  std::vector<BBox> boxes(static_cast<std::size_t>(count));
  std::vector<std::uint8_t> mentioned(static_cast<std::size_t>(count), 0);
  for (int slot = 0; slot < count; ++slot) {
    boxes[static_cast<std::size_t>(slot)] = layout_box(slot, count, rng);
    mentioned[static_cast<std::size_t>(slot)] = unit(rng) < spec.mention_rate ? 1 : 0;
  }
  if (std::none_of(mentioned.begin(), mentioned.end(), [](auto m) { return m != 0; })) {
    mentioned[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, count - 1)(rng))] = 1;
  }

  // Category-id order keeps objects, sentences and instance indices aligned.
  std::vector<int> slots(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) slots[static_cast<std::size_t>(i)] = i;
  std::sort(slots.begin(), slots.end(), [&](int a, int b) {
    return cats[static_cast<std::size_t>(a)] < cats[static_cast<std::size_t>(b)];
  });

  Image img{spec.canvas, spec.canvas, spec.channels,
            std::vector<float>(static_cast<std::size_t>(spec.canvas * spec.canvas * spec.channels), 0.0f)};
  std::vector<std::string> sentences;
  bool any_pathology = false;
  for (int slot : slots) {
    const int k = cats[static_cast<std::size_t>(slot)];
    const BBox& box = boxes[static_cast<std::size_t>(slot)];
    s.detections.push_back({k, box, 1.0});
    if (mentioned[static_cast<std::size_t>(slot)] == 0) continue;

    s.region_flags[static_cast<std::size_t>(k)] = 1;
    ObjectNode obj;
    obj.category_id = k;
    obj.bbox = box;
    obj.instance_index = static_cast<int>(s.graph.objects.size());
    s.graph.objects.push_back(obj);

    const auto& findings = synthetic_findings(k);
    const bool abnormal = unit(rng) < spec.abnormal_rate;
    const bool device = device_region(k) && unit(rng) < spec.device_rate;
    std::vector<std::string> attrs;
    std::vector<std::string> picked;
    if (abnormal) {
      attrs.push_back("nlp|yes|abnormal|");
      const int n = 1 + std::uniform_int_distribution<int>(0, 1)(rng);
      std::vector<std::size_t> idx(findings.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(n));
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) {
        picked.push_back(findings[i]);
        attrs.push_back("anatomicalfinding|yes|" + findings[i] + "|");
        s.labels[static_cast<std::size_t>(finding_disease(findings[i]))] = 1;
        any_pathology = true;
      }
    } else {
      attrs.push_back("nlp|yes|normal|");
      const auto& f = findings[static_cast<std::size_t>(
          std::uniform_int_distribution<int>(0, static_cast<int>(findings.size()) - 1)(rng))];
      picked.push_back(f);
      attrs.push_back("anatomicalfinding|no|" + f + "|");
    }
    if (device) {
      attrs.push_back("devices|yes|support device|");
      s.labels[13] = 1;
    }

    const auto catalogue = attribute_catalogue(k);
    paint(img, box, make_tile(spec.texture_seed, k, -1, spec.patch, spec.channels), spec.patch);
    for (const auto& a : attrs) {
      s.graph.attributes.push_back(AttributeNode::from_qualified(a, obj.instance_index));
      const auto at = std::find(catalogue.begin(), catalogue.end(), a) - catalogue.begin();
      paint(img, box, make_tile(spec.texture_seed, k, static_cast<int>(at), spec.patch, spec.channels), spec.patch);
    }

    std::string sentence = "the " + std::string(kAnatomyNames[static_cast<std::size_t>(k)]);
    if (device) sentence += " has a support device and";
    if (abnormal) {
      sentence += " shows " + picked[0];
      if (picked.size() > 1) sentence += " and " + picked[1];
    } else {
      sentence += " is clear without " + picked[0];
    }
    sentences.push_back(sentence + " .");
  }
  s.labels[0] = any_pathology ? 0 : 1;

  std::normal_distribution<double> noise(0.0, spec.noise);
  if (spec.noise > 0.0) {
    for (auto& v : img.data) v += static_cast<float>(noise(rng));
  }
  s.image = std::move(img);

  for (const auto& sent : sentences) {
    if (!s.report.empty()) s.report.push_back(' ');
    s.report += sent;
  }
  return s;
}

std::vector<Sample> generate_dataset(const SyntheticSpec& spec, std::size_t n) {
  spec.validate();
  if (n < 1) throw Error("dataset size must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

nlohmann::json sample_to_json(const Sample& s, std::int64_t image_index) {
  auto j = graph_to_json(s.graph);
  j["report"] = s.report;
  j["labels"] = s.labels;
  j["region_flags"] = s.region_flags;
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : s.detections) {
    dets.push_back({{"category", d.category},
                    {"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
                    {"score", d.score}});
  }
  j["detections"] = dets;
  if (image_index >= 0) j["image_index"] = image_index;
  return j;
}

Sample sample_from_json(const nlohmann::json& j, std::size_t line) {
  Sample s;
  s.graph = dedupe_instances(graph_from_json(j, line));
  if (!j.contains("report") || !j["report"].is_string()) throw SchemaError(line, "report", "missing or not a string");
  s.report = j["report"].get<std::string>();

  if (j.contains("labels")) {
    const auto& l = j["labels"];
    if (!l.is_array() || l.size() != kNumDiseases) throw SchemaError(line, "labels", "expected 14 entries");
    for (std::size_t i = 0; i < kNumDiseases; ++i) {
      if (!l[i].is_number_integer() || (l[i].get<int>() != 0 && l[i].get<int>() != 1)) {
        throw SchemaError(line, "labels", "entries must be 0 or 1");
      }
      s.labels[i] = l[i].get<int>();
    }
  } else {
    s.labels = rule_based_labeler(s.report, KeywordMap::chexpert());
  }

  s.region_flags.assign(kNumAnatomicalCategories, 0);
  if (j.contains("region_flags")) {
    const auto& f = j["region_flags"];
    if (!f.is_array() || f.size() != kNumAnatomicalCategories) {
      throw SchemaError(line, "region_flags", "expected 29 entries");
    }
    for (std::size_t i = 0; i < f.size(); ++i) s.region_flags[i] = f[i].get<int>() != 0 ? 1 : 0;
  } else {
    for (const auto& o : s.graph.objects) s.region_flags[static_cast<std::size_t>(o.category_id)] = 1;
  }

  if (j.contains("detections")) {
    if (!j["detections"].is_array()) throw SchemaError(line, "detections", "not an array");
    for (const auto& d : j["detections"]) {
      if (!d.is_object() || !d.contains("category") || !d["category"].is_number_integer() || !d.contains("bbox") ||
          !d["bbox"].is_array() || d["bbox"].size() != 4) {
        throw SchemaError(line, "detections", "expected {category, bbox[4]}");
      }
      Detection det;
      det.category = d["category"].get<int>();
      if (det.category < 0 || det.category >= kNumAnatomicalCategories) {
        throw SchemaError(line, "detections", "category outside [0, 29)");
      }
      const auto& b = d["bbox"];
      det.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      if (!det.bbox.well_formed()) throw SchemaError(line, "detections", "degenerate bbox");
      det.score = d.value("score", 1.0);
      s.detections.push_back(det);
    }
  } else {
    for (const auto& o : s.graph.objects) s.detections.push_back({o.category_id, o.bbox, o.score});
  }
  return s;
}

void write_jsonl(const std::string& path, std::span<const Sample> samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  const bool with_images = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return !s.image.empty(); });
  std::int64_t next = 0;
  for (const auto& s : samples) {
    out << sample_to_json(s, with_images && !s.image.empty() ? next++ : -1).dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path);
  if (!with_images) return;

  const Sample* first = nullptr;
  for (const auto& s : samples) {
    if (!s.image.empty()) {
      first = &s;
      break;
    }
  }
  std::ofstream bin(path + ".images.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + path + ".images.bin");
  const auto n = static_cast<std::uint64_t>(next);
  const auto h = static_cast<std::uint32_t>(first->image.height);
  const auto w = static_cast<std::uint32_t>(first->image.width);
  const auto c = static_cast<std::uint32_t>(first->image.channels);
  bin.write(kImageMagic, sizeof kImageMagic);
  bin.write(reinterpret_cast<const char*>(&n), sizeof n);
  bin.write(reinterpret_cast<const char*>(&h), sizeof h);
  bin.write(reinterpret_cast<const char*>(&w), sizeof w);
  bin.write(reinterpret_cast<const char*>(&c), sizeof c);
  for (const auto& s : samples) {
    if (s.image.empty()) continue;
    if (s.image.height != first->image.height || s.image.width != first->image.width ||
        s.image.channels != first->image.channels) {
      throw ShapeMismatch("all images in a dataset must share one shape");
    }
    bin.write(reinterpret_cast<const char*>(s.image.data.data()),
              static_cast<std::streamsize>(s.image.data.size() * sizeof(float)));
  }
  if (!bin) throw Error("failed writing " + path + ".images.bin");
}

std::vector<Sample> ingest_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);

  std::vector<std::pair<Sample, std::int64_t>> rows;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, e.what());
    }
    Sample s = sample_from_json(j, line);
    if (tokenize(s.report).empty()) continue;
    std::int64_t image_index = -1;
    if (j.contains("image_index")) {
      if (!j["image_index"].is_number_integer()) throw SchemaError(line, "image_index", "not an integer");
      image_index = j["image_index"].get<std::int64_t>();
    }
    rows.emplace_back(std::move(s), image_index);
  }

  std::ifstream bin(path + ".images.bin", std::ios::binary);
  if (bin) {
    char magic[8];
    std::uint64_t n = 0;
    std::uint32_t h = 0, w = 0, c = 0;
    bin.read(magic, sizeof magic);
    bin.read(reinterpret_cast<char*>(&n), sizeof n);
    bin.read(reinterpret_cast<char*>(&h), sizeof h);
    bin.read(reinterpret_cast<char*>(&w), sizeof w);
    bin.read(reinterpret_cast<char*>(&c), sizeof c);
    if (!bin || std::memcmp(magic, kImageMagic, sizeof magic) != 0) throw Error("bad image sidecar for " + path);
    const std::size_t per = static_cast<std::size_t>(h) * w * c;
    for (auto& [s, idx] : rows) {
      if (idx < 0) continue;
      if (static_cast<std::uint64_t>(idx) >= n) throw Error("image_index out of range in " + path);
      s.image = {static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::vector<float>(per)};
      bin.seekg(static_cast<std::streamoff>(sizeof magic + sizeof n + 3 * sizeof h +
                                            static_cast<std::size_t>(idx) * per * sizeof(float)));
      bin.read(reinterpret_cast<char*>(s.image.data.data()), static_cast<std::streamsize>(per * sizeof(float)));
      if (!bin) throw Error("truncated image sidecar for " + path);
    }
  }

  std::vector<Sample> out;
  out.reserve(rows.size());
  for (auto& r : rows) out.push_back(std::move(r.first));
  return out;
}

Vocabularies build_vocab(std::span<const Sample> samples, int min_freq) {
  if (samples.empty()) throw EmptyCorpus();
  std::vector<std::string> reports;
  std::vector<SceneGraph> graphs;
  for (const auto& s : samples) {
    reports.push_back(s.report);
    graphs.push_back(s.graph);
  }
  return {ReportVocab::build(reports, min_freq), AttributeVocab::build(graphs)};
}

BatchSampler::BatchSampler(std::span<const Sample> samples, int batch_size, std::uint64_t seed)
    : batch_size_(std::max(1, batch_size)), seed_(seed) {
  if (samples.empty()) throw EmptyCorpus();
  for (const auto& s : samples) {
    std::vector<int> cats;
    for (const auto& o : s.graph.objects) cats.push_back(o.category_id);
    categories_.push_back(std::move(cats));
  }
}

std::size_t BatchSampler::batches_per_epoch() const {
  const std::size_t b = static_cast<std::size_t>(batch_size_);
  return (categories_.size() + b - 1) / b;
}

std::vector<std::vector<std::size_t>> BatchSampler::epoch(std::uint64_t epoch) const {
  std::vector<std::size_t> order(categories_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = keyed_rng({seed_, epoch});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<bool> used(order.size(), false);
  std::size_t cursor = 0;
  const auto b = static_cast<std::size_t>(batch_size_);
  while (cursor < order.size()) {
    std::vector<std::size_t> batch;
    auto take = [&](std::size_t i) {
      used[i] = true;
      batch.push_back(i);
    };
    while (cursor < order.size() && used[order[cursor]]) ++cursor;
    if (cursor == order.size()) break;
    const auto pivot = order[cursor];
    take(pivot);
    // Fill the batch with samples sharing one anatomical category with the pivot first.
    const auto& pivot_cats = categories_[pivot];
    if (!pivot_cats.empty()) {
      const int k = pivot_cats[rng() % pivot_cats.size()];
      for (std::size_t p = cursor; p < order.size() && batch.size() < b; ++p) {
        const auto i = order[p];
        if (!used[i] && std::find(categories_[i].begin(), categories_[i].end(), k) != categories_[i].end()) take(i);
      }
    }
    for (std::size_t p = cursor; p < order.size() && batch.size() < b; ++p) {
      if (!used[order[p]]) take(order[p]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::size_t> BatchSampler::batch_at(std::uint64_t step) const {
  const auto per = static_cast<std::uint64_t>(batches_per_epoch());
  const std::uint64_t e = step / per;
  if (e != cached_epoch_) {
    cached_ = epoch(e);
    cached_epoch_ = e;
  }
  return cached_[static_cast<std::size_t>(step % per)];
}

}  // namespace sgrrg
