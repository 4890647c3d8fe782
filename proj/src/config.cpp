#include "sgrrg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "sgrrg/errors.hpp"

namespace sgrrg {

namespace {

using Field = std::variant<double TrainingConfig::*, int TrainingConfig::*, bool TrainingConfig::*,
                           std::uint64_t TrainingConfig::*, MaskMode TrainingConfig::*,
                           Pooling TrainingConfig::*, NasNorm TrainingConfig::*,
                           DecodeMode TrainingConfig::*>;

const std::vector<std::pair<std::string, Field>>& field_table() {
  using C = TrainingConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"lambda_rs", &C::lambda_rs},       {"delta_ap", &C::delta_ap},
      {"eta_dr", &C::eta_dr},             {"phi_con", &C::phi_con},
      {"alpha", &C::alpha},               {"beta", &C::beta},
      {"gamma", &C::gamma},               {"memory_slots", &C::memory_slots},
      {"memory_dim", &C::memory_dim},     {"margin", &C::margin},
      {"nas_norm", &C::nas_norm},         {"image_channels", &C::image_channels},
      {"image_size", &C::image_size},
      {"patch_size", &C::patch_size},     {"feature_dim", &C::feature_dim},
      {"hidden_dim", &C::hidden_dim},     {"vision_layers", &C::vision_layers},
      {"sg_layers", &C::sg_layers},       {"decoder_layers", &C::decoder_layers},
      {"heads", &C::heads},               {"ffn_dim", &C::ffn_dim},
      {"dropout", &C::dropout},           {"max_positions", &C::max_positions},
      {"num_categories", &C::num_categories}, {"num_diseases", &C::num_diseases},
      {"vision_pos_emb", &C::vision_pos_emb}, {"mask_mode", &C::mask_mode},
      {"pooling", &C::pooling},           {"lr", &C::lr},
      {"lr_backbone", &C::lr_backbone},   {"lr_min_ratio", &C::lr_min_ratio},
      {"warmup_steps", &C::warmup_steps}, {"grad_clip", &C::grad_clip},
      {"batch_size", &C::batch_size},     {"steps", &C::steps},
      {"seed", &C::seed},                 {"pos_weighting", &C::pos_weighting},
      {"log_every", &C::log_every},       {"sg", &C::sg},
      {"sg_att", &C::sg_att},             {"ae", &C::ae},
      {"mem", &C::mem},                   {"nas", &C::nas},
      {"dr", &C::dr},                     {"decode_mode", &C::decode_mode},
      {"beam_width", &C::beam_width},     {"max_len", &C::max_len},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : field_table()) {
    if (k == key) return f;
  }
  throw Error("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error("bad boolean '" + value + "' for " + key);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

TrainingConfig TrainingConfig::toy() {
  TrainingConfig c;
  c.image_size = 32;
  c.image_channels = 8;
  c.feature_dim = 64;
  c.hidden_dim = 128;
  c.vision_layers = 2;
  c.sg_layers = 2;
  c.decoder_layers = 2;
  c.heads = 4;
  c.ffn_dim = 256;
  c.memory_slots = 32;
  c.memory_dim = 64;
  c.gamma = 4;
  c.lr = 1e-3;
  c.lr_backbone = 5e-4;
  c.warmup_steps = 50;
  c.max_positions = 96;
  c.max_len = 90;
  return c;
}

void TrainingConfig::validate() const {
  for (double w : {lambda_rs, delta_ap, eta_dr, phi_con}) {
    if (w < 0) throw Error("loss weights must be non-negative");
  }
  if (!(alpha > 0 && alpha < 1) || !(beta > 0 && beta < 1)) throw Error("thresholds must lie in (0, 1)");
  if (!(margin >= 0 && margin < 1)) throw Error("margin must lie in [0, 1)");
  if (gamma < 1 || gamma > memory_slots) throw Error("gamma must lie in [1, memory_slots]");
  if (hidden_dim % heads != 0) throw Error("heads must divide hidden_dim");
  if (num_categories < 1 || num_categories > 29) throw Error("num_categories must lie in [1, 29]");
  if (patch_size < 1 || image_size % patch_size != 0) throw Error("patch_size must divide image_size");
  if (patch_size < 1 || feature_dim < 1 || hidden_dim < 1 || ffn_dim < 1) throw Error("dimensions must be positive");
  if (batch_size < 1 || steps < 0) throw Error("batch_size must be positive and steps non-negative");
  if (beam_width < 1 || max_len < 1) throw Error("beam_width and max_len must be positive");
}

void TrainingConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, double>) {
          this->*member = std::stod(value);
        } else if constexpr (std::is_same_v<T, int>) {
          this->*member = parse_number<int>(key, value);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          this->*member = parse_number<std::uint64_t>(key, value);
        } else if constexpr (std::is_same_v<T, bool>) {
          this->*member = parse_bool(key, value);
        } else if constexpr (std::is_same_v<T, MaskMode>) {
          if (value == "additive") this->*member = MaskMode::kAdditive;
          else if (value == "multiplicative") this->*member = MaskMode::kMultiplicative;
          else throw Error("mask_mode must be additive or multiplicative");
        } else if constexpr (std::is_same_v<T, Pooling>) {
          if (value == "max") this->*member = Pooling::kMax;
          else if (value == "mean") this->*member = Pooling::kMean;
          else throw Error("pooling must be max or mean");
        } else if constexpr (std::is_same_v<T, NasNorm>) {
          if (value == "both") this->*member = NasNorm::kBoth;
          else if (value == "first") this->*member = NasNorm::kFirst;
          else throw Error("nas_norm must be both or first");
        } else if constexpr (std::is_same_v<T, DecodeMode>) {
          if (value == "greedy") this->*member = DecodeMode::kGreedy;
          else if (value == "beam") this->*member = DecodeMode::kBeam;
          else throw Error("decode_mode must be greedy or beam");
        }
      },
      find_field(key));
}

std::string TrainingConfig::get(const std::string& key) const {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(this->*member)>;
        const auto& v = this->*member;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, MaskMode>) {
          return v == MaskMode::kAdditive ? "additive" : "multiplicative";
        } else if constexpr (std::is_same_v<T, Pooling>) {
          return v == Pooling::kMax ? "max" : "mean";
        } else if constexpr (std::is_same_v<T, NasNorm>) {
          return v == NasNorm::kBoth ? "both" : "first";
        } else if constexpr (std::is_same_v<T, DecodeMode>) {
          return v == DecodeMode::kGreedy ? "greedy" : "beam";
        } else {
          return std::to_string(v);
        }
      },
      find_field(key));
}

const std::vector<std::string>& TrainingConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [name, field] : field_table()) k.push_back(name);
    return k;
  }();
  return out;
}

std::string TrainingConfig::to_kv() const {
  std::ostringstream os;
  for (const auto& key : keys()) os << key << " = " << get(key) << "\n";
  return os.str();
}

TrainingConfig TrainingConfig::from_kv(const std::string& text) { return from_kv(text, TrainingConfig{}); }

TrainingConfig TrainingConfig::from_kv(const std::string& text, TrainingConfig base) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

TrainingConfig TrainingConfig::load(const std::string& path) { return load(path, TrainingConfig{}); }

TrainingConfig TrainingConfig::load(const std::string& path, TrainingConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_kv(ss.str(), std::move(base));
}

}  // namespace sgrrg
