#pragma once

// Single-file container of named binary segments behind a versioned magic header:
//   "SGRRGCKP" u32 version u32 count { u32 name_len name u64 size bytes }*

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sgrrg {

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, std::string bytes);
  bool has(const std::string& name) const { return segments_.count(name) != 0; }
  /// Throws Error when the segment is missing.
  const std::string& get(const std::string& name) const;
  std::vector<std::string> names() const;

  void write(const std::string& path) const;
  /// Throws Error on a bad magic, unsupported version or truncation.
  static Checkpoint read(const std::string& path);

 private:
  std::map<std::string, std::string> segments_;
  std::vector<std::string> order_;
};

std::string serialize_module(const torch::nn::Module& module);
void deserialize_module(torch::nn::Module& module, const std::string& bytes);

/// State of the default CPU generator (drives dropout and parameter init).
std::string generator_state();
void set_generator_state(const std::string& bytes);

}  // namespace sgrrg
