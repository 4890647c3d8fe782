#include "sgrrg/checkpoint.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "sgrrg/errors.hpp"

namespace sgrrg {

namespace {

constexpr char kMagic[8] = {'S', 'G', 'R', 'R', 'G', 'C', 'K', 'P'};

template <typename T>
void put_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("truncated checkpoint " + path);
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, std::string bytes) {
  if (segments_.count(name) == 0) order_.push_back(name);
  segments_[name] = std::move(bytes);
}

const std::string& Checkpoint::get(const std::string& name) const {
  auto it = segments_.find(name);
  if (it == segments_.end()) throw Error("checkpoint has no segment '" + name + "'");
  return it->second;
}

std::vector<std::string> Checkpoint::names() const { return order_; }

void Checkpoint::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  put_pod<std::uint32_t>(out, kVersion);
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(order_.size()));
  for (const auto& name : order_) {
    const auto& bytes = segments_.at(name);
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_pod<std::uint64_t>(out, bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error("not a checkpoint: " + path);
  const auto version = get_pod<std::uint32_t>(in, path);
  if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_pod<std::uint32_t>(in, path);
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_pod<std::uint32_t>(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    std::string bytes(get_pod<std::uint64_t>(in, path), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error("truncated checkpoint " + path);
    ckpt.put(name, std::move(bytes));
  }
  return ckpt;
}

std::string serialize_module(const torch::nn::Module& module) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  return out.str();
}

void deserialize_module(torch::nn::Module& module, const std::string& bytes) {
  std::istringstream in(bytes);
  torch::serialize::InputArchive archive;
  archive.load_from(in);
  module.load(archive);
}

std::string generator_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  auto state = gen.get_state();
  return {reinterpret_cast<const char*>(state.data_ptr()), static_cast<std::size_t>(state.numel())};
}

void set_generator_state(const std::string& bytes) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  auto state = torch::empty({static_cast<int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(state.data_ptr(), bytes.data(), bytes.size());
  gen.set_state(state);
}

}  // namespace sgrrg
