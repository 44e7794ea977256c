#pragma once

// Parameter checkpoints: a JSON manifest listing named tensors in order, plus
// a flat little-endian float64 blob holding their contents back to back.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/nn.hpp"

namespace orbit {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double>* data = nullptr;
};

class TensorRegistry {
 public:
  void add(std::string name, std::size_t rows, std::size_t cols, std::vector<double>& data) {
    if (data.size() != rows * cols) throw CheckpointError("tensor " + name + " size does not match its shape");
    tensors_.push_back({std::move(name), rows, cols, &data});
  }
  void add(const std::string& name, nn::DenseParams& p) {
    add(name + ".weight", p.out, p.in, p.weights);
    add(name + ".bias", p.out, 1, p.bias);
  }
  void add(const std::string& name, nn::Mlp& m) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) add(name + "." + std::to_string(l), m.layers[l]);
  }
  const std::vector<TensorRef>& tensors() const { return tensors_; }

 private:
  std::vector<TensorRef> tensors_;
};

struct CheckpointInfo {
  std::uint64_t seed = 0;
  long step = 0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

namespace detail {

inline void write_le_double(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline double read_le_double(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw CheckpointError("checkpoint blob truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

// Writes <prefix>.json and <prefix>.bin. Returns the two paths.
inline std::pair<std::filesystem::path, std::filesystem::path> save_checkpoint(
    const std::filesystem::path& prefix, const TensorRegistry& reg, const CheckpointInfo& info) {
  auto manifest_path = std::filesystem::path(prefix.string() + ".json");
  auto blob_path = std::filesystem::path(prefix.string() + ".bin");
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());

  nlohmann::ordered_json m;
  m["format"] = "orbit-checkpoint/1";
  m["seed"] = info.seed;
  m["step"] = info.step;
  m["blob"] = blob_path.filename().string();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : reg.tensors()) tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  m["tensors"] = tensors;
  if (!info.extra.empty()) m["extra"] = info.extra;

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw CheckpointError("cannot write " + blob_path.string());
  for (const auto& t : reg.tensors())
    for (double v : *t.data) detail::write_le_double(blob, v);
  std::ofstream js(manifest_path);
  if (!js) throw CheckpointError("cannot write " + manifest_path.string());
  js << m.dump(2) << '\n';
  return {manifest_path, blob_path};
}

// Loads into the registered tensors; shapes and names must match exactly.
inline CheckpointInfo load_checkpoint(const std::filesystem::path& prefix, const TensorRegistry& reg) {
  auto manifest_path = std::filesystem::path(prefix.string() + ".json");
  std::ifstream js(manifest_path);
  if (!js) throw CheckpointError("cannot read " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != "orbit-checkpoint/1") throw CheckpointError("unsupported checkpoint format");
  const auto& list = m.at("tensors");
  if (list.size() != reg.tensors().size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& t = reg.tensors()[i];
    if (list[i].at("name") != t.name || list[i].at("shape").at(0) != t.rows || list[i].at("shape").at(1) != t.cols)
      throw CheckpointError("checkpoint tensor mismatch at " + t.name);
  }
  auto blob_path = manifest_path.parent_path() / m.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw CheckpointError("cannot read " + blob_path.string());
  for (const auto& t : reg.tensors())
    for (double& v : *t.data) v = detail::read_le_double(blob);
  if (blob.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint blob has trailing bytes");
  CheckpointInfo info;
  info.seed = m.at("seed").get<std::uint64_t>();
  info.step = m.at("step").get<long>();
  if (m.contains("extra")) info.extra = m.at("extra");
  return info;
}

}  // namespace orbit
