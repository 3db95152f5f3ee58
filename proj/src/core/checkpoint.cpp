#include "stnet/core/checkpoint.hpp"

#include "stnet/core/errors.hpp"

#include <cstring>
#include <fstream>

namespace stnet {

std::map<std::string, Tensor> Checkpoint::group(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  std::string pre = prefix + ".";
  for (const auto& [name, t] : tensors) {
    if (name.rfind(pre, 0) == 0) out.emplace(name.substr(pre.size()), t);
  }
  return out;
}

void Checkpoint::add_group(const std::string& prefix, const std::map<std::string, Tensor>& tensors_in) {
  for (const auto& [name, t] : tensors_in) tensors.emplace(prefix + "." + name, t);
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = "stnet-checkpoint-v1";
  j["meta"] = c.meta;
  nlohmann::json tj = nlohmann::json::object();
  for (const auto& [name, t] : c.tensors) {
    std::vector<uint8_t> bytes(sizeof(double) * static_cast<size_t>(t.numel()));
    std::memcpy(bytes.data(), t.data.data(), bytes.size());
    tj[name] = {{"shape", t.shape}, {"data", nlohmann::json::binary(std::move(bytes))}};
  }
  j["tensors"] = std::move(tj);

  std::vector<uint8_t> cbor = nlohmann::json::to_cbor(j);
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(cbor.data()), static_cast<std::streamsize>(cbor.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot finalize checkpoint: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingDependencyError("checkpoint not found: " + path);
  std::vector<uint8_t> cbor((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::from_cbor(cbor);
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "stnet-checkpoint-v1") {
    throw std::runtime_error("not a recognized checkpoint: " + path);
  }
  Checkpoint c;
  c.meta = j.value("meta", nlohmann::json::object());
  for (const auto& [name, tv] : j.at("tensors").items()) {
    std::vector<int> shape = tv.at("shape").get<std::vector<int>>();
    const auto& bin = tv.at("data").get_binary();
    Tensor t(shape);
    if (bin.size() != sizeof(double) * static_cast<size_t>(t.numel())) {
      throw std::runtime_error("corrupt checkpoint " + path + ": size mismatch for tensor " + name);
    }
    std::memcpy(t.data.data(), bin.data(), bin.size());
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace stnet
