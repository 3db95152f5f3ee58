#ifndef STNET_CORE_CHECKPOINT_HPP
#define STNET_CORE_CHECKPOINT_HPP

#include "stnet/core/tensor.hpp"

#include <json.hpp>

#include <map>
#include <string>

namespace stnet {

/// Binary checkpoint: JSON metadata plus named tensors with bit-exact double
/// payloads, serialized as a single CBOR document.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;

  /// Groups keyed "prefix.name" back into per-network maps.
  std::map<std::string, Tensor> group(const std::string& prefix) const;
  void add_group(const std::string& prefix, const std::map<std::string, Tensor>& tensors_in);
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stnet

#endif
