#ifndef STNET_NN_LAYERS_HPP
#define STNET_NN_LAYERS_HPP

#include "stnet/core/rng.hpp"
#include "stnet/nn/tape.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

namespace stnet::nn {

/// Named learnable tensor. `var` is rebound to a fresh tape before each
/// forward pass; `value` is the persistent storage the optimizer updates.
struct Param {
  std::string name;
  Tensor value;
  Var var{};
};

/// Owns a network's parameters. Addresses are stable (deque storage), names
/// are unique, and iteration order is creation order, which fixes the
/// optimizer update order and makes checksums reproducible.
class ParamSet {
 public:
  ParamSet() = default;
  // copying would leave order_ pointing into the source's storage
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Param* add(const std::string& name, Tensor init);

  const std::vector<Param*>& all() { return order_; }
  std::vector<Param*> params() const { return order_; }
  Param* find(const std::string& name);

  /// Leaf every parameter onto the tape. trainable=false keeps the whole
  /// network out of the backward pass (frozen usage).
  void bind(Tape& t, bool trainable);

  /// Order-sensitive digest of names and raw parameter bytes. Two calls agree
  /// iff the parameters are bitwise identical.
  uint64_t checksum() const;

  int64_t count() const;

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& s);

 private:
  std::deque<Param> storage_;
  std::vector<Param*> order_;
};

/// y = x W + b, x: [B,in], W: [in,out], b: [out].
struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;
  Var forward(Tape& t, Var x) const;
};

/// He-normal weight init, zero bias.
Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng);
// explicit weight std instead of the He default (modulation affines want a gentler start)
Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double init_std);

/// 3x3/1x1-style convolution with per-channel bias.
struct Conv {
  Param* w = nullptr;
  Param* b = nullptr;
  int stride = 1;
  int pad = 0;
  Var forward(Tape& t, Var x) const;
};

Conv make_conv(ParamSet& ps, const std::string& name, int in_ch, int out_ch, int k, int stride, int pad, Rng& rng);

/// Global average pool: [B,C,H,W] -> [B,C].
Var global_avg_pool(Tape& t, Var x);

/// Per-sample feature normalization x / sqrt(mean(x^2) + eps) over the last
/// dimension of a [B,D] matrix.
Var pixel_norm_rows(Tape& t, Var x, double eps = 1e-8);

/// Rows scaled to unit Euclidean norm.
Var l2_normalize_rows(Tape& t, Var x, double eps = 1e-12);

}  // namespace stnet::nn

#endif
