#include "stnet/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace stnet::nn {

Param* ParamSet::add(const std::string& name, Tensor init) {
  if (find(name)) throw std::logic_error("param set: duplicate name " + name);
  storage_.push_back(Param{name, std::move(init), Var{}});
  order_.push_back(&storage_.back());
  return order_.back();
}

Param* ParamSet::find(const std::string& name) {
  for (Param* p : order_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void ParamSet::bind(Tape& t, bool trainable) {
  for (Param* p : order_) p->var = t.leaf(p->value, trainable);
}

uint64_t ParamSet::checksum() const {
  uint64_t h = 1469598103934665603ull;
  for (const Param* p : order_) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = fnv1a64(p->value.data.data(), sizeof(double) * static_cast<size_t>(p->value.numel()), h);
  }
  return h;
}

int64_t ParamSet::count() const {
  int64_t n = 0;
  for (const Param* p : order_) n += p->value.numel();
  return n;
}

std::map<std::string, Tensor> ParamSet::state() const {
  std::map<std::string, Tensor> s;
  for (const Param* p : order_) s.emplace(p->name, p->value);
  return s;
}

void ParamSet::load_state(const std::map<std::string, Tensor>& s) {
  for (Param* p : order_) {
    auto it = s.find(p->name);
    if (it == s.end()) throw std::runtime_error("checkpoint: missing parameter " + p->name);
    if (it->second.shape != p->value.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name + " (" + it->second.shape_str() +
                               " vs " + p->value.shape_str() + ")");
    }
    p->value = it->second;
  }
}

namespace {

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = std * rng.normal();
  return t;
}

}  // namespace

Var Linear::forward(Tape& t, Var x) const {
  int B = t.val(x).dim(0);
  return add(t, matmul(t, x, w->var), broadcast_cols(t, b->var, B));
}

Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = ps.add(name + ".w", he_normal(rng, {in, out}, in));
  l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Linear make_linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, double init_std) {
  Linear l;
  Tensor w({in, out});
  for (int64_t i = 0; i < w.numel(); ++i) w.data[i] = init_std * rng.normal();
  l.w = ps.add(name + ".w", std::move(w));
  l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Var Conv::forward(Tape& t, Var x) const {
  return bias_add_channel(t, conv2d(t, x, w->var, stride, pad), b->var);
}

Conv make_conv(ParamSet& ps, const std::string& name, int in_ch, int out_ch, int k, int stride, int pad, Rng& rng) {
  Conv c;
  c.w = ps.add(name + ".w", he_normal(rng, {out_ch, in_ch, k, k}, in_ch * k * k));
  c.b = ps.add(name + ".b", Tensor::zeros({out_ch}));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xt = t.val(x);
  double inv = 1.0 / (static_cast<double>(xt.dim(2)) * xt.dim(3));
  return mul_scalar(t, chan_sum(t, x), inv);
}

Var pixel_norm_rows(Tape& t, Var x, double eps) {
  int B = t.val(x).dim(0), D = t.val(x).dim(1);
  Var ms = mul_scalar(t, row_sum(t, mul(t, x, x)), 1.0 / static_cast<double>(D));
  Var denom = pow_scalar(t, add_scalar(t, ms, eps), -0.5);
  return mul(t, x, broadcast_rows(t, denom, D));
}

Var l2_normalize_rows(Tape& t, Var x, double eps) {
  int D = t.val(x).dim(1);
  Var n2 = row_sum(t, mul(t, x, x));
  Var inv = pow_scalar(t, add_scalar(t, n2, eps), -0.5);
  return mul(t, x, broadcast_rows(t, inv, D));
}

}  // namespace stnet::nn
