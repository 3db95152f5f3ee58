#include "stnet/nn/adam.hpp"

#include "stnet/core/errors.hpp"

#include <cmath>

namespace stnet::nn {

void Adam::step(const std::vector<Param*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw std::logic_error("adam: param/grad count mismatch");
  t_ += 1;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Param* p = params[i];
    const Tensor& g = grads[i];
    if (!g.same_shape(p->value)) throw std::logic_error("adam: grad shape mismatch for " + p->name);
    if (!g.all_finite()) throw NumericalError("non-finite gradient for " + p->name);
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_.emplace(p->name, Moments{Tensor::zeros(p->value.shape), Tensor::zeros(p->value.shape)}).first;
    }
    Moments& mo = it->second;
    mo.m.data = beta1_ * mo.m.data + (1.0 - beta1_) * g.data;
    mo.v.data = beta2_ * mo.v.data + (1.0 - beta2_) * g.data * g.data;
    p->value.data -= lr_ * (mo.m.data / c1) / ((mo.v.data / c2).sqrt() + eps_);
    if (!p->value.all_finite()) throw NumericalError("non-finite parameter after update: " + p->name);
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> s;
  s.emplace("t", Tensor::scalar(static_cast<double>(t_)));
  for (const auto& [name, mo] : moments_) {
    s.emplace("m:" + name, mo.m);
    s.emplace("v:" + name, mo.v);
  }
  return s;
}

void Adam::load_state(const std::map<std::string, Tensor>& s) {
  auto it = s.find("t");
  if (it == s.end()) throw std::runtime_error("optimizer state: missing step counter");
  t_ = static_cast<int64_t>(it->second.item());
  moments_.clear();
  for (const auto& [key, tensor] : s) {
    if (key.rfind("m:", 0) == 0) {
      moments_[key.substr(2)].m = tensor;
    } else if (key.rfind("v:", 0) == 0) {
      moments_[key.substr(2)].v = tensor;
    }
  }
}

}  // namespace stnet::nn
