#ifndef STNET_TESTS_TEST_UTIL_HPP
#define STNET_TESTS_TEST_UTIL_HPP

#include <doctest.h>

#include "stnet/core/rng.hpp"
#include "stnet/nn/tape.hpp"

#include <functional>
#include <string>
#include <vector>

namespace testutil {

inline stnet::Tensor random_tensor(stnet::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                   double hi = 1.0) {
  stnet::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

inline double rel_err(const stnet::Tensor& a, const stnet::Tensor& b) {
  double num = (a.data - b.data).abs().maxCoeff();
  double den = 1.0 + a.data.abs().maxCoeff() + b.data.abs().maxCoeff();
  return num / den;
}

using Builder = std::function<stnet::nn::Var(stnet::nn::Tape&, const std::vector<stnet::nn::Var>&)>;

/// Central-difference gradient check of a scalar-valued builder.
inline void check_grads(const std::string& name, const Builder& build,
                        std::vector<stnet::Tensor> xs, double h = 1e-5, double tol = 1e-6) {
  using stnet::Tensor;
  using stnet::nn::Tape;
  using stnet::nn::Var;
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(xs.size());
  for (auto& x : xs) vars.push_back(tape.leaf(x, true));
  Var loss = build(tape, vars);
  REQUIRE(tape.val(loss).numel() == 1);
  std::vector<Tensor> gs = tape.gradients(loss, vars);

  for (size_t i = 0; i < xs.size(); ++i) {
    Tensor fd = Tensor::zeros(xs[i].shape);
    for (int64_t j = 0; j < xs[i].numel(); ++j) {
      auto eval = [&](double delta) {
        std::vector<Tensor> xs2 = xs;
        xs2[i].data[j] += delta;
        Tape t2;
        std::vector<Var> vs2;
        vs2.reserve(xs2.size());
        for (auto& x : xs2) vs2.push_back(t2.leaf(x, true));
        return t2.val(build(t2, vs2)).item();
      };
      fd.data[j] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    double err = rel_err(gs[i], fd);
    CHECK_MESSAGE(err < tol, name, " input ", i, " rel err ", err);
  }
}

}  // namespace testutil

#endif
