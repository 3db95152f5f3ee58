#ifndef STNET_NN_ADAM_HPP
#define STNET_NN_ADAM_HPP

#include "stnet/nn/layers.hpp"

#include <map>
#include <string>
#include <vector>

namespace stnet::nn {

/// Adam with bias correction. Moment state is keyed by parameter name so a
/// resumed run continues bitwise-identically after a checkpoint round trip.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update. Throws NumericalError if any gradient is non-finite.
  void step(const std::vector<Param*>& params, const std::vector<Tensor>& grads);

  int64_t steps() const { return t_; }

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& s);

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace stnet::nn

#endif
