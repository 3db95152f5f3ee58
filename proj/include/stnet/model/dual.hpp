#ifndef STNET_MODEL_DUAL_HPP
#define STNET_MODEL_DUAL_HPP

#include "stnet/nn/adam.hpp"
#include "stnet/nn/layers.hpp"

#include <string>

namespace stnet::model {

using nn::Tape;
using nn::Var;

struct DualConfig {
  int d_w = 64;      // latent code width
  int hidden = 256;  // MLP hidden width
};

/// Latent-space critic scoring W-space codes in (0,1). Two instances play
/// opposite roles: d1 favors mapped prior codes, d2 favors encoded codes.
class LatentCritic {
 public:
  enum class Role { d1, d2 };

  LatentCritic(const DualConfig& cfg, Role role, Rng& rng);

  /// [B,d_w] -> [B], sigmoid scores clamped to [1e-6, 1-1e-6].
  Var score_rows(Tape& t, Var w) const;

  /// Single-code convenience on a fresh tape. Throws on non-finite input.
  double critic_score(const Tensor& w);

  Role role() const { return role_; }
  nn::ParamSet& params() { return params_; }
  void bind(Tape& t, bool trainable) { params_.bind(t, trainable); }

 private:
  DualConfig cfg_;
  Role role_;
  nn::ParamSet params_;
  nn::Linear fc1_, fc2_, fc3_;
};

/// Critics' objective (minimized by D1/D2 updates):
///   -[ E log D1(w_z) + E log D2(w_e) + E log(1-D1(w_e)) + E log(1-D2(w_z)) ]
/// With literal_one_minus_log the two "fake" terms follow the unusual
/// 1 - log D form verbatim instead of log(1 - D).
Var critic_loss(Tape& t, Var s1_wz, Var s1_we, Var s2_we, Var s2_wz, bool literal_one_minus_log = false);

/// Encoder-side adversarial terms (minimized by the encoder update):
///   -E log D1(w_e) + E log D2(w_e)
/// literal_one_minus_log keeps the verbatim 1 - log D1 term, which only
/// shifts the value by a constant.
Var encoder_adversarial_terms(Tape& t, Var s1_we, Var s2_we, bool literal_one_minus_log = false);

}  // namespace stnet::model

#endif
