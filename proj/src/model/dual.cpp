#include "stnet/model/dual.hpp"

#include <stdexcept>

namespace stnet::model {

using namespace stnet::nn;

LatentCritic::LatentCritic(const DualConfig& cfg, Role role, Rng& rng) : cfg_(cfg), role_(role) {
  std::string prefix = role == Role::d1 ? "d1" : "d2";
  fc1_ = make_linear(params_, prefix + ".fc1", cfg.d_w, cfg.hidden, rng);
  fc2_ = make_linear(params_, prefix + ".fc2", cfg.hidden, cfg.hidden, rng);
  fc3_ = make_linear(params_, prefix + ".fc3", cfg.hidden, 1, rng);
}

Var LatentCritic::score_rows(Tape& t, Var w) const {
  if (t.val(w).ndim() != 2 || t.val(w).dim(1) != cfg_.d_w) {
    throw std::invalid_argument("critic: expected [B," + std::to_string(cfg_.d_w) + "] codes, got " +
                                t.val(w).shape_str());
  }
  Var h = leaky_relu(t, fc1_.forward(t, w), 0.2);
  h = leaky_relu(t, fc2_.forward(t, h), 0.2);
  Var s = sigmoid(t, fc3_.forward(t, h));
  int B = t.val(w).dim(0);
  return reshape(t, clamp(t, s, 1e-6, 1.0 - 1e-6), {B});
}

double LatentCritic::critic_score(const Tensor& w) {
  if (!w.all_finite()) throw std::invalid_argument("critic: non-finite latent code");
  Tape t;
  bind(t, false);
  Tensor row({1, cfg_.d_w}, w.data);
  return t.val(score_rows(t, t.leaf(row, false))).item();
}

namespace {

Var mean_log(Tape& t, Var v) { return mean_all(t, log_op(t, v)); }

Var mean_log1m(Tape& t, Var v) {
  return mean_all(t, log_op(t, add_scalar(t, neg(t, v), 1.0)));
}

}  // namespace

Var critic_loss(Tape& t, Var s1_wz, Var s1_we, Var s2_we, Var s2_wz, bool literal_one_minus_log) {
  Var real_terms = add(t, mean_log(t, s1_wz), mean_log(t, s2_we));
  if (literal_one_minus_log) {
    // maximize E[1 - log D1(w_e)] + E[1 - log D2(w_z)]: minimizing the
    // negation gives E log D - 1 per term
    Var fake_terms = add(t, add_scalar(t, mean_log(t, s1_we), -1.0), add_scalar(t, mean_log(t, s2_wz), -1.0));
    return add(t, neg(t, real_terms), fake_terms);
  }
  Var fake_terms = add(t, mean_log1m(t, s1_we), mean_log1m(t, s2_wz));
  return neg(t, add(t, real_terms, fake_terms));
}

Var encoder_adversarial_terms(Tape& t, Var s1_we, Var s2_we, bool literal_one_minus_log) {
  Var push_up = neg(t, mean_log(t, s1_we));
  if (literal_one_minus_log) push_up = add_scalar(t, push_up, 1.0);
  return add(t, push_up, mean_log(t, s2_we));
}

}  // namespace stnet::model
