#ifndef STNET_MODEL_DST_HPP
#define STNET_MODEL_DST_HPP

#include "stnet/data/dataio.hpp"
#include "stnet/nn/adam.hpp"
#include "stnet/nn/layers.hpp"

#include <string>
#include <vector>

namespace stnet::model {

using nn::Tape;
using nn::Var;

struct DstConfig {
  int resolution = 32;  // expected full-image side
  int base_ch = 8;      // stem channels; doubles per stage
  int d_f = 256;        // backbone feature width
  int d_t = 64;         // texture embedding width
  int L = 10;           // histogram bins per channel
  bool reverse_kl = false;  // swap KL direction in the style loss
};

/// Style/texture discriminator: residual conv backbone with a histogram-
/// predicting style head and an instance-discrimination texture head.
/// Trained self-supervised, then frozen to provide a compatibility distance.
class DstModel {
 public:
  DstModel(const DstConfig& cfg, Rng& rng);

  const DstConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }

  /// Binds parameters; trainable only while not frozen.
  void bind(Tape& t) { params_.bind(t, !frozen_); }

  /// [B,3,h,w] -> [B,d_f]. Fully convolutional, so patches of any square size
  /// pass through the same weights.
  Var features(Tape& t, Var images) const;

  /// [B,d_f] -> [3B,L]; rows are per-channel bin probabilities (sum 1).
  Var style_probs(Tape& t, Var feats) const;

  /// [B,d_f] -> [B,d_t] with unit rows.
  Var texture_embeddings(Tape& t, Var feats) const;

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  uint64_t checksum() const { return params_.checksum(); }

  /// Eval-mode feature vector [d_f] for one full-resolution image.
  /// Throws std::invalid_argument on resolution mismatch.
  Tensor extract_features(const Image& img);

  /// Eval-mode features for a [B,3,h,w] batch -> [B,d_f] tensor.
  Tensor features_eval(const Tensor& images);

 private:
  DstConfig cfg_;
  bool frozen_ = false;
  nn::ParamSet params_;
  nn::Conv stem_, rb1a_, rb1b_, down1_, rb2a_, rb2b_, down2_, rb3a_, rb3b_;
  nn::Linear feat_, sty1_, sty2_, tex1_, tex2_;
};

/// (h + eps) / (1 + L*eps) per entry: keeps every bin positive so the KL in
/// the style loss stays finite. Applied to ground-truth histograms only.
Tensor smooth_histogram(const Tensor& bins, double eps = 1e-4);

/// Sum over rows of D_KL[pred_row || gt_row]. Rows are probability vectors;
/// a [3,L] input gives the per-image three-channel style loss.
/// reverse_kl swaps the two arguments' roles.
Var style_loss(Tape& t, Var pred, Var gt, bool reverse_kl = false);

/// InfoNCE over [2n,d] unit embeddings ordered (anchor, positive) per pair:
/// mean over anchors of -log( exp(u_a . u_p) / sum_j exp(u_a . u_j) ).
/// The denominator runs over all 2n embeddings including the anchor itself.
Var texture_loss(Tape& t, Var embeddings);

/// lambda_sty * style + lambda_tex * texture.
Var dst_training_loss(Tape& t, Var style, Var texture, double lambda_sty, double lambda_tex);
double dst_training_loss(double style, double texture, double lambda_sty, double lambda_tex);

/// 1 - cos(D_ST(x), D_ST(y)) on eval features. Throws NumericalError
/// mentioning "degenerate feature" when a feature norm falls below 1e-12.
double style_distance(DstModel& model, const Image& x, const Image& y);

/// Taped batch form: mean over rows of 1 - cos(fx_row, fy_row).
Var style_distance_rows(Tape& t, Var fx, Var fy);

struct DstTrainConfig {
  int steps = 800;
  int batch = 16;
  int patch = 16;  // patch side for the texture pairs
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double lambda_sty = 1.0;
  double lambda_tex = 2.2;
  uint64_t seed = 0;
  std::string log_path;  // TSV curve: step, style, texture, total; empty = no log
};

/// Self-supervised training on the union of both domains; returns the model
/// frozen. Throws std::invalid_argument on an empty dataset.
DstModel train_dst(const std::vector<data::ImageRecord>& dataset, const DstConfig& model_cfg,
                   const DstTrainConfig& cfg);

void save_dst(DstModel& model, const std::string& path);

/// Rebuilds the model from its checkpoint, frozen state included. Throws
/// MissingDependencyError if the file is absent.
DstModel load_dst(const std::string& path);

}  // namespace stnet::model

#endif
