#ifndef STNET_MODEL_BACKBONE_HPP
#define STNET_MODEL_BACKBONE_HPP

#include "stnet/data/dataio.hpp"
#include "stnet/nn/adam.hpp"
#include "stnet/nn/layers.hpp"

#include <string>
#include <vector>

namespace stnet::model {

using nn::Tape;
using nn::Var;

struct BackboneConfig {
  int resolution = 32;    // output side, power of two >= 8
  int d_z = 64;           // noise dimension
  int d_w = 64;           // latent code dimension
  int mapping_hidden = 64;
  int mapping_layers = 3;
  int ch_base = 16;       // synthesis width at the output resolution
  int ch_max = 64;        // cap while widths double toward the 4x4 root
};

/// Conv widths from the 4x4 root out to `resolution`: ch_base at full
/// resolution, doubling toward the root, capped at ch_max. Throws
/// std::invalid_argument unless resolution is a power of two >= 8.
std::vector<int> channel_schedule(int resolution, int ch_base, int ch_max);

/// Widths per synthesis stage, root (4x4) first, output resolution last.
std::vector<int> synthesis_channels(const BackboneConfig& cfg);

/// Per-domain generative backbone: a mapping network turning Gaussian noise
/// into a latent code, and a style-modulated convolutional synthesis network
/// turning a code into an image. Frozen after pretraining; downstream
/// training only reads it.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }

  /// Binds parameters; trainable only while not frozen.
  void bind(Tape& t) { params_.bind(t, !frozen_); }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  uint64_t checksum() const { return params_.checksum(); }

  /// Taped mapping network: [B,d_z] -> [B,d_w].
  Var map_codes(Tape& t, Var z) const;

  /// Taped synthesis network: [B,d_w] -> [B,3,R,R], values strictly in (0,1).
  Var synthesize_batch(Tape& t, Var w) const;

  /// Eval-mode f(z) for one noise vector [d_z] -> [d_w]. Throws
  /// std::invalid_argument on dimension mismatch or non-finite input.
  Tensor sample_w(const Tensor& z);

  /// Eval-mode batched f(z): [B,d_z] -> [B,d_w].
  Tensor sample_w_eval(const Tensor& z);

  /// Eval-mode image for one latent code [d_w]. Throws std::invalid_argument
  /// on dimension mismatch or non-finite input.
  Image synthesize(const Tensor& w);

  /// Eval-mode batched synthesis: [B,d_w] -> [B,3,R,R].
  Tensor synthesize_eval(const Tensor& w);

 private:
  BackboneConfig cfg_;
  bool frozen_ = false;
  std::vector<int> ch_;
  nn::ParamSet params_;
  std::vector<nn::Linear> map_;
  nn::Param* root_ = nullptr;  // learned 4x4 input block
  std::vector<nn::Linear> aff_;
  std::vector<nn::Conv> conv_;
  nn::Conv rgb_;
};

/// Convolutional critic used only while pretraining the backbone; produces
/// one unbounded logit per image.
class ImageCritic {
 public:
  ImageCritic(const BackboneConfig& cfg, Rng& rng);

  nn::ParamSet& params() { return params_; }
  void bind(Tape& t, bool trainable) { params_.bind(t, trainable); }

  /// [B,3,R,R] -> [B] logits.
  Var logits(Tape& t, Var images) const;

 private:
  nn::ParamSet params_;
  nn::Conv from_rgb_;
  std::vector<nn::Conv> downs_;
  nn::Linear fc_;
};

struct PretrainConfig {
  int steps = 600;
  int batch = 8;
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double r1_gamma = 10.0;  // gradient penalty weight on real images
  int r1_interval = 16;    // apply the penalty every k-th step, scaled by k
  uint64_t seed = 0;
  std::string log_path;  // TSV curve: step, critic, generator, r1; empty = no log
};

/// Adversarial pretraining on a single domain: alternating critic and
/// generator steps with a non-saturating logistic loss and a lazy R1 penalty.
/// Returns the trained (not yet frozen) backbone. Throws
/// std::invalid_argument on an empty or mixed-domain dataset.
Backbone pretrain_backbone(const std::vector<data::ImageRecord>& dataset,
                           const BackboneConfig& model_cfg, const PretrainConfig& cfg);

/// Writes mapping + synthesis parameters and architecture metadata.
void save_backbone(Backbone& backbone, const std::string& path);

/// Rebuilds a backbone from a checkpoint written by save_backbone.
Backbone load_backbone(const std::string& path);

}  // namespace stnet::model

#endif
