#ifndef STNET_MODEL_GENERATOR_HPP
#define STNET_MODEL_GENERATOR_HPP

#include "stnet/model/backbone.hpp"
#include "stnet/model/dst.hpp"
#include "stnet/model/dual.hpp"

#include <string>
#include <vector>

namespace stnet::model {

/// Maps a source-domain image to a code in the target domain's W space.
/// Strided convolutions into a global average pool keep only a spatial-free
/// summary of the input.
struct EncoderConfig {
  int resolution = 32;
  int d_w = 64;
  int ch_base = 16;
  int ch_max = 64;
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  void bind(Tape& t, bool trainable) { params_.bind(t, trainable); }
  uint64_t checksum() const { return params_.checksum(); }

  /// Taped forward: [B,3,R,R] -> [B,d_w].
  Var codes(Tape& t, Var images) const;

  /// Eval-mode code for one image. Throws std::invalid_argument on
  /// resolution mismatch.
  Tensor encode(const Image& x);

  /// Eval-mode batched forward: [B,3,R,R] -> [B,d_w].
  Tensor encode_eval(const Tensor& images);

 private:
  EncoderConfig cfg_;
  nn::ParamSet params_;
  nn::Conv from_rgb_;
  std::vector<nn::Conv> downs_;
  nn::Linear head_;
};

/// g(e(x)) on eval tapes. Throws std::invalid_argument unless the backbone
/// is frozen and the widths agree.
Image translate(Encoder& enc, Backbone& backbone, const Image& x);

/// Batched translation: [B,3,R,R] -> [B,3,R,R].
Tensor translate_eval(Encoder& enc, Backbone& backbone, const Tensor& images);

/// Full encoder objective on one pair plus its critic scores:
///   lambda_st * (1 - cos(D_ST(x), D_ST(y))) - log s1_we + log s2_we
/// (the adversarial part gains the verbatim constant under literal mode).
double total_loss(DstModel& dst, const Image& x, const Image& y, double s1_we, double s2_we,
                  double lambda_st, bool literal_one_minus_log = false);

enum class Direction { upper_to_lower, lower_to_upper };
std::string direction_name(Direction d);
Direction parse_direction(const std::string& s);

struct TrainConfig {
  Direction direction = Direction::upper_to_lower;
  double lambda_st = 1.0;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  int batch_size = 32;
  int steps = 2000;
  uint64_t seed = 0;
  bool ablate_l_st = false;  // drop the compatibility term (lambda_st treated as 0)
  bool ablate_dual = false;  // drop critic terms and skip critic updates
  bool literal_adversarial = false;  // verbatim 1 - log D algebra

  // desk-scale architecture knobs
  int encoder_ch_base = 16;
  int encoder_ch_max = 64;
  int critic_hidden = 256;

  // artifact plumbing (set by the caller, not the stage config file)
  std::string run_dir;           // empty = write nothing
  int checkpoint_interval = 500;
  int sample_grid = 4;           // N for the N x N sheet of input|output pairs
  std::string backbone_ref;      // recorded in checkpoints for provenance
  std::string dst_ref;
};

struct StepLogs {
  double l_st = 0;         // compatibility term as trained (0 when ablated)
  double adversarial = 0;  // encoder-side critic terms (0 when ablated)
  double critic = 0;       // critic update loss (0 when skipped)
  double total = 0;        // lambda_st * l_st + adversarial
};

/// One direction's training state: the live encoder and critics plus the
/// frozen backbone and D_ST they train against. Checkpoints capture encoder,
/// critics, both optimizers, and the data/noise streams, so a resumed run
/// continues bit-identically.
class TrainSession {
 public:
  TrainSession(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
               Backbone& backbone, DstModel& dst);

  /// One critic update followed by one encoder update on the next batch.
  /// Throws NumericalError naming the batch ids if a loss turns non-finite.
  StepLogs step();

  int64_t step_count() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  LatentCritic& d1() { return d1_; }
  LatentCritic& d2() { return d2_; }

  void save(const std::string& path);
  void load(const std::string& path);

 private:
  TrainSession(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
               Backbone& backbone, DstModel& dst, Rng init_rng);
  std::vector<int> next_batch();

  TrainConfig cfg_;
  Backbone* backbone_;
  DstModel* dst_;
  std::vector<Image> pool_;
  std::vector<std::string> ids_;
  Encoder encoder_;
  LatentCritic d1_, d2_;
  nn::Adam opt_enc_, opt_critic_;
  Rng z_rng_, batch_rng_;
  std::vector<int> order_;
  size_t cursor_ = 0;
  int64_t step_ = 0;
};

struct TrainResult {
  TrainSession session;
  std::string final_checkpoint;  // empty when run_dir is unset
};

/// Runs cfg.steps steps (continuing from resume_from when given), writing
/// the loss log, periodic checkpoints, metric snapshots, and sample grids
/// into cfg.run_dir. Throws MissingDependencyError naming the stage to run
/// first when the backbone or D_ST is not frozen, ConfigError on invalid
/// hyperparameters, std::invalid_argument on an empty dataset.
TrainResult train(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
                  Backbone& backbone, DstModel& dst, const std::string& resume_from = "");

/// N x N sheet of [input|output] cells; all images share one resolution.
Image tile_pairs(const std::vector<Image>& inputs, const std::vector<Image>& outputs, int n);

}  // namespace stnet::model

#endif
