#include "stnet/model/generator.hpp"

#include "stnet/core/checkpoint.hpp"
#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace stnet::model {

using namespace stnet::nn;
namespace fs = std::filesystem;

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  std::vector<int> ch = channel_schedule(cfg.resolution, cfg.ch_base, cfg.ch_max);
  std::reverse(ch.begin(), ch.end());  // full resolution first
  from_rgb_ = make_conv(params_, "e.from_rgb", 3, ch[0], 3, 1, 1, rng);
  for (size_t i = 0; i + 1 < ch.size(); ++i) {
    downs_.push_back(
        make_conv(params_, "e.down" + std::to_string(i), ch[i], ch[i + 1], 3, 2, 1, rng));
  }
  head_ = make_linear(params_, "e.head", ch.back(), cfg.d_w, rng);
}

Var Encoder::codes(Tape& t, Var images) const {
  const Tensor& xt = t.val(images);
  if (xt.ndim() != 4 || xt.dim(1) != 3 || xt.dim(2) != cfg_.resolution ||
      xt.dim(3) != cfg_.resolution) {
    throw std::invalid_argument("encoder: expected [B,3," + std::to_string(cfg_.resolution) + "," +
                                std::to_string(cfg_.resolution) + "] images, got " + xt.shape_str());
  }
  Var x = leaky_relu(t, from_rgb_.forward(t, images), 0.2);
  for (const auto& c : downs_) x = leaky_relu(t, c.forward(t, x), 0.2);
  return head_.forward(t, global_avg_pool(t, x));
}

Tensor Encoder::encode(const Image& x) {
  if (x.h != cfg_.resolution || x.w != cfg_.resolution) {
    throw std::invalid_argument("encode: image is " + std::to_string(x.h) + "x" +
                                std::to_string(x.w) + ", expected " +
                                std::to_string(cfg_.resolution) + " square");
  }
  std::vector<Image> one{x};
  Tensor w = encode_eval(batch_from_images(one, {0}));
  return Tensor({cfg_.d_w}, w.data);
}

Tensor Encoder::encode_eval(const Tensor& images) {
  Tape t;
  params_.bind(t, false);
  return t.val(codes(t, t.leaf(images, false)));
}

Image translate(Encoder& enc, Backbone& backbone, const Image& x) {
  if (!backbone.frozen()) throw std::invalid_argument("translate: backbone must be frozen");
  return backbone.synthesize(enc.encode(x));
}

Tensor translate_eval(Encoder& enc, Backbone& backbone, const Tensor& images) {
  if (!backbone.frozen()) throw std::invalid_argument("translate: backbone must be frozen");
  return backbone.synthesize_eval(enc.encode_eval(images));
}

double total_loss(DstModel& dst, const Image& x, const Image& y, double s1_we, double s2_we,
                  double lambda_st, bool literal_one_minus_log) {
  double adv = -std::log(s1_we) + std::log(s2_we) + (literal_one_minus_log ? 1.0 : 0.0);
  return lambda_st * style_distance(dst, x, y) + adv;
}

std::string direction_name(Direction d) {
  return d == Direction::upper_to_lower ? "upper_to_lower" : "lower_to_upper";
}

Direction parse_direction(const std::string& s) {
  if (s == "upper_to_lower") return Direction::upper_to_lower;
  if (s == "lower_to_upper") return Direction::lower_to_upper;
  throw ConfigError("unknown direction '" + s + "' (expected upper_to_lower or lower_to_upper)");
}

namespace {

EncoderConfig encoder_config(const TrainConfig& cfg, Backbone& backbone) {
  EncoderConfig ec;
  ec.resolution = backbone.config().resolution;
  ec.d_w = backbone.config().d_w;
  ec.ch_base = cfg.encoder_ch_base;
  ec.ch_max = cfg.encoder_ch_max;
  return ec;
}

DualConfig dual_config(const TrainConfig& cfg, Backbone& backbone) {
  DualConfig dc;
  dc.d_w = backbone.config().d_w;
  dc.hidden = cfg.critic_hidden;
  return dc;
}

std::vector<Var> bound_vars(ParamSet& ps) {
  std::vector<Var> vars;
  for (auto* p : ps.all()) vars.push_back(p->var);
  return vars;
}

}  // namespace

TrainSession::TrainSession(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
                           Backbone& backbone, DstModel& dst)
    : TrainSession(cfg, source_train, backbone, dst, Rng::derive(cfg.seed, "train.init")) {}

TrainSession::TrainSession(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
                           Backbone& backbone, DstModel& dst, Rng init_rng)
    : cfg_(cfg),
      backbone_(&backbone),
      dst_(&dst),
      encoder_(encoder_config(cfg, backbone), init_rng),
      d1_(dual_config(cfg, backbone), LatentCritic::Role::d1, init_rng),
      d2_(dual_config(cfg, backbone), LatentCritic::Role::d2, init_rng),
      opt_enc_(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2),
      opt_critic_(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2),
      z_rng_(Rng::derive(cfg.seed, "train.z")),
      batch_rng_(Rng::derive(cfg.seed, "train.batch")) {
  if (cfg.lambda_st < 0) throw ConfigError("lambda_st must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (!backbone.frozen()) {
    throw MissingDependencyError(
        "generator training needs a frozen backbone; run the pretrain-gan stage first");
  }
  if (!dst.frozen()) {
    throw MissingDependencyError(
        "generator training needs a frozen style/texture discriminator; run the train-dst stage first");
  }
  if (source_train.empty()) throw std::invalid_argument("generator training: empty dataset");
  const int R = backbone.config().resolution;
  for (const auto& rec : source_train) {
    if (rec.pixels.h != R || rec.pixels.w != R) {
      throw std::invalid_argument("generator training: image " + rec.id +
                                  " does not match the backbone resolution");
    }
    pool_.push_back(rec.pixels);
    ids_.push_back(rec.id);
  }
  order_.resize(pool_.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();  // forces a shuffle on first use
}

std::vector<int> TrainSession::next_batch() {
  const int batch = std::min<int>(cfg_.batch_size, static_cast<int>(pool_.size()));
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    if (cursor_ >= order_.size()) {
      batch_rng_.shuffle(order_);
      cursor_ = 0;
    }
    idx.push_back(order_[cursor_++]);
  }
  return idx;
}

StepLogs TrainSession::step() {
  std::vector<int> idx = next_batch();
  const int batch = static_cast<int>(idx.size());
  Tensor x = batch_from_images(pool_, idx);

  auto batch_label = [&]() {
    std::string s;
    for (int i : idx) {
      if (!s.empty()) s += ", ";
      s += ids_[static_cast<size_t>(i)];
    }
    return s;
  };

  StepLogs logs;

  if (!cfg_.ablate_dual) {
    Tensor z({batch, backbone_->config().d_z});
    for (int64_t i = 0; i < z.numel(); ++i) z.data[i] = z_rng_.normal();
    Tensor w_z, w_e;
    {
      Tape t;
      backbone_->params().bind(t, false);
      w_z = t.val(backbone_->map_codes(t, t.leaf(z, false)));
    }
    {
      Tape t;
      encoder_.bind(t, false);
      w_e = t.val(encoder_.codes(t, t.leaf(x, false)));
    }
    Tape t;
    d1_.bind(t, true);
    d2_.bind(t, true);
    Var wz = t.leaf(w_z, false), we = t.leaf(w_e, false);
    Var loss = critic_loss(t, d1_.score_rows(t, wz), d1_.score_rows(t, we), d2_.score_rows(t, we),
                           d2_.score_rows(t, wz), cfg_.literal_adversarial);
    logs.critic = t.val(loss).item();
    if (!std::isfinite(logs.critic)) {
      throw NumericalError("non-finite critic loss at step " + std::to_string(step_) +
                           "; batch ids: " + batch_label());
    }
    std::vector<Param*> ps = d1_.params().all();
    for (auto* p : d2_.params().all()) ps.push_back(p);
    std::vector<Var> wrt;
    for (auto* p : ps) wrt.push_back(p->var);
    opt_critic_.step(ps, t.gradients(loss, wrt));
  }

  const double lambda = cfg_.ablate_l_st ? 0.0 : cfg_.lambda_st;
  Tensor fx;  // D_ST features of the sources, constant w.r.t. the encoder
  if (lambda != 0) fx = dst_->features_eval(x);

  Tape t;
  encoder_.bind(t, true);
  Var w_e = encoder_.codes(t, t.leaf(x, false));
  Var total;
  bool have_total = false;
  if (lambda != 0) {
    backbone_->bind(t);
    dst_->bind(t);
    Var y = backbone_->synthesize_batch(t, w_e);
    Var l_st = style_distance_rows(t, t.leaf(fx, false), dst_->features(t, y));
    logs.l_st = t.val(l_st).item();
    total = mul_scalar(t, l_st, lambda);
    have_total = true;
  }
  if (!cfg_.ablate_dual) {
    d1_.bind(t, false);
    d2_.bind(t, false);
    Var adv = encoder_adversarial_terms(t, d1_.score_rows(t, w_e), d2_.score_rows(t, w_e),
                                        cfg_.literal_adversarial);
    logs.adversarial = t.val(adv).item();
    total = have_total ? add(t, total, adv) : adv;
    have_total = true;
  }
  if (!have_total) total = t.leaf(Tensor::scalar(0.0), false);
  logs.total = t.val(total).item();
  if (!std::isfinite(logs.total)) {
    throw NumericalError("non-finite encoder loss at step " + std::to_string(step_) +
                         "; batch ids: " + batch_label());
  }
  opt_enc_.step(encoder_.params().all(), t.gradients(total, bound_vars(encoder_.params())));

  ++step_;
  return logs;
}

void TrainSession::save(const std::string& path) {
  Checkpoint cp;
  cp.meta = {{"module", "train"},
             {"step", step_},
             {"cursor", static_cast<int64_t>(cursor_)},
             {"z_rng", z_rng_.state()},
             {"batch_rng", batch_rng_.state()},
             {"backbone_ref", cfg_.backbone_ref},
             {"dst_ref", cfg_.dst_ref},
             {"config",
              {{"direction", direction_name(cfg_.direction)},
               {"lambda_st", cfg_.lambda_st},
               {"learning_rate", cfg_.learning_rate},
               {"adam_beta1", cfg_.adam_beta1},
               {"adam_beta2", cfg_.adam_beta2},
               {"batch_size", cfg_.batch_size},
               {"steps", cfg_.steps},
               {"seed", cfg_.seed},
               {"ablate_l_st", cfg_.ablate_l_st},
               {"ablate_dual", cfg_.ablate_dual},
               {"literal_adversarial", cfg_.literal_adversarial},
               {"encoder_ch_base", cfg_.encoder_ch_base},
               {"encoder_ch_max", cfg_.encoder_ch_max},
               {"critic_hidden", cfg_.critic_hidden}}}};
  Tensor order({static_cast<int>(order_.size())});
  for (size_t i = 0; i < order_.size(); ++i) order.data[static_cast<int64_t>(i)] = order_[i];
  cp.tensors.emplace("data.order", std::move(order));
  cp.add_group("encoder", encoder_.params().state());
  cp.add_group("d1", d1_.params().state());
  cp.add_group("d2", d2_.params().state());
  cp.add_group("opt_enc", opt_enc_.state());
  cp.add_group("opt_critic", opt_critic_.state());
  save_checkpoint(path, cp);
}

void TrainSession::load(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.meta.value("module", "") != "train") {
    throw std::runtime_error("checkpoint: not a training checkpoint: " + path);
  }
  step_ = cp.meta.at("step").get<int64_t>();
  cursor_ = static_cast<size_t>(cp.meta.at("cursor").get<int64_t>());
  z_rng_.set_state(cp.meta.at("z_rng").get<std::string>());
  batch_rng_.set_state(cp.meta.at("batch_rng").get<std::string>());
  auto it = cp.tensors.find("data.order");
  if (it == cp.tensors.end()) throw std::runtime_error("checkpoint: missing data order: " + path);
  if (it->second.numel() != static_cast<int64_t>(order_.size())) {
    throw std::runtime_error("checkpoint: data order length mismatch (different dataset?): " + path);
  }
  for (size_t i = 0; i < order_.size(); ++i) {
    order_[i] = static_cast<int>(it->second.data[static_cast<int64_t>(i)]);
  }
  encoder_.params().load_state(cp.group("encoder"));
  d1_.params().load_state(cp.group("d1"));
  d2_.params().load_state(cp.group("d2"));
  opt_enc_.load_state(cp.group("opt_enc"));
  opt_critic_.load_state(cp.group("opt_critic"));
}

namespace {

void blit(Image& sheet, const Image& tile, int top, int left) {
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < tile.h; ++i) {
      for (int j = 0; j < tile.w; ++j) sheet.at(c, top + i, left + j) = tile.at(c, i, j);
    }
  }
}

}  // namespace

Image tile_pairs(const std::vector<Image>& inputs, const std::vector<Image>& outputs, int n) {
  if (inputs.size() != outputs.size()) throw std::invalid_argument("tile_pairs: length mismatch");
  if (inputs.empty() || n < 1) throw std::invalid_argument("tile_pairs: empty sheet");
  const int R = inputs[0].h;
  Image sheet = Image::blank(n * R, n * 2 * R);
  for (size_t k = 0; k < inputs.size() && k < static_cast<size_t>(n) * static_cast<size_t>(n); ++k) {
    int r = static_cast<int>(k) / n, c = static_cast<int>(k) % n;
    blit(sheet, inputs[k], r * R, c * 2 * R);
    blit(sheet, outputs[k], r * R, c * 2 * R + R);
  }
  return sheet;
}

TrainResult train(const TrainConfig& cfg, const std::vector<data::ImageRecord>& source_train,
                  Backbone& backbone, DstModel& dst, const std::string& resume_from) {
  TrainSession session(cfg, source_train, backbone, dst);
  const bool resuming = !resume_from.empty();
  if (resuming) session.load(resume_from);

  const bool write = !cfg.run_dir.empty();
  fs::path run_dir(cfg.run_dir);
  std::ofstream log;
  if (write) {
    fs::create_directories(run_dir);
    log.open(run_dir / "loss.tsv", resuming ? std::ios::app : std::ios::out);
    if (!log) throw std::runtime_error("cannot write loss log in " + cfg.run_dir);
    if (!resuming) log << "step\tl_st\tadversarial\tcritic\ttotal\n";
  }

  // fixed preview inputs: the first grid cells of the training order
  std::vector<Image> grid_in;
  if (write) {
    size_t want = static_cast<size_t>(cfg.sample_grid) * static_cast<size_t>(cfg.sample_grid);
    for (size_t i = 0; i < source_train.size() && i < want; ++i) {
      grid_in.push_back(source_train[i].pixels);
    }
  }

  double acc_l = 0, acc_a = 0, acc_c = 0, acc_t = 0;
  int acc_n = 0;
  auto checkpoint_at = [&](int64_t done, bool final_one) {
    if (!write) return std::string();
    char stem[32];
    if (final_one) {
      std::snprintf(stem, sizeof stem, "train_final");
    } else {
      std::snprintf(stem, sizeof stem, "train_%06lld", static_cast<long long>(done));
    }
    fs::path ck = run_dir / (std::string(stem) + ".ckpt");
    session.save(ck.string());

    std::vector<Image> grid_out;
    for (const Image& im : grid_in) {
      grid_out.push_back(translate(session.encoder(), backbone, im));
    }
    if (!grid_in.empty()) {
      save_image((run_dir / (std::string(stem) + "_samples.png")).string(),
                 tile_pairs(grid_in, grid_out, cfg.sample_grid));
    }

    double n = std::max(acc_n, 1);
    kv_write_file((run_dir / (std::string(stem) + "_metrics.kv")).string(),
                  {{"step", std::to_string(done)},
                   {"window", std::to_string(acc_n)},
                   {"mean_l_st", format_double(acc_l / n)},
                   {"mean_adversarial", format_double(acc_a / n)},
                   {"mean_critic", format_double(acc_c / n)},
                   {"mean_total", format_double(acc_t / n)}});
    acc_l = acc_a = acc_c = acc_t = 0;
    acc_n = 0;
    return ck.string();
  };

  std::string final_ck;
  while (session.step_count() < cfg.steps) {
    StepLogs s = session.step();
    int64_t done = session.step_count();
    if (write) {
      log << (done - 1) << "\t" << format_double(s.l_st) << "\t" << format_double(s.adversarial)
          << "\t" << format_double(s.critic) << "\t" << format_double(s.total) << "\n";
    }
    acc_l += s.l_st;
    acc_a += s.adversarial;
    acc_c += s.critic;
    acc_t += s.total;
    ++acc_n;
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.steps) {
      checkpoint_at(done, false);
    }
  }
  final_ck = checkpoint_at(session.step_count(), true);

  return TrainResult{std::move(session), final_ck};
}

}  // namespace stnet::model
