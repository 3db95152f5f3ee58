#include "stnet/model/backbone.hpp"

#include "stnet/core/checkpoint.hpp"
#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace stnet::model {

using namespace stnet::nn;

std::vector<int> channel_schedule(int resolution, int ch_base, int ch_max) {
  if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("backbone: resolution must be a power of two >= 8");
  }
  int stages = 1;
  for (int r = 4; r < resolution; r *= 2) ++stages;
  std::vector<int> ch(static_cast<size_t>(stages));
  for (int i = 0; i < stages; ++i) {
    int doublings = stages - 1 - i;
    int64_t w = static_cast<int64_t>(ch_base) << std::min(doublings, 20);
    ch[static_cast<size_t>(i)] = static_cast<int>(std::min<int64_t>(w, ch_max));
  }
  return ch;
}

std::vector<int> synthesis_channels(const BackboneConfig& cfg) {
  return channel_schedule(cfg.resolution, cfg.ch_base, cfg.ch_max);
}

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg), ch_(synthesis_channels(cfg)) {
  int in = cfg.d_z;
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    int out = (i + 1 == cfg.mapping_layers) ? cfg.d_w : cfg.mapping_hidden;
    map_.push_back(make_linear(params_, "f.fc" + std::to_string(i), in, out, rng));
    in = out;
  }

  Tensor root({ch_[0], 4, 4});
  for (int64_t i = 0; i < root.numel(); ++i) root.data[i] = rng.normal();
  root_ = params_.add("g.root", std::move(root));

  // gentle modulation at init: scales start near 1 with spread ~0.5
  double aff_std = 0.5 / std::sqrt(static_cast<double>(cfg.d_w));
  for (size_t i = 0; i < ch_.size(); ++i) {
    int cin = (i == 0) ? ch_[0] : ch_[i - 1];
    aff_.push_back(make_linear(params_, "g.aff" + std::to_string(i), cfg.d_w, cin, rng, aff_std));
    conv_.push_back(make_conv(params_, "g.conv" + std::to_string(i), cin, ch_[i], 3, 1, 1, rng));
  }
  rgb_ = make_conv(params_, "g.rgb", ch_.back(), 3, 1, 1, 0, rng);
}

Var Backbone::map_codes(Tape& t, Var z) const {
  const Tensor& zt = t.val(z);
  if (zt.ndim() != 2 || zt.dim(1) != cfg_.d_z) {
    throw std::invalid_argument("mapping network: expected [B," + std::to_string(cfg_.d_z) +
                                "] noise, got " + zt.shape_str());
  }
  Var x = pixel_norm_rows(t, z);
  for (const auto& l : map_) x = leaky_relu(t, l.forward(t, x), 0.2);
  return x;
}

Var Backbone::synthesize_batch(Tape& t, Var w) const {
  const Tensor& wt = t.val(w);
  if (wt.ndim() != 2 || wt.dim(1) != cfg_.d_w) {
    throw std::invalid_argument("synthesis network: expected [B," + std::to_string(cfg_.d_w) +
                                "] codes, got " + wt.shape_str());
  }
  const int B = wt.dim(0);
  Var x = broadcast_batch(t, root_->var, B);
  int res = 4;
  for (size_t i = 0; i < conv_.size(); ++i) {
    if (i > 0) {
      x = upsample2x(t, x);
      res *= 2;
    }
    Var scale = add_scalar(t, aff_[i].forward(t, w), 1.0);  // [B,cin]
    x = mul(t, x, chan_broadcast(t, scale, res, res));
    x = leaky_relu(t, conv_[i].forward(t, x), 0.2);
  }
  Var rgb = rgb_.forward(t, x);
  return mul_scalar(t, add_scalar(t, tanh_act(t, rgb), 1.0), 0.5);
}

Tensor Backbone::sample_w(const Tensor& z) {
  if (z.ndim() != 1 || z.dim(0) != cfg_.d_z) {
    throw std::invalid_argument("sample_w: expected a [" + std::to_string(cfg_.d_z) +
                                "] noise vector, got " + z.shape_str());
  }
  if (!z.all_finite()) throw std::invalid_argument("sample_w: non-finite noise");
  Tensor w = sample_w_eval(Tensor({1, cfg_.d_z}, z.data));
  return Tensor({cfg_.d_w}, w.data);
}

Tensor Backbone::sample_w_eval(const Tensor& z) {
  Tape t;
  params_.bind(t, false);
  return t.val(map_codes(t, t.leaf(z, false)));
}

Image Backbone::synthesize(const Tensor& w) {
  if (w.ndim() != 1 || w.dim(0) != cfg_.d_w) {
    throw std::invalid_argument("synthesize: expected a [" + std::to_string(cfg_.d_w) +
                                "] latent code, got " + w.shape_str());
  }
  if (!w.all_finite()) throw std::invalid_argument("synthesize: non-finite latent code");
  Tensor batch = synthesize_eval(Tensor({1, cfg_.d_w}, w.data));
  return image_from_batch(batch, 0);
}

Tensor Backbone::synthesize_eval(const Tensor& w) {
  if (!w.all_finite()) throw std::invalid_argument("synthesize: non-finite latent code");
  Tape t;
  params_.bind(t, false);
  return t.val(synthesize_batch(t, t.leaf(w, false)));
}

ImageCritic::ImageCritic(const BackboneConfig& cfg, Rng& rng) {
  std::vector<int> ch = synthesis_channels(cfg);
  std::reverse(ch.begin(), ch.end());  // full resolution first
  from_rgb_ = make_conv(params_, "d.from_rgb", 3, ch[0], 3, 1, 1, rng);
  for (size_t i = 0; i + 1 < ch.size(); ++i) {
    downs_.push_back(
        make_conv(params_, "d.down" + std::to_string(i), ch[i], ch[i + 1], 3, 2, 1, rng));
  }
  fc_ = make_linear(params_, "d.fc", ch.back(), 1, rng);
}

Var ImageCritic::logits(Tape& t, Var images) const {
  Var x = leaky_relu(t, from_rgb_.forward(t, images), 0.2);
  for (const auto& c : downs_) x = leaky_relu(t, c.forward(t, x), 0.2);
  Var pooled = global_avg_pool(t, x);
  Var y = fc_.forward(t, pooled);  // [B,1]
  return reshape(t, y, {t.val(y).dim(0)});
}

namespace {

std::vector<Var> bound_vars(ParamSet& ps) {
  std::vector<Var> vars;
  for (auto* p : ps.all()) vars.push_back(p->var);
  return vars;
}

}  // namespace

Backbone pretrain_backbone(const std::vector<data::ImageRecord>& dataset,
                           const BackboneConfig& model_cfg, const PretrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("backbone pretraining: empty dataset");
  for (const auto& rec : dataset) {
    if (rec.domain != dataset.front().domain) {
      throw std::invalid_argument("backbone pretraining: dataset mixes domains");
    }
    if (rec.pixels.h != model_cfg.resolution || rec.pixels.w != model_cfg.resolution) {
      throw std::invalid_argument("backbone pretraining: image size does not match resolution");
    }
  }

  Rng init_rng = Rng::derive(cfg.seed, "gan.init");
  Backbone backbone(model_cfg, init_rng);
  ImageCritic critic(model_cfg, init_rng);

  Adam opt_g(cfg.lr, cfg.beta1, cfg.beta2);
  Adam opt_d(cfg.lr, cfg.beta1, cfg.beta2);

  Rng z_rng = Rng::derive(cfg.seed, "gan.z");
  Rng batch_rng = Rng::derive(cfg.seed, "gan.batch");

  const int n = static_cast<int>(dataset.size());
  const int batch = std::min(cfg.batch, n);

  std::vector<Image> pool;
  pool.reserve(dataset.size());
  for (const auto& rec : dataset) pool.push_back(rec.pixels);

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle on first use

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot write training log: " + cfg.log_path);
    log << "step\tcritic\tgenerator\tr1\n";
  }

  auto draw_z = [&](int rows) {
    Tensor z({rows, model_cfg.d_z});
    for (int64_t i = 0; i < z.numel(); ++i) z.data[i] = z_rng.normal();
    return z;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const bool do_r1 = cfg.r1_interval > 0 && step % cfg.r1_interval == 0;

    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    Tensor reals = batch_from_images(pool, idx);

    // fakes for the critic step, produced without the generator's graph
    Tensor fakes;
    {
      Tape tf;
      backbone.params().bind(tf, false);
      fakes = tf.val(backbone.synthesize_batch(tf, backbone.map_codes(tf, tf.leaf(draw_z(batch), false))));
    }

    double d_val = 0, r1_val = 0;
    {
      Tape td;
      critic.bind(td, true);
      Var xr = td.leaf(reals, do_r1);  // input gradients only needed for the penalty
      Var real_logits = critic.logits(td, xr);
      Var fake_logits = critic.logits(td, td.leaf(fakes, false));
      Var loss = add(td, mean_all(td, softplus(td, neg(td, real_logits))),
                     mean_all(td, softplus(td, fake_logits)));
      if (do_r1) {
        std::vector<Var> gx = td.grad_vars(sum_all(td, real_logits), {xr});
        Var penalty = mul_scalar(td, sum_all(td, mul(td, gx[0], gx[0])), 1.0 / batch);
        r1_val = td.val(penalty).item();
        loss = add(td, loss,
                   mul_scalar(td, penalty, 0.5 * cfg.r1_gamma * static_cast<double>(cfg.r1_interval)));
      }
      d_val = td.val(loss).item();
      opt_d.step(critic.params().all(), td.gradients(loss, bound_vars(critic.params())));
    }

    double g_val = 0;
    {
      Tape tg;
      backbone.params().bind(tg, true);
      critic.bind(tg, false);
      Var fake = backbone.synthesize_batch(tg, backbone.map_codes(tg, tg.leaf(draw_z(batch), false)));
      Var loss = mean_all(tg, softplus(tg, neg(tg, critic.logits(tg, fake))));
      g_val = tg.val(loss).item();
      opt_g.step(backbone.params().all(), tg.gradients(loss, bound_vars(backbone.params())));
    }

    if (log.is_open()) {
      log << step << "\t" << format_double(d_val) << "\t" << format_double(g_val) << "\t"
          << format_double(r1_val) << "\n";
    }
  }

  return backbone;
}

void save_backbone(Backbone& backbone, const std::string& path) {
  const BackboneConfig& cfg = backbone.config();
  Checkpoint cp;
  cp.meta = {{"module", "backbone"},
             {"resolution", cfg.resolution},
             {"d_z", cfg.d_z},
             {"d_w", cfg.d_w},
             {"mapping_hidden", cfg.mapping_hidden},
             {"mapping_layers", cfg.mapping_layers},
             {"ch_base", cfg.ch_base},
             {"ch_max", cfg.ch_max}};
  cp.add_group("backbone", backbone.params().state());
  save_checkpoint(path, cp);
}

Backbone load_backbone(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.meta.value("module", "") != "backbone") {
    throw std::runtime_error("checkpoint: not a backbone checkpoint: " + path);
  }
  BackboneConfig cfg;
  cfg.resolution = cp.meta.at("resolution").get<int>();
  cfg.d_z = cp.meta.at("d_z").get<int>();
  cfg.d_w = cp.meta.at("d_w").get<int>();
  cfg.mapping_hidden = cp.meta.at("mapping_hidden").get<int>();
  cfg.mapping_layers = cp.meta.at("mapping_layers").get<int>();
  cfg.ch_base = cp.meta.at("ch_base").get<int>();
  cfg.ch_max = cp.meta.at("ch_max").get<int>();
  Rng scratch(0);
  Backbone backbone(cfg, scratch);
  backbone.params().load_state(cp.group("backbone"));
  return backbone;
}

}  // namespace stnet::model
