#include "stnet/model/dst.hpp"

#include "stnet/core/checkpoint.hpp"
#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace stnet::model {

using namespace stnet::nn;

DstModel::DstModel(const DstConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int c1 = cfg.base_ch, c2 = 2 * cfg.base_ch, c3 = 4 * cfg.base_ch;
  stem_ = make_conv(params_, "backbone.stem", 3, c1, 3, 1, 1, rng);
  rb1a_ = make_conv(params_, "backbone.rb1a", c1, c1, 3, 1, 1, rng);
  rb1b_ = make_conv(params_, "backbone.rb1b", c1, c1, 3, 1, 1, rng);
  down1_ = make_conv(params_, "backbone.down1", c1, c2, 3, 2, 1, rng);
  rb2a_ = make_conv(params_, "backbone.rb2a", c2, c2, 3, 1, 1, rng);
  rb2b_ = make_conv(params_, "backbone.rb2b", c2, c2, 3, 1, 1, rng);
  down2_ = make_conv(params_, "backbone.down2", c2, c3, 3, 2, 1, rng);
  rb3a_ = make_conv(params_, "backbone.rb3a", c3, c3, 3, 1, 1, rng);
  rb3b_ = make_conv(params_, "backbone.rb3b", c3, c3, 3, 1, 1, rng);
  feat_ = make_linear(params_, "backbone.feat", c3, cfg.d_f, rng);
  sty1_ = make_linear(params_, "sty.fc1", cfg.d_f, 128, rng);
  sty2_ = make_linear(params_, "sty.fc2", 128, 3 * cfg.L, rng);
  tex1_ = make_linear(params_, "tex.fc1", cfg.d_f, 128, rng);
  tex2_ = make_linear(params_, "tex.fc2", 128, cfg.d_t, rng);
}

namespace {

Var res_block(Tape& t, Var x, const Conv& a, const Conv& b) {
  Var h = b.forward(t, leaky_relu(t, a.forward(t, x), 0.2));
  return leaky_relu(t, add(t, x, h), 0.2);
}

}  // namespace

Var DstModel::features(Tape& t, Var images) const {
  Var h = leaky_relu(t, stem_.forward(t, images), 0.2);
  h = res_block(t, h, rb1a_, rb1b_);
  h = leaky_relu(t, down1_.forward(t, h), 0.2);
  h = res_block(t, h, rb2a_, rb2b_);
  h = leaky_relu(t, down2_.forward(t, h), 0.2);
  h = res_block(t, h, rb3a_, rb3b_);
  return feat_.forward(t, global_avg_pool(t, h));
}

Var DstModel::style_probs(Tape& t, Var feats) const {
  int B = t.val(feats).dim(0);
  Var h = leaky_relu(t, sty1_.forward(t, feats), 0.2);
  Var logits = sty2_.forward(t, h);  // [B, 3L]
  return softmax_rows(t, reshape(t, logits, {3 * B, cfg_.L}));
}

Var DstModel::texture_embeddings(Tape& t, Var feats) const {
  Var h = leaky_relu(t, tex1_.forward(t, feats), 0.2);
  return l2_normalize_rows(t, tex2_.forward(t, h));
}

Tensor DstModel::extract_features(const Image& img) {
  if (img.h != cfg_.resolution || img.w != cfg_.resolution) {
    throw std::invalid_argument("feature extraction: expected " + std::to_string(cfg_.resolution) + "x" +
                                std::to_string(cfg_.resolution) + " image, got " + std::to_string(img.h) +
                                "x" + std::to_string(img.w));
  }
  Tensor batch({1, 3, img.h, img.w}, img.chw);
  Tensor out = features_eval(batch);
  return Tensor({cfg_.d_f}, out.data);
}

Tensor DstModel::features_eval(const Tensor& images) {
  Tape t;
  params_.bind(t, false);
  return t.val(features(t, t.leaf(images, false)));
}

Tensor smooth_histogram(const Tensor& bins, double eps) {
  if (bins.ndim() != 2) throw std::logic_error("smooth_histogram: expected [rows,L]");
  int L = bins.dim(1);
  return Tensor(bins.shape, (bins.data + eps) / (1.0 + L * eps));
}

Var style_loss(Tape& t, Var pred, Var gt, bool reverse_kl) {
  if (t.val(pred).ndim() != 2 || !t.val(pred).same_shape(t.val(gt))) {
    throw std::invalid_argument("style loss: prediction/target shape mismatch (" + t.val(pred).shape_str() +
                                " vs " + t.val(gt).shape_str() + ")");
  }
  Var p = reverse_kl ? gt : pred;
  Var h = reverse_kl ? pred : gt;
  return sum_all(t, mul(t, p, sub(t, log_op(t, p), log_op(t, h))));
}

Var texture_loss(Tape& t, Var embeddings) {
  const Tensor& e = t.val(embeddings);
  if (e.ndim() != 2 || e.dim(0) % 2 != 0 || e.dim(0) < 2) {
    throw std::invalid_argument("texture loss: expected an even number of embeddings, got " + e.shape_str());
  }
  const int n2 = e.dim(0);
  const int n = n2 / 2;
  Var sims = matmul(t, embeddings, transpose(t, embeddings));  // [2n,2n]
  std::vector<int> anchors(static_cast<size_t>(n));
  std::vector<int64_t> pos(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    anchors[static_cast<size_t>(i)] = 2 * i;
    pos[static_cast<size_t>(i)] = static_cast<int64_t>(i) * n2 + (2 * i + 1);  // into [n,2n] selection
  }
  Var arows = rows_select(t, sims, anchors);            // [n, 2n]
  Var lse = logsumexp_rows(t, arows);                   // includes the self term
  Var positives = gather_flat(t, arows, pos);           // [n]
  return mean_all(t, sub(t, lse, positives));
}

Var dst_training_loss(Tape& t, Var style, Var texture, double lambda_sty, double lambda_tex) {
  return add(t, mul_scalar(t, style, lambda_sty), mul_scalar(t, texture, lambda_tex));
}

double dst_training_loss(double style, double texture, double lambda_sty, double lambda_tex) {
  return lambda_sty * style + lambda_tex * texture;
}

double style_distance(DstModel& model, const Image& x, const Image& y) {
  Tensor fx = model.extract_features(x);
  Tensor fy = model.extract_features(y);
  double nx = std::sqrt((fx.data * fx.data).sum());
  double ny = std::sqrt((fy.data * fy.data).sum());
  if (nx < 1e-12 || ny < 1e-12) throw NumericalError("degenerate feature: zero-norm output");
  double c = (fx.data * fy.data).sum() / (nx * ny);
  return 1.0 - c;
}

Var style_distance_rows(Tape& t, Var fx, Var fy) {
  const Tensor& a = t.val(fx);
  if (a.ndim() != 2 || !a.same_shape(t.val(fy))) {
    throw std::invalid_argument("style distance: feature shape mismatch");
  }
  Eigen::ArrayXd nx = t.val(fx).mat(a.dim(0), a.dim(1)).rowwise().norm().array();
  Eigen::ArrayXd ny = t.val(fy).mat(a.dim(0), a.dim(1)).rowwise().norm().array();
  if (nx.minCoeff() < 1e-12 || ny.minCoeff() < 1e-12) {
    throw NumericalError("degenerate feature: zero-norm output");
  }
  Var cos_rows = row_sum(t, mul(t, nn::l2_normalize_rows(t, fx), nn::l2_normalize_rows(t, fy)));
  return mean_all(t, add_scalar(t, neg(t, cos_rows), 1.0));
}

DstModel train_dst(const std::vector<data::ImageRecord>& dataset, const DstConfig& model_cfg,
                   const DstTrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("D_ST training: empty dataset");
  const int n = static_cast<int>(dataset.size());
  const int batch = std::min(cfg.batch, n);

  Rng init_rng = Rng::derive(cfg.seed, "dst.init");
  Rng batch_rng = Rng::derive(cfg.seed, "dst.batch");
  Rng crop_rng = Rng::derive(cfg.seed, "dst.crops");
  DstModel model(model_cfg, init_rng);

  // smoothed ground-truth histograms, fixed for the whole run
  std::vector<Tensor> targets;
  targets.reserve(dataset.size());
  for (const auto& rec : dataset) {
    targets.push_back(smooth_histogram(data::compute_color_histogram(rec, model_cfg.L).bins));
  }

  Adam opt(cfg.lr, cfg.beta1, cfg.beta2);
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot write training log: " + cfg.log_path);
    log << "step\tstyle\ttexture\ttotal\n";
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle on first use

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        batch_rng.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }

    Tape t;
    model.bind(t);

    // style branch: full images vs their smoothed ground-truth histograms
    std::vector<Image> imgs;
    imgs.reserve(idx.size());
    for (int i : idx) imgs.push_back(dataset[static_cast<size_t>(i)].pixels);
    std::vector<int> all(imgs.size());
    std::iota(all.begin(), all.end(), 0);
    Var x = t.leaf(batch_from_images(imgs, all), false);
    Var feats = model.features(t, x);
    Var probs = model.style_probs(t, feats);  // [3B, L]

    Tensor gt({3 * batch, model_cfg.L});
    for (int b = 0; b < batch; ++b) {
      gt.data.segment(static_cast<int64_t>(b) * 3 * model_cfg.L, 3 * model_cfg.L) =
          targets[static_cast<size_t>(idx[static_cast<size_t>(b)])].data;
    }
    Var style = mul_scalar(t, style_loss(t, probs, t.leaf(gt, false), model_cfg.reverse_kl),
                           1.0 / static_cast<double>(batch));

    // texture branch: one patch pair per image, negatives from the whole batch
    std::vector<Image> patches;
    patches.reserve(idx.size() * 2);
    for (int i : idx) {
      data::PatchPair pp = data::crop_patch_pair(dataset[static_cast<size_t>(i)], cfg.patch, crop_rng);
      patches.push_back(std::move(pp.anchor));
      patches.push_back(std::move(pp.positive));
    }
    std::vector<int> pall(patches.size());
    std::iota(pall.begin(), pall.end(), 0);
    Var px = t.leaf(batch_from_images(patches, pall), false);
    Var emb = model.texture_embeddings(t, model.features(t, px));
    Var texture = texture_loss(t, emb);

    Var total = dst_training_loss(t, style, texture, cfg.lambda_sty, cfg.lambda_tex);

    auto params = model.params().all();
    std::vector<Var> wrt;
    wrt.reserve(params.size());
    for (auto* p : params) wrt.push_back(p->var);
    std::vector<Tensor> grads = t.gradients(total, wrt);
    opt.step(params, grads);

    if (log.is_open()) {
      log << step << "\t" << format_double(t.val(style).item()) << "\t"
          << format_double(t.val(texture).item()) << "\t" << format_double(t.val(total).item()) << "\n";
    }
  }

  model.freeze();
  return model;
}

void save_dst(DstModel& model, const std::string& path) {
  const DstConfig& cfg = model.config();
  Checkpoint cp;
  cp.meta = {{"module", "dst"},
             {"resolution", cfg.resolution},
             {"base_ch", cfg.base_ch},
             {"d_f", cfg.d_f},
             {"d_t", cfg.d_t},
             {"L", cfg.L},
             {"reverse_kl", cfg.reverse_kl},
             {"frozen", model.frozen()}};
  cp.add_group("dst", model.params().state());
  save_checkpoint(path, cp);
}

DstModel load_dst(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.meta.value("module", "") != "dst") {
    throw std::runtime_error("checkpoint: not a style/texture discriminator checkpoint: " + path);
  }
  DstConfig cfg;
  cfg.resolution = cp.meta.at("resolution").get<int>();
  cfg.base_ch = cp.meta.at("base_ch").get<int>();
  cfg.d_f = cp.meta.at("d_f").get<int>();
  cfg.d_t = cp.meta.at("d_t").get<int>();
  cfg.L = cp.meta.at("L").get<int>();
  cfg.reverse_kl = cp.meta.at("reverse_kl").get<bool>();
  Rng scratch(0);
  DstModel model(cfg, scratch);
  model.params().load_state(cp.group("dst"));
  if (cp.meta.value("frozen", false)) model.freeze();
  return model;
}

}  // namespace stnet::model
