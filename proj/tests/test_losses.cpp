#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/model/dst.hpp"
#include "stnet/model/dual.hpp"

#include <cmath>

using namespace stnet;
using namespace stnet::nn;
using namespace stnet::model;
using testutil::check_grads;
using testutil::random_tensor;

namespace {

Tensor row_tensor(std::vector<int> shape, std::vector<double> vals) {
  Tensor t(std::move(shape));
  REQUIRE(t.numel() == static_cast<int64_t>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) t.data[static_cast<int64_t>(i)] = vals[i];
  return t;
}

Tensor unit_rows(Rng& rng, int rows, int d) {
  Tensor t = random_tensor(rng, {rows, d});
  for (int i = 0; i < rows; ++i) {
    double n = std::sqrt(t.data.segment(static_cast<int64_t>(i) * d, d).square().sum());
    t.data.segment(static_cast<int64_t>(i) * d, d) /= n;
  }
  return t;
}

double texture_oracle(const Tensor& emb) {
  int n2 = emb.dim(0), d = emb.dim(1), n = n2 / 2;
  auto dot = [&](int i, int j) {
    double s = 0;
    for (int k = 0; k < d; ++k) s += emb.data[static_cast<int64_t>(i) * d + k] * emb.data[static_cast<int64_t>(j) * d + k];
    return s;
  };
  double total = 0;
  for (int i = 0; i < n; ++i) {
    int a = 2 * i, p = 2 * i + 1;
    double denom = 0;
    for (int j = 0; j < n2; ++j) denom += std::exp(dot(j, a));
    total += -std::log(std::exp(dot(p, a)) / denom);
  }
  return total / n;
}

double scalar_loss(Tape& t, Var v) { return t.val(v).item(); }

}  // namespace

// ---------------------------------------------------------------------------
// style loss
// ---------------------------------------------------------------------------

TEST_CASE("style loss vanishes when prediction equals the smoothed target") {
  Rng rng(30);
  Tensor h = random_tensor(rng, {3, 10}, 0.05, 1.0);
  for (int c = 0; c < 3; ++c) {
    double s = h.data.segment(c * 10, 10).sum();
    h.data.segment(c * 10, 10) /= s;
  }
  Tape t;
  Var hv = t.leaf(h, false);
  CHECK(std::abs(scalar_loss(t, style_loss(t, hv, hv))) < 1e-9);
}

TEST_CASE("style loss matches the hand-computed two-bin value") {
  Tensor pred = row_tensor({3, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  Tensor gt = row_tensor({3, 2}, {0.25, 0.75, 0.25, 0.75, 0.25, 0.75});
  Tape t;
  double got = scalar_loss(t, style_loss(t, t.leaf(pred, false), t.leaf(gt, false)));
  double want = 3.0 * (0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.43152).epsilon(1e-4));
}

TEST_CASE("style loss agrees with an elementwise summation oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p = random_tensor(rng, {3, 8}, 0.02, 1.0);
    Tensor h = random_tensor(rng, {3, 8}, 0.02, 1.0);
    for (int c = 0; c < 3; ++c) {
      p.data.segment(c * 8, 8) /= p.data.segment(c * 8, 8).sum();
      h.data.segment(c * 8, 8) /= h.data.segment(c * 8, 8).sum();
    }
    double want = 0;
    for (int64_t i = 0; i < p.numel(); ++i) want += p.data[i] * std::log(p.data[i] / h.data[i]);
    Tape t;
    double got = scalar_loss(t, style_loss(t, t.leaf(p, false), t.leaf(h, false)));
    CHECK(got == doctest::Approx(want).epsilon(1e-8));
    CHECK(got >= -1e-12);  // KL non-negativity on normalized rows

    // reverse direction swaps the arguments
    double want_rev = 0;
    for (int64_t i = 0; i < p.numel(); ++i) want_rev += h.data[i] * std::log(h.data[i] / p.data[i]);
    Tape t2;
    double got_rev = scalar_loss(t2, style_loss(t2, t2.leaf(p, false), t2.leaf(h, false), true));
    CHECK(got_rev == doctest::Approx(want_rev).epsilon(1e-8));
  }
}

TEST_CASE("style loss rejects mismatched bin counts") {
  Tape t;
  Var a = t.leaf(Tensor::full({3, 10}, 0.1), false);
  Var b = t.leaf(Tensor::full({3, 8}, 0.125), false);
  CHECK_THROWS_AS(style_loss(t, a, b), std::invalid_argument);
}

TEST_CASE("style loss gradients match finite differences") {
  Rng rng(32);
  Tensor p = random_tensor(rng, {3, 6}, 0.1, 1.0);
  Tensor h = random_tensor(rng, {3, 6}, 0.1, 1.0);
  check_grads("style_loss", [](Tape& t, const std::vector<Var>& v) { return style_loss(t, v[0], v[1]); },
              {p, h});
}

TEST_CASE("histogram smoothing keeps rows normalized and positive") {
  Tensor h = row_tensor({3, 4}, {1, 0, 0, 0, 0.5, 0.5, 0, 0, 0.25, 0.25, 0.25, 0.25});
  Tensor s = smooth_histogram(h, 1e-4);
  CHECK(s.data.minCoeff() > 0.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(s.data.segment(c * 4, 4).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// texture loss
// ---------------------------------------------------------------------------

TEST_CASE("texture loss on one identical pair equals ln 2") {
  Tensor emb = row_tensor({2, 3}, {1, 0, 0, 1, 0, 0});
  Tape t;
  double got = scalar_loss(t, texture_loss(t, t.leaf(emb, false)));
  CHECK(got == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("texture loss on two orthogonal identical pairs has the closed form") {
  // anchors see: self (e), positive (e), two orthogonal negatives (1 each)
  Tensor emb = row_tensor({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
  Tape t;
  double got = scalar_loss(t, texture_loss(t, t.leaf(emb, false)));
  double want = std::log(2.0 + 2.0 / std::exp(1.0));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("texture loss matches a brute-force oracle on random batches") {
  Rng rng(33);
  for (int n = 1; n <= 8; ++n) {
    Tensor emb = unit_rows(rng, 2 * n, 16);
    Tape t;
    double got = scalar_loss(t, texture_loss(t, t.leaf(emb, false)));
    CHECK(got == doctest::Approx(texture_oracle(emb)).epsilon(1e-8));
    if (n == 1) CHECK(got >= std::log(2.0) - 1e-6);  // self-term lower bound
  }
}

TEST_CASE("texture loss rejects an odd number of embeddings") {
  Tape t;
  Var e = t.leaf(Tensor::full({3, 4}, 0.5), false);
  CHECK_THROWS_AS(texture_loss(t, e), std::invalid_argument);
}

TEST_CASE("texture loss gradients match finite differences") {
  Rng rng(34);
  Tensor emb = unit_rows(rng, 6, 8);
  check_grads("texture_loss", [](Tape& t, const std::vector<Var>& v) { return texture_loss(t, v[0]); },
              {emb});
}

// ---------------------------------------------------------------------------
// combined training loss
// ---------------------------------------------------------------------------

TEST_CASE("combined training loss is the weighted sum") {
  CHECK(dst_training_loss(1.0, 1.0, 1.0, 2.2) == doctest::Approx(3.2).epsilon(1e-12));
  CHECK(dst_training_loss(0.0, 0.0, 5.0, 9.0) == 0.0);
  Rng rng(35);
  for (int i = 0; i < 20; ++i) {
    double s = rng.uniform(0, 3), x = rng.uniform(0, 3), ls = rng.uniform(0, 2), lt = rng.uniform(0, 3);
    CHECK(dst_training_loss(s, x, ls, lt) == doctest::Approx(ls * s + lt * x).epsilon(1e-12));
    Tape t;
    Var v = dst_training_loss(t, t.leaf(Tensor::scalar(s), false), t.leaf(Tensor::scalar(x), false), ls, lt);
    CHECK(t.val(v).item() == doctest::Approx(ls * s + lt * x).epsilon(1e-12));
  }
}

// ---------------------------------------------------------------------------
// style distance
// ---------------------------------------------------------------------------

TEST_CASE("style distance hits its landmark values on stub features") {
  Tape t;
  auto d = [&](std::vector<double> a, std::vector<double> b) {
    Var fa = t.leaf(row_tensor({1, 3}, std::move(a)), false);
    Var fb = t.leaf(row_tensor({1, 3}, std::move(b)), false);
    return t.val(style_distance_rows(t, fa, fb)).item();
  };
  CHECK(d({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(d({1, 0, 0}, {0, 1, 0}) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d({1, 1, 0}, {-1, -1, 0}) == doctest::Approx(2.0).epsilon(1e-9));
  // scale invariance
  CHECK(d({1, 2, 3}, {2, 1, 0}) == doctest::Approx(d({1, 2, 3}, {8, 4, 0})).epsilon(1e-9));
  // symmetry
  CHECK(d({0.3, -1, 2}, {5, 0.1, -2}) == doctest::Approx(d({5, 0.1, -2}, {0.3, -1, 2})).epsilon(1e-9));
}

TEST_CASE("style distance rejects zero-norm features") {
  Tape t;
  Var fa = t.leaf(row_tensor({1, 3}, {0, 0, 0}), false);
  Var fb = t.leaf(row_tensor({1, 3}, {1, 0, 0}), false);
  CHECK_THROWS_WITH_AS(style_distance_rows(t, fa, fb),
                       doctest::Contains("degenerate feature"), NumericalError);
}

TEST_CASE("style distance gradients match finite differences") {
  Rng rng(36);
  Tensor fx = random_tensor(rng, {3, 8});
  Tensor fy = random_tensor(rng, {3, 8});
  check_grads("style_distance",
              [](Tape& t, const std::vector<Var> &v) { return style_distance_rows(t, v[0], v[1]); },
              {fx, fy});
}

// ---------------------------------------------------------------------------
// dual critic losses
// ---------------------------------------------------------------------------

TEST_CASE("critic loss equals 4 ln 2 at the uniform point for any batch size") {
  for (int B : {1, 3, 8}) {
    Tape t;
    Var half = t.leaf(Tensor::full({B}, 0.5), false);
    CHECK(t.val(critic_loss(t, half, half, half, half)).item() ==
          doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-9));
  }
}

TEST_CASE("critic loss approaches zero as the critics become perfect") {
  Tape t;
  Var hi = t.leaf(Tensor::full({2}, 1.0 - 1e-9), false);
  Var lo = t.leaf(Tensor::full({2}, 1e-9), false);
  CHECK(std::abs(t.val(critic_loss(t, hi, lo, hi, lo)).item()) < 1e-6);
}

TEST_CASE("critic loss matches an elementwise oracle and is role-symmetric") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    int B = 1 + static_cast<int>(rng.below(6));
    Tensor a = random_tensor(rng, {B}, 0.05, 0.95);
    Tensor b = random_tensor(rng, {B}, 0.05, 0.95);
    Tensor c = random_tensor(rng, {B}, 0.05, 0.95);
    Tensor d = random_tensor(rng, {B}, 0.05, 0.95);
    double want = 0;
    for (int i = 0; i < B; ++i) {
      want -= std::log(a.data[i]) / B;
      want -= std::log(c.data[i]) / B;
      want -= std::log(1.0 - b.data[i]) / B;
      want -= std::log(1.0 - d.data[i]) / B;
    }
    Tape t;
    Var av = t.leaf(a, false), bv = t.leaf(b, false), cv = t.leaf(c, false), dv = t.leaf(d, false);
    double got = t.val(critic_loss(t, av, bv, cv, dv)).item();
    CHECK(got == doctest::Approx(want).epsilon(1e-8));
    // exchanging the critics together with their "real" sides preserves the value
    double swapped = t.val(critic_loss(t, cv, dv, av, bv)).item();
    CHECK(swapped == doctest::Approx(got).epsilon(1e-9));
  }
}

TEST_CASE("literal one-minus-log mode follows the verbatim algebra") {
  Tape t;
  Tensor a = row_tensor({2}, {0.7, 0.8});
  Tensor b = row_tensor({2}, {0.2, 0.3});
  Tensor c = row_tensor({2}, {0.6, 0.9});
  Tensor d = row_tensor({2}, {0.1, 0.4});
  auto mean_log = [](const Tensor& v) { return v.data.log().mean(); };
  Var av = t.leaf(a, false), bv = t.leaf(b, false), cv = t.leaf(c, false), dv = t.leaf(d, false);

  double want_critic = -(mean_log(a) + mean_log(c) + (1.0 - mean_log(b)) + (1.0 - mean_log(d)));
  CHECK(t.val(critic_loss(t, av, bv, cv, dv, true)).item() ==
        doctest::Approx(want_critic).epsilon(1e-12));

  double want_enc = (1.0 - mean_log(b)) + mean_log(c);
  CHECK(t.val(encoder_adversarial_terms(t, bv, cv, true)).item() ==
        doctest::Approx(want_enc).epsilon(1e-12));
  // literal and standard encoder terms differ by exactly the constant 1
  CHECK(t.val(encoder_adversarial_terms(t, bv, cv, false)).item() ==
        doctest::Approx(want_enc - 1.0).epsilon(1e-12));
}

TEST_CASE("encoder adversarial terms hit their landmark values") {
  Tape t;
  Var half = t.leaf(Tensor::full({4}, 0.5), false);
  CHECK(std::abs(t.val(encoder_adversarial_terms(t, half, half)).item()) < 1e-12);

  Var s1 = t.leaf(Tensor::full({1}, 0.9), false);
  Var s2 = t.leaf(Tensor::full({1}, 0.1), false);
  CHECK(t.val(encoder_adversarial_terms(t, s1, s2)).item() ==
        doctest::Approx(-std::log(0.9) + std::log(0.1)).epsilon(1e-12));
  CHECK(t.val(encoder_adversarial_terms(t, s1, s2)).item() == doctest::Approx(-2.197).epsilon(1e-3));

  Rng rng(38);
  for (int trial = 0; trial < 20; ++trial) {
    int B = 1 + static_cast<int>(rng.below(5));
    Tensor x = random_tensor(rng, {B}, 0.05, 0.95);
    Tensor y = random_tensor(rng, {B}, 0.05, 0.95);
    double want = -x.data.log().mean() + y.data.log().mean();
    Tape t2;
    CHECK(t2.val(encoder_adversarial_terms(t2, t2.leaf(x, false), t2.leaf(y, false))).item() ==
          doctest::Approx(want).epsilon(1e-8));
  }
}

TEST_CASE("decreasing the encoded score opposes the two players") {
  auto enc_at = [](double s1) {
    Tape t;
    return t.val(encoder_adversarial_terms(t, t.leaf(Tensor::full({1}, s1), false),
                                           t.leaf(Tensor::full({1}, 0.5), false)))
        .item();
  };
  auto critic_at = [](double s1_we) {
    Tape t;
    Var half = t.leaf(Tensor::full({1}, 0.5), false);
    return t.val(critic_loss(t, half, t.leaf(Tensor::full({1}, s1_we), false), half, half)).item();
  };
  CHECK(enc_at(0.4) > enc_at(0.6));        // encoder is hurt by a lower D1 score
  CHECK(critic_at(0.4) < critic_at(0.6));  // the critic is helped by it
}

TEST_CASE("dual loss gradients match finite differences") {
  Rng rng(39);
  Tensor a = random_tensor(rng, {4}, 0.1, 0.9);
  Tensor b = random_tensor(rng, {4}, 0.1, 0.9);
  Tensor c = random_tensor(rng, {4}, 0.1, 0.9);
  Tensor d = random_tensor(rng, {4}, 0.1, 0.9);
  check_grads("critic_loss",
              [](Tape& t, const std::vector<Var>& v) { return critic_loss(t, v[0], v[1], v[2], v[3]); },
              {a, b, c, d});
  check_grads("encoder_adversarial_terms",
              [](Tape& t, const std::vector<Var>& v) { return encoder_adversarial_terms(t, v[0], v[1]); },
              {a, b});
}

// ---------------------------------------------------------------------------
// latent critic network
// ---------------------------------------------------------------------------

TEST_CASE("latent critic scores stay in range and batch consistently") {
  DualConfig cfg;
  cfg.d_w = 16;
  cfg.hidden = 32;
  Rng rng(40);
  LatentCritic critic(cfg, LatentCritic::Role::d1, rng);

  Rng data_rng(41);
  Tensor batch = random_tensor(data_rng, {5, 16}, -2.0, 2.0);
  Tape t;
  critic.bind(t, false);
  Tensor scores = t.val(critic.score_rows(t, t.leaf(batch, false)));
  CHECK(scores.dim(0) == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(scores.data[i] > 0.0);
    CHECK(scores.data[i] < 1.0);
    Tensor one({16}, batch.data.segment(i * 16, 16));
    CHECK(critic.critic_score(one) == doctest::Approx(scores.data[i]).epsilon(1e-12));
  }
  // determinism
  Tensor single({16}, batch.data.segment(0, 16));
  CHECK(critic.critic_score(single) == doctest::Approx(critic.critic_score(single)).epsilon(1e-15));

  Tensor bad = single;
  bad.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(critic.critic_score(bad), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// D_ST model mechanics
// ---------------------------------------------------------------------------

TEST_CASE("feature extraction is deterministic, finite, and batch-consistent") {
  DstConfig cfg;
  cfg.resolution = 16;
  cfg.base_ch = 4;
  cfg.d_f = 32;
  cfg.d_t = 16;
  Rng rng(42);
  DstModel model(cfg, rng);

  Image zero = Image::blank(16, 16);
  Tensor f0 = model.extract_features(zero);
  CHECK(f0.numel() == 32);
  CHECK(f0.all_finite());

  Rng drng(43);
  std::vector<Image> imgs;
  for (int i = 0; i < 3; ++i) {
    Image im = Image::blank(16, 16);
    for (int64_t k = 0; k < im.chw.size(); ++k) im.chw[k] = drng.uniform();
    imgs.push_back(im);
  }
  std::vector<int> all{0, 1, 2};
  Tensor batch_feats = model.features_eval(batch_from_images(imgs, all));
  for (int i = 0; i < 3; ++i) {
    Tensor fi = model.extract_features(imgs[static_cast<size_t>(i)]);
    Tensor row({32}, batch_feats.data.segment(i * 32, 32));
    CHECK(testutil::rel_err(fi, row) < 1e-12);
    Tensor again = model.extract_features(imgs[static_cast<size_t>(i)]);
    CHECK((again.data == fi.data).all());
  }

  CHECK_THROWS_AS(model.extract_features(Image::blank(8, 8)), std::invalid_argument);
}

TEST_CASE("style head rows are probabilities and texture rows are unit vectors") {
  DstConfig cfg;
  cfg.resolution = 16;
  cfg.base_ch = 4;
  cfg.d_f = 32;
  cfg.d_t = 16;
  cfg.L = 10;
  Rng rng(44);
  DstModel model(cfg, rng);

  Rng drng(45);
  Tensor x = random_tensor(drng, {4, 3, 16, 16}, 0.0, 1.0);
  Tape t;
  model.bind(t);
  Var feats = model.features(t, t.leaf(x, false));
  Tensor probs = t.val(model.style_probs(t, feats));
  REQUIRE(probs.dim(0) == 12);
  for (int r = 0; r < 12; ++r) {
    double s = probs.data.segment(r * 10, 10).sum();
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(probs.data.segment(r * 10, 10).minCoeff() > 0.0);
  }
  Tensor emb = t.val(model.texture_embeddings(t, feats));
  for (int r = 0; r < 4; ++r) {
    CHECK(std::sqrt(emb.data.segment(r * 16, 16).square().sum()) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("frozen model checksum is stable across reads") {
  DstConfig cfg;
  cfg.resolution = 16;
  cfg.base_ch = 4;
  cfg.d_f = 32;
  Rng rng(46);
  DstModel model(cfg, rng);
  uint64_t before = model.checksum();
  model.freeze();
  (void)model.extract_features(Image::blank(16, 16));
  CHECK(model.checksum() == before);
  CHECK(model.frozen());
}
