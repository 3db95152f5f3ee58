#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/data/synthetic.hpp"
#include "stnet/model/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace stnet;
using namespace stnet::model;
namespace fs = std::filesystem;

namespace {

Tensor random_features(Rng& rng, int n, int d, double scale = 1.0) {
  Tensor t = Tensor::zeros({n, d});
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

/// Samples n points from N(mean, diag(sigma)^2).
Tensor gaussian_features(Rng& rng, int n, const std::vector<double>& mean,
                         const std::vector<double>& sigma) {
  const int d = static_cast<int>(mean.size());
  Tensor t = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      t.data[static_cast<Eigen::Index>(i) * d + j] = mean[j] + sigma[j] * rng.normal();
    }
  }
  return t;
}

BackboneConfig tiny_backbone_config() {
  BackboneConfig cfg;
  cfg.resolution = 16;
  cfg.d_z = 16;
  cfg.d_w = 16;
  cfg.mapping_hidden = 32;
  cfg.mapping_layers = 2;
  cfg.ch_base = 8;
  cfg.ch_max = 16;
  return cfg;
}

DstConfig tiny_dst_config() {
  DstConfig cfg;
  cfg.resolution = 16;
  cfg.base_ch = 4;
  cfg.d_f = 32;
  cfg.d_t = 16;
  return cfg;
}

EncoderConfig tiny_encoder_config() {
  EncoderConfig cfg;
  cfg.resolution = 16;
  cfg.d_w = 16;
  cfg.ch_base = 8;
  cfg.ch_max = 16;
  return cfg;
}

const fs::path& corpus_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stnet_metrics_corpus";
    data::SyntheticSpec spec;
    spec.out_dir = d.string();
    spec.n_per_domain = 24;
    spec.resolution = 16;
    spec.seed = 19;
    spec.force = true;
    data::make_synthetic_corpus(spec);
    return d;
  }();
  return dir;
}

std::vector<data::ImageRecord> corpus_domain(data::Domain dom) {
  const char* sub = dom == data::Domain::source ? "upper" : "lower";
  return data::load_dataset((corpus_dir() / sub).string(), dom, 16);
}

}  // namespace

TEST_CASE("cloud moments match a hand computation") {
  Tensor f = Tensor::zeros({4, 2});
  double raw[8] = {1.0, 2.0, 3.0, 0.0, -1.0, 4.0, 5.0, 2.0};
  for (int i = 0; i < 8; ++i) f.data[i] = raw[i];
  FeatureCloud c = make_cloud(f);
  CHECK(c.n() == 4);
  CHECK(c.dim() == 2);
  CHECK(c.mean(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(c.mean(1) == doctest::Approx(2.0).epsilon(1e-12));
  // unbiased covariance, worked out by hand from the centered rows
  CHECK(c.cov(0, 0) == doctest::Approx(20.0 / 3.0).epsilon(1e-12));
  CHECK(c.cov(1, 1) == doctest::Approx(8.0 / 3.0).epsilon(1e-12));
  CHECK(c.cov(0, 1) == doctest::Approx(-8.0 / 3.0).epsilon(1e-12));
  CHECK(c.cov(0, 1) == c.cov(1, 0));

  // rank-deficient estimate (n < d+1) stays usable, only warns
  Rng rng(3);
  FeatureCloud thin = make_cloud(random_features(rng, 2, 5));
  CHECK(thin.cov.rows() == 5);
  CHECK(frechet_distance(thin, thin) < 1e-6);

  CHECK_THROWS_AS(make_cloud(Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("distance from a cloud to itself is zero") {
  Rng rng(11);
  for (int d : {1, 6, 24}) {
    FeatureCloud a = make_cloud(random_features(rng, 60, d, 2.0));
    CHECK(frechet_distance(a, a) < 1e-6);
    // the optional stiffener shifts both covariances identically, so the
    // self-distance stays zero
    CHECK(frechet_distance(a, a, 1e-6) < 1e-6);
  }
}

TEST_CASE("scalar exact-moment case") {
  Eigen::VectorXd m0(1), m1(1);
  m0 << 0.0;
  m1 << 1.0;
  Eigen::MatrixXd v0(1, 1), v1(1, 1);
  v0 << 1.0;
  v1 << 4.0;
  FeatureCloud a = cloud_from_moments(m0, v0);
  FeatureCloud b = cloud_from_moments(m1, v1);
  // 1 + (1 + 4 - 2*sqrt(4)) = 2
  CHECK(std::abs(frechet_distance(a, b) - 2.0) < 1e-9);
  CHECK(std::abs(frechet_distance(b, a) - 2.0) < 1e-9);

  Eigen::MatrixXd skew(2, 2);
  skew << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(cloud_from_moments(Eigen::VectorXd::Zero(2), skew), std::invalid_argument);
  CHECK_THROWS_AS(cloud_from_moments(Eigen::VectorXd::Zero(3), v0), std::invalid_argument);
}

TEST_CASE("sampled gaussian pair matches the closed form") {
  Rng rng(101);
  const std::vector<double> mean_a = {0.0, 0.0, 0.0, 0.0};
  const std::vector<double> mean_b = {1.0, -0.5, 0.25, 0.75};
  const std::vector<double> sigma = {1.3, 1.3, 1.3, 1.3};
  double closed = 0.0;
  for (double v : mean_b) closed += v * v;
  FeatureCloud a = make_cloud(gaussian_features(rng, 50000, mean_a, sigma));
  FeatureCloud b = make_cloud(gaussian_features(rng, 50000, mean_b, sigma));
  const double fd = frechet_distance(a, b);
  CHECK(std::abs(fd - closed) <= 0.02 * closed);
}

TEST_CASE("symmetry and non-negativity on random clouds") {
  Rng rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(7));
    FeatureCloud a = make_cloud(random_features(rng, 30 + static_cast<int>(rng.below(40)), d, 1.5));
    FeatureCloud b = make_cloud(random_features(rng, 30 + static_cast<int>(rng.below(40)), d, 0.7));
    const double ab = frechet_distance(a, b);
    const double ba = frechet_distance(b, a);
    CHECK(std::abs(ab - ba) < 1e-6);
    CHECK(ab >= 0.0);
  }
  FeatureCloud a = make_cloud(random_features(rng, 20, 3));
  FeatureCloud b = make_cloud(random_features(rng, 20, 4));
  CHECK_THROWS_AS(frechet_distance(a, b), std::invalid_argument);
}

TEST_CASE("translation covariance") {
  Rng rng(23);
  const int n = 40, d = 5;
  Tensor fa = random_features(rng, n, d, 1.2);
  Tensor fb = random_features(rng, n, d, 0.8);
  const std::vector<double> shift = {0.7, -1.1, 0.4, 2.0, -0.3};

  auto shifted = [&](const Tensor& t, double scale) {
    Tensor s = t;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) s.data[static_cast<Eigen::Index>(i) * d + j] += scale * shift[j];
    }
    return s;
  };

  const double base = frechet_distance(make_cloud(fa), make_cloud(fb));
  // shifting both clouds by the same vector changes nothing
  const double both = frechet_distance(make_cloud(shifted(fa, 1.0)), make_cloud(shifted(fb, 1.0)));
  CHECK(std::abs(both - base) < 1e-9);

  // shifting one copy of a cloud leaves identical covariances, so the
  // distance is exactly the squared shift
  double norm2 = 0.0;
  for (double v : shift) norm2 += v * v;
  const double moved = frechet_distance(make_cloud(fa), make_cloud(shifted(fa, 1.0)));
  CHECK(std::abs(moved - norm2) < 1e-9);
}

TEST_CASE("pixel pca embedder") {
  Rng rng(31);
  std::vector<Image> reference;
  for (int i = 0; i < 20; ++i) {
    Image im = Image::blank(8, 8);
    for (auto& v : im.chw) v = rng.uniform();
    reference.push_back(im);
  }
  PixelPcaEmbedder pca(reference, 5);
  CHECK(pca.dim() == 5);
  CHECK(pca.name() == "pixel_pca");

  std::vector<int> idx;
  for (int i = 0; i < 20; ++i) idx.push_back(i);
  Tensor batch = batch_from_images(reference, idx);
  Tensor e1 = pca.embed(batch);
  Tensor e2 = pca.embed(batch);
  CHECK(e1.dim(0) == 20);
  CHECK(e1.dim(1) == 5);
  CHECK((e1.data - e2.data).abs().maxCoeff() == 0.0);

  // distance from a feature set to itself is zero in this space too
  FeatureCloud c = make_cloud(e1);
  CHECK(frechet_distance(c, c) < 1e-3);

  CHECK_THROWS_AS(pca.embed(Tensor::zeros({2, 3, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(PixelPcaEmbedder(reference, 0), std::invalid_argument);
  CHECK_THROWS_AS(PixelPcaEmbedder(reference, 21), std::invalid_argument);
  CHECK_THROWS_AS(PixelPcaEmbedder({}, 2), std::invalid_argument);
}

TEST_CASE("frozen discriminator embedder") {
  Rng rng = Rng::derive(5, "emb");
  DstModel dst(tiny_dst_config(), rng);
  CHECK_THROWS_AS(DstEmbedder{dst}, std::invalid_argument);
  dst.freeze();
  DstEmbedder emb(dst);
  CHECK(emb.dim() == 32);
  CHECK(emb.name() == "dst_backbone");

  std::vector<Image> ims;
  for (int i = 0; i < 6; ++i) {
    Image im = Image::blank(16, 16);
    for (auto& v : im.chw) v = rng.uniform();
    ims.push_back(im);
  }
  std::vector<int> idx = {0, 1, 2, 3, 4, 5};
  Tensor batch = batch_from_images(ims, idx);
  Tensor feats = emb.embed(batch);
  Tensor direct = dst.features_eval(batch);
  CHECK((feats.data - direct.data).abs().maxCoeff() == 0.0);

  FeatureCloud c = make_cloud(feats);
  CHECK(frechet_distance(c, c) < 1e-3);
}

TEST_CASE("discriminator checkpoint round trip") {
  Rng rng = Rng::derive(13, "ck");
  DstModel dst(tiny_dst_config(), rng);
  dst.freeze();
  fs::path path = fs::temp_directory_path() / "stnet_metrics_dst.ckpt";
  save_dst(dst, path.string());
  DstModel back = load_dst(path.string());
  CHECK(back.frozen());
  CHECK(back.checksum() == dst.checksum());
  CHECK(back.config().d_f == dst.config().d_f);

  Image probe = Image::blank(16, 16);
  for (auto& v : probe.chw) v = rng.uniform();
  Tensor fa = dst.extract_features(probe);
  Tensor fb = back.extract_features(probe);
  CHECK((fa.data - fb.data).abs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(load_dst((fs::temp_directory_path() / "stnet_no_such.ckpt").string()),
                  MissingDependencyError);
}

TEST_CASE("compatibility proxy basics") {
  Rng rng = Rng::derive(9, "proxy");
  DstModel dst(tiny_dst_config(), rng);
  Image x = Image::blank(16, 16);
  for (auto& v : x.chw) v = rng.uniform();
  CHECK_THROWS_AS(compatibility_proxy(dst, x, x), std::invalid_argument);
  dst.freeze();

  CHECK(compatibility_proxy(dst, x, x) == doctest::Approx(1.0).epsilon(1e-9));
  for (int trial = 0; trial < 20; ++trial) {
    Image a = Image::blank(16, 16);
    Image b = Image::blank(16, 16);
    for (auto& v : a.chw) v = rng.uniform();
    for (auto& v : b.chw) v = rng.uniform();
    const double p = compatibility_proxy(dst, a, b);
    CHECK(p >= -1.0 - 1e-12);
    CHECK(p <= 1.0 + 1e-12);
    // the proxy and the style distance are two names for the same cosine
    CHECK(std::abs(p - (1.0 - style_distance(dst, a, b))) < 1e-15);
  }
}

TEST_CASE("trained discriminator ranks matching pairs above shuffled ones") {
  auto uppers = corpus_domain(data::Domain::source);
  auto lowers = corpus_domain(data::Domain::target);
  std::vector<data::ImageRecord> both = uppers;
  both.insert(both.end(), lowers.begin(), lowers.end());

  DstTrainConfig tc;
  tc.steps = 300;
  tc.batch = 8;
  tc.patch = 8;
  tc.seed = 4;
  DstModel dst = train_dst(both, tiny_dst_config(), tc);
  REQUIRE(dst.frozen());

  std::map<std::string, const Image*> by_id;
  for (const auto& r : both) by_id[r.id] = &r.pixels;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::ifstream in(corpus_dir() / "pairs.txt");
  REQUIRE(in.good());
  std::string up, lo;
  while (in >> up >> lo) pairs.emplace_back(up, lo);
  REQUIRE(pairs.size() >= 16);

  double matched = 0.0, shuffled = 0.0;
  const size_t m = pairs.size();
  for (size_t i = 0; i < m; ++i) {
    const Image& x = *by_id.at(pairs[i].first);
    matched += compatibility_proxy(dst, x, *by_id.at(pairs[i].second));
    shuffled += compatibility_proxy(dst, x, *by_id.at(pairs[(i + 3) % m].second));
  }
  matched /= static_cast<double>(m);
  shuffled /= static_cast<double>(m);
  INFO("matched mean ", matched, " shuffled mean ", shuffled);
  CHECK(matched > shuffled);
}

TEST_CASE("metric report round trip") {
  MetricReport r;
  r.fid = 0.12345678901234567;
  r.compat_proxy_mean = -0.25;
  r.n_eval = 19;
  r.direction = Direction::lower_to_upper;
  r.embedder = "pixel_pca";
  r.config_ref = "runs/demo/config.kv";
  r.note = "smoke";
  fs::path path = fs::temp_directory_path() / "stnet_metrics_report.kv";
  save_metric_report(path.string(), r);
  MetricReport back = load_metric_report(path.string());
  CHECK(back.fid == r.fid);
  CHECK(back.compat_proxy_mean == r.compat_proxy_mean);
  CHECK(back.n_eval == r.n_eval);
  CHECK(back.direction == r.direction);
  CHECK(back.embedder == r.embedder);
  CHECK(back.config_ref == r.config_ref);
  CHECK(back.note == r.note);
}

TEST_CASE("evaluation produces a populated report") {
  Rng rng = Rng::derive(21, "eval");
  Backbone backbone(tiny_backbone_config(), rng);
  Encoder encoder(tiny_encoder_config(), rng);
  DstModel dst(tiny_dst_config(), rng);

  auto source = corpus_domain(data::Domain::source);
  auto target = corpus_domain(data::Domain::target);
  std::vector<Image> target_images;
  for (const auto& r : target) target_images.push_back(r.pixels);
  PixelPcaEmbedder pca(target_images, 4);

  CHECK_THROWS_AS(
      evaluate(encoder, backbone, dst, pca, source, target, Direction::upper_to_lower),
      std::invalid_argument);
  backbone.freeze();
  CHECK_THROWS_AS(
      evaluate(encoder, backbone, dst, pca, source, target, Direction::upper_to_lower),
      std::invalid_argument);
  dst.freeze();
  CHECK_THROWS_AS(evaluate(encoder, backbone, dst, pca, {}, target, Direction::upper_to_lower),
                  std::invalid_argument);
  CHECK_THROWS_AS(evaluate(encoder, backbone, dst, pca, source, {}, Direction::upper_to_lower),
                  std::invalid_argument);

  MetricReport r =
      evaluate(encoder, backbone, dst, pca, source, target, Direction::upper_to_lower, "cfg.kv");
  CHECK(r.n_eval == static_cast<int>(source.size()));
  CHECK(std::isfinite(r.fid));
  CHECK(r.fid >= 0.0);
  CHECK(r.compat_proxy_mean >= -1.0 - 1e-12);
  CHECK(r.compat_proxy_mean <= 1.0 + 1e-12);
  CHECK(r.direction == Direction::upper_to_lower);
  CHECK(r.embedder == "pixel_pca");
  CHECK(r.config_ref == "cfg.kv");
  CHECK(!r.note.empty());

  // the discriminator feature space plugs into the same report
  DstEmbedder demb(dst);
  MetricReport r2 =
      evaluate(encoder, backbone, dst, demb, source, target, Direction::upper_to_lower);
  CHECK(r2.embedder == "dst_backbone");
  CHECK(std::isfinite(r2.fid));
  CHECK(r2.fid >= 0.0);
  // identical translation pass, so the proxy mean is embedder-independent
  CHECK(r2.compat_proxy_mean == doctest::Approx(r.compat_proxy_mean).epsilon(1e-12));
}
