#include "stnet/model/metrics.hpp"

#include "stnet/core/errors.hpp"
#include "stnet/core/kv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <stdexcept>

namespace stnet::model {

FeatureCloud make_cloud(const Tensor& features) {
  if (features.ndim() != 2 || features.dim(0) < 1) {
    throw std::invalid_argument("feature cloud needs a non-empty [n,d] matrix, got " +
                                features.shape_str());
  }
  const int n = features.dim(0);
  const int d = features.dim(1);
  if (n < d + 1) {
    std::cerr << "warning: feature cloud has n=" << n << " < d+1=" << (d + 1)
              << "; covariance estimate is rank-deficient\n";
  }
  FeatureCloud c;
  c.features = features;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      features.data.data(), n, d);
  c.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - c.mean.transpose();
  if (n > 1) {
    c.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  } else {
    c.cov = Eigen::MatrixXd::Zero(d, d);
  }
  c.cov = 0.5 * (c.cov + c.cov.transpose());
  return c;
}

FeatureCloud cloud_from_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size()) {
    throw std::invalid_argument("moment shapes disagree");
  }
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw std::invalid_argument("covariance must be symmetric");
  }
  FeatureCloud c;
  c.features = Tensor::zeros({0});
  c.mean = std::move(mean);
  c.cov = std::move(cov);
  return c;
}

double frechet_distance(const FeatureCloud& a, const FeatureCloud& b, double reg) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("feature clouds live in different dimensions (" +
                                std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  }
  Eigen::MatrixXd sa = a.cov;
  Eigen::MatrixXd sb = b.cov;
  if (reg > 0.0) {
    sa.diagonal().array() += reg;
    sb.diagonal().array() += reg;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  Eigen::VectorXd root_eigs = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_a = ea.eigenvectors() * root_eigs.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * sb * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
  const double trace_root = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd =
      (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_root;
  return std::max(fd, 0.0);
}

double compatibility_proxy(DstModel& dst, const Image& x, const Image& y) {
  if (!dst.frozen()) {
    throw std::invalid_argument("compatibility proxy needs a frozen style/texture discriminator");
  }
  return 1.0 - style_distance(dst, x, y);
}

DstEmbedder::DstEmbedder(DstModel& dst) : dst_(&dst) {
  if (!dst.frozen()) {
    throw std::invalid_argument("embedder needs a frozen style/texture discriminator");
  }
}

int DstEmbedder::dim() const { return dst_->config().d_f; }

Tensor DstEmbedder::embed(const Tensor& images) { return dst_->features_eval(images); }

PixelPcaEmbedder::PixelPcaEmbedder(const std::vector<Image>& reference, int k) {
  if (reference.empty()) throw std::invalid_argument("pixel PCA needs reference images");
  h_ = reference[0].h;
  w_ = reference[0].w;
  const int dims = 3 * h_ * w_;
  const int n = static_cast<int>(reference.size());
  if (k < 1 || k > std::min(n, dims)) {
    throw std::invalid_argument("pixel PCA rank must be in [1, min(n, 3hw)]");
  }
  Eigen::MatrixXd x(n, dims);
  for (int i = 0; i < n; ++i) {
    const Image& im = reference[i];
    if (im.h != h_ || im.w != w_) throw std::invalid_argument("reference images must share a size");
    x.row(i) = Eigen::Map<const Eigen::VectorXd>(im.chw.data(), dims);
  }
  mean_ = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  components_ = svd.matrixV().leftCols(k);
}

Tensor PixelPcaEmbedder::embed(const Tensor& images) {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != h_ || images.dim(3) != w_) {
    throw std::invalid_argument("pixel PCA expects [B,3," + std::to_string(h_) + "," +
                                std::to_string(w_) + "], got " + images.shape_str());
  }
  const int batch = images.dim(0);
  const int dims = 3 * h_ * w_;
  const int k = dim();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      images.data.data(), batch, dims);
  Eigen::MatrixXd projected = (x.rowwise() - mean_.transpose()) * components_;
  Tensor out = Tensor::zeros({batch, k});
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      out.data.data(), batch, k) = projected;
  return out;
}

namespace {

/// Embeds a record list in fixed-size chunks (single pass, no graph).
Tensor embed_records(ImageEmbedder& embedder, const std::vector<data::ImageRecord>& records) {
  const int n = static_cast<int>(records.size());
  std::vector<Image> pool;
  pool.reserve(records.size());
  for (const auto& r : records) pool.push_back(r.pixels);
  Tensor out = Tensor::zeros({n, embedder.dim()});
  const int chunk = 16;
  for (int start = 0; start < n; start += chunk) {
    const int stop = std::min(n, start + chunk);
    std::vector<int> idx;
    for (int i = start; i < stop; ++i) idx.push_back(i);
    Tensor feats = embedder.embed(batch_from_images(pool, idx));
    for (int i = start; i < stop; ++i) {
      for (int j = 0; j < embedder.dim(); ++j) {
        out.data[static_cast<Eigen::Index>(i) * embedder.dim() + j] =
            feats.data[static_cast<Eigen::Index>(i - start) * embedder.dim() + j];
      }
    }
  }
  return out;
}

}  // namespace

MetricReport evaluate(Encoder& encoder, Backbone& backbone, DstModel& dst, ImageEmbedder& embedder,
                      const std::vector<data::ImageRecord>& source_test,
                      const std::vector<data::ImageRecord>& target_test, Direction direction,
                      const std::string& config_ref) {
  if (!backbone.frozen()) throw std::invalid_argument("evaluation needs a frozen backbone");
  if (!dst.frozen()) {
    throw std::invalid_argument("evaluation needs a frozen style/texture discriminator");
  }
  if (source_test.empty() || target_test.empty()) {
    throw std::invalid_argument("evaluation needs non-empty source and target test sets");
  }

  const int n = static_cast<int>(source_test.size());
  std::vector<Image> inputs;
  inputs.reserve(source_test.size());
  for (const auto& r : source_test) inputs.push_back(r.pixels);

  std::vector<Image> outputs;
  outputs.reserve(inputs.size());
  const int chunk = 16;
  for (int start = 0; start < n; start += chunk) {
    const int stop = std::min(n, start + chunk);
    std::vector<int> idx;
    for (int i = start; i < stop; ++i) idx.push_back(i);
    Tensor batch = translate_eval(encoder, backbone, batch_from_images(inputs, idx));
    for (int i = start; i < stop; ++i) outputs.push_back(image_from_batch(batch, i - start));
  }

  std::vector<int> all_out;
  for (int i = 0; i < n; ++i) all_out.push_back(i);
  FeatureCloud generated = make_cloud(embedder.embed(batch_from_images(outputs, all_out)));
  FeatureCloud reals = make_cloud(embed_records(embedder, target_test));

  double compat_sum = 0.0;
  for (int i = 0; i < n; ++i) compat_sum += compatibility_proxy(dst, inputs[i], outputs[i]);

  MetricReport r;
  r.fid = frechet_distance(generated, reals);
  r.compat_proxy_mean = compat_sum / n;
  r.n_eval = n;
  r.direction = direction;
  r.embedder = embedder.name();
  r.config_ref = config_ref;
  r.note = "compat_proxy is the frozen style/texture feature cosine, a stand-in for an external "
           "compatibility scorer";
  return r;
}

void save_metric_report(const std::string& path, const MetricReport& r) {
  kv_write_file(path, {
                          {"fid", format_double(r.fid)},
                          {"compat_proxy_mean", format_double(r.compat_proxy_mean)},
                          {"n_eval", std::to_string(r.n_eval)},
                          {"direction", direction_name(r.direction)},
                          {"embedder", r.embedder},
                          {"config_ref", r.config_ref},
                          {"note", r.note},
                      });
}

MetricReport load_metric_report(const std::string& path) {
  KvFile kv = KvFile::parse_file(path);
  MetricReport r;
  r.fid = kv.get_double("fid");
  r.compat_proxy_mean = kv.get_double("compat_proxy_mean");
  r.n_eval = static_cast<int>(kv.get_int("n_eval"));
  r.direction = parse_direction(kv.get_string("direction"));
  r.embedder = kv.get_string("embedder");
  r.config_ref = kv.get_string("config_ref", "");
  r.note = kv.get_string("note", "");
  kv.require_all_consumed();
  return r;
}

}  // namespace stnet::model
