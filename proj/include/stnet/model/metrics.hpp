#ifndef STNET_MODEL_METRICS_HPP
#define STNET_MODEL_METRICS_HPP

#include "stnet/model/generator.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace stnet::model {

/// Feature matrix with its Gaussian fit. Mean and covariance (unbiased) are
/// computed once at construction; a rank-deficient estimate (n < d+1) warns
/// on stderr but stays usable since the distance clips negative eigenvalues.
struct FeatureCloud {
  Tensor features;       // [n,d]
  Eigen::VectorXd mean;  // d
  Eigen::MatrixXd cov;   // d x d, symmetric

  int n() const { return features.numel() ? features.dim(0) : 0; }
  int dim() const { return static_cast<int>(mean.size()); }
};

FeatureCloud make_cloud(const Tensor& features);

/// Cloud with prescribed moments (for exact-moment oracles). Throws
/// std::invalid_argument if cov is not symmetric.
FeatureCloud cloud_from_moments(Eigen::VectorXd mean, Eigen::MatrixXd cov);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), the square root
/// taken through symmetric eigendecompositions with negative eigenvalues
/// clipped at 0, and the result clamped at 0. `reg` optionally stiffens both
/// covariances by reg*I first (off by default so exact-moment cases stay
/// exact). Throws std::invalid_argument on dimension mismatch.
double frechet_distance(const FeatureCloud& a, const FeatureCloud& b, double reg = 0.0);

/// cos(D_ST(x), D_ST(y)) = 1 - style_distance(x, y), in [-1,1]. Stands in
/// for the external compatibility score this artifact cannot license.
/// Throws std::invalid_argument unless the discriminator is frozen.
double compatibility_proxy(DstModel& dst, const Image& x, const Image& y);

/// Feature space plugged into the Frechet distance.
class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Tensor embed(const Tensor& images) = 0;  // [B,3,h,w] -> [B,dim]
};

/// Frozen style/texture discriminator backbone features.
class DstEmbedder : public ImageEmbedder {
 public:
  explicit DstEmbedder(DstModel& dst);
  std::string name() const override { return "dst_backbone"; }
  int dim() const override;
  Tensor embed(const Tensor& images) override;

 private:
  DstModel* dst_;
};

/// Raw-pixel principal components fitted on a reference set; a model-free
/// cross-check embedder.
class PixelPcaEmbedder : public ImageEmbedder {
 public:
  PixelPcaEmbedder(const std::vector<Image>& reference, int k);
  std::string name() const override { return "pixel_pca"; }
  int dim() const override { return static_cast<int>(components_.cols()); }
  Tensor embed(const Tensor& images) override;

 private:
  int h_ = 0, w_ = 0;
  Eigen::VectorXd mean_;        // 3hw
  Eigen::MatrixXd components_;  // 3hw x k, orthonormal columns
};

struct MetricReport {
  double fid = 0.0;
  double compat_proxy_mean = 0.0;
  int n_eval = 0;
  Direction direction = Direction::upper_to_lower;
  std::string embedder;
  std::string config_ref;  // config snapshot this evaluation belongs to
  std::string note;        // records that the compatibility score is a proxy
};

/// Translates every source test image, then scores realism (Frechet distance
/// between generated and real target test features) and compatibility (mean
/// proxy over input/output pairs). Throws std::invalid_argument on empty
/// test sets or unfrozen models.
MetricReport evaluate(Encoder& encoder, Backbone& backbone, DstModel& dst, ImageEmbedder& embedder,
                      const std::vector<data::ImageRecord>& source_test,
                      const std::vector<data::ImageRecord>& target_test, Direction direction,
                      const std::string& config_ref = "");

void save_metric_report(const std::string& path, const MetricReport& r);
MetricReport load_metric_report(const std::string& path);

}  // namespace stnet::model

#endif
