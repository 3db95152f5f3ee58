#ifndef STNET_CORE_TENSOR_HPP
#define STNET_CORE_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stnet {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense double tensor with a row-major flat layout.
///
/// Conventions used across the project:
///   [B, C, H, W]  activations / image batches
///   [R, C]        matrices (row-major)
///   [N]           vectors
///   [1]           scalars
struct Tensor {
  std::vector<int> shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data = Eigen::ArrayXd::Zero(count(shape));
  }
  Tensor(std::vector<int> s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, Eigen::ArrayXd::Constant(1, v)); }

  int64_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double item() const {
    if (numel() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return data[0];
  }

  bool all_finite() const { return data.isFinite().all(); }

  /// View the flat data as an R x C row-major matrix. R*C must equal numel().
  RowMatrixMap mat(int rows, int cols) {
    if (static_cast<int64_t>(rows) * cols != numel()) throw std::logic_error("tensor: mat() size mismatch");
    return RowMatrixMap(data.data(), rows, cols);
  }
  ConstRowMatrixMap mat(int rows, int cols) const {
    if (static_cast<int64_t>(rows) * cols != numel()) throw std::logic_error("tensor: mat() size mismatch");
    return ConstRowMatrixMap(data.data(), rows, cols);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace stnet

#endif
