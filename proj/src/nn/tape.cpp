#include "stnet/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace stnet::nn {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::logic_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

void check_ndim(const Tensor& a, int n, const char* op) {
  if (a.ndim() != n) {
    throw std::logic_error(std::string(op) + ": expected " + std::to_string(n) + "-d tensor, got " + a.shape_str());
  }
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Tensor value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<Var> Tape::grad_vars(Var loss, const std::vector<Var>& wrt) {
  if (!loss.valid() || val(loss).numel() != 1) {
    throw std::logic_error("grad: loss must be a scalar tape value");
  }
  std::vector<Var> gmap(static_cast<size_t>(loss.id) + 1, Var{});
  gmap[static_cast<size_t>(loss.id)] = leaf(Tensor::scalar(1.0), false);

  AccumFn accum = [&](Var target, Var grad) {
    if (!target.valid() || target.id > loss.id) throw std::logic_error("grad: bad accumulation target");
    Var& slot = gmap[static_cast<size_t>(target.id)];
    slot = slot.valid() ? add(*this, slot, grad) : grad;
  };

  for (int id = loss.id; id >= 0; --id) {
    Var g = gmap[static_cast<size_t>(id)];
    if (!g.valid()) continue;
    // copy: the closure emits nodes, which may reallocate nodes_ mid-call
    BackwardFn bw = nodes_[static_cast<size_t>(id)].backward;
    if (!bw) continue;
    bw(*this, g, accum);
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    Var g = (w.id <= loss.id) ? gmap[static_cast<size_t>(w.id)] : Var{};
    if (!g.valid()) g = leaf(Tensor::zeros(val(w).shape), false);
    out.push_back(g);
  }
  return out;
}

std::vector<Tensor> Tape::gradients(Var loss, const std::vector<Var>& wrt) {
  std::vector<Var> gv = grad_vars(loss, wrt);
  std::vector<Tensor> out;
  out.reserve(gv.size());
  for (Var g : gv) out.push_back(val(g));
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  Tensor y(t.val(a).shape, t.val(a).data + t.val(b).data);
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(std::move(y), req, [a, b](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, g);
    if (t.needs_grad(b)) acc(b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  Tensor y(t.val(a).shape, t.val(a).data - t.val(b).data);
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(std::move(y), req, [a, b](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, g);
    if (t.needs_grad(b)) acc(b, neg(t, g));
  });
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  Tensor y(t.val(a).shape, t.val(a).data * t.val(b).data);
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(std::move(y), req, [a, b](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul(t, g, b));
    if (t.needs_grad(b)) acc(b, mul(t, g, a));
  });
}

Var neg(Tape& t, Var a) {
  Tensor y(t.val(a).shape, -t.val(a).data);
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, neg(t, g));
  });
}

Var add_scalar(Tape& t, Var a, double s) {
  Tensor y(t.val(a).shape, t.val(a).data + s);
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, g);
  });
}

Var mul_scalar(Tape& t, Var a, double s) {
  Tensor y(t.val(a).shape, t.val(a).data * s);
  return t.emit(std::move(y), t.needs_grad(a), [a, s](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul_scalar(t, g, s));
  });
}

Var pow_scalar(Tape& t, Var a, double p) {
  Tensor y(t.val(a).shape, t.val(a).data.pow(p));
  return t.emit(std::move(y), t.needs_grad(a), [a, p](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul_scalar(t, mul(t, g, pow_scalar(t, a, p - 1.0)), p));
  });
}

Var log_op(Tape& t, Var a) {
  Tensor y(t.val(a).shape, t.val(a).data.log());
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul(t, g, pow_scalar(t, a, -1.0)));
  });
}

Var exp_op(Tape& t, Var a) {
  Tensor y(t.val(a).shape, t.val(a).data.exp());
  Var self{static_cast<int>(t.size())};
  return t.emit(std::move(y), t.needs_grad(a), [a, self](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul(t, g, self));
  });
}

Var sigmoid(Tape& t, Var a) {
  Eigen::ArrayXd y = 1.0 / (1.0 + (-t.val(a).data).exp());
  Tensor yt(t.val(a).shape, std::move(y));
  Var self{static_cast<int>(t.size())};
  return t.emit(std::move(yt), t.needs_grad(a), [a, self](Tape& t, Var g, const Tape::AccumFn& acc) {
    // y' = y * (1 - y)
    if (t.needs_grad(a)) acc(a, mul(t, mul(t, g, self), add_scalar(t, neg(t, self), 1.0)));
  });
}

Var tanh_act(Tape& t, Var a) {
  Tensor y(t.val(a).shape, t.val(a).data.tanh());
  Var self{static_cast<int>(t.size())};
  return t.emit(std::move(y), t.needs_grad(a), [a, self](Tape& t, Var g, const Tape::AccumFn& acc) {
    // y' = 1 - y^2
    if (t.needs_grad(a)) acc(a, mul(t, g, add_scalar(t, neg(t, mul(t, self, self)), 1.0)));
  });
}

Var softplus(Tape& t, Var a) {
  // log(1 + e^x) computed stably as max(x,0) + log1p(e^{-|x|})
  Eigen::ArrayXd x = t.val(a).data;
  Eigen::ArrayXd y = x.max(0.0) + (1.0 + (-x.abs()).exp()).log();
  Tensor yt(t.val(a).shape, std::move(y));
  return t.emit(std::move(yt), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul(t, g, sigmoid(t, a)));
  });
}

Var leaky_relu(Tape& t, Var a, double alpha) {
  const Eigen::ArrayXd& x = t.val(a).data;
  Eigen::ArrayXd y = (x > 0.0).select(x, alpha * x);
  Tensor yt(t.val(a).shape, std::move(y));
  return t.emit(std::move(yt), t.needs_grad(a), [a, alpha](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (!t.needs_grad(a)) return;
    const Eigen::ArrayXd& x = t.val(a).data;
    Eigen::ArrayXd m = (x > 0.0).select(Eigen::ArrayXd::Ones(x.size()), Eigen::ArrayXd::Constant(x.size(), alpha));
    Var mask = t.leaf(Tensor(t.val(a).shape, std::move(m)), false);
    acc(a, mul(t, g, mask));
  });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
  Tensor y(t.val(a).shape, t.val(a).data.max(lo).min(hi));
  return t.emit(std::move(y), t.needs_grad(a), [a, lo, hi](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (!t.needs_grad(a)) return;
    const Eigen::ArrayXd& x = t.val(a).data;
    Eigen::ArrayXd m = ((x >= lo) && (x <= hi)).cast<double>();
    Var mask = t.leaf(Tensor(t.val(a).shape, std::move(m)), false);
    acc(a, mul(t, g, mask));
  });
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Var reshape(Tape& t, Var a, std::vector<int> shape) {
  if (Tensor::count(shape) != t.val(a).numel()) throw std::logic_error("reshape: element count mismatch");
  std::vector<int> old_shape = t.val(a).shape;
  Tensor y(shape, t.val(a).data);
  return t.emit(std::move(y), t.needs_grad(a), [a, old_shape](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, reshape(t, g, old_shape));
  });
}

Var transpose(Tape& t, Var a) {
  check_ndim(t.val(a), 2, "transpose");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({c, r});
  y.mat(c, r).noalias() = t.val(a).mat(r, c).transpose();
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, transpose(t, g));
  });
}

Var matmul(Tape& t, Var a, Var b) {
  check_ndim(t.val(a), 2, "matmul");
  check_ndim(t.val(b), 2, "matmul");
  int m = t.val(a).dim(0), k = t.val(a).dim(1);
  int k2 = t.val(b).dim(0), n = t.val(b).dim(1);
  if (k != k2) throw std::logic_error("matmul: inner dimension mismatch");
  Tensor y({m, n});
  y.mat(m, n).noalias() = t.val(a).mat(m, k) * t.val(b).mat(k, n);
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.emit(std::move(y), req, [a, b](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, matmul(t, g, transpose(t, b)));
    if (t.needs_grad(b)) acc(b, matmul(t, transpose(t, a), g));
  });
}

// ---------------------------------------------------------------------------
// Reductions / broadcasts
// ---------------------------------------------------------------------------

Var sum_all(Tape& t, Var a) {
  Tensor y = Tensor::scalar(t.val(a).data.sum());
  std::vector<int> shape = t.val(a).shape;
  return t.emit(std::move(y), t.needs_grad(a), [a, shape](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, broadcast_scalar(t, g, shape));
  });
}

Var mean_all(Tape& t, Var a) {
  return mul_scalar(t, sum_all(t, a), 1.0 / static_cast<double>(t.val(a).numel()));
}

Var broadcast_scalar(Tape& t, Var s, std::vector<int> shape) {
  if (t.val(s).numel() != 1) throw std::logic_error("broadcast_scalar: source not scalar");
  Tensor y = Tensor::full(shape, t.val(s).item());
  return t.emit(std::move(y), t.needs_grad(s), [s](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(s)) acc(s, sum_all(t, g));
  });
}

Var row_sum(Tape& t, Var a) {
  check_ndim(t.val(a), 2, "row_sum");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({r});
  y.data = t.val(a).mat(r, c).rowwise().sum().array();
  return t.emit(std::move(y), t.needs_grad(a), [a, c](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, broadcast_rows(t, g, c));
  });
}

Var broadcast_rows(Tape& t, Var v, int cols) {
  check_ndim(t.val(v), 1, "broadcast_rows");
  int r = t.val(v).dim(0);
  Tensor y({r, cols});
  y.mat(r, cols).colwise() = Eigen::Map<const Eigen::VectorXd>(t.val(v).data.data(), r);
  return t.emit(std::move(y), t.needs_grad(v), [v](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(v)) acc(v, row_sum(t, g));
  });
}

Var col_sum(Tape& t, Var a) {
  check_ndim(t.val(a), 2, "col_sum");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({c});
  y.data = t.val(a).mat(r, c).colwise().sum().array();
  return t.emit(std::move(y), t.needs_grad(a), [a, r](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, broadcast_cols(t, g, r));
  });
}

Var broadcast_cols(Tape& t, Var v, int rows) {
  check_ndim(t.val(v), 1, "broadcast_cols");
  int c = t.val(v).dim(0);
  Tensor y({rows, c});
  y.mat(rows, c).rowwise() = Eigen::Map<const Eigen::RowVectorXd>(t.val(v).data.data(), c);
  return t.emit(std::move(y), t.needs_grad(v), [v](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(v)) acc(v, col_sum(t, g));
  });
}

Var chan_sum(Tape& t, Var a) {
  check_ndim(t.val(a), 4, "chan_sum");
  int B = t.val(a).dim(0), C = t.val(a).dim(1), H = t.val(a).dim(2), W = t.val(a).dim(3);
  // [B*C, H*W] rows summed
  Tensor y({B, C});
  y.data = t.val(a).mat(B * C, H * W).rowwise().sum().array();
  return t.emit(std::move(y), t.needs_grad(a), [a, H, W](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, chan_broadcast(t, g, H, W));
  });
}

Var chan_broadcast(Tape& t, Var s, int H, int W) {
  check_ndim(t.val(s), 2, "chan_broadcast");
  int B = t.val(s).dim(0), C = t.val(s).dim(1);
  Tensor y({B, C, H, W});
  y.mat(B * C, H * W).colwise() = Eigen::Map<const Eigen::VectorXd>(t.val(s).data.data(), B * C);
  return t.emit(std::move(y), t.needs_grad(s), [s](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(s)) acc(s, chan_sum(t, g));
  });
}

Var chan_param_sum(Tape& t, Var a) {
  check_ndim(t.val(a), 4, "chan_param_sum");
  int B = t.val(a).dim(0), C = t.val(a).dim(1), H = t.val(a).dim(2), W = t.val(a).dim(3);
  Tensor y({C});
  const double* src = t.val(a).data.data();
  const int64_t hw = static_cast<int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const double* p = src + (static_cast<int64_t>(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
      y.data[c] += acc;
    }
  }
  return t.emit(std::move(y), t.needs_grad(a), [a, B, H, W](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, chan_param_broadcast(t, g, B, H, W));
  });
}

Var chan_param_broadcast(Tape& t, Var b, int B, int H, int W) {
  check_ndim(t.val(b), 1, "chan_param_broadcast");
  int C = t.val(b).dim(0);
  Tensor y({B, C, H, W});
  double* dst = y.data.data();
  const int64_t hw = static_cast<int64_t>(H) * W;
  for (int bb = 0; bb < B; ++bb) {
    for (int c = 0; c < C; ++c) {
      double v = t.val(b).data[c];
      double* p = dst + (static_cast<int64_t>(bb) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) p[i] = v;
    }
  }
  return t.emit(std::move(y), t.needs_grad(b), [b](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(b)) acc(b, chan_param_sum(t, g));
  });
}

Var batch_sum(Tape& t, Var a) {
  check_ndim(t.val(a), 4, "batch_sum");
  int B = t.val(a).dim(0), C = t.val(a).dim(1), H = t.val(a).dim(2), W = t.val(a).dim(3);
  Tensor y({C, H, W});
  const int64_t chw = static_cast<int64_t>(C) * H * W;
  for (int b = 0; b < B; ++b) {
    y.data += Eigen::Map<const Eigen::ArrayXd>(t.val(a).data.data() + b * chw, chw);
  }
  return t.emit(std::move(y), t.needs_grad(a), [a, B](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, broadcast_batch(t, g, B));
  });
}

Var broadcast_batch(Tape& t, Var a, int B) {
  check_ndim(t.val(a), 3, "broadcast_batch");
  int C = t.val(a).dim(0), H = t.val(a).dim(1), W = t.val(a).dim(2);
  Tensor y({B, C, H, W});
  const int64_t chw = static_cast<int64_t>(C) * H * W;
  for (int b = 0; b < B; ++b) {
    Eigen::Map<Eigen::ArrayXd>(y.data.data() + b * chw, chw) = t.val(a).data;
  }
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, batch_sum(t, g));
  });
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

Var rows_select(Tape& t, Var a, std::vector<int> idx) {
  check_ndim(t.val(a), 2, "rows_select");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({static_cast<int>(idx.size()), c});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r) throw std::logic_error("rows_select: index out of range");
    y.mat(static_cast<int>(idx.size()), c).row(static_cast<int>(i)) = t.val(a).mat(r, c).row(idx[i]);
  }
  return t.emit(std::move(y), t.needs_grad(a), [a, idx, r](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, rows_scatter(t, g, idx, r));
  });
}

Var rows_scatter(Tape& t, Var g, std::vector<int> idx, int rows) {
  check_ndim(t.val(g), 2, "rows_scatter");
  int k = t.val(g).dim(0), c = t.val(g).dim(1);
  if (k != static_cast<int>(idx.size())) throw std::logic_error("rows_scatter: index count mismatch");
  Tensor y({rows, c});
  for (int i = 0; i < k; ++i) {
    y.mat(rows, c).row(idx[static_cast<size_t>(i)]) += t.val(g).mat(k, c).row(i);
  }
  return t.emit(std::move(y), t.needs_grad(g), [g, idx](Tape& t, Var gg, const Tape::AccumFn& acc) {
    if (t.needs_grad(g)) acc(g, rows_select(t, gg, idx));
  });
}

Var gather_flat(Tape& t, Var a, std::vector<int64_t> idx) {
  Tensor y({static_cast<int>(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= t.val(a).numel()) throw std::logic_error("gather_flat: index out of range");
    y.data[static_cast<int64_t>(i)] = t.val(a).data[idx[i]];
  }
  std::vector<int> shape = t.val(a).shape;
  return t.emit(std::move(y), t.needs_grad(a), [a, idx, shape](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, scatter_flat(t, g, idx, shape));
  });
}

Var scatter_flat(Tape& t, Var g, std::vector<int64_t> idx, std::vector<int> shape) {
  if (t.val(g).numel() != static_cast<int64_t>(idx.size())) throw std::logic_error("scatter_flat: index count mismatch");
  Tensor y(shape);
  for (size_t i = 0; i < idx.size(); ++i) y.data[idx[i]] += t.val(g).data[static_cast<int64_t>(i)];
  return t.emit(std::move(y), t.needs_grad(g), [g, idx](Tape& t, Var gg, const Tape::AccumFn& acc) {
    if (t.needs_grad(g)) acc(g, gather_flat(t, gg, idx));
  });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Var softmax_rows(Tape& t, Var a) {
  check_ndim(t.val(a), 2, "softmax_rows");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({r, c});
  auto x = t.val(a).mat(r, c);
  auto ym = y.mat(r, c);
  for (int i = 0; i < r; ++i) {
    double m = x.row(i).maxCoeff();
    ym.row(i) = (x.row(i).array() - m).exp();
    ym.row(i) /= ym.row(i).sum();
  }
  Var self{static_cast<int>(t.size())};
  return t.emit(std::move(y), t.needs_grad(a), [a, self, c](Tape& t, Var g, const Tape::AccumFn& acc) {
    // dL/dx = y * (g - rowsum(g*y))
    if (!t.needs_grad(a)) return;
    Var gy = mul(t, g, self);
    Var s = row_sum(t, gy);
    acc(a, mul(t, self, sub(t, g, broadcast_rows(t, s, c))));
  });
}

Var logsumexp_rows(Tape& t, Var a) {
  check_ndim(t.val(a), 2, "logsumexp_rows");
  int r = t.val(a).dim(0), c = t.val(a).dim(1);
  Tensor y({r});
  auto x = t.val(a).mat(r, c);
  for (int i = 0; i < r; ++i) {
    double m = x.row(i).maxCoeff();
    y.data[i] = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return t.emit(std::move(y), t.needs_grad(a), [a, c](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, mul(t, softmax_rows(t, a), broadcast_rows(t, g, c)));
  });
}

// ---------------------------------------------------------------------------
// Convolution triad
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int B, C, H, W, K, kh, kw, OH, OW;
};

ConvDims conv_dims(const Tensor& x, int K, int kh, int kw, int stride, int pad) {
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.K = K;
  d.kh = kh;
  d.kw = kw;
  d.OH = (d.H + 2 * pad - kh) / stride + 1;
  d.OW = (d.W + 2 * pad - kw) / stride + 1;
  if (d.OH <= 0 || d.OW <= 0) throw std::logic_error("conv: output would be empty");
  return d;
}

// cols[(c*kh+u)*kw+v, (b*OH+i)*OW+j] = x[b,c,i*s-p+u,j*s-p+v]  (0 outside)
Tensor im2col(const Tensor& x, const ConvDims& d, int stride, int pad) {
  Tensor cols({d.C * d.kh * d.kw, d.B * d.OH * d.OW});
  const double* xp = x.data.data();
  double* cp = cols.data.data();
  const int64_t ncols = static_cast<int64_t>(d.B) * d.OH * d.OW;
  for (int c = 0; c < d.C; ++c) {
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v) {
        const int64_t rr = (static_cast<int64_t>(c) * d.kh + u) * d.kw + v;
        double* crow = cp + rr * ncols;
        for (int b = 0; b < d.B; ++b) {
          const double* xplane = xp + (static_cast<int64_t>(b) * d.C + c) * d.H * d.W;
          for (int i = 0; i < d.OH; ++i) {
            const int m = i * stride - pad + u;
            double* cc = crow + (static_cast<int64_t>(b) * d.OH + i) * d.OW;
            if (m < 0 || m >= d.H) {
              std::memset(cc, 0, sizeof(double) * static_cast<size_t>(d.OW));
              continue;
            }
            const double* xrow = xplane + static_cast<int64_t>(m) * d.W;
            for (int j = 0; j < d.OW; ++j) {
              const int n = j * stride - pad + v;
              cc[j] = (n >= 0 && n < d.W) ? xrow[n] : 0.0;
            }
          }
        }
      }
    }
  }
  return cols;
}

// adjoint scatter of im2col
Tensor col2im(const Tensor& cols, const ConvDims& d, int stride, int pad) {
  Tensor x({d.B, d.C, d.H, d.W});
  double* xp = x.data.data();
  const double* cp = cols.data.data();
  const int64_t ncols = static_cast<int64_t>(d.B) * d.OH * d.OW;
  for (int c = 0; c < d.C; ++c) {
    for (int u = 0; u < d.kh; ++u) {
      for (int v = 0; v < d.kw; ++v) {
        const int64_t rr = (static_cast<int64_t>(c) * d.kh + u) * d.kw + v;
        const double* crow = cp + rr * ncols;
        for (int b = 0; b < d.B; ++b) {
          double* xplane = xp + (static_cast<int64_t>(b) * d.C + c) * d.H * d.W;
          for (int i = 0; i < d.OH; ++i) {
            const int m = i * stride - pad + u;
            if (m < 0 || m >= d.H) continue;
            const double* cc = crow + (static_cast<int64_t>(b) * d.OH + i) * d.OW;
            double* xrow = xplane + static_cast<int64_t>(m) * d.W;
            for (int j = 0; j < d.OW; ++j) {
              const int n = j * stride - pad + v;
              if (n >= 0 && n < d.W) xrow[n] += cc[j];
            }
          }
        }
      }
    }
  }
  return x;
}

// [B,K,OH,OW] -> [K, B*OH*OW] with column index (b*OH+i)*OW+j
Tensor to_kmat(const Tensor& g, const ConvDims& d) {
  Tensor gm({d.K, d.B * d.OH * d.OW});
  const int64_t ohow = static_cast<int64_t>(d.OH) * d.OW;
  for (int b = 0; b < d.B; ++b) {
    for (int k = 0; k < d.K; ++k) {
      std::memcpy(gm.data.data() + k * d.B * ohow + b * ohow,
                  g.data.data() + (static_cast<int64_t>(b) * d.K + k) * ohow,
                  sizeof(double) * static_cast<size_t>(ohow));
    }
  }
  return gm;
}

// [K, B*OH*OW] -> [B,K,OH,OW]
Tensor from_kmat(const Tensor& gm, const ConvDims& d) {
  Tensor g({d.B, d.K, d.OH, d.OW});
  const int64_t ohow = static_cast<int64_t>(d.OH) * d.OW;
  for (int b = 0; b < d.B; ++b) {
    for (int k = 0; k < d.K; ++k) {
      std::memcpy(g.data.data() + (static_cast<int64_t>(b) * d.K + k) * ohow,
                  gm.data.data() + k * d.B * ohow + b * ohow,
                  sizeof(double) * static_cast<size_t>(ohow));
    }
  }
  return g;
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, int stride, int pad) {
  check_ndim(t.val(x), 4, "conv2d");
  check_ndim(t.val(w), 4, "conv2d weight");
  const Tensor& wt = t.val(w);
  if (wt.dim(1) != t.val(x).dim(1)) throw std::logic_error("conv2d: channel mismatch");
  ConvDims d = conv_dims(t.val(x), wt.dim(0), wt.dim(2), wt.dim(3), stride, pad);
  Tensor cols = im2col(t.val(x), d, stride, pad);
  Tensor ymat({d.K, d.B * d.OH * d.OW});
  ymat.mat(d.K, d.B * d.OH * d.OW).noalias() =
      wt.mat(d.K, d.C * d.kh * d.kw) * cols.mat(d.C * d.kh * d.kw, d.B * d.OH * d.OW);
  Tensor y = from_kmat(ymat, d);
  bool req = t.needs_grad(x) || t.needs_grad(w);
  const int H = d.H, W = d.W, kh = d.kh, kw = d.kw;
  return t.emit(std::move(y), req, [x, w, stride, pad, H, W, kh, kw](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(x)) acc(x, conv2d_transpose(t, g, w, stride, pad, H, W));
    if (t.needs_grad(w)) acc(w, conv2d_wgrad(t, x, g, stride, pad, kh, kw));
  });
}

Var conv2d_transpose(Tape& t, Var g, Var w, int stride, int pad, int out_h, int out_w) {
  check_ndim(t.val(g), 4, "conv2d_transpose");
  check_ndim(t.val(w), 4, "conv2d_transpose weight");
  const Tensor& wt = t.val(w);
  const Tensor& gt = t.val(g);
  if (gt.dim(1) != wt.dim(0)) throw std::logic_error("conv2d_transpose: K mismatch");
  ConvDims d;
  d.B = gt.dim(0);
  d.K = wt.dim(0);
  d.C = wt.dim(1);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  d.H = out_h;
  d.W = out_w;
  d.OH = gt.dim(2);
  d.OW = gt.dim(3);
  {
    // shape consistency with the forward conv this adjoins
    int eh = (d.H + 2 * pad - d.kh) / stride + 1;
    int ew = (d.W + 2 * pad - d.kw) / stride + 1;
    if (eh != d.OH || ew != d.OW) throw std::logic_error("conv2d_transpose: inconsistent geometry");
  }
  Tensor gmat = to_kmat(gt, d);
  Tensor colsg({d.C * d.kh * d.kw, d.B * d.OH * d.OW});
  colsg.mat(d.C * d.kh * d.kw, d.B * d.OH * d.OW).noalias() =
      wt.mat(d.K, d.C * d.kh * d.kw).transpose() * gmat.mat(d.K, d.B * d.OH * d.OW);
  Tensor y = col2im(colsg, d, stride, pad);
  bool req = t.needs_grad(g) || t.needs_grad(w);
  const int kh2 = d.kh, kw2 = d.kw;
  return t.emit(std::move(y), req, [g, w, stride, pad, kh2, kw2](Tape& t, Var gg, const Tape::AccumFn& acc) {
    if (t.needs_grad(g)) acc(g, conv2d(t, gg, w, stride, pad));
    if (t.needs_grad(w)) acc(w, conv2d_wgrad(t, gg, g, stride, pad, kh2, kw2));
  });
}

Var conv2d_wgrad(Tape& t, Var x, Var g, int stride, int pad, int kh, int kw) {
  check_ndim(t.val(x), 4, "conv2d_wgrad");
  check_ndim(t.val(g), 4, "conv2d_wgrad grad");
  ConvDims d = conv_dims(t.val(x), t.val(g).dim(1), kh, kw, stride, pad);
  if (d.OH != t.val(g).dim(2) || d.OW != t.val(g).dim(3) || d.B != t.val(g).dim(0)) {
    throw std::logic_error("conv2d_wgrad: inconsistent geometry");
  }
  Tensor cols = im2col(t.val(x), d, stride, pad);
  Tensor gmat = to_kmat(t.val(g), d);
  Tensor wg({d.K, d.C, d.kh, d.kw});
  wg.mat(d.K, d.C * d.kh * d.kw).noalias() =
      gmat.mat(d.K, d.B * d.OH * d.OW) * cols.mat(d.C * d.kh * d.kw, d.B * d.OH * d.OW).transpose();
  bool req = t.needs_grad(x) || t.needs_grad(g);
  const int H = d.H, W = d.W;
  return t.emit(std::move(wg), req, [x, g, stride, pad, H, W](Tape& t, Var gw, const Tape::AccumFn& acc) {
    if (t.needs_grad(x)) acc(x, conv2d_transpose(t, g, gw, stride, pad, H, W));
    if (t.needs_grad(g)) acc(g, conv2d(t, x, gw, stride, pad));
  });
}

Var bias_add_channel(Tape& t, Var x, Var b) {
  const Tensor& xt = t.val(x);
  check_ndim(xt, 4, "bias_add_channel");
  return add(t, x, chan_param_broadcast(t, b, xt.dim(0), xt.dim(2), xt.dim(3)));
}

Var upsample2x(Tape& t, Var a) {
  check_ndim(t.val(a), 4, "upsample2x");
  int B = t.val(a).dim(0), C = t.val(a).dim(1), H = t.val(a).dim(2), W = t.val(a).dim(3);
  Tensor y({B, C, 2 * H, 2 * W});
  const double* src = t.val(a).data.data();
  double* dst = y.data.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* sp = src + static_cast<int64_t>(bc) * H * W;
    double* dp = dst + static_cast<int64_t>(bc) * 4 * H * W;
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        double v = sp[i * W + j];
        double* q = dp + (2 * i) * (2 * W) + 2 * j;
        q[0] = v;
        q[1] = v;
        q[2 * W] = v;
        q[2 * W + 1] = v;
      }
    }
  }
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, sumpool2x(t, g));
  });
}

Var sumpool2x(Tape& t, Var a) {
  check_ndim(t.val(a), 4, "sumpool2x");
  int B = t.val(a).dim(0), C = t.val(a).dim(1), H = t.val(a).dim(2), W = t.val(a).dim(3);
  if (H % 2 || W % 2) throw std::logic_error("sumpool2x: odd spatial size");
  Tensor y({B, C, H / 2, W / 2});
  const double* src = t.val(a).data.data();
  double* dst = y.data.data();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* sp = src + static_cast<int64_t>(bc) * H * W;
    double* dp = dst + static_cast<int64_t>(bc) * (H / 2) * (W / 2);
    for (int i = 0; i < H / 2; ++i) {
      for (int j = 0; j < W / 2; ++j) {
        const double* q = sp + (2 * i) * W + 2 * j;
        dp[i * (W / 2) + j] = q[0] + q[1] + q[W] + q[W + 1];
      }
    }
  }
  return t.emit(std::move(y), t.needs_grad(a), [a](Tape& t, Var g, const Tape::AccumFn& acc) {
    if (t.needs_grad(a)) acc(a, upsample2x(t, g));
  });
}

Var scalar_const(Tape& t, double v) { return t.leaf(Tensor::scalar(v), false); }

}  // namespace stnet::nn
