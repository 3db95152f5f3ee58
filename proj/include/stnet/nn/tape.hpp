#ifndef STNET_NN_TAPE_HPP
#define STNET_NN_TAPE_HPP

#include "stnet/core/tensor.hpp"

#include <functional>
#include <vector>

namespace stnet::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape.
///
/// Every op appends one node holding the result tensor. Backward functions
/// are themselves written in terms of tape ops, so gradients are ordinary
/// tape values and grad-of-grad (needed for the gradient penalty in backbone
/// pretraining) works with no special casing.
///
/// A node carries requires_grad = OR over its parents; backward functions
/// consult Tape::needs_grad() before computing a parent's gradient, which
/// keeps frozen-network branches out of the backward pass entirely.
class Tape {
 public:
  using AccumFn = std::function<void(Var, Var)>;
  using BackwardFn = std::function<void(Tape&, Var /*grad_out*/, const AccumFn&)>;

  Var leaf(Tensor value, bool requires_grad = false);
  Var emit(Tensor value, bool requires_grad, BackwardFn backward);

  const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }
  size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  /// Backward pass producing gradients as tape values (graph kept, so the
  /// result can be differentiated again).
  std::vector<Var> grad_vars(Var loss, const std::vector<Var>& wrt);

  /// Backward pass returning plain tensors (zeros where loss is unreachable).
  std::vector<Tensor> gradients(Var loss, const std::vector<Var>& wrt);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var add_scalar(Tape& t, Var a, double s);
Var mul_scalar(Tape& t, Var a, double s);
Var pow_scalar(Tape& t, Var a, double p);  // a > 0 unless p is a non-negative integer
Var log_op(Tape& t, Var a);
Var exp_op(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var tanh_act(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double alpha);
Var clamp(Tape& t, Var a, double lo, double hi);

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------
Var reshape(Tape& t, Var a, std::vector<int> shape);
Var transpose(Tape& t, Var a);              // [m,n] -> [n,m]
Var matmul(Tape& t, Var a, Var b);          // [m,k] x [k,n] -> [m,n]

// ---------------------------------------------------------------------------
// Reductions and their broadcast adjoints
// ---------------------------------------------------------------------------
Var sum_all(Tape& t, Var a);                          // -> [1]
Var mean_all(Tape& t, Var a);                         // -> [1]
Var broadcast_scalar(Tape& t, Var s, std::vector<int> shape);
Var row_sum(Tape& t, Var a);                          // [R,C] -> [R]
Var broadcast_rows(Tape& t, Var v, int cols);         // [R] -> [R,cols]
Var col_sum(Tape& t, Var a);                          // [R,C] -> [C]
Var broadcast_cols(Tape& t, Var v, int rows);         // [C] -> [rows,C]
Var chan_sum(Tape& t, Var a);                         // [B,C,H,W] -> [B,C]
Var chan_broadcast(Tape& t, Var s, int H, int W);     // [B,C] -> [B,C,H,W]
Var chan_param_sum(Tape& t, Var a);                   // [B,C,H,W] -> [C]
Var chan_param_broadcast(Tape& t, Var b, int B, int H, int W);
Var batch_sum(Tape& t, Var a);                        // [B,C,H,W] -> [C,H,W]
Var broadcast_batch(Tape& t, Var a, int B);           // [C,H,W] -> [B,C,H,W]

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------
Var rows_select(Tape& t, Var a, std::vector<int> idx);               // -> [k,C]
Var rows_scatter(Tape& t, Var g, std::vector<int> idx, int rows);    // adjoint
Var gather_flat(Tape& t, Var a, std::vector<int64_t> idx);           // -> [k]
Var scatter_flat(Tape& t, Var g, std::vector<int64_t> idx, std::vector<int> shape);

// ---------------------------------------------------------------------------
// Row-wise softmax family
// ---------------------------------------------------------------------------
Var softmax_rows(Tape& t, Var a);      // [R,C] -> [R,C]
Var logsumexp_rows(Tape& t, Var a);    // [R,C] -> [R]

// ---------------------------------------------------------------------------
// Convolution triad (x: [B,C,H,W], w: [K,C,kh,kw]) and resampling
// ---------------------------------------------------------------------------
Var conv2d(Tape& t, Var x, Var w, int stride, int pad);
Var conv2d_transpose(Tape& t, Var g, Var w, int stride, int pad, int out_h, int out_w);
Var conv2d_wgrad(Tape& t, Var x, Var g, int stride, int pad, int kh, int kw);
Var bias_add_channel(Tape& t, Var x, Var b);
Var upsample2x(Tape& t, Var a);   // nearest neighbour
Var sumpool2x(Tape& t, Var a);    // adjoint of upsample2x

// Convenience
Var scalar_const(Tape& t, double v);

}  // namespace stnet::nn

#endif
