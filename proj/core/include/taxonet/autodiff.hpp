#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "taxonet/util.hpp"

// Tape-based reverse-mode automatic differentiation over Eigen matrices.
// A Tape is built per evaluation (define-by-run); Var is a cheap handle into
// it. Construct the tape with grads disabled for value-only passes.
namespace taxonet::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Leaf with gradient tracking (when enabled).
  Var leaf(Mat value);
  // Leaf without gradient tracking.
  Var constant(Mat value);

  // Backpropagate from a 1x1 root; all reachable grads become available.
  void backward(const Var& root);

  // --- internals used by op implementations ---
  using BackFn = std::function<void(Tape&, int self)>;
  int push(Mat value, std::initializer_list<int> parents, BackFn fn);
  int push(Mat value, const std::vector<int>& parents, BackFn fn);
  const Mat& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad_of(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  void accum(int id, const Mat& g);

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until touched by backward
    bool needs_grad = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// element-wise / scalar
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var adds(Var a, double s);
Var muls(Var a, double s);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var clamp(Var a, double lo, double hi);
Var stop_gradient(Var a);

// linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);

// reductions
Var sum_all(Var a);
Var mean_all(Var a);
Var row_sum(Var a);  // n x m -> n x 1
Var col_sum(Var a);  // n x m -> 1 x m

// broadcasting (v: n x 1 column, r: 1 x m row)
Var add_colvec(Var a, Var v);
Var add_rowvec(Var a, Var r);
Var mul_colvec(Var a, Var v);
Var mul_rowvec(Var a, Var r);

// stabilized log-sum-exp over each row: n x m -> n x 1
Var logsumexp_rows(Var a);
// log softmax over each row (composed from logsumexp)
Var log_softmax_rows(Var a);

// structure
Var gather_rows(Var a, std::vector<int> idx);
Var gather_elems(Var a, std::vector<std::pair<int, int>> idx);  // -> k x 1
Var vcat(const std::vector<Var>& parts);

// Convolution geometry. Feature matrices are laid out one sample per row,
// channel-major within the row (c*H*W + y*W + x).
struct ConvGeom {
  int in_channels = 0, in_h = 0, in_w = 0;
  int out_channels = 0, kernel = 0, stride = 1, pad = 0;
  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

struct ConvTGeom {
  int in_channels = 0, in_h = 0, in_w = 0;
  int out_channels = 0, kernel = 0, stride = 1, pad = 0, out_pad = 0;
  int out_h() const { return (in_h - 1) * stride - 2 * pad + kernel + out_pad; }
  int out_w() const { return (in_w - 1) * stride - 2 * pad + kernel + out_pad; }
};

// Precomputed im2col index map; shared between forward and backward.
struct ConvIndexMap {
  // rows: in_channels*k*k, cols: positions; entry is a flat feature index or -1 (padding)
  std::vector<int> map;
  int k_rows = 0, n_pos = 0;
};
std::shared_ptr<const ConvIndexMap> make_conv_index_map(int channels, int h, int w,
                                                        int kernel, int stride, int pad);

// x: B x (inC*H*W), w: outC x (inC*k*k), b: 1 x outC
Var conv2d(Var x, Var w, Var b, const ConvGeom& g, std::shared_ptr<const ConvIndexMap> im);
// x: B x (inC*H*W), w: inC x (outC*k*k), b: 1 x outC
Var conv2d_transpose(Var x, Var w, Var b, const ConvTGeom& g,
                     std::shared_ptr<const ConvIndexMap> im);

// Batch normalization over feature maps laid out as B x (C*HW); gamma/beta are
// 1 x C. In training mode the batch statistics are used and running stats (if
// provided) updated in place; in eval mode running stats are used.
Var batch_norm(Var x, Var gamma, Var beta, int channels, int spatial, double eps,
               bool training, Mat* running_mean, Mat* running_var, double momentum);

}  // namespace taxonet::ad
