#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation applied to Vars created through it. Calling
// Tape::backward() on a 1x1 result propagates gradients to every node that
// requires them, including persistent Parameters. A Tape constructed with
// record = false evaluates values only and keeps no history.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metdrive::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::function<void()> backward;

  /// Adds g into grad, allocating on first use.
  void accumulate(const Mat& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::shared_ptr<Node> node) : tape_(tape), node_(std::move(node)) {}

  const Mat& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient accumulated by the last backward pass; empty if none reached this node.
  const Mat& grad() const { return node_->grad; }

  Tape* tape() const { return tape_; }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool valid() const { return static_cast<bool>(node_); }

 private:
  Tape* tape_ = nullptr;
  std::shared_ptr<Node> node_;
};

/// Persistent trainable tensor. Gradients accumulate across tapes until zero_grad().
class Parameter {
 public:
  Parameter(std::string name, Mat init);

  const std::string& name() const { return name_; }
  Mat& value() { return node_->value; }
  const Mat& value() const { return node_->value; }
  Mat& grad();
  void zero_grad();
  Index size() const { return node_->value.size(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::string name_;
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Mat value);
  Var param(Parameter& p);

  /// Creates an op result. `backward` is stored only when recording and at least
  /// one input requires gradients; it receives the output node.
  Var emit(Mat value, bool any_input_requires_grad, std::function<void(Node&)> backward);

  /// Seeds d(root)/d(root) = 1 and runs the recorded backward closures in reverse.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  bool record_;
  std::vector<std::shared_ptr<Node>> nodes_;
};

// ---- elementary ops -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Adds a 1xC row vector to every row of a.
Var add_rowvec(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// Elementwise |a|; derivative at 0 taken as 0.
Var abs(const Var& a);
Var sum(const Var& a);
/// 1 - a elementwise.
Var one_minus(const Var& a);

/// Row-wise layer normalization with learned gain and bias (both 1xC).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var gather_rows(const Var& x, std::vector<Index> indices);
Var slice_rows(const Var& x, Index first, Index count);
Var slice_cols(const Var& x, Index first, Index count);
Var hconcat(std::span<const Var> parts);
Var vconcat(std::span<const Var> parts);
/// Mean over consecutive groups of `group_size` rows: (G*n x C) -> (G x C).
Var group_mean_rows(const Var& x, Index group_size);

/// Unfolds channel-last images stored as rows (n*H*W x C) into convolution
/// patches (n*Ho*Wo x k*k*C) with zero padding. Patch column order is (ky, kx, c).
Var im2col(const Var& x, Index n_images, Index height, Index width, Index channels,
           Index kernel, Index stride, Index pad);

/// 1-D analogue over sequences stored as rows (n*L x C): output (n*L x k*C),
/// stride 1, symmetric zero padding (kernel must be odd).
Var im2col_1d(const Var& x, Index n_seq, Index length, Index channels, Index kernel);

/// Scaled dot-product attention applied independently within equal-sized row
/// groups: Q (G*nq x d), K (G*nk x d), V (G*nk x dv) -> (G*nq x dv).
/// If `weights` is non-null it receives the (G*nq x nk) attention matrix.
Var grouped_attention(const Var& q, const Var& k, const Var& v, Index groups,
                      Mat* weights = nullptr);

/// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& scores);

}  // namespace metdrive::ad
