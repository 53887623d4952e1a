#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every op returns a new Var whose node remembers its parents and
// a closure that pushes the output gradient back to them.
namespace oisa::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat&)> backward;

  void accumulate(const Mat& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording is on by default; NoGradGuard disables it for the
// lifetime of the guard on the current thread.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. `fn` receives the gradient w.r.t. the result and must
// accumulate into the parents that require grad.
Var make_result(Mat value, std::vector<Var> parents, std::function<void(const Mat&)> fn);

// Runs backpropagation from a scalar (1x1) loss.
void backward(const Var& loss);

Var constant(Mat value);

// --- elementwise & linear algebra ---------------------------------------
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var mul_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var transpose(const Var& a);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // 1xC column means

// --- row manipulation ---------------------------------------------------
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, std::span<const int> ids);
// Rows of `a` selected by index (may repeat); used for padding.
Var select_rows(const Var& a, std::span<const Eigen::Index> rows);

// --- normalization / attention -----------------------------------------
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var softmax_rows(const Var& a);

// Multi-head scaled dot-product attention. q: Lq x D, k,v: Lk x D.
// When causal, query i sees keys j <= i + (Lk - Lq).
Var attention(const Var& q, const Var& k, const Var& v, int n_heads, bool causal);

// Rotary position embedding applied per head on pairs (2i, 2i+1).
Var rope(const Var& x, std::span<const int> positions, int n_heads, double base = 10000.0);

// --- grid ops. Feature maps are (H*W) x C, row index y*W + x. ----------
// weight: (k*k*Cin) x Cout in (ky, kx, cin) order; bias: 1 x Cout.
Var conv2d(const Var& x, int height, int width, const Var& weight, const Var& bias, int kernel,
           int stride, int pad);
// 2x2 stride-2 transposed conv. weight: Cin x (4*Cout) in (dy, dx, cout) order.
Var conv_transpose2x2(const Var& x, int height, int width, const Var& weight, const Var& bias);
Var upsample_nearest2x(const Var& x, int height, int width);
Var avg_pool(const Var& x, int height, int width, int factor);
// Bilinear resize of a single-channel h x w map (half-pixel centers).
Var bilinear_resize(const Var& map, int out_height, int out_width);
Mat bilinear_matrix(int in_size, int out_size);

// --- losses -------------------------------------------------------------
// Mean token cross entropy; targets < 0 are ignored. Returns 1x1.
Var cross_entropy(const Var& logits, std::span<const int> targets);
// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps), p = sigmoid(logits).
Var dice_loss(const Var& logits, const Mat& target, double eps = 1.0);
// Mean per-element binary cross entropy on logits.
Var bce_with_logits(const Var& logits, const Mat& target);

}  // namespace oisa::ag
