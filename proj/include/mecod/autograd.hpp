#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// A Var is a cheap handle to a graph node. Nodes built from inputs that do
// not require gradients carry no backward closure, so inference over a frozen
// model builds no graph at all. Heavy kernels (attention, layer norm,
// cross-entropy) are fused ops with hand-written backward passes.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace mecod::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first access.
  Matrix& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Direct write access; used by optimizers and finite-difference checks.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);
Var scalar(double v);

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
/// requires a gradient. `root` must be 1x1.
void backward(const Var& root);

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over every row of a
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var sum(const Var& a);
Var mean(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var gelu(const Var& a);
Var detach(const Var& a);
Var transpose(const Var& a);

// Shape manipulation.
Var gather_rows(const Var& table, std::span<const int> ids);
Var gather_cols(const Var& a, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Copy of `base` with row positions[i] replaced by row i of `replacement`.
Var substitute_rows(const Var& base, std::span<const int> positions, const Var& replacement);

// Fused kernels.
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct Segment {
  int start = 0;
  int length = 0;
};
/// Bidirectional multi-head self-attention. `qkv` is n x 3d with the query,
/// key and value projections side by side; attention never crosses segments.
Var self_attention(const Var& qkv, std::span<const Segment> segments, int num_heads);

/// Mean over rows of -log softmax(logits[r])[gold[r]] (natural log).
Var cross_entropy(const Var& logits, std::span<const int> gold);
/// -sum_i v_i p_i ln p_i with p = softmax(logits); logits and v are 1 x k.
Var weighted_entropy(const Var& logits, const Var& v);
/// Cosine similarity of the single row `h` against every row of `m` (1 x rows(m)).
Var cosine_rows(const Var& h, const Var& m);
/// Forward value `hard`; gradient passes straight through to `soft`.
Var straight_through(Matrix hard, const Var& soft);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace mecod::ag
