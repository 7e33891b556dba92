#include "mecod/autograd.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include "mecod/error.hpp"

namespace mecod::ag {

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

double Var::item() const {
  if (node_->value.rows() != 1 || node_->value.cols() != 1) {
    throw Error(ErrorKind::invalid_argument, "item() on a non-scalar value");
  }
  return node_->value(0, 0);
}

namespace {

using BackwardFn = std::function<void(Node&)>;

Var make(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const Var& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make_many(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (const Var& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

// Parent i of `self`, or nullptr when it does not take a gradient.
Node* wants(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::invalid_argument,
                std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorKind::invalid_argument, "backward() requires a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.contains(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad;
    if (Node* p = wants(self, 1)) p->grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad;
    if (Node* p = wants(self, 1)) p->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad.cwiseProduct(bv);
    if (Node* p = wants(self, 1)) p->grad_buffer() += self.grad.cwiseProduct(av);
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad * s;
  });
}

Var add_scalar(const Var& a, double s) {
  return make(a.value().array() + s, {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad;
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorKind::invalid_argument, "add_row: bias must be 1 x cols(a)");
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a, row}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad;
    if (Node* p = wants(self, 1)) p->grad_buffer() += self.grad.colwise().sum();
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::invalid_argument, "matmul: inner dimensions differ");
  }
  return make(a.value() * b.value(), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Node* p = wants(self, 0)) p->grad_buffer().noalias() += self.grad * bv.transpose();
    if (Node* p = wants(self, 1)) p->grad_buffer().noalias() += av.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::invalid_argument, "matmul_nt: column counts differ");
  }
  return make(a.value() * b.value().transpose(), {a, b}, [](Node& self) {
    const Matrix& av = self.parents[0]->value;
    const Matrix& bv = self.parents[1]->value;
    if (Node* p = wants(self, 0)) p->grad_buffer().noalias() += self.grad * bv;
    if (Node* p = wants(self, 1)) p->grad_buffer().noalias() += self.grad.transpose() * av;
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make(std::move(out), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer().array() += self.grad(0, 0);
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorKind::invalid_argument, "mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp();
  return make(std::move(out), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad.cwiseProduct(self.value);
  });
}

Var log(const Var& a) {
  return make(a.value().array().log(), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) {
      p->grad_buffer().array() += self.grad.array() / self.parents[0]->value.array();
    }
  });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh(), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) {
      p->grad_buffer().array() += self.grad.array() * (1.0 - self.value.array().square());
    }
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse();
  return make(std::move(out), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) {
      p->grad_buffer().array() +=
          self.grad.array() * self.value.array() * (1.0 - self.value.array());
    }
  });
}

Var gelu(const Var& a) {
  const auto x = a.value().array();
  Matrix out = 0.5 * x * (1.0 + (kGeluC * (x + kGeluA * x.cube())).tanh());
  return make(std::move(out), {a}, [](Node& self) {
    Node* p = wants(self, 0);
    if (!p) return;
    const auto x = p->value.array();
    const auto t = (kGeluC * (x + kGeluA * x.cube())).tanh();
    const auto d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluA * x.square());
    p->grad_buffer().array() += self.grad.array() * d;
  });
}

Var detach(const Var& a) { return constant(a.value()); }

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad.transpose();
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix out(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw Error(ErrorKind::out_of_range, "gather_rows: row " + std::to_string(id) + " out of range");
    }
    out.row(i) = table.value().row(id);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), {table}, [idx = std::move(idx)](Node& self) {
    Node* p = wants(self, 0);
    if (!p) return;
    Matrix& g = p->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var gather_cols(const Var& a, std::span<const int> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix out(a.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int id = ids[static_cast<std::size_t>(j)];
    if (id < 0 || id >= a.cols()) {
      throw Error(ErrorKind::out_of_range, "gather_cols: column " + std::to_string(id) + " out of range");
    }
    out.col(j) = a.value().col(id);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    Node* p = wants(self, 0);
    if (!p) return;
    Matrix& g = p->grad_buffer();
    for (std::size_t j = 0; j < idx.size(); ++j) g.col(idx[j]) += self.grad.col(static_cast<Eigen::Index>(j));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::invalid_argument, "concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error(ErrorKind::invalid_argument, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_many(std::move(out), parts, [](Node& self) {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Eigen::Index n = self.parents[i]->value.rows();
      if (Node* p = wants(self, i)) p->grad_buffer() += self.grad.middleRows(r, n);
      r += n;
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw Error(ErrorKind::invalid_argument, "concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  return make(std::move(out), {a, b}, [](Node& self) {
    const Eigen::Index ac = self.parents[0]->value.cols();
    const Eigen::Index bc = self.parents[1]->value.cols();
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad.leftCols(ac);
    if (Node* p = wants(self, 1)) p->grad_buffer() += self.grad.rightCols(bc);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorKind::out_of_range, "slice_cols: range out of bounds");
  }
  return make(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer().middleCols(start, count) += self.grad;
  });
}

Var substitute_rows(const Var& base, std::span<const int> positions, const Var& replacement) {
  if (static_cast<Eigen::Index>(positions.size()) != replacement.rows() ||
      replacement.cols() != base.cols()) {
    throw Error(ErrorKind::invalid_argument, "substitute_rows: replacement shape mismatch");
  }
  Matrix out = base.value();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int pos = positions[i];
    if (pos < 0 || pos >= base.rows()) throw Error(ErrorKind::out_of_range, "substitute_rows: position out of range");
    out.row(pos) = replacement.value().row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> pos(positions.begin(), positions.end());
  return make(std::move(out), {base, replacement}, [pos = std::move(pos)](Node& self) {
    if (Node* p = wants(self, 0)) {
      Matrix g = self.grad;
      for (int r : pos) g.row(r).setZero();
      p->grad_buffer() += g;
    }
    if (Node* p = wants(self, 1)) {
      Matrix& g = p->grad_buffer();
      for (std::size_t i = 0; i < pos.size(); ++i) g.row(static_cast<Eigen::Index>(i)) += self.grad.row(pos[i]);
    }
  });
}

namespace {

void softmax_inplace(Eigen::Ref<Matrix> m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  softmax_inplace(out);
  return make(std::move(out), {a}, [](Node& self) {
    Node* p = wants(self, 0);
    if (!p) return;
    const Matrix& y = self.value;
    Matrix gy = self.grad.cwiseProduct(y);
    const Eigen::VectorXd dot = gy.rowwise().sum();
    Matrix gx = gy - (y.array().colwise() * dot.array()).matrix();
    p->grad_buffer() += gx;
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw Error(ErrorKind::invalid_argument, "layer_norm: gain/bias must be 1 x cols(x)");
  }
  auto xhat = std::make_shared<Matrix>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  Matrix out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = inv;
    xhat->row(r) = (x.value().row(r).array() - mu) * inv;
    out.row(r) = xhat->row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return make(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    const Matrix& gam = self.parents[1]->value;
    if (Node* p = wants(self, 0)) {
      Matrix dxhat = g.array().rowwise() * gam.row(0).array();
      const double d = static_cast<double>(dxhat.cols());
      Matrix& gx = p->grad_buffer();
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(xhat->row(r)) / d;
        gx.row(r).array() += (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
    }
    if (Node* p = wants(self, 1)) p->grad_buffer() += g.cwiseProduct(*xhat).colwise().sum();
    if (Node* p = wants(self, 2)) p->grad_buffer() += g.colwise().sum();
  });
}

Var self_attention(const Var& qkv, std::span<const Segment> segments, int num_heads) {
  if (qkv.cols() % 3 != 0) throw Error(ErrorKind::invalid_argument, "self_attention: qkv width not divisible by 3");
  const Eigen::Index d = qkv.cols() / 3;
  if (num_heads <= 0 || d % num_heads != 0) {
    throw Error(ErrorKind::invalid_argument, "self_attention: width not divisible by head count");
  }
  const Eigen::Index dh = d / num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Segment> segs(segments.begin(), segments.end());
  for (const Segment& s : segs) {
    if (s.start < 0 || s.length <= 0 || s.start + s.length > qkv.rows()) {
      throw Error(ErrorKind::out_of_range, "self_attention: segment out of range");
    }
  }

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(segs.size() * static_cast<std::size_t>(num_heads));
  const Matrix& in = qkv.value();
  Matrix out = Matrix::Zero(qkv.rows(), d);
  for (const Segment& s : segs) {
    for (int h = 0; h < num_heads; ++h) {
      const Eigen::Index c = h * dh;
      const auto q = in.block(s.start, c, s.length, dh);
      const auto k = in.block(s.start, d + c, s.length, dh);
      const auto v = in.block(s.start, 2 * d + c, s.length, dh);
      Matrix p = (q * k.transpose()) * inv_sqrt;
      softmax_inplace(p);
      out.block(s.start, c, s.length, dh).noalias() = p * v;
      probs->push_back(std::move(p));
    }
  }

  return make(std::move(out), {qkv}, [segs = std::move(segs), probs, num_heads, d, dh, inv_sqrt](Node& self) {
    Node* parent = wants(self, 0);
    if (!parent) return;
    const Matrix& in = parent->value;
    Matrix& gin = parent->grad_buffer();
    std::size_t idx = 0;
    for (const Segment& s : segs) {
      for (int h = 0; h < num_heads; ++h, ++idx) {
        const Eigen::Index c = h * dh;
        const Matrix& p = (*probs)[idx];
        const auto q = in.block(s.start, c, s.length, dh);
        const auto k = in.block(s.start, d + c, s.length, dh);
        const auto v = in.block(s.start, 2 * d + c, s.length, dh);
        const auto go = self.grad.block(s.start, c, s.length, dh);
        gin.block(s.start, 2 * d + c, s.length, dh).noalias() += p.transpose() * go;
        Matrix dp = go * v.transpose();
        const Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
        Matrix ds = p.array() * (dp.array().colwise() - rowdot.array());
        ds *= inv_sqrt;
        gin.block(s.start, c, s.length, dh).noalias() += ds * k;
        gin.block(s.start, d + c, s.length, dh).noalias() += ds.transpose() * q;
      }
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> gold) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(gold.size()) != n || n == 0) {
    throw Error(ErrorKind::invalid_argument, "cross_entropy: one gold id per row required");
  }
  auto probs = std::make_shared<Matrix>(logits.value());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int g = gold[static_cast<std::size_t>(r)];
    if (g < 0 || g >= logits.cols()) throw Error(ErrorKind::out_of_range, "cross_entropy: gold id out of range");
    const double mx = probs->row(r).maxCoeff();
    const double lse = mx + std::log((probs->row(r).array() - mx).exp().sum());
    total += lse - logits.value()(r, g);
  }
  softmax_inplace(*probs);
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<int> gids(gold.begin(), gold.end());
  return make(std::move(out), {logits}, [probs, gids = std::move(gids)](Node& self) {
    Node* p = wants(self, 0);
    if (!p) return;
    const double scale = self.grad(0, 0) / static_cast<double>(gids.size());
    Matrix g = *probs;
    for (std::size_t r = 0; r < gids.size(); ++r) g(static_cast<Eigen::Index>(r), gids[r]) -= 1.0;
    p->grad_buffer() += g * scale;
  });
}

Var weighted_entropy(const Var& logits, const Var& v) {
  check_same_shape(logits, v, "weighted_entropy");
  if (logits.rows() != 1) throw Error(ErrorKind::invalid_argument, "weighted_entropy: expects a single row");
  const Eigen::Index k = logits.cols();
  const double mx = logits.value().maxCoeff();
  const double lse = mx + std::log((logits.value().array() - mx).exp().sum());
  auto logp = std::make_shared<Eigen::RowVectorXd>(logits.value().row(0).array() - lse);
  auto p = std::make_shared<Eigen::RowVectorXd>(logp->array().exp());
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    // p ln p -> 0 as p -> 0
    if ((*p)(i) > 0.0) total -= v.value()(0, i) * (*p)(i) * (*logp)(i);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make(std::move(out), {logits, v}, [p, logp](Node& self) {
    const double up = self.grad(0, 0);
    const auto& vv = self.parents[1]->value;
    const Eigen::Index k = p->size();
    // per-entry p ln p with the zero-probability limit applied
    Eigen::RowVectorXd plogp(k);
    for (Eigen::Index i = 0; i < k; ++i) plogp(i) = (*p)(i) > 0.0 ? (*p)(i) * (*logp)(i) : 0.0;
    if (Node* par = wants(self, 0)) {
      Eigen::RowVectorXd a = vv.row(0).array() * (plogp.array() + p->array());
      const double s = a.sum();
      Eigen::RowVectorXd g = -(a.array() - p->array() * s);
      par->grad_buffer().row(0) += up * g;
    }
    if (Node* par = wants(self, 1)) par->grad_buffer().row(0) -= up * plogp;
  });
}

Var cosine_rows(const Var& h, const Var& m) {
  if (h.rows() != 1 || h.cols() != m.cols()) {
    throw Error(ErrorKind::invalid_argument, "cosine_rows: dimension mismatch");
  }
  const double hn = h.value().norm();
  if (hn == 0.0) throw Error(ErrorKind::numeric, "cosine similarity undefined for a zero-norm vector");
  const Eigen::Index k = m.rows();
  auto norms = std::make_shared<Eigen::VectorXd>(k);
  Matrix out(1, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double mn = m.value().row(i).norm();
    if (mn == 0.0) throw Error(ErrorKind::numeric, "cosine similarity undefined for a zero-norm vector");
    (*norms)(i) = mn;
    out(0, i) = h.value().row(0).dot(m.value().row(i)) / (hn * mn);
  }
  return make(std::move(out), {h, m}, [norms, hn](Node& self) {
    const Matrix& hv = self.parents[0]->value;
    const Matrix& mv = self.parents[1]->value;
    const Eigen::Index k = mv.rows();
    if (Node* p = wants(self, 0)) {
      Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(hv.cols());
      for (Eigen::Index i = 0; i < k; ++i) {
        const double c = self.value(0, i);
        g += self.grad(0, i) * (mv.row(i) / (hn * (*norms)(i)) - c * hv.row(0) / (hn * hn));
      }
      p->grad_buffer().row(0) += g;
    }
    if (Node* p = wants(self, 1)) {
      Matrix& gm = p->grad_buffer();
      for (Eigen::Index i = 0; i < k; ++i) {
        const double c = self.value(0, i);
        const double mn = (*norms)(i);
        gm.row(i) += self.grad(0, i) * (hv.row(0) / (hn * mn) - c * mv.row(i) / (mn * mn));
      }
    }
  });
}

Var straight_through(Matrix hard, const Var& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw Error(ErrorKind::invalid_argument, "straight_through: shape mismatch");
  }
  return make(std::move(hard), {soft}, [](Node& self) {
    if (Node* p = wants(self, 0)) p->grad_buffer() += self.grad;
  });
}

}  // namespace mecod::ag
