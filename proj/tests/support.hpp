#pragma once

// Helpers shared by the unit tests: a tiny untrained model over a fixed
// vocabulary and a central finite-difference checker.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mecod/autograd.hpp"
#include "mecod/model.hpp"

namespace mecod::test {

inline Vocabulary small_vocab() {
  return Vocabulary({"[PAD]", "[MASK]", "[UNK]", ".", "Pierre", "Messmer", "English", "French", "is", "a",
                     "citizen", "of", "speaks", "the", "language", "Paris", "born", "in", "Rome", "Italian"});
}

inline TinyMlm small_model(std::uint64_t seed = 3, int hidden = 16, Vocabulary v = small_vocab()) {
  TinyMlmConfig c;
  c.hidden_dim = hidden;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.max_seq_len = 24;
  c.seed = seed;
  c.vocab_size = v.size();
  TinyMlm m(c, v);
  m.set_frozen(true);
  return m;
}

inline ag::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ag::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Largest relative error between the analytic gradient of f at `x` (after
/// one backward pass) and a central difference with step h.
inline double gradient_error(ag::Var x, const std::function<ag::Var()>& f, double h = 1e-6) {
  x.zero_grad();
  ag::Var y = f();
  ag::backward(y);
  const ag::Matrix analytic = x.has_grad() ? x.grad() : ag::Matrix::Zero(x.rows(), x.cols());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.value().size(); ++i) {
    const double orig = x.value().data()[i];
    x.mutable_value().data()[i] = orig + h;
    const double up = f().item();
    x.mutable_value().data()[i] = orig - h;
    const double down = f().item();
    x.mutable_value().data()[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic.data()[i];
    const double err = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mecod::test
