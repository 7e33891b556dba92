#pragma once

#include <cmath>
#include <vector>

#include "mecod/autograd.hpp"

namespace mecod {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed parameter list. Parameters without an accumulated
// gradient are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<ag::Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) {
        m_[i] *= config_.beta1;
        v_[i] *= config_.beta2;
      } else {
        const ag::Matrix& g = p.grad();
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
      }
      p.mutable_value().array() -=
          config_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const std::vector<ag::Var>& params() const { return params_; }

 private:
  std::vector<ag::Var> params_;
  AdamConfig config_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  long t_ = 0;
};

}  // namespace mecod
