#include "exdrop/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace exdrop {

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<Matrix*> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  if (cfg_.kind == OptKind::adam) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Matrix* p : params_) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
}

void Optimizer::step(const std::vector<const Matrix*>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("optimizer: " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params_.size()) +
                                " parameters");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = *params_[i];
    const Matrix& g = *grads[i];
    if (!p.same_shape(g)) {
      throw std::invalid_argument("optimizer: gradient " + g.shape_str() +
                                  " for parameter " + p.shape_str());
    }
    if (cfg_.kind == OptKind::sgd) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        p.data()[j] -= cfg_.lr * g.data()[j];
      }
    } else {
      Matrix& m = m_[i];
      Matrix& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g.data()[j];
        m.data()[j] = cfg_.beta1 * m.data()[j] + (1.0 - cfg_.beta1) * gj;
        v.data()[j] = cfg_.beta2 * v.data()[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = m.data()[j] / bc1;
        const double vhat = v.data()[j] / bc2;
        p.data()[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
}

}  // namespace exdrop
