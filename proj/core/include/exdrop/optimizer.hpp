#pragma once

#include <vector>

#include "exdrop/config.hpp"
#include "exdrop/matrix.hpp"

namespace exdrop {

// SGD / Adam over a fixed list of parameter matrices. The gradient list
// passed to step() must align with the parameter list one-to-one.
class Optimizer {
public:
  Optimizer(const OptimizerConfig& cfg, std::vector<Matrix*> params);

  void step(const std::vector<const Matrix*>& grads);

  std::size_t steps_taken() const { return t_; }

private:
  OptimizerConfig cfg_;
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_;  // Adam first moments
  std::vector<Matrix> v_;  // Adam second moments
  std::size_t t_ = 0;
};

}  // namespace exdrop
