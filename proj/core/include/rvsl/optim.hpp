#pragma once

#include <cstddef>
#include <vector>

#include "rvsl/autodiff.hpp"

namespace rvsl::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Bias-corrected Adam over a fixed parameter list. Each instance keeps its
/// own moments, so optimizers for disjoint modules never interact.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig cfg = {});

  /// Applies one update from the current Parameter::grad values.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const noexcept { return t_; }
  /// L2 norm of the current gradients across all parameters.
  double grad_norm() const;

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace rvsl::optim
