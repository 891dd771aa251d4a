#pragma once

#include <cstdint>
#include <vector>

#include "sttm/numerics.hpp"

namespace sttm::numerics {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Owns first/second moment buffers for a fixed
// parameter list; step() consumes and clears every parameter's gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step();

  std::int64_t step_count() const noexcept { return step_count_; }
  const AdamOptions& options() const noexcept { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::int64_t step_count_ = 0;
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before scaling.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace sttm::numerics
