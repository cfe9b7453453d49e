#pragma once

#include <vector>

#include "diffi2i/param.hpp"

namespace diffi2i {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam over a fixed list of parameter sets. Only tensor data is mutated,
// never shapes. Parameters whose gradient buffer is empty are skipped.
class Adam {
 public:
  Adam(std::vector<ParamSet*> groups, AdamOptions options);

  void step();
  void zero_grad();
  long steps_taken() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  std::vector<ParamSet*> groups_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
};

// Global L2 norm of all gradients in `groups`.
double grad_norm(const std::vector<ParamSet*>& groups);

// Rescales gradients so their global norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const std::vector<ParamSet*>& groups, double max_norm);

}  // namespace diffi2i
