#pragma once

#include <span>
#include <vector>

namespace diffi2i {

// Per-step diffusion coefficients for steps t = 1..T.
//
//   alpha_t     = 1 - beta_t
//   alpha_bar_t = prod_{i<=t} alpha_i,   alpha_bar_0 = 1
//
// Immutable after construction.
class Schedule {
 public:
  // beta_t = beta_start + (t-1)(beta_end - beta_start)/(T-1); beta_1 =
  // beta_start when T = 1. Throws ConfigError unless T >= 1 and
  // 0 < beta_start <= beta_end < 1.
  static Schedule linear(int steps, double beta_start, double beta_end);

  // Arbitrary betas, each in (0, 1). Used when loading checkpoints.
  static Schedule from_betas(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;  // t in [0, T]

  std::span<const double> betas() const noexcept { return betas_; }

  bool operator==(const Schedule&) const = default;

 private:
  explicit Schedule(std::vector<double> betas);

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;  // index 0 holds alpha_bar_0 = 1
};

// Default diffusion endpoint for the re-tuned schedules of the T sweep.
inline constexpr double kSweepAlphaBarTarget = 2e-3;

// Schedule for the iteration-count sweep. Keeps beta_start and the default
// beta_end when that already drives alpha_bar_T <= target; otherwise
// bisects for the smallest beta_end that does. For T = 1 the single beta
// is 1 - target, since beta_1 = beta_start cannot otherwise move.
Schedule sweep_schedule(int steps, double beta_start = 0.1,
                        double default_beta_end = 0.99,
                        double target = kSweepAlphaBarTarget);

}  // namespace diffi2i
