#include "diffi2i/schedule.hpp"

#include <cmath>
#include <string>

#include "diffi2i/errors.hpp"

namespace diffi2i {

Schedule::Schedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("schedule needs at least one step");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta must lie in (0, 1), got " + std::to_string(b));
    }
    alphas_.push_back(1.0 - b);
    alpha_bars_.push_back(alpha_bars_.back() * alphas_.back());
  }
}

Schedule Schedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule.steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("need 0 < beta_start <= beta_end < 1, got " +
                      std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    const double step = (beta_end - beta_start) / static_cast<double>(steps - 1);
    for (int t = 1; t <= steps; ++t) {
      betas[static_cast<std::size_t>(t - 1)] = beta_start + (t - 1) * step;
    }
    betas.back() = beta_end;
  }
  return Schedule(std::move(betas));
}

Schedule Schedule::from_betas(std::vector<double> betas) {
  return Schedule(std::move(betas));
}

namespace {

void check_step(int t, int lo, int hi) {
  if (t < lo || t > hi) {
    throw ContractError("step " + std::to_string(t) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

double Schedule::beta(int t) const {
  check_step(t, 1, steps());
  return betas_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha(int t) const {
  check_step(t, 1, steps());
  return alphas_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha_bar(int t) const {
  check_step(t, 0, steps());
  return alpha_bars_[static_cast<std::size_t>(t)];
}

Schedule sweep_schedule(int steps, double beta_start, double default_beta_end,
                        double target) {
  if (steps == 1) return Schedule::linear(1, 1.0 - target, 1.0 - target);
  auto endpoint = [&](double beta_end) {
    return Schedule::linear(steps, beta_start, beta_end).alpha_bar(steps);
  };
  if (endpoint(default_beta_end) <= target) {
    return Schedule::linear(steps, beta_start, default_beta_end);
  }
  // alpha_bar_T is decreasing in beta_end.
  double lo = default_beta_end;
  double hi = 1.0 - 1e-12;
  if (endpoint(hi) > target) {
    throw ConfigError("no beta_end reaches alpha_bar_T <= " +
                      std::to_string(target) + " for T = " + std::to_string(steps));
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (endpoint(mid) <= target ? hi : lo) = mid;
  }
  return Schedule::linear(steps, beta_start, hi);
}

}  // namespace diffi2i
