#pragma once

#include <cstdint>
#include <functional>

#include "diffi2i/rng.hpp"
#include "diffi2i/schedule.hpp"
#include "diffi2i/tensor.hpp"

namespace diffi2i {

enum class ReverseMode { variance_free, noise_inclusive };

const char* reverse_mode_name(ReverseMode mode);

struct ReverseConfig {
  ReverseMode mode = ReverseMode::variance_free;
  Schedule schedule = Schedule::linear(4, 0.1, 0.99);
  std::uint64_t rng_seed = 0;
};

// Single forward step q(x_t | x_{t-1}):
//   x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) noise.
Tensor forward_step(const Tensor& x_prev, int t, const Schedule& schedule,
                    const Tensor& noise);

// Closed-form marginal q(x_t | x_0):
//   x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) noise.
Tensor diffuse_to_step(const Tensor& z, int t, const Schedule& schedule,
                       const Tensor& noise);

// Closed form at t = T (the training entry point of the reverse chain).
Tensor diffuse_to_T(const Tensor& z, const Schedule& schedule, const Tensor& noise);

// Posterior standard deviation sigma_t with
//   sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
// sigma_1 = 0 follows from alpha_bar_0 = 1.
double posterior_sigma(const Schedule& schedule, int t);

// z_{t-1} = (z_t - eps_hat (1 - alpha_t) / sqrt(1 - alpha_bar_t)) / sqrt(alpha_t)
// plus sigma_t * g in noise-inclusive mode, with g drawn from `rng`.
// Throws ContractError unless 1 <= t <= T, or when noise-inclusive mode has
// no rng.
Tensor reverse_step(const Tensor& z_t, const Tensor& eps_hat, int t,
                    const ReverseConfig& cfg, Rng* rng = nullptr);

// Noise estimate for (z_t, t).
using EpsilonFn = std::function<Tensor(const Tensor& z_t, int t)>;

// Runs reverse_step for t = T..1 and returns z_0. The graph spans every
// step, so gradients flow from z_0 back to z_T and through `eps`.
Tensor reverse_chain(const Tensor& z_T, const EpsilonFn& eps, const ReverseConfig& cfg);

// Exact noise for a known clean z: (z_t - sqrt(alpha_bar_t) z) / sqrt(1 - alpha_bar_t).
// Test oracle for the chain; not used in training.
EpsilonFn oracle_epsilon(const Tensor& z, const Schedule& schedule);

}  // namespace diffi2i
