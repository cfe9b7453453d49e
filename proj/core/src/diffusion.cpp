#include "diffi2i/diffusion.hpp"

#include <cmath>
#include <string>

#include "diffi2i/errors.hpp"
#include "diffi2i/ops.hpp"

namespace diffi2i {
namespace {

void require_match(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

const char* reverse_mode_name(ReverseMode mode) {
  return mode == ReverseMode::variance_free ? "variance_free" : "noise_inclusive";
}

Tensor forward_step(const Tensor& x_prev, int t, const Schedule& schedule,
                    const Tensor& noise) {
  require_match("forward_step", x_prev, noise);
  return ops::add(ops::scale(x_prev, std::sqrt(schedule.alpha(t))),
                  ops::scale(noise, std::sqrt(schedule.beta(t))));
}

Tensor diffuse_to_step(const Tensor& z, int t, const Schedule& schedule,
                       const Tensor& noise) {
  require_match("diffuse_to_step", z, noise);
  const double ab = schedule.alpha_bar(t);
  return ops::add(ops::scale(z, std::sqrt(ab)), ops::scale(noise, std::sqrt(1.0 - ab)));
}

Tensor diffuse_to_T(const Tensor& z, const Schedule& schedule, const Tensor& noise) {
  return diffuse_to_step(z, schedule.steps(), schedule, noise);
}

double posterior_sigma(const Schedule& schedule, int t) {
  const double var = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t)) *
                     schedule.beta(t);
  return std::sqrt(var);
}

Tensor reverse_step(const Tensor& z_t, const Tensor& eps_hat, int t,
                    const ReverseConfig& cfg, Rng* rng) {
  const auto& s = cfg.schedule;
  if (t < 1 || t > s.steps()) {
    throw ContractError("reverse_step: step " + std::to_string(t) + " outside [1, " +
                        std::to_string(s.steps()) + "]");
  }
  require_match("reverse_step", z_t, eps_hat);
  const double alpha = s.alpha(t);
  const double eps_coef = (1.0 - alpha) / std::sqrt(1.0 - s.alpha_bar(t));
  auto mean = ops::scale(ops::sub(z_t, ops::scale(eps_hat, eps_coef)), 1.0 / std::sqrt(alpha));
  if (cfg.mode == ReverseMode::variance_free || t == 1) return mean;
  if (rng == nullptr) throw ContractError("reverse_step: noise-inclusive mode needs an rng");
  auto g = rng->normal_tensor(z_t.shape());
  return ops::add(mean, ops::scale(g, posterior_sigma(s, t)));
}

Tensor reverse_chain(const Tensor& z_T, const EpsilonFn& eps, const ReverseConfig& cfg) {
  Rng rng(cfg.rng_seed);
  Tensor z = z_T;
  for (int t = cfg.schedule.steps(); t >= 1; --t) {
    z = reverse_step(z, eps(z, t), t, cfg, &rng);
  }
  return z;
}

EpsilonFn oracle_epsilon(const Tensor& z, const Schedule& schedule) {
  return [z, schedule](const Tensor& z_t, int t) {
    const double ab = schedule.alpha_bar(t);
    return ops::scale(ops::sub(z_t, ops::scale(z, std::sqrt(ab))), 1.0 / std::sqrt(1.0 - ab));
  };
}

}  // namespace diffi2i
