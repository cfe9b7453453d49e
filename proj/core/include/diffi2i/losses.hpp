#pragma once

#include <string>

#include "diffi2i/tensor.hpp"

namespace diffi2i {

// IPR losses take [N, D] estimates and targets and average over the batch.
// Each throws DimensionError on a shape mismatch.

// (1/D) sum_i |z_hat_i - z_i|
Tensor loss_diff(const Tensor& z_hat, const Tensor& z);

// (1/D) sum_i (z_hat_i - z_i)^2
Tensor loss_l2(const Tensor& z_hat, const Tensor& z);

// KL(softmax(z) || softmax(z_hat)) = sum_i p_i log(p_i / q_i).
Tensor loss_kl(const Tensor& z_hat, const Tensor& z);

// Mean absolute pixel error.
Tensor loss_task_l1(const Tensor& output, const Tensor& gt);

// Noise-regression objective of single-timestep DM training:
// batch mean of ||eps - eps_hat||^2 summed over the vector.
Tensor loss_epsilon(const Tensor& eps_hat, const Tensor& eps);

enum class DmLoss { l_diff, l_2, l_kl };

const char* dm_loss_name(DmLoss loss);
DmLoss parse_dm_loss(const std::string& name);  // l_diff | l2 | kl

Tensor dm_loss(DmLoss kind, const Tensor& z_hat, const Tensor& z);

}  // namespace diffi2i
