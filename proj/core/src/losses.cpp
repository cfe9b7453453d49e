#include "diffi2i/losses.hpp"

#include "diffi2i/errors.hpp"
#include "diffi2i/ops.hpp"

namespace diffi2i {
namespace {

void require_vectors(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected equal [N,D] shapes, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

}  // namespace

Tensor loss_diff(const Tensor& z_hat, const Tensor& z) {
  require_vectors("loss_diff", z_hat, z);
  return ops::mean(ops::abs(ops::sub(z_hat, z)));
}

Tensor loss_l2(const Tensor& z_hat, const Tensor& z) {
  require_vectors("loss_l2", z_hat, z);
  return ops::mean(ops::square(ops::sub(z_hat, z)));
}

Tensor loss_kl(const Tensor& z_hat, const Tensor& z) {
  require_vectors("loss_kl", z_hat, z);
  auto log_p = ops::log_softmax(z);
  auto log_q = ops::log_softmax(z_hat);
  auto terms = ops::mul(ops::exp(log_p), ops::sub(log_p, log_q));
  return ops::scale(ops::sum(terms), 1.0 / static_cast<double>(z.dim(0)));
}

Tensor loss_task_l1(const Tensor& output, const Tensor& gt) {
  if (output.shape() != gt.shape()) {
    throw DimensionError("loss_task_l1: output " + shape_string(output.shape()) +
                         " vs gt " + shape_string(gt.shape()));
  }
  return ops::mean(ops::abs(ops::sub(output, gt)));
}

Tensor loss_epsilon(const Tensor& eps_hat, const Tensor& eps) {
  require_vectors("loss_epsilon", eps_hat, eps);
  return ops::scale(ops::sum(ops::square(ops::sub(eps, eps_hat))),
                    1.0 / static_cast<double>(eps.dim(0)));
}

const char* dm_loss_name(DmLoss loss) {
  switch (loss) {
    case DmLoss::l_diff: return "l_diff";
    case DmLoss::l_2: return "l2";
    case DmLoss::l_kl: return "kl";
  }
  return "?";
}

DmLoss parse_dm_loss(const std::string& name) {
  if (name == "l_diff") return DmLoss::l_diff;
  if (name == "l2" || name == "l_2") return DmLoss::l_2;
  if (name == "kl" || name == "l_kl") return DmLoss::l_kl;
  throw ConfigError("unknown dm loss '" + name + "' (expected l_diff, l2 or kl)");
}

Tensor dm_loss(DmLoss kind, const Tensor& z_hat, const Tensor& z) {
  switch (kind) {
    case DmLoss::l_diff: return loss_diff(z_hat, z);
    case DmLoss::l_2: return loss_l2(z_hat, z);
    case DmLoss::l_kl: return loss_kl(z_hat, z);
  }
  throw ConfigError("unknown dm loss");
}

}  // namespace diffi2i
