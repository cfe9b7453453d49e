#include "diffi2i/optimizer.hpp"

#include <cmath>

namespace diffi2i {

Adam::Adam(std::vector<ParamSet*> groups, AdamOptions options)
    : groups_(std::move(groups)), options_(options) {
  for (auto* g : groups_) {
    for (const auto& p : g->params()) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  std::size_t slot = 0;
  for (auto* g : groups_) {
    for (auto& p : g->params()) {
      auto& m = m_[slot];
      auto& v = v_[slot];
      ++slot;
      if (!p.tensor.has_grad()) continue;
      auto grad = p.tensor.grad();
      auto data = p.tensor.mutable_data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * grad[i];
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        data[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto* g : groups_) g->zero_grad();
}

double grad_norm(const std::vector<ParamSet*>& groups) {
  double sq = 0.0;
  for (auto* g : groups) {
    for (const auto& p : g->params()) {
      for (double v : p.tensor.grad()) sq += v * v;
    }
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<ParamSet*>& groups, double max_norm) {
  const double norm = grad_norm(groups);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto* g : groups) {
      for (auto& p : g->params()) {
        if (!p.tensor.has_grad()) continue;
        auto sink = Tensor::grad_sink(p.tensor);
        for (auto& v : sink) v *= factor;
      }
    }
  }
  return norm;
}

}  // namespace diffi2i
