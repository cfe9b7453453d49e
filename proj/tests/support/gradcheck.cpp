#include "support/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "diffi2i/ops.hpp"

namespace diffi2i::testing {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& wrt,
                          double h, std::size_t max_coords, Rng* pick) {
  for (auto t : wrt) t.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k];
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > max_coords && pick != nullptr) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        const auto j = static_cast<std::size_t>(
            pick->uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(coords.size()) - 1));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(max_coords);
    }
    for (auto i : coords) {
      auto data = t.mutable_data();
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss().item();
      data[i] = orig - h;
      const double down = loss().item();
      data[i] = orig;
      const double numeric = (up - down) / (2 * h);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[k][i], numeric));
      res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic[k][i] - numeric));
      ++res.checked;
    }
  }
  return res;
}

Tensor random_projection(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, rng.normal_tensor(out.shape())));
}

}  // namespace diffi2i::testing
