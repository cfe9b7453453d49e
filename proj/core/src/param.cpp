#include "diffi2i/param.hpp"

#include <algorithm>
#include <cstring>

#include "diffi2i/errors.hpp"

namespace diffi2i {

const Tensor& ParamSet::add(std::string id, Tensor value) {
  if (index_.count(id)) throw ConfigError("duplicate parameter id '" + id + "'");
  if (!value.is_leaf()) throw ConfigError("parameter '" + id + "' must be a leaf");
  value.set_requires_grad(true);
  index_.emplace(id, params_.size());
  params_.push_back(Param{std::move(id), std::move(value)});
  return params_.back().tensor;
}

const Tensor& ParamSet::zeros(std::string id, Shape shape) {
  return add(std::move(id), Tensor::zeros(std::move(shape)));
}

const Tensor& ParamSet::ones(std::string id, Shape shape) {
  return add(std::move(id), Tensor::full(std::move(shape), 1.0));
}

const Tensor& ParamSet::uniform(std::string id, Shape shape, double bound,
                                Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(std::move(id), Tensor(std::move(shape), std::move(v)));
}

const Tensor& ParamSet::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("unknown parameter id '" + id + "'");
  return params_[it->second].tensor;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& p : params_) {
    out.add(p.id, p.tensor.clone(true));
    out.params_.back().tensor.set_requires_grad(p.tensor.requires_grad());
  }
  return out;
}

void ParamSet::set_requires_grad(bool flag) {
  for (auto& p : params_) p.tensor.set_requires_grad(flag);
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParamSet::fill(double value) {
  for (auto& p : params_) {
    auto d = p.tensor.mutable_data();
    std::fill(d.begin(), d.end(), value);
  }
}

bool ParamSet::bit_equal(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.id != b.id || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.data().data(), b.tensor.data().data(),
                    a.tensor.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace diffi2i
