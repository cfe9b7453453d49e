#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffi2i/rng.hpp"
#include "diffi2i/tensor.hpp"

namespace diffi2i {

struct Param {
  std::string id;
  Tensor tensor;  // leaf, requires_grad
};

// Ordered, id-addressed parameter collection for one network. Iteration
// order is insertion order, which fixes the checkpoint layout.
class ParamSet {
 public:
  ParamSet() = default;

  // Registers a new parameter; throws ConfigError on a duplicate id.
  const Tensor& add(std::string id, Tensor value);
  const Tensor& zeros(std::string id, Shape shape);
  const Tensor& ones(std::string id, Shape shape);
  // Uniform in [-bound, bound].
  const Tensor& uniform(std::string id, Shape shape, double bound, Rng& rng);

  const Tensor& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Param>& params() noexcept { return params_; }

  // Deep copy: fresh leaves with the same values.
  ParamSet clone() const;

  void set_requires_grad(bool flag);
  void zero_grad();
  // Sets every value to zero (used by residual-isolation tests).
  void fill(double value);

  bool bit_equal(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace diffi2i
