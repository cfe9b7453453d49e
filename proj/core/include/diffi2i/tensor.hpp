#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace diffi2i {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 tensor with reverse-mode autodiff.
//
// Tensor is a handle: copies share the same storage and graph node, in the
// manner of torch.Tensor. Use clone() for an independent leaf copy.
//
// Ops record a graph node only when gradient mode is enabled and at least
// one input requires grad. backward() walks that graph once and then
// releases it.
class Tensor {
 public:
  struct Node;
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Direct write access; bypasses the graph. Used by optimizers and
  // initializers on leaf tensors only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // True once backward() has consumed the graph this tensor roots.
  bool released() const;
  bool is_leaf() const;

  // Independent leaf holding a copy of the values.
  Tensor clone(bool requires_grad = false) const;
  // Leaf sharing nothing with this graph; same values, no grad.
  Tensor detach() const { return clone(false); }

  // Internal: build an op result. `inputs` are the graph parents, `fn`
  // scatters the output gradient into them.
  static Tensor from_op(Shape shape, std::vector<double> data,
                        std::vector<Tensor> inputs, BackwardFn fn);

  // Internal: gradient accumulation buffer of an op input, sized on demand.
  // Returns an empty span when the input does not require grad.
  static std::span<double> grad_sink(const Tensor& t);

  const Node* node() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend void backward(const Tensor& loss);
};

// Populates .grad() on every requires_grad leaf reachable from `loss`, then
// releases the graph. Throws ContractError for a non-scalar loss or a loss
// that does not require grad, StateError when the graph was already
// released.
void backward(const Tensor& loss);

bool grad_enabled() noexcept;

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Multiply-accumulate counter for conv and linear forwards on this thread.
std::uint64_t mac_count() noexcept;
void add_macs(std::uint64_t n) noexcept;

// Measures MACs issued on this thread between construction and elapsed().
class MacScope {
 public:
  MacScope() : start_(mac_count()) {}
  std::uint64_t elapsed() const noexcept { return mac_count() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace diffi2i
