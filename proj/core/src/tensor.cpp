#include "diffi2i/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "diffi2i/errors.hpp"

namespace diffi2i {

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;
};

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_macs = 0;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " +
                         shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (node_->data.size() != 1) {
    throw ContractError("item() on tensor of shape " +
                        shape_string(node_->shape));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->leaf) {
    throw ContractError("requires_grad can only be changed on leaf tensors");
  }
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

bool Tensor::released() const { return node_->released; }

bool Tensor::is_leaf() const { return node_->leaf; }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data,
                       std::vector<Tensor> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.node_->requires_grad;
  });
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.leaf = false;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node_);
  node.backward_fn = std::move(fn);
  return out;
}

std::span<double> Tensor::grad_sink(const Tensor& t) {
  auto& node = *t.node_;
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on undefined tensor");
  auto* root = loss.node_.get();
  if (root->released) {
    throw StateError("backward() called twice: graph already released");
  }
  if (root->data.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(root->shape));
  }
  if (!root->requires_grad) {
    throw ContractError("backward() on a loss that does not require grad");
  }

  // Iterative post-order DFS; reversed it is a topological order from the
  // loss toward the leaves.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> visited;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->released) {
        throw StateError("backward() reached a node of a released graph");
      }
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->leaf || !node->backward_fn || node->grad.empty()) continue;
    node->backward_fn(node->grad);
  }

  for (auto* node : order) {
    if (node->leaf) continue;
    node->backward_fn = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->released = true;
  }
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t mac_count() noexcept { return t_macs; }

void add_macs(std::uint64_t n) noexcept { t_macs += n; }

}  // namespace diffi2i
