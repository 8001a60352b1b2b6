#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <variant>
#include <vector>

#include "srf/errors.hpp"

namespace srf {

enum class DType : std::uint8_t { f32, f64 };

const char* dtype_name(DType dtype);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `fn.template operator()<T>()` with T matching `dtype`.
template <class F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Precision and gradient recording are per-thread so that independent
// training runs can share a process.
DType default_dtype();
void set_default_dtype(DType dtype);

class PrecisionScope {
 public:
  explicit PrecisionScope(DType dtype) : saved_(default_dtype()) { set_default_dtype(dtype); }
  ~PrecisionScope() { set_default_dtype(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  DType saved_;
};

bool grad_enabled();

class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool saved_;
};

using NodeId = std::uint64_t;

class BackwardContext;
class GradientMap;
class Tensor;
GradientMap backward(const Tensor& loss);
using BackwardFn = std::function<void(BackwardContext&)>;

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct Node;

}  // namespace detail

/// Dense row-major array that records the operations producing it.
///
/// Copies are shallow handles onto the same node. Values are immutable once
/// created; only leaves (parameters, inputs) expose mutable storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = default_dtype());
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = default_dtype());
  template <class T>
  static Tensor from_buffer(Shape shape, std::vector<T> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Extent along `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;
  DType dtype() const;
  NodeId id() const;

  bool requires_grad() const;
  /// Only valid on leaves.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  template <class T>
  std::span<const T> data() const;
  /// Writable storage of a leaf. Intended for parameter updates and
  /// finite-difference probes; the caller serializes access.
  template <class T>
  std::span<T> mutable_data();

  double item() const;
  double at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;

  /// New leaf holding a copy of the values.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  template <class T>
  friend Tensor make_op_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                               BackwardFn backward);
  friend GradientMap backward(const Tensor& loss);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  NodeId id = 0;
  Shape shape;
  Buffer value;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

NodeId next_node_id();

}  // namespace detail

/// Handed to an operator's backward closure. Gradients flowing into inputs
/// are accumulated (+=) into the spans returned by grad_input().
class BackwardContext {
 public:
  BackwardContext(const detail::Buffer& grad_out, std::vector<detail::Buffer*> grad_in)
      : grad_out_(grad_out), grad_in_(std::move(grad_in)) {}

  template <class T>
  std::span<const T> grad_output() const {
    return std::get<std::vector<T>>(grad_out_);
  }

  bool needs_grad(std::size_t input) const { return grad_in_.at(input) != nullptr; }

  /// Empty span when the input does not require a gradient.
  template <class T>
  std::span<T> grad_input(std::size_t input) {
    auto* buffer = grad_in_.at(input);
    if (buffer == nullptr) return {};
    return std::get<std::vector<T>>(*buffer);
  }

 private:
  const detail::Buffer& grad_out_;
  std::vector<detail::Buffer*> grad_in_;
};

/// Builds the output of a differentiable operator. The node is attached to the
/// graph only when recording is enabled and some input requires a gradient.
template <class T>
Tensor make_op_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs, BackwardFn backward) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("operator produced " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Gradients of a scalar with respect to every leaf that requires one.
class GradientMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  const Tensor& at(const Tensor& t) const;
  const Tensor* find(NodeId id) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend GradientMap backward(const Tensor& loss);
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Reverse-mode sweep from a single-element tensor. Contributions from
/// multiple uses of a node are summed.
GradientMap backward(const Tensor& loss);

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace srf
