#include "srf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace srf {

namespace {

thread_local DType t_default_dtype = DType::f32;
thread_local bool t_grad_enabled = true;
std::atomic<NodeId> g_next_id{1};

template <class T>
std::vector<T> convert(std::span<const double> values) {
  return std::vector<T>(values.begin(), values.end());
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

DType default_dtype() { return t_default_dtype; }
void set_default_dtype(DType dtype) { t_default_dtype = dtype; }

bool grad_enabled() { return t_grad_enabled; }
NoGradScope::NoGradScope() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradScope::~NoGradScope() { t_grad_enabled = saved_; }

namespace detail {
NodeId next_node_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }
}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, detail::Buffer buffer) {
  validate_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->value = std::move(buffer);
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  validate_shape(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (dtype == DType::f32) return Tensor(make_leaf(std::move(shape), std::vector<float>(n, static_cast<float>(value))));
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("got " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  if (dtype == DType::f32) return Tensor(make_leaf(std::move(shape), convert<float>(values)));
  return Tensor(make_leaf(std::move(shape), convert<double>(values)));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

template <class T>
Tensor Tensor::from_buffer(Shape shape, std::vector<T> values) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("got " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  return Tensor(make_leaf(std::move(shape), std::move(values)));
}

template Tensor Tensor::from_buffer<float>(Shape, std::vector<float>);
template Tensor Tensor::from_buffer<double>(Shape, std::vector<double>);

const detail::Node& Tensor::node() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  return std::holds_alternative<std::vector<float>>(node().value) ? DType::f32 : DType::f64;
}

NodeId Tensor::id() const { return node().id; }

bool Tensor::requires_grad() const { return node().requires_grad; }

bool Tensor::is_leaf() const { return !node().backward; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw Error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

template <class T>
std::span<const T> Tensor::data() const {
  const auto* v = std::get_if<std::vector<T>>(&node().value);
  if (v == nullptr) {
    throw DTypeError(std::string("tensor holds ") + dtype_name(dtype()) + ", requested " + dtype_name(dtype_of<T>()));
  }
  return *v;
}

template <class T>
std::span<T> Tensor::mutable_data() {
  if (!is_leaf()) throw Error("only leaf tensors expose mutable storage");
  auto* v = std::get_if<std::vector<T>>(&node_->value);
  if (v == nullptr) {
    throw DTypeError(std::string("tensor holds ") + dtype_name(dtype()) + ", requested " + dtype_name(dtype_of<T>()));
  }
  return *v;
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) throw ShapeError("flat index out of range");
  return std::visit([&](const auto& v) { return static_cast<double>(v[static_cast<std::size_t>(flat_index)]); },
                    node().value);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, node().value);
}

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node().value)); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  auto values = to_vector();
  return from_values(shape(), values, target);
}

const Tensor& GradientMap::at(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(t.id()));
  return it->second;
}

const Tensor* GradientMap::find(NodeId id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? nullptr : &it->second;
}

GradientMap backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a single-element loss, got " + shape_str(loss.shape()));
  GradientMap result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  visited.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].node_.get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::Node*, detail::Buffer> grads;
  auto zeros_like = [](const detail::Node* n) -> detail::Buffer {
    return std::visit([](const auto& v) -> detail::Buffer {
      using V = std::decay_t<decltype(v)>;
      return V(v.size(), typename V::value_type(0));
    }, n->value);
  };
  {
    auto seed = zeros_like(loss.node_.get());
    std::visit([](auto& v) { v[0] = 1; }, seed);
    grads.emplace(loss.node_.get(), std::move(seed));
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    if (!node->backward) {
      result.grads_.emplace(node->id, Tensor(make_leaf(node->shape, std::move(g->second))));
      grads.erase(g);
      continue;
    }
    std::vector<detail::Buffer*> in_grads;
    in_grads.reserve(node->inputs.size());
    for (auto& in : node->inputs) {
      detail::Node* child = in.node_.get();
      if (!child->requires_grad) {
        in_grads.push_back(nullptr);
        continue;
      }
      auto [pos, inserted] = grads.try_emplace(child);
      if (inserted) pos->second = zeros_like(child);
      in_grads.push_back(&pos->second);
    }
    // try_emplace above may rehash, so look the output gradient up again.
    const detail::Buffer& out_grad = grads.at(node);
    BackwardContext ctx(out_grad, std::move(in_grads));
    node->backward(ctx);
    grads.erase(node);
  }
  return result;
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DTypeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
  }
}

}  // namespace srf
