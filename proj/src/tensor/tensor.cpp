#include "cstyolo/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cstyolo {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string_view dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

Shape::Shape(int64_t b, int64_t c, int64_t h, int64_t w) : dims{b, c, h, w} {
  for (auto d : dims) {
    if (d < 1) throw ShapeError("shape components must be >= 1, got " + str());
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << dims[0] << "," << dims[1] << "," << dims[2] << "," << dims[3] << ")";
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Tensor empty(const Shape& shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  if (dtype == DType::f32) impl->f32.assign(shape.numel(), 0.0f);
  else impl->f64.assign(shape.numel(), 0.0);
  return Tensor(std::move(impl));
}

void record(Tensor& out, std::string_view op, std::vector<Tensor> inputs,
            TapeNode::BackwardFn backward) {
  if (!g_grad_enabled) return;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return;
  auto node = std::make_shared<TapeNode>();
  node->op = op;
  node->backward = std::move(backward);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.defined() ? t.impl() : nullptr);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
}

void require_same_dtype(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": mixed dtypes " + std::string(dtype_name(a.dtype())) +
                        " and " + std::string(dtype_name(b.dtype())));
  }
}

}  // namespace detail

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return detail::empty(shape, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = detail::empty(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full(Shape{1, 1, 1, 1}, value, dtype); }

Tensor Tensor::from_vector(const Shape& shape, std::vector<float> values) {
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = DType::f32;
  impl->f32.assign(values.begin(), values.end());
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values) {
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = DType::f64;
  impl->f64.assign(values.begin(), values.end());
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_values: size does not match shape " + shape.str());
  }
  Tensor t = detail::empty(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, Rng& rng, DType dtype) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = detail::empty(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(dist(rng));
  });
  return t;
}

Tensor Tensor::normal(const Shape& shape, double mean, double stddev, Rng& rng, DType dtype) {
  std::normal_distribution<double> dist(mean, stddev);
  Tensor t = detail::empty(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(dist(rng));
  });
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return flat(0);
}

double Tensor::at(int64_t b, int64_t c, int64_t h, int64_t w) const {
  const auto& s = shape();
  return flat(((b * s[1] + c) * s[2] + h) * s[3] + w);
}

double Tensor::flat(int64_t i) const {
  return impl_->dtype == DType::f32 ? impl_->f32[i] : impl_->f64[i];
}

void Tensor::set_flat(int64_t i, double v) {
  if (impl_->dtype == DType::f32) impl_->f32[i] = static_cast<float>(v);
  else impl_->f64[i] = v;
}

std::vector<double> Tensor::to_vector() const {
  if (impl_->dtype == DType::f64) return {impl_->f64.begin(), impl_->f64.end()};
  return {impl_->f32.begin(), impl_->f32.end()};
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  Tensor g = detail::empty(shape(), dtype());
  if (!impl_->has_grad()) return g;
  if (dtype() == DType::f32) g.impl()->f32 = impl_->g32;
  else g.impl()->f64 = impl_->g64;
  return g;
}

void Tensor::zero_grad() { impl_->clear_grad(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a single-element root, got shape " + shape().str());
  }
  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->inputs.size()) {
      detail::TensorImpl* child = cur->node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  dispatch(dtype(), [&]<class T>() {
    auto& g = impl_->grads<T>();
    g[0] += T(1);
  });
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* cur = *it;
    if (!cur->node) continue;
    if (!cur->has_grad()) continue;
    cur->node->backward(*cur, cur->node->inputs);
  }
  // Drop the tape; interior gradients are not kept.
  for (auto* cur : order) {
    if (cur->node) {
      cur->node.reset();
      cur->clear_grad();
    }
  }
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->f32 = impl_->f32;
  impl->f64 = impl_->f64;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl()->requires_grad = is_leaf() && requires_grad();
  return t;
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = target;
  if (target == DType::f64) impl->f64.assign(impl_->f32.begin(), impl_->f32.end());
  else impl->f32.assign(impl_->f64.begin(), impl_->f64.end());
  return Tensor(std::move(impl));
}

}  // namespace cstyolo
