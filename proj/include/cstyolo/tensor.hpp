#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cstyolo/errors.hpp"

namespace cstyolo {

using Rng = std::mt19937_64;

/// Element type. f32 is the compute default; f64 exists for gradient checks.
enum class DType { f32, f64 };

std::string_view dtype_name(DType dt);

/// Dense (B, C, H, W) extent. Every component is >= 1.
struct Shape {
  std::array<int64_t, 4> dims{1, 1, 1, 1};

  Shape() = default;
  Shape(int64_t b, int64_t c, int64_t h, int64_t w);

  int64_t operator[](size_t i) const { return dims[i]; }
  int64_t batch() const { return dims[0]; }
  int64_t channels() const { return dims[1]; }
  int64_t height() const { return dims[2]; }
  int64_t width() const { return dims[3]; }
  int64_t numel() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Calls `f.template operator()<T>()` with T = float or double.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f64) return f.template operator()<double>();
  return f.template operator()<float>();
}

namespace detail {

/// 64-byte aligned storage so vectorized kernels see the same alignment on every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, size_t) { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

struct TensorImpl;

/// One recorded operation on the autodiff tape.
struct TapeNode {
  using BackwardFn =
      std::function<void(TensorImpl& out, const std::vector<std::shared_ptr<TensorImpl>>& inputs)>;

  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer<float> f32;
  Buffer<double> f64;
  Buffer<float> g32;
  Buffer<double> g64;
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;

  template <class T>
  Buffer<T>& values() {
    if constexpr (std::is_same_v<T, float>) return f32;
    else return f64;
  }

  // Allocates a zero gradient on first use.
  template <class T>
  Buffer<T>& grads() {
    auto& g = [this]() -> Buffer<T>& {
      if constexpr (std::is_same_v<T, float>) return g32;
      else return g64;
    }();
    if (g.size() != static_cast<size_t>(shape.numel())) g.assign(shape.numel(), T(0));
    return g;
  }

  bool has_grad() const { return dtype == DType::f32 ? !g32.empty() : !g64.empty(); }
  void clear_grad() {
    g32.clear();
    g32.shrink_to_fit();
    g64.clear();
    g64.shrink_to_fit();
  }
};

}  // namespace detail

/// Handle to a 4-D array that can take part in reverse-mode differentiation.
/// Copies share storage; values are not modified by operations.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);
  static Tensor from_vector(const Shape& shape, std::vector<float> values);
  static Tensor from_vector(const Shape& shape, std::vector<double> values);
  static Tensor from_values(const Shape& shape, std::span<const double> values, DType dtype);
  static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng, DType dtype = DType::f32);
  static Tensor normal(const Shape& shape, double mean, double stddev, Rng& rng,
                       DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  DType dtype() const { return impl_->dtype; }
  int64_t numel() const { return impl_->shape.numel(); }

  template <class T>
  std::span<const T> data() const {
    check_type<T>();
    return impl_->values<T>();
  }
  /// Direct write access. Only leaves (inputs, parameters, buffers) should be mutated.
  template <class T>
  std::span<T> mutable_data() {
    check_type<T>();
    return impl_->values<T>();
  }
  template <class T>
  std::span<const T> grad_data() const {
    check_type<T>();
    return impl_->grads<T>();
  }
  template <class T>
  std::span<T> mutable_grad() {
    check_type<T>();
    return impl_->grads<T>();
  }

  double item() const;
  double at(int64_t b, int64_t c, int64_t h, int64_t w) const;
  double flat(int64_t i) const;
  void set_flat(int64_t i, double v);
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl_->node == nullptr; }
  bool has_grad() const { return impl_->has_grad(); }
  /// Gradient as a fresh tensor; zeros when nothing flowed here.
  Tensor grad() const;
  void zero_grad();

  /// Reverse pass from a single-element tensor. Releases the tape afterwards.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  template <class T>
  void check_type() const {
    constexpr DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    if (impl_->dtype != want) throw ContractError("tensor dtype mismatch on data access");
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

Tensor empty(const Shape& shape, DType dtype);

/// Attaches a backward rule to `out` when any input requires a gradient.
void record(Tensor& out, std::string_view op, std::vector<Tensor> inputs,
            TapeNode::BackwardFn backward);

void require_same_dtype(const Tensor& a, const Tensor& b, std::string_view op);

}  // namespace detail

}  // namespace cstyolo
