#include <cmath>

#include <Eigen/Core>

#include "cstyolo/ops.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;
template <class T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  Shape out;
  for (size_t i = 0; i < 4; ++i) {
    if (a[i] == b[i] || b[i] == 1) out.dims[i] = a[i];
    else if (a[i] == 1) out.dims[i] = b[i];
    else throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  }
  return out;
}

std::array<int64_t, 4> broadcast_strides(const Shape& src, const Shape& out) {
  std::array<int64_t, 4> s{src[1] * src[2] * src[3], src[2] * src[3], src[3], 1};
  for (size_t i = 0; i < 4; ++i) {
    if (src[i] == 1 && out[i] != 1) s[i] = 0;
  }
  return s;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::array<int64_t, 4>& sa,
                        const std::array<int64_t, 4>& sb, F&& f) {
  int64_t oi = 0;
  for (int64_t n = 0; n < out[0]; ++n) {
    for (int64_t c = 0; c < out[1]; ++c) {
      for (int64_t h = 0; h < out[2]; ++h) {
        int64_t ai = n * sa[0] + c * sa[1] + h * sa[2];
        int64_t bi = n * sb[0] + c * sb[1] + h * sb[2];
        for (int64_t w = 0; w < out[3]; ++w, ++oi) f(oi, ai + w * sa[3], bi + w * sb[3]);
      }
    }
  }
}

// Op provides f(a, b), da(a, b, out), db(a, b, out).
template <class Op>
Tensor binary(const Tensor& a, const Tensor& b, std::string_view name) {
  detail::require_same_dtype(a, b, name);
  const Shape os = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = detail::empty(os, a.dtype());
  const bool same = a.shape() == b.shape();
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  dispatch(a.dtype(), [&]<class T>() {
    auto A = a.data<T>();
    auto B = b.data<T>();
    auto O = out.mutable_data<T>();
    if (same) {
      for (size_t i = 0; i < O.size(); ++i) O[i] = Op::f(A[i], B[i]);
    } else {
      for_each_broadcast(os, sa, sb,
                         [&](int64_t oi, int64_t ai, int64_t bi) { O[oi] = Op::f(A[ai], B[bi]); });
    }
  });
  detail::record(out, name, {a, b}, [same, sa, sb](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      const auto& O = o.values<T>();
      const auto& A = in[0]->values<T>();
      const auto& B = in[1]->values<T>();
      T* ga = in[0]->requires_grad ? in[0]->grads<T>().data() : nullptr;
      T* gb = in[1]->requires_grad ? in[1]->grads<T>().data() : nullptr;
      auto step = [&](int64_t oi, int64_t ai, int64_t bi) {
        if (ga) ga[ai] += Op::da(A[ai], B[bi], O[oi]) * G[oi];
        if (gb) gb[bi] += Op::db(A[ai], B[bi], O[oi]) * G[oi];
      };
      if (same) {
        for (size_t i = 0; i < G.size(); ++i) step(i, i, i);
      } else {
        for_each_broadcast(o.shape, sa, sb, step);
      }
    });
  });
  return out;
}

struct AddOp {
  template <class T> static T f(T a, T b) { return a + b; }
  template <class T> static T da(T, T, T) { return T(1); }
  template <class T> static T db(T, T, T) { return T(1); }
};
struct SubOp {
  template <class T> static T f(T a, T b) { return a - b; }
  template <class T> static T da(T, T, T) { return T(1); }
  template <class T> static T db(T, T, T) { return T(-1); }
};
struct MulOp {
  template <class T> static T f(T a, T b) { return a * b; }
  template <class T> static T da(T, T b, T) { return b; }
  template <class T> static T db(T a, T, T) { return a; }
};
struct DivOp {
  template <class T> static T f(T a, T b) { return a / b; }
  template <class T> static T da(T, T b, T) { return T(1) / b; }
  template <class T> static T db(T, T b, T o) { return -o / b; }
};
struct MinOp {
  template <class T> static T f(T a, T b) { return a <= b ? a : b; }
  template <class T> static T da(T a, T b, T) { return a <= b ? T(1) : T(0); }
  template <class T> static T db(T a, T b, T) { return a <= b ? T(0) : T(1); }
};
struct MaxOp {
  template <class T> static T f(T a, T b) { return a >= b ? a : b; }
  template <class T> static T da(T a, T b, T) { return a >= b ? T(1) : T(0); }
  template <class T> static T db(T a, T b, T) { return a >= b ? T(0) : T(1); }
};

// f(x) and df(x, y) given as generic lambdas; df returns dy/dx.
template <class F, class DF>
Tensor unary(const Tensor& x, std::string_view name, F f, DF df) {
  Tensor out = detail::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto O = out.mutable_data<T>();
    for (size_t i = 0; i < O.size(); ++i) O[i] = static_cast<T>(f(X[i]));
  });
  detail::record(out, name, {x}, [df](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      const auto& O = o.values<T>();
      const auto& X = in[0]->values<T>();
      auto& gx = in[0]->grads<T>();
      for (size_t i = 0; i < G.size(); ++i) gx[i] += static_cast<T>(df(X[i], O[i])) * G[i];
    });
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<AddOp>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<SubOp>(a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<MulOp>(a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<DivOp>(a, b, "div"); }
Tensor minimum(const Tensor& a, const Tensor& b) { return binary<MinOp>(a, b, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary<MaxOp>(a, b, "maximum"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](auto v) { return v * static_cast<decltype(v)>(factor); },
      [factor](auto v, auto) { return static_cast<decltype(v)>(factor); });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](auto v) { return v + static_cast<decltype(v)>(value); },
      [](auto v, auto) { return decltype(v)(1); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](auto v) { return v * v; }, [](auto v, auto) { return 2 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](auto v) { return std::sqrt(v); },
      [](auto, auto y) { return decltype(y)(0.5) / y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](auto v) { return std::log(v); },
      [](auto v, auto) { return decltype(v)(1) / v; });
}

Tensor atan(const Tensor& x) {
  return unary(
      x, "atan", [](auto v) { return std::atan(v); },
      [](auto v, auto) { return decltype(v)(1) / (decltype(v)(1) + v * v); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      x, "clamp_min",
      [lo](auto v) { return v < static_cast<decltype(v)>(lo) ? static_cast<decltype(v)>(lo) : v; },
      [lo](auto v, auto) {
        return v < static_cast<decltype(v)>(lo) ? decltype(v)(0) : decltype(v)(1);
      });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = detail::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const auto X = x.data<T>();
    Arr<T>(out.mutable_data<T>().data(), x.numel()) = CArr<T>(X.data(), x.numel()).logistic();
  });
  detail::record(out, "sigmoid", {x}, [](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const int64_t n = o.shape.numel();
      CArr<T> Y(o.values<T>().data(), n), G(o.grads<T>().data(), n);
      Arr<T>(in[0]->grads<T>().data(), n) += G * Y * (T(1) - Y);
    });
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = detail::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    CArr<T> X(x.data<T>().data(), x.numel());
    Arr<T>(out.mutable_data<T>().data(), x.numel()) = X * X.logistic();
  });
  detail::record(out, "silu", {x}, [](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const int64_t n = o.shape.numel();
      CArr<T> X(in[0]->values<T>().data(), n), G(o.grads<T>().data(), n);
      Arr<T>(in[0]->grads<T>().data(), n) += G * (X.logistic() * (T(1) + X * (T(1) - X.logistic())));
    });
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v, auto) { return v > 0 ? decltype(v)(1) : decltype(v)(0); });
}

Tensor activation(const Tensor& x, Activation kind, double negative_slope) {
  switch (kind) {
    case Activation::silu: return silu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::relu: return relu(x);
    case Activation::identity: return x;
    case Activation::leaky_relu:
      return unary(
          x, "leaky_relu",
          [negative_slope](auto v) {
            return v > 0 ? v : v * static_cast<decltype(v)>(negative_slope);
          },
          [negative_slope](auto v, auto) {
            return v > 0 ? decltype(v)(1) : static_cast<decltype(v)>(negative_slope);
          });
  }
  throw ContractError("unknown activation");
}

Tensor sum(const Tensor& x) {
  Tensor out = detail::empty(Shape{1, 1, 1, 1}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    double acc = 0.0;
    for (T v : x.data<T>()) acc += v;
    out.mutable_data<T>()[0] = static_cast<T>(acc);
  });
  detail::record(out, "sum", {x}, [](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const T g = o.grads<T>()[0];
      for (auto& v : in[0]->grads<T>()) v += g;
    });
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace cstyolo
