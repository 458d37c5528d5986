#include <algorithm>
#include <cmath>
#include <limits>

#include "cstyolo/ops.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;

// (N, 1, T, d) -> (N, heads, T, d / heads)
Tensor split_heads(const Tensor& x, int heads) {
  const Shape& s = x.shape();
  const int64_t dh = s[3] / heads;
  Tensor t = reshape(x, Shape{s[0], s[2], heads, dh});
  return permute(t, {0, 2, 1, 3});
}

// (N, heads, T, dh) -> (N, 1, T, heads * dh)
Tensor merge_heads(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor t = permute(x, {0, 2, 1, 3});
  return reshape(t, Shape{s[0], 1, s[2], s[1] * s[3]});
}

}  // namespace

Tensor softmax(const Tensor& logits, const std::shared_ptr<const AttentionMask>& mask) {
  const Shape& s = logits.shape();
  const int64_t rows_per_batch = s[1] * s[2];
  const int64_t L = s[3];
  if (mask) {
    if (mask->tokens != s[2] || mask->tokens != s[3] || mask->windows < 1 ||
        s[0] % mask->windows != 0 ||
        static_cast<int64_t>(mask->bias.size()) != mask->windows * mask->tokens * mask->tokens) {
      throw ShapeError("softmax: mask does not fit logits " + s.str());
    }
  }
  Tensor out = detail::empty(s, logits.dtype());
  dispatch(logits.dtype(), [&]<class T>() {
    auto X = logits.data<T>();
    auto Y = out.mutable_data<T>();
    std::vector<double> row(L);
    for (int64_t n = 0; n < s[0]; ++n) {
      for (int64_t r = 0; r < rows_per_batch; ++r) {
        const int64_t base = (n * rows_per_batch + r) * L;
        const double* mrow = nullptr;
        if (mask) {
          const int64_t window = n % mask->windows;
          const int64_t query = r % s[2];
          mrow = mask->bias.data() + (window * mask->tokens + query) * mask->tokens;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < L; ++j) {
          row[j] = X[base + j] + (mrow ? mrow[j] : 0.0);
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (int64_t j = 0; j < L; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (int64_t j = 0; j < L; ++j) Y[base + j] = static_cast<T>(row[j] / z);
      }
    }
  });
  detail::record(out, "softmax", {logits}, [L](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      const auto& Y = o.values<T>();
      auto& gx = in[0]->grads<T>();
      const int64_t rows = static_cast<int64_t>(Y.size()) / L;
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * L;
        double dot = 0.0;
        for (int64_t j = 0; j < L; ++j) dot += static_cast<double>(G[base + j]) * Y[base + j];
        for (int64_t j = 0; j < L; ++j) {
          gx[base + j] += static_cast<T>(Y[base + j] * (G[base + j] - dot));
        }
      }
    });
  });
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::shared_ptr<const AttentionMask>& mask, Tensor* weights_out) {
  const Shape& s = q.shape();
  if (heads < 1 || s[3] % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(s[3]) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (s[1] != 1 || k.shape() != s || v.shape() != s) {
    throw ShapeError("attention: q, k, v must share shape (N,1,T,d); got " + s.str() + ", " +
                     k.shape().str() + ", " + v.shape().str());
  }
  const int64_t dh = s[3] / heads;
  Tensor qh = split_heads(q, heads);
  Tensor kh = split_heads(k, heads);
  Tensor vh = split_heads(v, heads);
  Tensor logits = scale(matmul(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = softmax(logits, mask);
  if (weights_out) *weights_out = probs;
  return merge_heads(matmul(probs, vh));
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: targets " + targets.shape().str() + " vs logits " +
                     logits.shape().str());
  }
  detail::require_same_dtype(logits, targets, "bce_with_logits");
  const double n = static_cast<double>(logits.numel());
  Tensor out = detail::empty(Shape{1, 1, 1, 1}, logits.dtype());
  dispatch(logits.dtype(), [&]<class T>() {
    auto X = logits.data<T>();
    auto Z = targets.data<T>();
    double acc = 0.0;
    for (size_t i = 0; i < X.size(); ++i) {
      const double x = X[i];
      acc += std::max(x, 0.0) - x * Z[i] + std::log1p(std::exp(-std::abs(x)));
    }
    out.mutable_data<T>()[0] = static_cast<T>(acc / n);
  });
  detail::record(out, "bce_with_logits", {logits, targets}, [n](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const double g = o.grads<T>()[0] / n;
      const auto& X = in[0]->values<T>();
      const auto& Z = in[1]->values<T>();
      if (!in[0]->requires_grad) return;
      auto& gx = in[0]->grads<T>();
      for (size_t i = 0; i < X.size(); ++i) {
        const double x = X[i];
        const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        gx[i] += static_cast<T>((sig - Z[i]) * g);
      }
    });
  });
  return out;
}

}  // namespace cstyolo
