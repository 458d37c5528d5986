#include <algorithm>
#include <cstring>

#include "cstyolo/ops.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;

}  // namespace

Tensor concat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  int64_t channels = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat: " + s.str() + " does not match " + s0.str() + " off the channel axis");
    }
    detail::require_same_dtype(xs[0], t, "concat");
    channels += s[1];
  }
  const int64_t B = s0[0];
  const int64_t HW = s0[2] * s0[3];
  Tensor out = detail::empty(Shape{B, channels, s0[2], s0[3]}, xs[0].dtype());
  std::vector<int64_t> widths;
  for (const auto& t : xs) widths.push_back(t.shape()[1]);

  dispatch(out.dtype(), [&]<class T>() {
    auto Y = out.mutable_data<T>();
    for (int64_t n = 0; n < B; ++n) {
      int64_t offset = 0;
      for (size_t k = 0; k < xs.size(); ++k) {
        const int64_t block = widths[k] * HW;
        const T* src = xs[k].data<T>().data() + n * block;
        std::copy(src, src + block, Y.data() + (n * channels + offset) * HW);
        offset += widths[k];
      }
    }
  });

  detail::record(out, "concat", xs, [widths, B, HW, channels](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      int64_t offset = 0;
      for (size_t k = 0; k < in.size(); ++k) {
        const int64_t block = widths[k] * HW;
        if (in[k]->requires_grad) {
          auto& g = in[k]->grads<T>();
          for (int64_t n = 0; n < B; ++n) {
            const T* src = G.data() + (n * channels + offset) * HW;
            T* dst = g.data() + n * block;
            for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += widths[k];
      }
    });
  });
  return out;
}

Tensor slice_channels(const Tensor& x, int64_t start, int64_t count) {
  const Shape& s = x.shape();
  if (start < 0 || count < 1 || start + count > s[1]) {
    throw ShapeError("slice_channels: [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " + s.str());
  }
  const int64_t B = s[0];
  const int64_t C = s[1];
  const int64_t HW = s[2] * s[3];
  Tensor out = detail::empty(Shape{B, count, s[2], s[3]}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    for (int64_t n = 0; n < B; ++n) {
      const T* src = X.data() + (n * C + start) * HW;
      std::copy(src, src + count * HW, Y.data() + n * count * HW);
    }
  });
  detail::record(out, "slice_channels", {x}, [=](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& g = in[0]->grads<T>();
      for (int64_t n = 0; n < B; ++n) {
        T* dst = g.data() + (n * C + start) * HW;
        const T* src = G.data() + n * count * HW;
        for (int64_t i = 0; i < count * HW; ++i) dst[i] += src[i];
      }
    });
  });
  return out;
}

std::vector<Tensor> split(const Tensor& x, int64_t parts) {
  const int64_t C = x.shape()[1];
  if (parts < 1 || C % parts != 0) {
    throw ShapeError("split: " + std::to_string(C) + " channels not divisible into " +
                     std::to_string(parts) + " parts");
  }
  const int64_t width = C / parts;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (int64_t p = 0; p < parts; ++p) out.push_back(slice_channels(x, p * width, width));
  return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " cannot become " + shape.str());
  }
  Tensor out = detail::empty(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    std::copy(X.begin(), X.end(), out.mutable_data<T>().begin());
  });
  detail::record(out, "reshape", {x}, [](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& g = in[0]->grads<T>();
      for (size_t i = 0; i < G.size(); ++i) g[i] += G[i];
    });
  });
  return out;
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> indices,
              const Shape& out_shape) {
  if (static_cast<int64_t>(indices->size()) != out_shape.numel()) {
    throw ShapeError("gather: index count does not match output shape " + out_shape.str());
  }
  const int64_t n = x.numel();
  for (int64_t i : *indices) {
    if (i >= n) throw ShapeError("gather: index out of range for " + x.shape().str());
  }
  Tensor out = detail::empty(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    const auto& idx = *indices;
    for (size_t i = 0; i < idx.size(); ++i) Y[i] = idx[i] >= 0 ? X[idx[i]] : T(0);
  });
  detail::record(out, "gather", {x}, [indices](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& g = in[0]->grads<T>();
      const auto& idx = *indices;
      for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) g[idx[i]] += G[i];
      }
    });
  });
  return out;
}

Tensor permute(const Tensor& x, const std::array<int, 4>& order) {
  const Shape& s = x.shape();
  std::array<bool, 4> used{};
  for (int d : order) {
    if (d < 0 || d > 3 || used[d]) throw ShapeError("permute: order must be a permutation of 0..3");
    used[d] = true;
  }
  const Shape os{s[order[0]], s[order[1]], s[order[2]], s[order[3]]};
  const std::array<int64_t, 4> in_strides{s[1] * s[2] * s[3], s[2] * s[3], s[3], 1};
  auto idx = std::make_shared<std::vector<int64_t>>(os.numel());
  int64_t k = 0;
  for (int64_t a = 0; a < os[0]; ++a) {
    for (int64_t b = 0; b < os[1]; ++b) {
      for (int64_t c = 0; c < os[2]; ++c) {
        for (int64_t d = 0; d < os[3]; ++d) {
          (*idx)[k++] = a * in_strides[order[0]] + b * in_strides[order[1]] +
                        c * in_strides[order[2]] + d * in_strides[order[3]];
        }
      }
    }
  }
  return gather(x, std::move(idx), os);
}

}  // namespace cstyolo
