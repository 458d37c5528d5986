#include <cmath>
#include <limits>

#include "cstyolo/ops.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;

}  // namespace

Tensor pool2d(const Tensor& x, PoolKind kind, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ShapeError("pool2d: kernel and stride must be >= 1, padding >= 0");
  }
  const Shape& s = x.shape();
  const int64_t oh = (s[2] + 2 * padding - kernel) / stride + 1;
  const int64_t ow = (s[3] + 2 * padding - kernel) / stride + 1;
  if (s[2] + 2 * padding < kernel || s[3] + 2 * padding < kernel || oh < 1 || ow < 1) {
    throw ShapeError("pool2d: kernel " + std::to_string(kernel) + " does not fit input " + s.str());
  }
  const int64_t planes = s[0] * s[1];
  const int64_t H = s[2];
  const int64_t W = s[3];
  Tensor out = detail::empty(Shape{s[0], s[1], oh, ow}, x.dtype());
  // For max pooling: flat source index of each output, -1 if only padding was seen.
  auto argmax = std::make_shared<std::vector<int64_t>>();

  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    if (kind == PoolKind::max) argmax->assign(Y.size(), -1);
    for (int64_t p = 0; p < planes; ++p) {
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t oi = (p * oh + oy) * ow + ox;
          const int64_t y0 = oy * stride - padding;
          const int64_t x0 = ox * stride - padding;
          if (kind == PoolKind::max) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_i = -1;
            for (int64_t ky = 0; ky < kernel; ++ky) {
              const int64_t iy = y0 + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kernel; ++kx) {
                const int64_t ix = x0 + kx;
                if (ix < 0 || ix >= W) continue;
                const int64_t ii = (p * H + iy) * W + ix;
                // Strict comparison keeps the first (lowest flat index) maximum.
                if (best_i < 0 || X[ii] > best) {
                  best = X[ii];
                  best_i = ii;
                }
              }
            }
            Y[oi] = best_i < 0 ? T(0) : best;
            (*argmax)[oi] = best_i;
          } else {
            double acc = 0.0;
            for (int64_t ky = 0; ky < kernel; ++ky) {
              const int64_t iy = y0 + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kernel; ++kx) {
                const int64_t ix = x0 + kx;
                if (ix < 0 || ix >= W) continue;
                acc += X[(p * H + iy) * W + ix];
              }
            }
            Y[oi] = static_cast<T>(acc / (kernel * kernel));
          }
        }
      }
    }
  });

  detail::record(out, kind == PoolKind::max ? "max_pool2d" : "avg_pool2d", {x},
                 [=](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& gx = in[0]->grads<T>();
      if (kind == PoolKind::max) {
        for (size_t oi = 0; oi < G.size(); ++oi) {
          if ((*argmax)[oi] >= 0) gx[(*argmax)[oi]] += G[oi];
        }
        return;
      }
      const T inv = T(1) / static_cast<T>(kernel * kernel);
      for (int64_t p = 0; p < planes; ++p) {
        for (int64_t oy = 0; oy < oh; ++oy) {
          for (int64_t ox = 0; ox < ow; ++ox) {
            const T g = G[(p * oh + oy) * ow + ox] * inv;
            for (int64_t ky = 0; ky < kernel; ++ky) {
              const int64_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kernel; ++kx) {
                const int64_t ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= W) continue;
                gx[(p * H + iy) * W + ix] += g;
              }
            }
          }
        }
      }
    });
  });
  return out;
}

Tensor adaptive_avg_pool(const Tensor& x, int64_t out_h, int64_t out_w) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1 || out_h > s[2] || out_w > s[3]) {
    throw ShapeError("adaptive_avg_pool: target (" + std::to_string(out_h) + "," +
                     std::to_string(out_w) + ") exceeds input " + s.str());
  }
  const int64_t H = s[2];
  const int64_t W = s[3];
  const int64_t planes = s[0] * s[1];
  // Bin i covers [floor(i*H/out), ceil((i+1)*H/out)).
  auto bins = [](int64_t n, int64_t out) {
    std::vector<std::pair<int64_t, int64_t>> b(out);
    for (int64_t i = 0; i < out; ++i) b[i] = {(i * n) / out, ((i + 1) * n + out - 1) / out};
    return b;
  };
  const auto rows = bins(H, out_h);
  const auto cols = bins(W, out_w);
  Tensor out = detail::empty(Shape{s[0], s[1], out_h, out_w}, x.dtype());

  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    for (int64_t p = 0; p < planes; ++p) {
      for (int64_t i = 0; i < out_h; ++i) {
        for (int64_t j = 0; j < out_w; ++j) {
          double acc = 0.0;
          for (int64_t y = rows[i].first; y < rows[i].second; ++y) {
            for (int64_t xx = cols[j].first; xx < cols[j].second; ++xx) acc += X[(p * H + y) * W + xx];
          }
          const double cnt = static_cast<double>((rows[i].second - rows[i].first) *
                                                 (cols[j].second - cols[j].first));
          Y[(p * out_h + i) * out_w + j] = static_cast<T>(acc / cnt);
        }
      }
    }
  });

  detail::record(out, "adaptive_avg_pool", {x}, [=](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& gx = in[0]->grads<T>();
      for (int64_t p = 0; p < planes; ++p) {
        for (int64_t i = 0; i < out_h; ++i) {
          for (int64_t j = 0; j < out_w; ++j) {
            const double cnt = static_cast<double>((rows[i].second - rows[i].first) *
                                                   (cols[j].second - cols[j].first));
            const T g = static_cast<T>(G[(p * out_h + i) * out_w + j] / cnt);
            for (int64_t y = rows[i].first; y < rows[i].second; ++y) {
              for (int64_t xx = cols[j].first; xx < cols[j].second; ++xx) gx[(p * H + y) * W + xx] += g;
            }
          }
        }
      }
    });
  });
  return out;
}

Tensor upsample_nearest(const Tensor& x, int64_t out_h, int64_t out_w) {
  const Shape& s = x.shape();
  if (out_h < s[2] || out_w < s[3]) {
    throw ShapeError("upsample_nearest: cannot downscale " + s.str() + " to (" +
                     std::to_string(out_h) + "," + std::to_string(out_w) + ")");
  }
  const int64_t H = s[2];
  const int64_t W = s[3];
  const int64_t planes = s[0] * s[1];
  std::vector<int64_t> src_y(out_h);
  std::vector<int64_t> src_x(out_w);
  for (int64_t i = 0; i < out_h; ++i) src_y[i] = (i * H) / out_h;
  for (int64_t j = 0; j < out_w; ++j) src_x[j] = (j * W) / out_w;
  Tensor out = detail::empty(Shape{s[0], s[1], out_h, out_w}, x.dtype());

  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    for (int64_t p = 0; p < planes; ++p) {
      for (int64_t i = 0; i < out_h; ++i) {
        const T* line = X.data() + (p * H + src_y[i]) * W;
        T* dst = Y.data() + (p * out_h + i) * out_w;
        for (int64_t j = 0; j < out_w; ++j) dst[j] = line[src_x[j]];
      }
    }
  });

  detail::record(out, "upsample_nearest", {x}, [=](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      auto& gx = in[0]->grads<T>();
      for (int64_t p = 0; p < planes; ++p) {
        for (int64_t i = 0; i < out_h; ++i) {
          T* line = gx.data() + (p * H + src_y[i]) * W;
          const T* src = G.data() + (p * out_h + i) * out_w;
          for (int64_t j = 0; j < out_w; ++j) line[src_x[j]] += src[j];
        }
      }
    });
  });
  return out;
}

}  // namespace cstyolo
