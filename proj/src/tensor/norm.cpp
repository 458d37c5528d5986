#include <cmath>

#include <Eigen/Core>

#include "cstyolo/ops.hpp"
#include "reduce.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;
template <class T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

void check_channel_vector(const Tensor& v, int64_t channels, std::string_view op,
                          std::string_view what) {
  if (v.shape() != Shape{1, channels, 1, 1}) {
    throw ShapeError(std::string(op) + ": " + std::string(what) + " has shape " + v.shape().str() +
                     ", expected (1," + std::to_string(channels) + ",1,1)");
  }
}

}  // namespace

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOptions& opt) {
  if (opt.eps <= 0) throw ContractError("batchnorm2d: eps must be positive");
  const Shape& s = x.shape();
  const int64_t C = s[1];
  check_channel_vector(gamma, C, "batchnorm2d", "gamma");
  check_channel_vector(beta, C, "batchnorm2d", "beta");
  check_channel_vector(running_mean, C, "batchnorm2d", "running_mean");
  check_channel_vector(running_var, C, "batchnorm2d", "running_var");
  detail::require_same_dtype(x, gamma, "batchnorm2d");
  detail::require_same_dtype(x, running_mean, "batchnorm2d");

  const int64_t B = s[0];
  const int64_t HW = s[2] * s[3];
  const int64_t count = B * HW;
  Tensor out = detail::empty(s, x.dtype());
  // Saved for backward: per-channel mean and 1/sqrt(var+eps); xhat is recomputed.
  auto means = std::make_shared<std::vector<double>>(C);
  auto inv_std = std::make_shared<std::vector<double>>(C);

  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    auto rm = running_mean.mutable_data<T>();
    auto rv = running_var.mutable_data<T>();
    for (int64_t c = 0; c < C; ++c) {
      double mu;
      double var;
      if (opt.training) {
        double acc = 0.0;
        for (int64_t n = 0; n < B; ++n) {
          acc += detail::fixed_sum(X.data() + (n * C + c) * HW, HW);
        }
        mu = acc / static_cast<double>(count);
        double sq = 0.0;
        for (int64_t n = 0; n < B; ++n) {
          sq += detail::fixed_sq_dev(X.data() + (n * C + c) * HW, HW, mu);
        }
        var = sq / static_cast<double>(count);
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        rm[c] = static_cast<T>((1.0 - opt.momentum) * rm[c] + opt.momentum * mu);
        rv[c] = static_cast<T>((1.0 - opt.momentum) * rv[c] + opt.momentum * unbiased);
      } else {
        mu = rm[c];
        var = rv[c];
      }
      const double is = 1.0 / std::sqrt(var + opt.eps);
      (*inv_std)[c] = is;
      (*means)[c] = mu;
      const double g = gm[c];
      const double b = bt[c];
      const T scale_c = static_cast<T>(g * is);
      for (int64_t n = 0; n < B; ++n) {
        const int64_t base = (n * C + c) * HW;
        Arr<T>(Y.data() + base, HW) =
            (CArr<T>(X.data() + base, HW) - static_cast<T>(mu)) * scale_c + static_cast<T>(b);
      }
    }
  });

  const bool training = opt.training;
  detail::record(out, "batchnorm2d", {x, gamma, beta},
                 [means, inv_std, B, C, HW, count, training](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      const auto& X = in[0]->values<T>();
      const auto& gm = in[1]->values<T>();
      T* gx = in[0]->requires_grad ? in[0]->grads<T>().data() : nullptr;
      T* gg = in[1]->requires_grad ? in[1]->grads<T>().data() : nullptr;
      T* gb = in[2]->requires_grad ? in[2]->grads<T>().data() : nullptr;
      for (int64_t c = 0; c < C; ++c) {
        const double mu = (*means)[c];
        const double is = (*inv_std)[c];
        double sum_dy = 0.0;
        double sum_dy_x = 0.0;
        for (int64_t n = 0; n < B; ++n) {
          const int64_t base = (n * C + c) * HW;
          sum_dy += detail::fixed_sum(G.data() + base, HW);
          sum_dy_x += detail::fixed_dot(G.data() + base, X.data() + base, HW);
        }
        const double sum_dy_xh = (sum_dy_x - mu * sum_dy) * is;
        if (gg) gg[c] += static_cast<T>(sum_dy_xh);
        if (gb) gb[c] += static_cast<T>(sum_dy);
        if (!gx) continue;
        const double gi = gm[c] * is;
        // gx += a * dy + b * x + k
        const double a = gi;
        const double bx = training ? -gi * is * sum_dy_xh / count : 0.0;
        const double k = training ? -gi * sum_dy / count - bx * mu : 0.0;
        for (int64_t n = 0; n < B; ++n) {
          const int64_t base = (n * C + c) * HW;
          Arr<T>(gx + base, HW) += CArr<T>(G.data() + base, HW) * static_cast<T>(a) +
                                   CArr<T>(X.data() + base, HW) * static_cast<T>(bx) +
                                   static_cast<T>(k);
        }
      }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& s = x.shape();
  const int64_t B = s[0];
  const int64_t C = s[1];
  const int64_t HW = s[2] * s[3];
  check_channel_vector(gamma, C, "layer_norm", "gamma");
  check_channel_vector(beta, C, "layer_norm", "beta");
  detail::require_same_dtype(x, gamma, "layer_norm");
  Tensor out = detail::empty(s, x.dtype());
  auto means = std::make_shared<std::vector<double>>(B * HW);
  auto inv_std = std::make_shared<std::vector<double>>(B * HW);

  dispatch(x.dtype(), [&]<class T>() {
    auto X = x.data<T>();
    auto Y = out.mutable_data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    for (int64_t n = 0; n < B; ++n) {
      for (int64_t p = 0; p < HW; ++p) {
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += X[(n * C + c) * HW + p];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          const double d = X[(n * C + c) * HW + p] - mu;
          var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[n * HW + p] = is;
        (*means)[n * HW + p] = mu;
        for (int64_t c = 0; c < C; ++c) {
          const int64_t idx = (n * C + c) * HW + p;
          const double xh = (X[idx] - mu) * is;
          Y[idx] = static_cast<T>(gm[c] * xh + bt[c]);
        }
      }
    }
  });

  detail::record(out, "layer_norm", {x, gamma, beta},
                 [means, inv_std, B, C, HW](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const auto& G = o.grads<T>();
      const auto& X = in[0]->values<T>();
      const auto& gm = in[1]->values<T>();
      T* gx = in[0]->requires_grad ? in[0]->grads<T>().data() : nullptr;
      T* gg = in[1]->requires_grad ? in[1]->grads<T>().data() : nullptr;
      T* gb = in[2]->requires_grad ? in[2]->grads<T>().data() : nullptr;
      for (int64_t n = 0; n < B; ++n) {
        for (int64_t p = 0; p < HW; ++p) {
          const double mu = (*means)[n * HW + p];
          const double is = (*inv_std)[n * HW + p];
          double sum_d = 0.0;
          double sum_d_xh = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            const int64_t idx = (n * C + c) * HW + p;
            const double xh = (X[idx] - mu) * is;
            const double dxh = G[idx] * static_cast<double>(gm[c]);
            sum_d += dxh;
            sum_d_xh += dxh * xh;
            if (gg) gg[c] += static_cast<T>(G[idx] * xh);
            if (gb) gb[c] += G[idx];
          }
          if (!gx) continue;
          for (int64_t c = 0; c < C; ++c) {
            const int64_t idx = (n * C + c) * HW + p;
            const double xh = (X[idx] - mu) * is;
            const double dxh = G[idx] * static_cast<double>(gm[c]);
            gx[idx] += static_cast<T>(is * (dxh - sum_d / C - xh * sum_d_xh / C));
          }
        }
      }
    });
  });
  return out;
}

}  // namespace cstyolo
