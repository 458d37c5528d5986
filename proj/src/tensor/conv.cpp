#include <Eigen/Core>

#include "cstyolo/ops.hpp"
#include "reduce.hpp"

namespace cstyolo {
namespace {

using detail::TensorImpl;
using Inputs = std::vector<std::shared_ptr<TensorImpl>>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int64_t channels, height, width;
  int64_t kh, kw;
  int stride, padding;
  int64_t out_h, out_w;

  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
  int64_t col_rows() const { return channels * kh * kw; }
  int64_t col_cols() const { return out_h * out_w; }
};

template <class T>
void im2col(const T* src, const ConvGeom& g, T* col) {
  const int64_t P = g.col_cols();
  for (int64_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.height * g.width;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + ki;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* line = plane + iy * g.width;
          if (g.stride == 1) {
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
              const int64_t ix = ox - g.padding + kj;
              dst[ox] = (ix >= 0 && ix < g.width) ? line[ix] : T(0);
            }
          } else {
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
              const int64_t ix = ox * g.stride - g.padding + kj;
              dst[ox] = (ix >= 0 && ix < g.width) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dst) {
  const int64_t P = g.col_cols();
  for (int64_t c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.height * g.width;
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * P;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* line = plane + iy * g.width;
          const T* srow = row + oy * g.out_w;
          if (g.stride == 1) {
            const int64_t lo = std::max<int64_t>(0, g.padding - kj);
            const int64_t hi = std::min<int64_t>(g.out_w, g.width + g.padding - kj);
            for (int64_t ox = lo; ox < hi; ++ox) line[ox - g.padding + kj] += srow[ox];
            continue;
          }
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) line[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  detail::require_same_dtype(x, weight, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, kernel expects " +
                     std::to_string(ws[1]));
  }
  const int64_t oh = (xs[2] + 2 * padding - ws[2]) / stride + 1;
  const int64_t ow = (xs[3] + 2 * padding - ws[3]) / stride + 1;
  if (xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3] || oh < 1 || ow < 1) {
    throw ShapeError("conv2d: output would be empty for input " + xs.str() + " and kernel " +
                     ws.str());
  }
  if (bias.defined()) {
    detail::require_same_dtype(x, bias, "conv2d");
    if (bias.numel() != ws[0]) throw ShapeError("conv2d: bias length does not match output channels");
  }
  const ConvGeom g{xs[1], xs[2], xs[3], ws[2], ws[3], stride, padding, oh, ow};
  const int64_t O = ws[0];
  const int64_t B = xs[0];
  Tensor out = detail::empty(Shape{B, O, oh, ow}, x.dtype());

  dispatch(x.dtype(), [&]<class T>() {
    const T* X = x.data<T>().data();
    CMapMat<T> W(weight.data<T>().data(), O, g.col_rows());
    std::vector<T> col;
    if (!g.pointwise()) col.resize(g.col_rows() * g.col_cols());
    for (int64_t n = 0; n < B; ++n) {
      const T* xin = X + n * g.channels * g.height * g.width;
      const T* cptr = xin;
      if (!g.pointwise()) {
        im2col(xin, g, col.data());
        cptr = col.data();
      }
      CMapMat<T> C(cptr, g.col_rows(), g.col_cols());
      MapMat<T> Y(out.mutable_data<T>().data() + n * O * g.col_cols(), O, g.col_cols());
      Y.noalias() = W * C;
      if (bias.defined()) {
        auto bv = bias.data<T>();
        for (int64_t o = 0; o < O; ++o) Y.row(o).array() += bv[o];
      }
    }
  });

  detail::record(out, "conv2d", {x, weight, bias}, [g, O, B](TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      TensorImpl& xi = *in[0];
      TensorImpl& wi = *in[1];
      const T* X = xi.values<T>().data();
      const T* G = o.grads<T>().data();
      CMapMat<T> W(wi.values<T>().data(), O, g.col_rows());
      const bool need_x = xi.requires_grad;
      const bool need_w = wi.requires_grad;
      const bool need_b = in[2] && in[2]->requires_grad;
      std::vector<T> col;
      std::vector<T> gcol;
      if (!g.pointwise()) {
        if (need_w) col.resize(g.col_rows() * g.col_cols());
        if (need_x) gcol.resize(g.col_rows() * g.col_cols());
      }
      const int64_t in_plane = g.channels * g.height * g.width;
      for (int64_t n = 0; n < B; ++n) {
        CMapMat<T> GY(G + n * O * g.col_cols(), O, g.col_cols());
        if (need_w) {
          const T* cptr = X + n * in_plane;
          if (!g.pointwise()) {
            im2col(X + n * in_plane, g, col.data());
            cptr = col.data();
          }
          CMapMat<T> C(cptr, g.col_rows(), g.col_cols());
          MapMat<T> GW(wi.grads<T>().data(), O, g.col_rows());
          GW.noalias() += GY * C.transpose();
        }
        if (need_x) {
          T* gx = xi.grads<T>().data() + n * in_plane;
          if (g.pointwise()) {
            MapMat<T> GX(gx, g.col_rows(), g.col_cols());
            GX.noalias() += W.transpose() * GY;
          } else {
            MapMat<T> GC(gcol.data(), g.col_rows(), g.col_cols());
            GC.noalias() = W.transpose() * GY;
            col2im_add(gcol.data(), g, gx);
          }
        }
        if (need_b) {
          auto& gb = in[2]->grads<T>();
          for (int64_t oc = 0; oc < O; ++oc) {
            gb[oc] += static_cast<T>(detail::fixed_sum(GY.data() + oc * g.col_cols(), g.col_cols()));
          }
        }
      }
    });
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  detail::require_same_dtype(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool shared_b = bs[0] == 1 && bs[1] == 1;
  if (!shared_b && (bs[0] != as[0] || bs[1] != as[1])) {
    throw ShapeError("matmul: batch dims of " + bs.str() + " do not match " + as.str());
  }
  const int64_t M = transpose_a ? as[3] : as[2];
  const int64_t K = transpose_a ? as[2] : as[3];
  const int64_t Kb = transpose_b ? bs[3] : bs[2];
  const int64_t N = transpose_b ? bs[2] : bs[3];
  if (K != Kb) throw ShapeError("matmul: inner dims differ for " + as.str() + " x " + bs.str());
  const int64_t batches = as[0] * as[1];
  Tensor out = detail::empty(Shape{as[0], as[1], M, N}, a.dtype());

  auto kernel = [=]<class T>(const T* A, const T* Bm, T* C, bool accumulate) {
    CMapMat<T> Am(A, as[2], as[3]);
    CMapMat<T> Bmm(Bm, bs[2], bs[3]);
    MapMat<T> Cm(C, M, N);
    if (!accumulate) Cm.setZero();
    if (!transpose_a && !transpose_b) Cm.noalias() += Am * Bmm;
    else if (!transpose_a && transpose_b) Cm.noalias() += Am * Bmm.transpose();
    else if (transpose_a && !transpose_b) Cm.noalias() += Am.transpose() * Bmm;
    else Cm.noalias() += Am.transpose() * Bmm.transpose();
  };

  dispatch(a.dtype(), [&]<class T>() {
    const T* A = a.data<T>().data();
    const T* Bp = b.data<T>().data();
    T* C = out.mutable_data<T>().data();
    const int64_t a_step = as[2] * as[3];
    const int64_t b_step = shared_b ? 0 : bs[2] * bs[3];
    if (shared_b && !transpose_a) {
      // One large product when the right operand is shared.
      CMapMat<T> Am(A, batches * as[2], as[3]);
      CMapMat<T> Bmm(Bp, bs[2], bs[3]);
      MapMat<T> Cm(C, batches * M, N);
      if (transpose_b) Cm.noalias() = Am * Bmm.transpose();
      else Cm.noalias() = Am * Bmm;
      return;
    }
    for (int64_t i = 0; i < batches; ++i) {
      kernel.template operator()<T>(A + i * a_step, Bp + i * b_step, C + i * M * N, false);
    }
  });

  detail::record(out, "matmul", {a, b},
                 [as, bs, shared_b, transpose_a, transpose_b, M, N, K, batches](
                     TensorImpl& o, const Inputs& in) {
    dispatch(o.dtype, [&]<class T>() {
      const T* G = o.grads<T>().data();
      const T* A = in[0]->values<T>().data();
      const T* Bp = in[1]->values<T>().data();
      const int64_t a_step = as[2] * as[3];
      const int64_t b_step = shared_b ? 0 : bs[2] * bs[3];
      T* ga = in[0]->requires_grad ? in[0]->grads<T>().data() : nullptr;
      T* gb = in[1]->requires_grad ? in[1]->grads<T>().data() : nullptr;
      for (int64_t i = 0; i < batches; ++i) {
        CMapMat<T> Gm(G + i * M * N, M, N);
        CMapMat<T> Am(A + i * a_step, as[2], as[3]);
        CMapMat<T> Bm(Bp + i * b_step, bs[2], bs[3]);
        if (ga) {
          MapMat<T> GA(ga + i * a_step, as[2], as[3]);
          // C = op(A) op(B); dop(A) = G op(B)^T.
          if (!transpose_a && !transpose_b) GA.noalias() += Gm * Bm.transpose();
          else if (!transpose_a && transpose_b) GA.noalias() += Gm * Bm;
          else if (transpose_a && !transpose_b) GA.noalias() += Bm * Gm.transpose();
          else GA.noalias() += Bm.transpose() * Gm.transpose();
        }
        if (gb) {
          MapMat<T> GB(gb + i * b_step, bs[2], bs[3]);
          if (!transpose_a && !transpose_b) GB.noalias() += Am.transpose() * Gm;
          else if (!transpose_a && transpose_b) GB.noalias() += Gm.transpose() * Am;
          else if (transpose_a && !transpose_b) GB.noalias() += Am * Gm;
          else GB.noalias() += Gm.transpose() * Am.transpose();
        }
      }
      (void)K;
    });
  });
  return out;
}

}  // namespace cstyolo
