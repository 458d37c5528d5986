#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "cstyolo/metrics.hpp"
#include "cstyolo/nn/blocks.hpp"
#include "cstyolo/nn/cst.hpp"

// Reference implementations written independently of the library code paths.
namespace oracle {

using namespace cstyolo;

/// AP as (1/G) * sum over recall levels m/G of the best precision reached at
/// or beyond that recall.
inline long double average_precision(const std::vector<bool>& flags, int G) {
  std::vector<long double> prec, rec;
  int tp = 0;
  for (size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k];
    prec.push_back((long double)tp / (k + 1));
    rec.push_back((long double)tp / G);
  }
  long double s = 0;
  for (int m = 1; m <= G; ++m) {
    long double best = 0;
    for (size_t k = 0; k < flags.size(); ++k)
      if (tp > 0 && rec[k] * G >= m - 1e-9L) best = std::max(best, prec[k]);
    s += best;
  }
  return s / G;
}

/// Greedy suppression as the unique subset S with: i in S iff i passes the
/// confidence floor and no earlier (higher confidence, then lower index) j in
/// S of the same class overlaps i. Kept indices in output order; nullopt when
/// the fixed point is not unique.
inline std::optional<std::vector<int>> nms(const std::vector<Detection>& dets, double iou_thresh,
                                           double conf_thresh) {
  const int n = static_cast<int>(dets.size());
  auto before = [&](int j, int i) {
    return dets[j].confidence > dets[i].confidence ||
           (dets[j].confidence == dets[i].confidence && j < i);
  };
  std::vector<int> kept;
  int solutions = 0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      const bool in = mask >> i & 1;
      if (dets[i].confidence < conf_thresh) {
        ok = !in;
        continue;
      }
      bool blocked = false;
      for (int j = 0; j < n; ++j)
        if (j != i && (mask >> j & 1) && before(j, i) && dets[j].cls == dets[i].cls &&
            iou(dets[j].box, dets[i].box) >= iou_thresh)
          blocked = true;
      ok = in != blocked;
    }
    if (!ok) continue;
    ++solutions;
    kept.clear();
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1) kept.push_back(i);
  }
  if (solutions != 1) return std::nullopt;
  std::stable_sort(kept.begin(), kept.end(), [&](int a, int b) { return before(a, b); });
  return kept;
}

inline std::vector<double> apply_linear(nn::Linear& l, const std::vector<double>& t) {
  const auto w = l.weight().to_vector();
  const auto bias = l.bias().to_vector();
  const size_t out = bias.size();
  std::vector<double> r(bias);
  for (size_t i = 0; i < t.size(); ++i)
    for (size_t o = 0; o < out; ++o) r[o] += t[i] * w[i * out + o];
  return r;
}

/// Max abs difference between `u.attend(h)` and plain multi-head attention
/// over all H*W tokens of each image.
inline double window_vs_global_error(nn::SwinUnit& u, const Tensor& h, int heads) {
  const Tensor got = u.attend(h);
  const Shape& s = h.shape();
  const int64_t C = s[1], H = s[2], W = s[3], T = H * W, dh = C / heads;
  double worst = 0;
  for (int64_t b = 0; b < s[0]; ++b) {
    std::vector<std::vector<double>> q, k, v;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        std::vector<double> tok(C);
        for (int64_t c = 0; c < C; ++c) tok[c] = h.at(b, c, y, x);
        q.push_back(apply_linear(u.q(), tok));
        k.push_back(apply_linear(u.k(), tok));
        v.push_back(apply_linear(u.v(), tok));
      }
    std::vector<std::vector<double>> o(T, std::vector<double>(C, 0.0));
    for (int head = 0; head < heads; ++head)
      for (int64_t i = 0; i < T; ++i) {
        std::vector<double> logit(T);
        for (int64_t j = 0; j < T; ++j) {
          double d = 0;
          for (int64_t c = 0; c < dh; ++c) d += q[i][head * dh + c] * k[j][head * dh + c];
          logit[j] = d / std::sqrt(double(dh));
        }
        const double mx = *std::max_element(logit.begin(), logit.end());
        double z = 0;
        for (double& l : logit) z += (l = std::exp(l - mx));
        for (int64_t j = 0; j < T; ++j)
          for (int64_t c = 0; c < dh; ++c) o[i][head * dh + c] += logit[j] / z * v[j][head * dh + c];
      }
    for (int64_t i = 0; i < T; ++i) {
      const auto p = apply_linear(u.proj(), o[i]);
      for (int64_t c = 0; c < C; ++c) worst = std::max(worst, std::abs(p[c] - got.at(b, c, i / W, i % W)));
    }
  }
  return worst;
}

struct CrossOrigin {
  int pairs = 0;
  double max_weight = 0;
};

/// Attention weight between tokens of one shifted window that came from
/// different regions of the rolled map. `attn` is (windows, heads, M*M, M*M)
/// for a single image of padded size hp x wp.
inline CrossOrigin cross_origin_weights(const Tensor& attn, int M, int shift, int64_t hp, int64_t wp) {
  CrossOrigin r;
  const int64_t per_row = wp / M, tokens = int64_t(M) * M;
  for (int64_t w = 0; w < attn.shape()[0]; ++w)
    for (int64_t t1 = 0; t1 < tokens; ++t1)
      for (int64_t t2 = 0; t2 < tokens; ++t2) {
        const int64_t y1 = (w / per_row) * M + t1 / M, x1 = (w % per_row) * M + t1 % M;
        const int64_t y2 = (w / per_row) * M + t2 / M, x2 = (w % per_row) * M + t2 % M;
        const bool same = (y1 + shift >= hp) == (y2 + shift >= hp) && (x1 + shift >= wp) == (x2 + shift >= wp);
        if (same) continue;
        ++r.pairs;
        for (int64_t h = 0; h < attn.shape()[1]; ++h)
          r.max_weight = std::max(r.max_weight, attn.at(w, h, t1, t2));
      }
  return r;
}

inline void randomize_bn(nn::BatchNorm2d& bn, Rng& rng) {
  const Shape s = bn.gamma().shape();
  bn.gamma() = Tensor::uniform(s, 0.5, 1.5, rng, bn.gamma().dtype()).set_requires_grad(true);
  bn.beta() = Tensor::uniform(s, -0.5, 0.5, rng, bn.beta().dtype()).set_requires_grad(true);
  bn.running_mean() = Tensor::uniform(s, -0.5, 0.5, rng, bn.running_mean().dtype());
  bn.running_var() = Tensor::uniform(s, 0.5, 2.0, rng, bn.running_var().dtype());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector();
  const auto y = b.to_vector();
  if (x.size() != y.size()) return 1e300;
  double m = 0;
  for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace oracle
