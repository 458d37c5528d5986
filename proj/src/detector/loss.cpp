#include "cstyolo/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cstyolo/errors.hpp"

namespace cstyolo {

namespace {

constexpr double kEps = 1e-7;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor constant(const std::vector<double>& v, const Shape& s, DType dt) {
  return Tensor::from_values(s, v, dt);
}

struct Grid {
  int64_t batch, height, width, no;
};

Grid grid_of(const Tensor& raw, const NetworkConfig& cfg) {
  const Shape& s = raw.shape();
  const int64_t no = cfg.outputs_per_anchor();
  if (s.channels() != 3 * no) {
    throw ShapeError("loss: raw map has " + std::to_string(s.channels()) + " channels, expected " +
                     std::to_string(3 * no));
  }
  return {s.batch(), s.height(), s.width(), no};
}

int64_t flat_index(const Grid& g, int image, int anchor, int64_t attr, int64_t y, int64_t x) {
  return ((image * 3 * g.no + anchor * g.no + attr) * g.height + y) * g.width + x;
}

}  // namespace

double ciou_value(double x1, double y1, double w1, double h1, double x2, double y2, double w2,
                  double h2) {
  const double iw = std::max(0.0, std::min(x1 + w1 / 2, x2 + w2 / 2) - std::max(x1 - w1 / 2, x2 - w2 / 2));
  const double ih = std::max(0.0, std::min(y1 + h1 / 2, y2 + h2 / 2) - std::max(y1 - h1 / 2, y2 - h2 / 2));
  const double inter = iw * ih;
  const double iou = inter / (w1 * h1 + w2 * h2 - inter + kEps);
  const double cw = std::max(x1 + w1 / 2, x2 + w2 / 2) - std::min(x1 - w1 / 2, x2 - w2 / 2);
  const double ch = std::max(y1 + h1 / 2, y2 + h2 / 2) - std::min(y1 - h1 / 2, y2 - h2 / 2);
  const double c2 = cw * cw + ch * ch + kEps;
  const double rho2 = (x2 - x1) * (x2 - x1) + (y2 - y1) * (y2 - y1);
  const double d = std::atan(w2 / h2) - std::atan(w1 / h1);
  const double v = 4.0 / (std::numbers::pi * std::numbers::pi) * d * d;
  const double alpha = v / (v - iou + 1.0 + kEps);
  return iou - (rho2 / c2 + v * alpha);
}

Tensor ciou(const Tensor& x1, const Tensor& y1, const Tensor& w1, const Tensor& h1,
            const Tensor& x2, const Tensor& y2, const Tensor& w2, const Tensor& h2) {
  const Tensor hw1 = scale(w1, 0.5), hh1 = scale(h1, 0.5);
  const Tensor hw2 = scale(w2, 0.5), hh2 = scale(h2, 0.5);
  const Tensor ax1 = sub(x1, hw1), ax2 = add(x1, hw1), ay1 = sub(y1, hh1), ay2 = add(y1, hh1);
  const Tensor bx1 = sub(x2, hw2), bx2 = add(x2, hw2), by1 = sub(y2, hh2), by2 = add(y2, hh2);
  const Tensor iw = clamp_min(sub(minimum(ax2, bx2), maximum(ax1, bx1)), 0.0);
  const Tensor ih = clamp_min(sub(minimum(ay2, by2), maximum(ay1, by1)), 0.0);
  const Tensor inter = mul(iw, ih);
  const Tensor uni = add_scalar(sub(add(mul(w1, h1), mul(w2, h2)), inter), kEps);
  const Tensor iou = div(inter, uni);
  const Tensor cw = sub(maximum(ax2, bx2), minimum(ax1, bx1));
  const Tensor ch = sub(maximum(ay2, by2), minimum(ay1, by1));
  const Tensor c2 = add_scalar(add(square(cw), square(ch)), kEps);
  const Tensor rho2 = add(square(sub(x2, x1)), square(sub(y2, y1)));
  const Tensor d = sub(atan(div(w2, h2)), atan(div(w1, h1)));
  const Tensor v = scale(square(d), 4.0 / (std::numbers::pi * std::numbers::pi));
  const Tensor alpha = div(v, add_scalar(sub(v, iou), 1.0 + kEps));
  return sub(iou, add(div(rho2, c2), mul(v, alpha)));
}

std::vector<std::vector<Assignment>> build_targets(const std::vector<Tensor>& raw,
                                                   const std::vector<TargetBox>& targets,
                                                   const NetworkConfig& cfg) {
  static constexpr double kOffsets[5][2] = {{0, 0}, {0.5, 0}, {0, 0.5}, {-0.5, 0}, {0, -0.5}};
  std::vector<std::vector<Assignment>> out(raw.size());
  for (size_t s = 0; s < raw.size(); ++s) {
    const Grid g = grid_of(raw[s], cfg);
    const double stride = cfg.strides[s];
    for (int o = 0; o < 5; ++o) {
      for (int a = 0; a < 3; ++a) {
        const double aw = cfg.anchors[s][2 * a] / stride, ah = cfg.anchors[s][2 * a + 1] / stride;
        for (size_t k = 0; k < targets.size(); ++k) {
          const TargetBox& t = targets[k];
          if (t.image < 0 || t.image >= g.batch) {
            throw ContractError("build_targets: target image index out of range");
          }
          const double gx = t.x * g.width, gy = t.y * g.height;
          const double gw = t.w * g.width, gh = t.h * g.height;
          const double r = std::max({gw / aw, aw / gw, gh / ah, ah / gh});
          if (!(r < cfg.loss.anchor_t)) continue;
          const double fx = gx - std::floor(gx), fy = gy - std::floor(gy);
          const double ix = g.width - gx, iy = g.height - gy;
          const bool use[5] = {true,
                               fx < 0.5 && gx > 1.0,
                               fy < 0.5 && gy > 1.0,
                               ix - std::floor(ix) < 0.5 && ix > 1.0,
                               iy - std::floor(iy) < 0.5 && iy > 1.0};
          if (!use[o]) continue;
          Assignment as;
          as.image = t.image;
          as.anchor = a;
          as.cls = t.cls;
          const auto cx = static_cast<int64_t>(std::floor(gx - kOffsets[o][0]));
          const auto cy = static_cast<int64_t>(std::floor(gy - kOffsets[o][1]));
          as.gx = std::clamp<int64_t>(cx, 0, g.width - 1);
          as.gy = std::clamp<int64_t>(cy, 0, g.height - 1);
          as.tx = gx - as.gx;
          as.ty = gy - as.gy;
          as.tw = gw;
          as.th = gh;
          as.aw = aw;
          as.ah = ah;
          as.target = static_cast<int>(k);
          out[s].push_back(as);
        }
      }
    }
  }
  return out;
}

ObjectnessTargets objectness_targets(const std::vector<Tensor>& raw,
                                     const std::vector<std::vector<Assignment>>& assigned) {
  ObjectnessTargets out(raw.size());
  for (size_t s = 0; s < raw.size(); ++s) {
    const Shape& sh = raw[s].shape();
    const int64_t no = sh.channels() / 3;
    const Grid g{sh.batch(), sh.height(), sh.width(), no};
    out[s].assign(g.batch * 3 * g.height * g.width, 0.0);
    for (const Assignment& as : assigned[s]) {
      auto at = [&](int64_t c) { return raw[s].flat(flat_index(g, as.image, as.anchor, c, as.gy, as.gx)); };
      const double px = 2 * sigmoid(at(0)) - 0.5, py = 2 * sigmoid(at(1)) - 0.5;
      const double pw = std::pow(2 * sigmoid(at(2)), 2) * as.aw;
      const double ph = std::pow(2 * sigmoid(at(3)), 2) * as.ah;
      const double v = ciou_value(px, py, pw, ph, as.tx, as.ty, as.tw, as.th);
      out[s][((as.image * 3 + as.anchor) * g.height + as.gy) * g.width + as.gx] = std::max(0.0, v);
    }
  }
  return out;
}

LossParts loss_from_targets(const std::vector<Tensor>& raw,
                            const std::vector<std::vector<Assignment>>& assigned,
                            const ObjectnessTargets& obj_targets, const NetworkConfig& cfg) {
  if (raw.size() != 3 || assigned.size() != 3 || obj_targets.size() != 3) {
    throw ContractError("loss: expected three scales");
  }
  const DType dt = raw[0].dtype();
  const int nc = cfg.num_classes;
  Tensor lbox = Tensor::scalar(0.0, dt), lobj = Tensor::scalar(0.0, dt), lcls = Tensor::scalar(0.0, dt);
  for (size_t s = 0; s < 3; ++s) {
    const Grid g = grid_of(raw[s], cfg);
    const int64_t plane = g.height * g.width;

    auto obj_idx = std::make_shared<std::vector<int64_t>>();
    obj_idx->reserve(g.batch * 3 * plane);
    for (int64_t b = 0; b < g.batch; ++b)
      for (int a = 0; a < 3; ++a)
        for (int64_t p = 0; p < plane; ++p) obj_idx->push_back(flat_index(g, int(b), a, 4, 0, 0) + p);
    const Shape obj_shape{g.batch, 3, g.height, g.width};
    if (static_cast<int64_t>(obj_targets[s].size()) != obj_shape.numel()) {
      throw ContractError("loss: objectness target size mismatch");
    }
    const Tensor pobj = gather(raw[s], obj_idx, obj_shape);
    lobj = add(lobj, scale(bce_with_logits(pobj, constant(obj_targets[s], obj_shape, dt)),
                           cfg.loss.balance[s]));

    const auto& as = assigned[s];
    const int64_t n = static_cast<int64_t>(as.size());
    if (n == 0) continue;
    auto idx = std::make_shared<std::vector<int64_t>>(g.no * n);
    for (int64_t c = 0; c < g.no; ++c)
      for (int64_t k = 0; k < n; ++k)
        (*idx)[c * n + k] = flat_index(g, as[k].image, as[k].anchor, c, as[k].gy, as[k].gx);
    const Tensor ps = gather(raw[s], idx, Shape{1, g.no, 1, n});

    const Shape row{1, 1, 1, n};
    std::vector<double> tx(n), ty(n), tw(n), th(n), aw(n), ah(n), onehot(nc * n, 0.0);
    for (int64_t k = 0; k < n; ++k) {
      tx[k] = as[k].tx;
      ty[k] = as[k].ty;
      tw[k] = as[k].tw;
      th[k] = as[k].th;
      aw[k] = as[k].aw;
      ah[k] = as[k].ah;
      if (as[k].cls < 0 || as[k].cls >= nc) throw ContractError("loss: class id out of range");
      onehot[as[k].cls * n + k] = 1.0;
    }
    auto offset = [](const Tensor& t) { return add_scalar(scale(sigmoid(t), 2.0), -0.5); };
    auto size = [](const Tensor& t) { return square(scale(sigmoid(t), 2.0)); };
    const Tensor px = offset(slice_channels(ps, 0, 1));
    const Tensor py = offset(slice_channels(ps, 1, 1));
    const Tensor pw = mul(size(slice_channels(ps, 2, 1)), constant(aw, row, dt));
    const Tensor ph = mul(size(slice_channels(ps, 3, 1)), constant(ah, row, dt));
    const Tensor iou = ciou(px, py, pw, ph, constant(tx, row, dt), constant(ty, row, dt),
                            constant(tw, row, dt), constant(th, row, dt));
    lbox = add(lbox, mean(add_scalar(neg(iou), 1.0)));
    if (nc > 1) {
      lcls = add(lcls, bce_with_logits(slice_channels(ps, 5, nc), constant(onehot, Shape{1, nc, 1, n}, dt)));
    }
  }
  LossParts parts;
  const Tensor box = scale(lbox, cfg.loss.box_gain);
  const Tensor obj = scale(lobj, cfg.loss.obj_gain);
  const Tensor cls = scale(lcls, cfg.loss.cls_gain);
  parts.box = box.item();
  parts.obj = obj.item();
  parts.cls = cls.item();
  parts.total = scale(add(add(box, obj), cls), static_cast<double>(raw[0].shape().batch()));
  return parts;
}

LossParts compute_loss(const std::vector<Tensor>& raw, const std::vector<TargetBox>& targets,
                       const NetworkConfig& cfg) {
  const auto assigned = build_targets(raw, targets, cfg);
  return loss_from_targets(raw, assigned, objectness_targets(raw, assigned), cfg);
}

}  // namespace cstyolo
