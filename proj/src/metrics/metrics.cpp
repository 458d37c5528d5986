#include "cstyolo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cstyolo/errors.hpp"

namespace cstyolo {

double iou(const Box& a, const Box& b) {
  if (!(a.width() > 0 && a.height() > 0 && b.width() > 0 && b.height() > 0)) {
    throw ContractError("iou: degenerate box");
  }
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                             double iou_thresh) {
  MatchResult r;
  r.tp.assign(dets.size(), false);
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<bool> used(gts.size(), false);
  for (size_t i : order) {
    const Detection& d = dets[i];
    double best = -1;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image != d.image || gts[g].cls != d.cls) continue;
      const double v = iou(d.box, gts[g].box);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0 && best >= iou_thresh) {
      used[best_g] = true;
      r.tp[i] = true;
    }
  }
  r.false_negatives = static_cast<int>(std::count(used.begin(), used.end(), false));
  return r;
}

ApResult average_precision(const std::vector<bool>& flags, int total_gt, ApMethod method) {
  if (total_gt < 0) throw ContractError("average_precision: negative ground-truth count");
  if (total_gt == 0) return {0.0, flags.empty()};
  std::vector<double> prec, rec;
  int tp = 0;
  for (size_t k = 0; k < flags.size(); ++k) {
    tp += flags[k] ? 1 : 0;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(tp) / total_gt);
  }
  if (method == ApMethod::eleven_point) {
    double ap = 0;
    for (int t = 0; t <= 10; ++t) {
      double p = 0;
      for (size_t k = 0; k < rec.size(); ++k) {
        if (rec[k] >= t / 10.0 - 1e-12) p = std::max(p, prec[k]);
      }
      ap += p / 11.0;
    }
    return {ap, false};
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), rec.begin(), rec.end());
  mpre.insert(mpre.end(), prec.begin(), prec.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0;
  for (size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return {ap, false};
}

double map_at_50(const std::map<std::string, double>& per_class) {
  if (per_class.empty()) throw ContractError("map_at_50: no classes");
  double s = 0;
  for (const auto& [name, ap] : per_class) s += ap;
  return s / static_cast<double>(per_class.size());
}

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    const std::vector<std::string>& class_names, double iou_thresh, ApMethod method) {
  if (class_names.empty()) throw ContractError("evaluate: no classes");
  EvalResult out;
  const MatchResult m = match_detections(dets, gts, iou_thresh);
  double total = 0;
  for (size_t c = 0; c < class_names.size(); ++c) {
    ClassEval ce;
    ce.name = class_names[c];
    std::vector<size_t> idx;
    for (size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].cls == static_cast<int>(c)) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return dets[a].confidence > dets[b].confidence; });
    std::vector<bool> flags;
    for (size_t i : idx) {
      flags.push_back(m.tp[i]);
      (m.tp[i] ? ce.tp : ce.fp)++;
    }
    ce.gt = static_cast<int>(std::count_if(gts.begin(), gts.end(),
                                           [&](const GroundTruth& g) { return g.cls == int(c); }));
    ce.fn = ce.gt - ce.tp;
    const ApResult ap = average_precision(flags, ce.gt, method);
    ce.ap = ap.ap;
    ce.undefined = ap.undefined;
    total += ce.ap;
    out.classes.push_back(ce);
  }
  out.map50 = total / static_cast<double>(class_names.size());
  return out;
}

}  // namespace cstyolo
