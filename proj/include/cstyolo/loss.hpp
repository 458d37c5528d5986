#pragma once

#include <vector>

#include "cstyolo/detector.hpp"

namespace cstyolo {

/// Ground-truth box normalized to the network input: centre, size in [0, 1].
struct TargetBox {
  int image = 0;
  int cls = 0;
  double x = 0, y = 0, w = 0, h = 0;
};

/// One prediction slot made responsible for a target.
struct Assignment {
  int image = 0;
  int anchor = 0;
  int64_t gx = 0, gy = 0;
  int cls = 0;
  /// Target centre relative to the cell corner and target size, in grid units.
  double tx = 0, ty = 0, tw = 0, th = 0;
  /// Anchor size in grid units.
  double aw = 0, ah = 0;
  int target = 0;
};

/// Anchors whose width and height ratios to the target are both within
/// `anchor_t` take the target in its own cell and in the two neighbouring cells
/// closest to its centre.
std::vector<std::vector<Assignment>> build_targets(const std::vector<Tensor>& raw,
                                                   const std::vector<TargetBox>& targets,
                                                   const NetworkConfig& cfg);

/// Objectness targets per scale, laid out (B, anchors, H, W).
using ObjectnessTargets = std::vector<std::vector<double>>;

/// Objectness target of each assigned slot is the clamped CIoU between its
/// decoded prediction and the target (later assignments win); others are 0.
ObjectnessTargets objectness_targets(const std::vector<Tensor>& raw,
                                     const std::vector<std::vector<Assignment>>& assigned);

struct LossParts {
  Tensor total;
  double box = 0;
  double obj = 0;
  double cls = 0;
};

/// CIoU box loss, BCE objectness and BCE class loss with fixed objectness
/// targets. Differentiable in `raw`.
LossParts loss_from_targets(const std::vector<Tensor>& raw,
                            const std::vector<std::vector<Assignment>>& assigned,
                            const ObjectnessTargets& obj_targets, const NetworkConfig& cfg);

/// build_targets, objectness_targets and loss_from_targets in sequence.
LossParts compute_loss(const std::vector<Tensor>& raw, const std::vector<TargetBox>& targets,
                       const NetworkConfig& cfg);

/// Complete IoU of boxes given as centre and size, elementwise over (1, 1, 1, n) tensors.
Tensor ciou(const Tensor& x1, const Tensor& y1, const Tensor& w1, const Tensor& h1,
            const Tensor& x2, const Tensor& y2, const Tensor& w2, const Tensor& h2);

/// Scalar reference of `ciou`.
double ciou_value(double x1, double y1, double w1, double h1, double x2, double y2, double w2,
                  double h2);

}  // namespace cstyolo
