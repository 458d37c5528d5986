#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "cstyolo/metrics.hpp"
#include "cstyolo/nn/layers.hpp"
#include "cstyolo/ops.hpp"

namespace cstyolo {

/// One node of the network DAG. `from` holds absolute layer indices or -1 for
/// the previous layer. Channel arguments are given at width 1 and scaled by
/// the network's width multiplier.
///
///   cbs       [c2, k, s]
///   elan      [hidden, c2]            backbone ELAN (four taps)
///   elan_h    [hidden, c2]            neck ELAN-H (six taps)
///   welan     [hidden, c2, variant]   weighted backbone ELAN
///   welan_h   [hidden, c2, variant]   weighted neck ELAN-H
///   mp        [hidden]                max-pool downsampling, 2*hidden out
///   cbsconcat [hidden]                strided-CBS downsampling, 2*hidden out
///   catconv   [hidden]                3*hidden out
///   sppcspc   [c2]
///   cst       [c2, window, heads]
///   mcs       [mid]                   mid is not width scaled
///   upsample  []
///   concat    []
///   repconv   [c2]
///   detect    []                      three inputs, one per stride
struct LayerSpec {
  std::vector<int> from{-1};
  std::string type;
  std::vector<double> args;
};

struct LossConfig {
  double box_gain = 0.05;
  double obj_gain = 0.7;
  double cls_gain = 0.3;
  double anchor_t = 4.0;
  std::array<double, 3> balance{4.0, 1.0, 0.4};
};

struct NetworkConfig {
  std::string name = "cst-yolo";
  int num_classes = 3;
  double width = 0.25;
  int input_size = 256;
  /// Per scale, three (w, h) pairs in input pixels.
  std::array<std::array<double, 6>, 3> anchors{};
  std::array<int, 3> strides{8, 16, 32};
  std::vector<LayerSpec> layers;
  LossConfig loss;

  int outputs_per_anchor() const { return 5 + num_classes; }
};

/// Architecture names accepted by `builtin_config`.
const std::vector<std::string>& architecture_names();

/// COCO anchors of the YOLOv7 family rescaled from 640 to `input_size`.
std::array<std::array<double, 6>, 3> default_anchors(int input_size);

/// "cst-yolo", "yolov7-baseline" or "ablation:<w/o-cst|w/o-welan|w/o-mcs|w/-maxpool>".
NetworkConfig builtin_config(const std::string& arch, int num_classes = 3, double width = 0.25,
                             int input_size = 256);

/// Channel count after width scaling, rounded up to a multiple of 8.
int64_t scale_width(double channels, double width);

std::string network_config_to_json(const NetworkConfig& cfg);
/// Accepts either full `layers` or an `arch` name plus overrides.
NetworkConfig network_config_from_json(const std::string& text, const std::string& source = "<json>");

/// Per-scale head: implicit add, 1x1 conv, implicit multiply.
class IDetect : public nn::Module {
 public:
  IDetect(const std::vector<int64_t>& in_channels, int num_classes, const NetworkConfig& cfg,
          Rng& rng);
  std::vector<Tensor> forward(const std::vector<Tensor>& xs);

  Tensor& implicit_add(int scale) { return *ia_[scale]; }
  Tensor& implicit_mul(int scale) { return *im_[scale]; }
  nn::Conv2d& conv(int scale) { return *conv_[scale]; }

 private:
  std::vector<Tensor*> ia_;
  std::vector<Tensor*> im_;
  std::vector<nn::Conv2d*> conv_;
};

/// Network built from a NetworkConfig. `forward` returns one raw map per
/// stride with layout (B, anchors * (5 + classes), H, W), attribute-minor.
class Detector : public nn::Module {
 public:
  explicit Detector(const NetworkConfig& cfg, uint64_t seed = 0);
  ~Detector() override;

  std::vector<Tensor> forward(const Tensor& images);
  /// Reparameterizes every RepConv into a single conv. Irreversible.
  void fuse();
  bool fused() const { return fused_; }

  const NetworkConfig& config() const { return cfg_; }
  size_t layer_count() const { return nodes_.size(); }
  const std::string& layer_type(size_t i) const { return cfg_.layers[i].type; }
  int64_t layer_channels(size_t i) const { return nodes_[i].channels; }
  /// Module of layer `i`; null for parameter-free layers.
  nn::Module* layer_module(size_t i) { return nodes_[i].module; }
  IDetect& head() { return *head_; }

 private:
  struct Node {
    std::vector<int> from;
    int64_t channels = 0;
    nn::Module* module = nullptr;
    std::function<Tensor(const std::vector<Tensor>&)> run;
  };
  NetworkConfig cfg_;
  std::vector<Node> nodes_;
  IDetect* head_ = nullptr;
  bool fused_ = false;
};

struct DecodeOptions {
  double conf_thresh = 0.001;
  /// Boxes are clipped to [0, width] x [0, height] of the network input.
  double image_width = 0;
  double image_height = 0;
};

/// Decodes raw maps into per-image detections in network-input pixels.
/// Boxes whose clipped extent is empty are dropped.
std::vector<std::vector<Detection>> decode_boxes(const std::vector<Tensor>& raw,
                                                 const NetworkConfig& cfg,
                                                 const DecodeOptions& options);

/// Per class: drop below `conf_thresh`, then greedy suppression of IoU >=
/// `iou_thresh` in descending confidence (ties by input index). Output is
/// sorted by confidence and capped at `max_det` (0 means no cap).
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh,
                           double conf_thresh, size_t max_det = 0);

}  // namespace cstyolo
