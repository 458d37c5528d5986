#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cstyolo/data.hpp"
#include "cstyolo/detector.hpp"
#include "cstyolo/loss.hpp"

namespace cstyolo {

struct TrainConfig {
  double lr0 = 0.001;
  /// lr_min = lr_min_fraction * lr0.
  double lr_min_fraction = 0.01;
  double momentum = 0.937;
  double weight_decay = 0.0005;
  int batch = 20;
  int epochs = 150;
  /// Linear warmup of the learning rate over this many optimizer steps.
  int warmup_steps = 0;
  uint64_t seed = 0;

  /// Throws ConfigError unless every field is in range.
  void validate() const;
};

/// lr(e) = lr_min + (lr0 - lr_min) * (1 + cos(pi * e / epochs)) / 2.
double cosine_lr(const TrainConfig& tc, double epoch);

/// SGD with Nesterov momentum; weight decay applies to conv weights only.
class Sgd {
 public:
  Sgd(std::vector<nn::NamedTensor> params, double momentum, double weight_decay);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<nn::NamedTensor> params_;
  std::vector<std::vector<float>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Letterboxed image batch in [0, 1] plus normalized targets.
struct Batch {
  Tensor images;
  std::vector<TargetBox> targets;
  std::vector<data::LetterboxTransform> transforms;
};

/// Letterboxes `records[indices[i]]` to the network input size.
Batch make_batch(const std::vector<data::DatasetRecord>& records, const std::vector<size_t>& indices,
                 int input_size, const std::vector<std::string>& classes);

struct EvalOptions {
  double conf_thresh = 0.001;
  double iou_thresh = 0.65;
  size_t max_det = 300;
  int batch = 8;
};

/// Detections in original image coordinates, one list per record.
std::vector<std::vector<Detection>> predict(Detector& net, const std::vector<data::DatasetRecord>& records,
                                            const EvalOptions& options);

/// mAP@0.5 evaluation of `net` on `records` in eval mode.
EvalResult evaluate_model(Detector& net, const std::vector<data::DatasetRecord>& records,
                          const std::vector<std::string>& classes, const EvalOptions& options = {});

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double box_loss = 0;
  double obj_loss = 0;
  double cls_loss = 0;
  double val_map50 = 0;
};

std::string epoch_log_header();
std::string epoch_log_line(const EpochLog& e);

/// Trains for tc.epochs, evaluating on `val` after every epoch. `on_epoch`
/// receives each log entry as it is produced.
std::vector<EpochLog> train(Detector& net, const std::vector<data::DatasetRecord>& train_set,
                            const std::vector<data::DatasetRecord>& val_set,
                            const std::vector<std::string>& classes, const TrainConfig& tc,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace cstyolo
