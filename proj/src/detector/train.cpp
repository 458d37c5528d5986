#include "cstyolo/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <numbers>

namespace cstyolo {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (!(lr0 > 0) || !std::isfinite(lr0)) fail("lr0 must be positive");
  if (!(lr_min_fraction >= 0 && lr_min_fraction <= 1)) fail("lr_min_fraction must be in [0, 1]");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (batch < 1) fail("batch must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (warmup_steps < 0) fail("warmup_steps must be non-negative");
}

double cosine_lr(const TrainConfig& tc, double epoch) {
  const double lr_min = tc.lr_min_fraction * tc.lr0;
  const double t = std::clamp(epoch / tc.epochs, 0.0, 1.0);
  return lr_min + (tc.lr0 - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Sgd::Sgd(std::vector<nn::NamedTensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].tensor->dtype() != DType::f32) throw ContractError("Sgd: f32 parameters only");
    velocity_[i].assign(params_[i].tensor->numel(), 0.0f);
  }
}

void Sgd::step(double lr) {
  const auto mu = static_cast<float>(momentum_);
  const auto step = static_cast<float>(lr);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].tensor;
    if (!p.has_grad()) continue;
    const float wd =
        params_[i].kind == nn::ParamKind::conv_weight ? static_cast<float>(weight_decay_) : 0.0f;
    auto w = p.mutable_data<float>();
    auto g = p.grad_data<float>();
    auto& v = velocity_[i];
    for (size_t k = 0; k < w.size(); ++k) {
      const float d = g[k] + wd * w[k];
      v[k] = mu * v[k] + d;
      w[k] -= step * (d + mu * v[k]);
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor->zero_grad();
}

Batch make_batch(const std::vector<data::DatasetRecord>& records, const std::vector<size_t>& indices,
                 int input_size, const std::vector<std::string>& classes) {
  if (indices.empty()) throw ContractError("make_batch: no images");
  const int64_t n = static_cast<int64_t>(indices.size());
  const int64_t plane = static_cast<int64_t>(input_size) * input_size;
  Batch batch;
  batch.images = Tensor::zeros({n, 3, input_size, input_size});
  auto px = batch.images.mutable_data<float>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& rec = records.at(indices[i]);
    auto [img, tf] = data::letterbox(rec.image, input_size);
    float* dst = px.data() + i * 3 * plane;
    for (int64_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = img.pixels[p * 3 + c] / 255.0f;
    }
    data::Annotation a = rec.annotation;
    a.width = rec.image.width;
    a.height = rec.image.height;
    for (const auto& gt : data::to_ground_truth(a, classes, static_cast<int>(i))) {
      const Box b = tf.forward(gt.box);
      batch.targets.push_back({static_cast<int>(i), gt.cls, (b.x1 + b.x2) / 2 / input_size,
                               (b.y1 + b.y2) / 2 / input_size, b.width() / input_size,
                               b.height() / input_size});
    }
    batch.transforms.push_back(tf);
  }
  return batch;
}

std::vector<std::vector<Detection>> predict(Detector& net, const std::vector<data::DatasetRecord>& records,
                                            const EvalOptions& options) {
  const bool was_training = net.training();
  net.eval();
  NoGradGuard no_grad;
  const auto& cfg = net.config();
  std::vector<std::vector<Detection>> out(records.size());
  const size_t step = static_cast<size_t>(std::max(1, options.batch));
  for (size_t start = 0; start < records.size(); start += step) {
    std::vector<size_t> idx(std::min(step, records.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor images = Tensor::zeros({static_cast<int64_t>(idx.size()), 3, cfg.input_size, cfg.input_size});
    std::vector<data::LetterboxTransform> tfs;
    {
      const int64_t plane = static_cast<int64_t>(cfg.input_size) * cfg.input_size;
      auto px = images.mutable_data<float>();
      for (size_t i = 0; i < idx.size(); ++i) {
        auto [img, tf] = data::letterbox(records[idx[i]].image, cfg.input_size);
        float* dst = px.data() + i * 3 * plane;
        for (int64_t p = 0; p < plane; ++p) {
          for (int c = 0; c < 3; ++c) dst[c * plane + p] = img.pixels[p * 3 + c] / 255.0f;
        }
        tfs.push_back(tf);
      }
    }
    const auto raw = net.forward(images);
    DecodeOptions dopt;
    dopt.conf_thresh = options.conf_thresh;
    dopt.image_width = cfg.input_size;
    dopt.image_height = cfg.input_size;
    const auto decoded = decode_boxes(raw, cfg, dopt);
    for (size_t i = 0; i < idx.size(); ++i) {
      const auto& rec = records[idx[i]];
      for (auto d : nms(decoded[i], options.iou_thresh, options.conf_thresh, options.max_det)) {
        d.box = tfs[i].inverse(d.box);
        d.box.x1 = std::clamp(d.box.x1, 0.0, double(rec.image.width));
        d.box.x2 = std::clamp(d.box.x2, 0.0, double(rec.image.width));
        d.box.y1 = std::clamp(d.box.y1, 0.0, double(rec.image.height));
        d.box.y2 = std::clamp(d.box.y2, 0.0, double(rec.image.height));
        if (d.box.width() <= 0 || d.box.height() <= 0) continue;
        d.image = static_cast<int>(idx[i]);
        out[idx[i]].push_back(d);
      }
    }
  }
  net.train(was_training);
  return out;
}

EvalResult evaluate_model(Detector& net, const std::vector<data::DatasetRecord>& records,
                          const std::vector<std::string>& classes, const EvalOptions& options) {
  if (records.empty()) throw ConfigError("evaluate: empty dataset");
  std::vector<Detection> dets;
  for (auto& per_image : predict(net, records, options)) {
    dets.insert(dets.end(), per_image.begin(), per_image.end());
  }
  std::vector<GroundTruth> gts;
  for (size_t i = 0; i < records.size(); ++i) {
    data::Annotation a = records[i].annotation;
    a.width = records[i].image.width;
    a.height = records[i].image.height;
    const auto g = data::to_ground_truth(a, classes, static_cast<int>(i));
    gts.insert(gts.end(), g.begin(), g.end());
  }
  return evaluate(dets, gts, classes);
}

std::string epoch_log_header() { return "epoch,lr,box_loss,obj_loss,cls_loss,val_mAP50"; }

std::string epoch_log_line(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.8g,%.6f,%.6f,%.6f,%.6f", e.epoch, e.lr, e.box_loss, e.obj_loss,
                e.cls_loss, e.val_map50);
  return buf;
}

std::vector<EpochLog> train(Detector& net, const std::vector<data::DatasetRecord>& train_set,
                            const std::vector<data::DatasetRecord>& val_set,
                            const std::vector<std::string>& classes, const TrainConfig& tc,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  tc.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (val_set.empty()) throw ConfigError("train: empty validation set");
  const auto& cfg = net.config();
  Sgd opt(net.parameters(), tc.momentum, tc.weight_decay);
  Rng rng(tc.seed);
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<EpochLog> logs;
  int64_t global_step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    net.train();
    for (size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = cosine_lr(tc, epoch);
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(tc.batch));
      const std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      const Batch batch = make_batch(train_set, idx, cfg.input_size, classes);
      opt.zero_grad();
      const auto raw = net.forward(batch.images);
      const LossParts parts = compute_loss(raw, batch.targets, cfg);
      parts.total.backward();
      double lr = log.lr;
      if (global_step < tc.warmup_steps) lr *= double(global_step + 1) / tc.warmup_steps;
      opt.step(lr);
      ++global_step;
      log.box_loss += parts.box;
      log.obj_loss += parts.obj;
      log.cls_loss += parts.cls;
      ++batches;
    }
    log.box_loss /= batches;
    log.obj_loss /= batches;
    log.cls_loss /= batches;
    log.val_map50 = evaluate_model(net, val_set, classes).map50;
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace cstyolo
