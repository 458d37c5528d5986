#include <algorithm>
#include <cmath>
#include <numeric>

#include "cstyolo/detector.hpp"
#include "cstyolo/errors.hpp"
#include "cstyolo/nn/blocks.hpp"
#include "cstyolo/nn/cst.hpp"

namespace cstyolo {

namespace {

void need_args(const LayerSpec& l, size_t i, size_t n) {
  if (l.args.size() < n) {
    throw ConfigError("layer " + std::to_string(i) + " (" + l.type + "): expected " +
                      std::to_string(n) + " args");
  }
}

}  // namespace

IDetect::IDetect(const std::vector<int64_t>& in_channels, int num_classes, const NetworkConfig& cfg,
                 Rng& rng) {
  const int64_t no = 5 + num_classes;
  for (size_t i = 0; i < in_channels.size(); ++i) {
    const std::string s = std::to_string(i);
    ia_.push_back(&add_parameter("ia" + s, Tensor::zeros({1, in_channels[i], 1, 1}),
                                 nn::ParamKind::other));
    auto& conv = add_module("m" + s, std::make_unique<nn::Conv2d>(in_channels[i], 3 * no, 1, 1, 0,
                                                                  true, rng));
    auto b = conv.bias().mutable_data<float>();
    const double cells = std::pow(cfg.input_size / double(cfg.strides[i]), 2);
    for (int a = 0; a < 3; ++a) {
      b[a * no + 4] += static_cast<float>(std::log(8.0 / cells));
      for (int c = 0; c < num_classes; ++c) {
        b[a * no + 5 + c] += static_cast<float>(std::log(0.6 / (num_classes - 0.99)));
      }
    }
    conv_.push_back(&conv);
    im_.push_back(
        &add_parameter("im" + s, Tensor::full({1, 3 * no, 1, 1}, 1.0), nn::ParamKind::other));
  }
}

std::vector<Tensor> IDetect::forward(const std::vector<Tensor>& xs) {
  if (xs.size() != conv_.size()) throw ShapeError("idetect: expected one input per scale");
  std::vector<Tensor> out;
  for (size_t i = 0; i < xs.size(); ++i) {
    out.push_back(mul(conv_[i]->forward(add(xs[i], *ia_[i])), *im_[i]));
  }
  return out;
}

Detector::Detector(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  if (cfg.layers.empty() || cfg.layers.back().type != "detect") {
    throw ConfigError("network must end with a detect layer");
  }
  if (cfg.input_size % cfg.strides[2] != 0) {
    throw ConfigError("input_size must be a multiple of the largest stride");
  }
  const double w = cfg.width;
  int stride = 1;
  std::vector<int> strides;
  for (size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    Node node;
    if (i == 0 && l.from != std::vector<int>{-1}) {
      throw ConfigError("layer 0 must read the image (from -1)");
    }
    for (int f : i == 0 ? std::vector<int>{} : l.from) {
      const int src = f < 0 ? static_cast<int>(i) + f : f;
      if (src < 0 || src >= static_cast<int>(i)) {
        throw ConfigError("layer " + std::to_string(i) + " (" + l.type + "): input " +
                          std::to_string(f) + " does not refer to an earlier layer");
      }
      if (cfg.layers[src].type == "detect") {
        throw ConfigError("layer " + std::to_string(i) + ": detect output cannot be an input");
      }
      node.from.push_back(src);
    }
    const int64_t c1 = i == 0 ? 3 : nodes_[node.from[0]].channels;
    stride = i == 0 ? 1 : strides[node.from[0]];
    if (i > 0 && l.type != "concat" && l.type != "detect" && node.from.size() != 1) {
      throw ConfigError("layer " + std::to_string(i) + " (" + l.type + "): expects one input");
    }
    const std::string name = std::to_string(i);
    auto single = [](auto* m) {
      return [m](const std::vector<Tensor>& xs) { return m->forward(xs[0]); };
    };

    if (l.type == "cbs") {
      need_args(l, i, 3);
      const int k = static_cast<int>(l.args[1]), s = static_cast<int>(l.args[2]);
      auto* m = &add_module(name, std::make_unique<nn::Cbs>(c1, scale_width(l.args[0], w), k, s, rng));
      node = {node.from, scale_width(l.args[0], w), m, single(m)};
      stride *= s;
    } else if (l.type == "elan" || l.type == "elan_h" || l.type == "welan" || l.type == "welan_h") {
      const bool weighted = l.type[0] == 'w';
      need_args(l, i, weighted ? 3 : 2);
      const int64_t hidden = scale_width(l.args[0], w), c2 = scale_width(l.args[1], w);
      const bool head = l.type.back() == 'h';
      const nn::ElanPlan plan =
          head ? nn::ElanPlan::head(c1, hidden, c2) : nn::ElanPlan::backbone(c1, hidden, c2);
      if (weighted) {
        auto* m = &add_module(name, std::make_unique<nn::WElan>(plan, static_cast<int>(l.args[2]), rng));
        node = {node.from, c2, m, single(m)};
      } else {
        auto* m = &add_module(name, std::make_unique<nn::Elan>(plan, rng));
        node = {node.from, c2, m, single(m)};
      }
    } else if (l.type == "mp" || l.type == "cbsconcat") {
      need_args(l, i, 1);
      const auto kind = l.type == "mp" ? nn::DownKind::maxpool : nn::DownKind::cbs;
      auto* m = &add_module(name, std::make_unique<nn::MpConv>(c1, scale_width(l.args[0], w), kind, rng));
      node = {node.from, m->out_channels(), m, single(m)};
      stride *= 2;
    } else if (l.type == "catconv") {
      need_args(l, i, 1);
      auto* m = &add_module(name, std::make_unique<nn::CatConv>(c1, scale_width(l.args[0], w), rng));
      node = {node.from, m->out_channels(), m, single(m)};
      stride *= 2;
    } else if (l.type == "sppcspc") {
      need_args(l, i, 1);
      auto* m = &add_module(name, std::make_unique<nn::Sppcspc>(c1, scale_width(l.args[0], w), rng));
      node = {node.from, scale_width(l.args[0], w), m, single(m)};
    } else if (l.type == "cst") {
      need_args(l, i, 3);
      const int64_t c2 = scale_width(l.args[0], w);
      auto* m = &add_module(name, std::make_unique<nn::Cst>(c1, c2, rng, static_cast<int>(l.args[1]),
                                                            static_cast<int>(l.args[2])));
      node = {node.from, c2, m, single(m)};
    } else if (l.type == "mcs") {
      need_args(l, i, 1);
      auto* m = &add_module(name, std::make_unique<nn::Mcs>(c1, rng, std::vector<int64_t>{1, 2, 3, 6},
                                                            static_cast<int64_t>(l.args[0])));
      node = {node.from, c1, m, single(m)};
    } else if (l.type == "upsample") {
      node.channels = c1;
      node.run = [](const std::vector<Tensor>& xs) {
        const Shape& s = xs[0].shape();
        return upsample_nearest(xs[0], 2 * s.height(), 2 * s.width());
      };
      if (stride % 2 != 0) throw ConfigError("layer " + name + ": upsample below stride 2");
      stride /= 2;
    } else if (l.type == "concat") {
      node.channels = 0;
      for (int src : node.from) {
        node.channels += nodes_[src].channels;
        if (strides[src] != stride) {
          throw ConfigError("layer " + name + ": concat inputs have different strides");
        }
      }
      node.run = [](const std::vector<Tensor>& xs) { return concat(xs); };
    } else if (l.type == "repconv") {
      need_args(l, i, 1);
      auto* m = &add_module(name, std::make_unique<nn::RepConv>(c1, scale_width(l.args[0], w), 1, rng));
      node = {node.from, scale_width(l.args[0], w), m, single(m)};
    } else if (l.type == "detect") {
      if (i + 1 != cfg.layers.size() || node.from.size() != 3) {
        throw ConfigError("detect must be the last layer and take three inputs");
      }
      std::vector<int64_t> in;
      for (size_t k = 0; k < 3; ++k) {
        if (strides[node.from[k]] != cfg.strides[k]) {
          throw ConfigError("detect input " + std::to_string(k) + " has stride " +
                            std::to_string(strides[node.from[k]]) + ", expected " +
                            std::to_string(cfg.strides[k]));
        }
        in.push_back(nodes_[node.from[k]].channels);
      }
      head_ = &add_module(name, std::make_unique<IDetect>(in, cfg.num_classes, cfg, rng));
      node.module = head_;
    } else {
      throw ConfigError("layer " + name + ": unknown type '" + l.type + "'");
    }
    nodes_.push_back(std::move(node));
    strides.push_back(stride);
  }
}

Detector::~Detector() = default;

std::vector<Tensor> Detector::forward(const Tensor& images) {
  const Shape& s = images.shape();
  if (s.channels() != 3 || s.height() % cfg_.strides[2] != 0 || s.width() % cfg_.strides[2] != 0) {
    throw ShapeError("detector: expected (B, 3, H, W) with H, W multiples of " +
                     std::to_string(cfg_.strides[2]) + ", got " + s.str());
  }
  std::vector<Tensor> outs(nodes_.size());
  std::vector<int> last_use(nodes_.size(), -1);
  for (size_t i = 0; i < nodes_.size(); ++i)
    for (int f : nodes_[i].from) last_use[f] = static_cast<int>(i);
  for (size_t i = 0; i + 1 < nodes_.size(); ++i) {
    std::vector<Tensor> xs;
    if (i == 0) xs.push_back(images);
    else
      for (int f : nodes_[i].from) xs.push_back(outs[f]);
    outs[i] = nodes_[i].run(xs);
    for (int f : nodes_[i].from)
      if (last_use[f] == static_cast<int>(i)) outs[f] = Tensor();
  }
  std::vector<Tensor> feats;
  for (int f : nodes_.back().from) feats.push_back(outs[f]);
  return head_->forward(feats);
}

void Detector::fuse() {
  for (auto& n : nodes_) {
    if (auto* r = dynamic_cast<nn::RepConv*>(n.module)) r->fuse();
  }
  fused_ = true;
}

std::vector<std::vector<Detection>> decode_boxes(const std::vector<Tensor>& raw,
                                                 const NetworkConfig& cfg,
                                                 const DecodeOptions& options) {
  const int64_t no = cfg.outputs_per_anchor();
  const int64_t batch = raw.at(0).shape().batch();
  std::vector<std::vector<Detection>> out(batch);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (size_t s = 0; s < raw.size(); ++s) {
    const Tensor& r = raw[s];
    if (r.shape().channels() != 3 * no || r.shape().batch() != batch) {
      throw ShapeError("decode_boxes: scale " + std::to_string(s) + " has shape " + r.shape().str());
    }
    const std::vector<double> v = r.to_vector();
    const int64_t H = r.shape().height(), W = r.shape().width();
    const double stride = cfg.strides[s];
    const int64_t plane = H * W;
    for (int64_t b = 0; b < batch; ++b)
      for (int a = 0; a < 3; ++a)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x) {
            const double* base = v.data() + (b * 3 * no + a * no) * plane + y * W + x;
            auto attr = [&](int64_t c) { return base[c * plane]; };
            const double obj = sig(attr(4));
            if (obj < options.conf_thresh) continue;
            int best = 0;
            double best_p = -1;
            for (int c = 0; c < cfg.num_classes; ++c) {
              const double p = sig(attr(5 + c));
              if (p > best_p) best_p = p, best = c;
            }
            const double conf = obj * best_p;
            if (conf < options.conf_thresh) continue;
            const double cx = (2 * sig(attr(0)) - 0.5 + x) * stride;
            const double cy = (2 * sig(attr(1)) - 0.5 + y) * stride;
            const double bw = std::pow(2 * sig(attr(2)), 2) * cfg.anchors[s][2 * a];
            const double bh = std::pow(2 * sig(attr(3)), 2) * cfg.anchors[s][2 * a + 1];
            Box box{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
            box.x1 = std::clamp(box.x1, 0.0, options.image_width);
            box.x2 = std::clamp(box.x2, 0.0, options.image_width);
            box.y1 = std::clamp(box.y1, 0.0, options.image_height);
            box.y2 = std::clamp(box.y2, 0.0, options.image_height);
            if (!(box.x2 > box.x1 && box.y2 > box.y1)) continue;
            out[b].push_back({box, best, conf, static_cast<int>(b)});
          }
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh,
                           double conf_thresh, size_t max_det) {
  std::vector<size_t> order;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= conf_thresh) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<size_t> kept;
  for (size_t i : order) {
    bool keep = true;
    for (size_t k : kept) {
      if (dets[k].cls == dets[i].cls && dets[k].image == dets[i].image &&
          iou(dets[k].box, dets[i].box) >= iou_thresh) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  if (max_det > 0 && kept.size() > max_det) kept.resize(max_det);
  std::vector<Detection> out;
  for (size_t k : kept) out.push_back(dets[k]);
  return out;
}

}  // namespace cstyolo
