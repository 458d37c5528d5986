#include <algorithm>
#include <cmath>

#include "cstyolo/loss.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cstyolo;
using namespace testutil;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

std::vector<Tensor> zero_raw(const NetworkConfig& cfg, int64_t batch, double fill, DType dt) {
  std::vector<Tensor> raw;
  for (int s = 0; s < 3; ++s) {
    const int64_t g = cfg.input_size / cfg.strides[s];
    raw.push_back(Tensor::full({batch, 3 * cfg.outputs_per_anchor(), g, g}, fill, dt));
  }
  return raw;
}

int64_t slot(const NetworkConfig& cfg, const Tensor& r, int64_t b, int a, int64_t attr, int64_t y,
             int64_t x) {
  const Shape& s = r.shape();
  return ((b * s[1] + a * cfg.outputs_per_anchor() + attr) * s[2] + y) * s[3] + x;
}

NetworkConfig tiny(const std::string& arch, int input = 64) {
  return builtin_config(arch, 3, 0.125, input);
}

}  // namespace

TEST_CASE("network: head grids follow the strides at 640") {
  Detector net(builtin_config("cst-yolo", 3, 0.0625, 640), 1);
  net.eval();
  NoGradGuard ng;
  Rng rng(2);
  const auto raw = net.forward(Tensor::uniform({1, 3, 640, 640}, 0, 1, rng));
  REQUIRE(raw.size() == 3);
  const int64_t grids[3] = {80, 40, 20};
  for (int s = 0; s < 3; ++s) {
    CHECK(raw[s].shape() == Shape(1, 3 * (5 + 3), grids[s], grids[s]));
  }
}

TEST_CASE("network: head channels are 3 * (5 + classes)") {
  for (int nc : {1, 3, 7}) {
    Detector net(builtin_config("yolov7-baseline", nc, 0.125, 64), 0);
    NoGradGuard ng;
    net.eval();
    const auto raw = net.forward(Tensor::zeros({2, 3, 64, 64}));
    for (const auto& r : raw) CHECK(r.shape().channels() == 3 * (5 + nc));
  }
}

TEST_CASE("network: baseline parameter count at width 1.0") {
  Detector net(builtin_config("yolov7-baseline", 80, 1.0, 640), 0);
  const double n = static_cast<double>(net.num_parameters());
  MESSAGE("yolov7-baseline parameters: ", n);
  CHECK(n >= 36.9e6 * 0.95);
  CHECK(n <= 36.9e6 * 1.05);
}

TEST_CASE("network: every architecture builds and runs") {
  for (const auto& arch : architecture_names()) {
    CAPTURE(arch);
    Detector net(tiny(arch), 3);
    Rng rng(4);
    const auto raw = net.forward(Tensor::uniform({2, 3, 64, 64}, 0, 1, rng));
    REQUIRE(raw.size() == 3);
    Tensor loss = add(add(sum(raw[0]), sum(raw[1])), sum(raw[2]));
    loss.backward();
    int with_grad = 0;
    for (auto& p : net.parameters()) with_grad += p.tensor->has_grad();
    CHECK(with_grad > 0);
  }
}

TEST_CASE("network: ablations differ from cst-yolo in the toggled block only") {
  auto has = [](const NetworkConfig& c, const std::string& type) {
    return std::any_of(c.layers.begin(), c.layers.end(),
                       [&](const LayerSpec& l) { return l.type == type; });
  };
  const auto full = builtin_config("cst-yolo");
  CHECK(has(full, "cst"));
  CHECK(has(full, "mcs"));
  CHECK(has(full, "welan"));
  CHECK(has(full, "catconv"));
  CHECK_FALSE(has(builtin_config("ablation:w/o-cst"), "cst"));
  CHECK_FALSE(has(builtin_config("ablation:w/o-mcs"), "mcs"));
  CHECK_FALSE(has(builtin_config("ablation:w/o-welan"), "welan"));
  CHECK_FALSE(has(builtin_config("ablation:w/-maxpool"), "catconv"));
  const auto base = builtin_config("yolov7-baseline");
  for (const char* t : {"cst", "mcs", "welan", "welan_h", "catconv", "cbsconcat"}) {
    CHECK_FALSE(has(base, t));
  }
  CHECK(has(base, "elan"));
  CHECK(has(base, "mp"));
  CHECK_THROWS_AS(builtin_config("ablation:w/o-everything"), ConfigError);
}

TEST_CASE("network: malformed DAGs are config errors") {
  auto cfg = tiny("cst-yolo");
  SUBCASE("dangling reference") {
    cfg.layers[5].from = {400};
    CHECK_THROWS_AS(Detector{cfg}, ConfigError);
  }
  SUBCASE("forward reference") {
    cfg.layers[5].from = {6};
    CHECK_THROWS_AS(Detector{cfg}, ConfigError);
  }
  SUBCASE("missing detect") {
    cfg.layers.pop_back();
    CHECK_THROWS_AS(Detector{cfg}, ConfigError);
  }
  SUBCASE("unknown type") {
    cfg.layers[3].type = "convolution";
    CHECK_THROWS_AS(Detector{cfg}, ConfigError);
  }
  SUBCASE("wrong strides at the head") {
    cfg.strides = {8, 16, 16};
    CHECK_THROWS_AS(Detector{cfg}, ConfigError);
  }
}

TEST_CASE("network: config JSON round trip") {
  auto cfg = builtin_config("ablation:w/o-mcs", 2, 0.5, 320);
  cfg.loss.box_gain = 0.07;
  cfg.anchors[1][3] = 17.25;
  const std::string text = network_config_to_json(cfg);
  const auto back = network_config_from_json(text);
  CHECK(network_config_to_json(back) == text);
  CHECK(back.num_classes == 2);
  CHECK(back.loss.box_gain == 0.07);
  CHECK(back.anchors[1][3] == 17.25);
  CHECK(back.layers.size() == cfg.layers.size());

  const auto by_name = network_config_from_json(R"({"arch": "cst-yolo", "num_classes": 5})");
  CHECK(by_name.num_classes == 5);
  CHECK(by_name.layers.size() == builtin_config("cst-yolo").layers.size());

  CHECK_THROWS_AS(network_config_from_json("{\"arch\": "), ParseError);
  CHECK_THROWS_AS(network_config_from_json(R"({"arch": "yolov9"})"), ConfigError);
}

TEST_CASE("network: anchors scale with the input") {
  const auto a = default_anchors(640);
  CHECK(a[0][0] == 12);
  CHECK(a[2][5] == 401);
  const auto b = default_anchors(320);
  CHECK(b[0][0] == doctest::Approx(6));
  CHECK(b[2][5] == doctest::Approx(200.5));
}

TEST_CASE("idetect: identity implicit terms reduce the head to its conv") {
  Detector net(tiny("cst-yolo"), 5);
  IDetect& head = net.head();
  Rng rng(6);
  std::vector<Tensor> xs;
  for (int s = 0; s < 3; ++s) {
    const int64_t c = head.conv(s).in_channels();
    xs.push_back(Tensor::normal({2, c, 4, 4}, 0, 1, rng));
  }
  const auto out = head.forward(xs);
  for (int s = 0; s < 3; ++s) {
    CHECK(max_abs_diff(out[s], head.conv(s).forward(xs[s])) == 0.0);
    CHECK(out[s].shape().channels() == 3 * 8);
  }
}

TEST_CASE("idetect: objectness and class biases start from the prior") {
  const auto cfg = tiny("cst-yolo", 256);
  Detector net(cfg, 5);
  for (int s = 0; s < 3; ++s) {
    const auto b = net.head().conv(s).bias().to_vector();
    const double cells = std::pow(256.0 / cfg.strides[s], 2);
    const int64_t fan_in = net.head().conv(s).in_channels();
    const double bound = 1 / std::sqrt(double(fan_in)) + 1e-6;
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(b[a * 8 + 4] - std::log(8 / cells)) <= bound);
      CHECK(std::abs(b[a * 8 + 5] - std::log(0.6 / 2.01)) <= bound);
    }
  }
}

TEST_CASE("network: fused predictions match the train-time form") {
  Detector net(tiny("cst-yolo"), 8);
  Rng rng(9);
  for (int i = 0; i < 3; ++i) net.forward(Tensor::uniform({2, 3, 64, 64}, 0, 1, rng));
  net.eval();
  NoGradGuard ng;
  const Tensor x = Tensor::uniform({2, 3, 64, 64}, 0, 1, rng);
  DecodeOptions opt;
  opt.conf_thresh = 0;
  opt.image_width = opt.image_height = 64;
  const auto before = decode_boxes(net.forward(x), net.config(), opt);
  net.fuse();
  CHECK(net.fused());
  const auto after = decode_boxes(net.forward(x), net.config(), opt);
  REQUIRE(before.size() == after.size());
  double worst = 0;
  for (size_t b = 0; b < before.size(); ++b) {
    REQUIRE(before[b].size() == after[b].size());
    for (size_t i = 0; i < before[b].size(); ++i) {
      const auto& p = before[b][i].box;
      const auto& q = after[b][i].box;
      worst = std::max({worst, std::abs(p.x1 - q.x1), std::abs(p.y1 - q.y1), std::abs(p.x2 - q.x2),
                        std::abs(p.y2 - q.y2)});
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("decode: zero logits at cell (0, 0)") {
  const auto cfg = tiny("cst-yolo");
  const auto raw = zero_raw(cfg, 1, 0.0, DType::f32);
  DecodeOptions opt;
  opt.conf_thresh = 0;
  opt.image_width = opt.image_height = 1000;
  const auto dets = decode_boxes(raw, cfg, opt);
  const Detection& d = dets[0].front();
  CHECK((d.box.x1 + d.box.x2) / 2 == doctest::Approx(4));
  CHECK((d.box.y1 + d.box.y2) / 2 == doctest::Approx(4));
  CHECK(d.box.width() == doctest::Approx(cfg.anchors[0][0]));
  CHECK(d.box.height() == doctest::Approx(cfg.anchors[0][1]));
  CHECK(d.confidence == doctest::Approx(0.25));
  CHECK(d.cls == 0);
}

TEST_CASE("decode: size saturates at four anchors") {
  const auto cfg = tiny("cst-yolo", 640);
  auto raw = zero_raw(cfg, 1, 0.0, DType::f32);
  for (int a = 0; a < 3; ++a)
    for (int64_t attr : {2, 3}) raw[0].set_flat(slot(cfg, raw[0], 0, a, attr, 40, 40), 40.0);
  DecodeOptions opt;
  opt.conf_thresh = 0;
  opt.image_width = opt.image_height = 640;
  const auto dets = decode_boxes(raw, cfg, opt);
  int seen = 0;
  for (const auto& d : dets[0]) {
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d.box.width() - 4 * cfg.anchors[0][2 * a]) < 1e-9 &&
          std::abs(d.box.height() - 4 * cfg.anchors[0][2 * a + 1]) < 1e-9) {
        ++seen;
      }
    }
  }
  CHECK(seen == 3);
}

TEST_CASE("decode: centres stay inside the cell band and boxes inside the image") {
  const auto cfg = tiny("cst-yolo");
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int active = trial % 3;
    std::vector<Tensor> raw;
    for (int s = 0; s < 3; ++s) {
      const int64_t g = cfg.input_size / cfg.strides[s];
      Tensor r = Tensor::normal({1, 24, g, g}, 0, 6, rng, DType::f64);
      if (s != active) {
        for (int a = 0; a < 3; ++a)
          for (int64_t y = 0; y < g; ++y)
            for (int64_t x = 0; x < g; ++x) r.set_flat(slot(cfg, r, 0, a, 4, y, x), -200.0);
      }
      raw.push_back(r);
    }
    const double stride = cfg.strides[active];
    const double grid = cfg.input_size / stride;
    DecodeOptions opt;
    opt.conf_thresh = 1e-30;
    opt.image_width = opt.image_height = 1e9;
    const auto wide = decode_boxes(raw, cfg, opt);
    for (const auto& d : wide[0]) {
      for (double c : {(d.box.x1 + d.box.x2) / 2, (d.box.y1 + d.box.y2) / 2}) {
        if (d.box.x1 == 0 || d.box.y1 == 0) continue;
        CHECK(c > -0.5 * stride);
        CHECK(c < (grid + 1.5) * stride);
      }
      CHECK(d.confidence >= 0);
      CHECK(d.confidence <= 1);
    }
    opt.image_width = opt.image_height = 64;
    const auto clipped = decode_boxes(raw, cfg, opt);
    for (const auto& d : clipped[0]) {
      CHECK(d.box.x1 >= 0);
      CHECK(d.box.y1 >= 0);
      CHECK(d.box.x2 <= 64);
      CHECK(d.box.y2 <= 64);
      CHECK(d.box.x2 > d.box.x1);
      CHECK(d.box.y2 > d.box.y1);
    }
  }
}

TEST_CASE("decode: centre offsets per cell lie in [-0.5, 1.5] strides") {
  const auto cfg = tiny("cst-yolo");
  for (double t : {-30.0, -2.0, 0.0, 2.0, 30.0}) {
    auto raw = zero_raw(cfg, 1, 0.0, DType::f64);
    for (int a = 0; a < 3; ++a)
      for (int64_t attr : {0, 1}) raw[0].set_flat(slot(cfg, raw[0], 0, a, attr, 3, 3), t);
    DecodeOptions opt;
    opt.conf_thresh = 0;
    opt.image_width = opt.image_height = 1e9;
    const auto dets = decode_boxes(raw, cfg, opt);
    // Scale 0, anchor 0, cell (3, 3) is the 28th box.
    REQUIRE(dets[0].size() > 27);
    const auto& d = dets[0][27];
    const double cx = (d.box.x1 + d.box.x2) / 2;
    CHECK(cx >= (3 - 0.5) * 8);
    CHECK(cx <= (3 + 1.5) * 8);
    CHECK(cx == doctest::Approx((2 / (1 + std::exp(-t)) - 0.5 + 3) * 8));
  }
}

TEST_CASE("nms: single box and identical boxes") {
  Detection a{{0, 0, 10, 10}, 1, 0.9, 0};
  CHECK(nms({a}, 0.5, 0.1).size() == 1);
  CHECK(nms({a}, 0.5, 0.95).empty());
  Detection b = a;
  b.confidence = 0.8;
  const auto kept = nms({b, a}, 0.5, 0.1);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].confidence == 0.9);
  b.confidence = 0.9;
  const auto tie = nms({a, b}, 0.5, 0.1);
  REQUIRE(tie.size() == 1);
  b.cls = 2;
  CHECK(nms({a, b}, 0.5, 0.1).size() == 2);
}

TEST_CASE("nms: matches the exhaustive fixed-point oracle on random scenes") {
  Rng rng(12);
  std::uniform_real_distribution<double> pos(0, 20), size(2, 12);
  std::uniform_int_distribution<int> count(0, 6), cls(0, 1), level(1, 4);
  for (int scene = 0; scene < 200; ++scene) {
    const int n = count(rng);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      const double x = pos(rng), y = pos(rng);
      dets.push_back({{x, y, x + size(rng), y + size(rng)}, cls(rng), level(rng) * 0.2, 0});
    }
    const double thr = 0.3;
    const double conf = 0.3;
    const auto kept = oracle::nms(dets, thr, conf);
    REQUIRE(kept.has_value());
    const auto got = nms(dets, thr, conf);
    REQUIRE(got.size() == kept->size());
    for (size_t k = 0; k < got.size(); ++k) {
      const auto& want = dets[(*kept)[k]];
      CHECK(got[k].box.x1 == want.box.x1);
      CHECK(got[k].confidence == want.confidence);
      CHECK(got[k].cls == want.cls);
    }
    for (size_t k = 1; k < got.size(); ++k) CHECK(got[k - 1].confidence >= got[k].confidence);
    for (size_t p = 0; p < got.size(); ++p)
      for (size_t q = p + 1; q < got.size(); ++q)
        if (got[p].cls == got[q].cls) CHECK(iou(got[p].box, got[q].box) < thr);
  }
}

TEST_CASE("nms: max_det caps the output") {
  std::vector<Detection> dets;
  for (int i = 0; i < 10; ++i) dets.push_back({{i * 20.0, 0, i * 20.0 + 10, 10}, 0, 0.1 * (i + 1), 0});
  const auto got = nms(dets, 0.5, 0, 4);
  REQUIRE(got.size() == 4);
  CHECK(got[0].confidence == doctest::Approx(1.0));
  CHECK(got[3].confidence == doctest::Approx(0.7));
}

TEST_CASE("ciou: hand-computed values") {
  CHECK(ciou_value(1, 1, 2, 2, 1, 1, 2, 2) == doctest::Approx(1).epsilon(1e-6));
  // IoU 1/3, enclosing diagonal^2 13, centre distance^2 1, equal aspect.
  CHECK(ciou_value(1, 1, 2, 2, 2, 1, 2, 2) == doctest::Approx(1.0 / 3 - 1.0 / 13).epsilon(1e-6));
  // Disjoint boxes go negative.
  CHECK(ciou_value(0, 0, 1, 1, 10, 0, 1, 1) < 0);
  // Aspect term: IoU 1/2 for 2x2 vs 2x1 sharing a centre; v = 4/pi^2 (atan 1 - atan 2)^2.
  const double v = 4 / (M_PI * M_PI) * std::pow(std::atan(1.0) - std::atan(2.0), 2);
  const double alpha = v / (1 - 0.5 + v);
  CHECK(ciou_value(0, 0, 2, 2, 0, 0, 1, 2) == doctest::Approx(0.5 - alpha * v).epsilon(1e-6));
}

TEST_CASE("ciou: tensor form matches the scalar reference") {
  Rng rng(13);
  std::uniform_real_distribution<double> c(0, 10), s(0.5, 5);
  const int n = 40;
  std::vector<std::vector<double>> cols(8, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 8; ++k) cols[k][i] = k % 4 < 2 ? c(rng) : s(rng);
  std::vector<Tensor> t;
  for (auto& col : cols) t.push_back(Tensor::from_values({1, 1, 1, n}, col, DType::f64));
  const Tensor got = ciou(t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7]);
  for (int i = 0; i < n; ++i) {
    CHECK(got.flat(i) == doctest::Approx(ciou_value(cols[0][i], cols[1][i], cols[2][i], cols[3][i],
                                                    cols[4][i], cols[5][i], cols[6][i], cols[7][i]))
                             .epsilon(1e-9));
  }
}

TEST_CASE("loss: anchor matching takes the ratio threshold and neighbour cells") {
  const auto cfg = tiny("cst-yolo");
  const auto raw = zero_raw(cfg, 1, 0.0, DType::f32);
  // Centre at (2.3, 2.3) cells of stride 8: own cell plus left and top neighbours.
  const double anchor_w = cfg.anchors[0][0], anchor_h = cfg.anchors[0][1];
  TargetBox t{0, 1, 2.3 * 8 / 64, 2.3 * 8 / 64, anchor_w / 64, anchor_h / 64};
  const auto as = build_targets(raw, {t}, cfg);
  std::vector<std::pair<int64_t, int64_t>> cells;
  for (const auto& a : as[0])
    if (a.anchor == 0) cells.emplace_back(a.gx, a.gy);
  std::sort(cells.begin(), cells.end());
  const std::vector<std::pair<int64_t, int64_t>> want{{1, 2}, {2, 1}, {2, 2}};
  CHECK(cells == want);
  for (const auto& a : as[0]) {
    CHECK(a.tx > -0.5);
    CHECK(a.tx < 1.5);
    const double r = std::max({a.tw / a.aw, a.aw / a.tw, a.th / a.ah, a.ah / a.th});
    CHECK(r < cfg.loss.anchor_t);
  }
  // A box far larger than every stride-8 anchor matches none of them.
  TargetBox big{0, 0, 0.5, 0.5, 0.9, 0.9};
  CHECK(build_targets(raw, {big}, cfg)[0].empty());
}

TEST_CASE("loss: non-negative on random predictions") {
  const auto cfg = tiny("cst-yolo");
  Rng rng(14);
  std::uniform_real_distribution<double> u(0.05, 0.95), wh(0.02, 0.4);
  std::uniform_int_distribution<int> cls(0, 2), img(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> raw;
    for (int s = 0; s < 3; ++s) {
      const int64_t g = 64 / cfg.strides[s];
      raw.push_back(Tensor::normal({2, 24, g, g}, 0, 3, rng));
    }
    std::vector<TargetBox> ts;
    for (int k = 0; k < trial % 6; ++k) ts.push_back({img(rng), cls(rng), u(rng), u(rng), wh(rng), wh(rng)});
    const auto parts = compute_loss(raw, ts, cfg);
    CHECK(parts.total.item() >= 0);
    CHECK(parts.box >= 0);
    CHECK(parts.obj >= 0);
    CHECK(parts.cls >= 0);
  }
}

TEST_CASE("loss: saturated exact predictions give near-zero loss") {
  const auto cfg = tiny("cst-yolo");
  auto raw = zero_raw(cfg, 1, -20.0, DType::f64);
  const TargetBox t{0, 2, 0.3, 0.45, 0.25, 0.2};
  const auto as = build_targets(raw, {t}, cfg);
  int assigned = 0;
  for (int s = 0; s < 3; ++s) {
    for (const auto& a : as[s]) {
      ++assigned;
      auto set = [&](int64_t attr, double v) {
        raw[s].set_flat(slot(cfg, raw[s], a.image, a.anchor, attr, a.gy, a.gx), v);
      };
      set(0, logit((a.tx + 0.5) / 2));
      set(1, logit((a.ty + 0.5) / 2));
      set(2, logit(std::sqrt(a.tw / a.aw) / 2));
      set(3, logit(std::sqrt(a.th / a.ah) / 2));
      set(4, 20.0);
      set(5 + a.cls, 20.0);
    }
  }
  REQUIRE(assigned > 0);
  const auto parts = compute_loss(raw, {t}, cfg);
  CHECK(parts.box < 1e-5);
  CHECK(parts.total.item() < 1e-3);
}

TEST_CASE("loss: empty targets leave objectness only") {
  const auto cfg = tiny("cst-yolo");
  Rng rng(15);
  std::vector<Tensor> raw;
  for (int s = 0; s < 3; ++s) {
    const int64_t g = 64 / cfg.strides[s];
    raw.push_back(Tensor::normal({2, 24, g, g}, 0, 1, rng).set_requires_grad(true));
  }
  const auto parts = compute_loss(raw, {}, cfg);
  CHECK(parts.box == 0);
  CHECK(parts.cls == 0);
  CHECK(parts.obj > 0);
  parts.total.backward();
  // Only objectness logits receive gradient.
  for (int s = 0; s < 3; ++s) {
    const auto g = raw[s].grad().to_vector();
    const Shape& sh = raw[s].shape();
    for (int64_t i = 0; i < sh.numel(); ++i) {
      const int64_t attr = (i / (sh[2] * sh[3])) % 8;
      if (attr != 4) CHECK(g[i] == 0.0);
    }
  }
}

TEST_CASE("loss: single class skips the class term") {
  auto cfg = builtin_config("cst-yolo", 1, 0.125, 64);
  Rng rng(16);
  std::vector<Tensor> raw;
  for (int s = 0; s < 3; ++s) {
    const int64_t g = 64 / cfg.strides[s];
    raw.push_back(Tensor::normal({1, 18, g, g}, 0, 1, rng));
  }
  const auto parts = compute_loss(raw, {{0, 0, 0.5, 0.5, 0.2, 0.2}}, cfg);
  CHECK(parts.cls == 0);
  CHECK(parts.box > 0);
}

TEST_CASE("loss: gradient check on a two-target toy batch") {
  const auto cfg = tiny("cst-yolo");
  Rng rng(17);
  std::vector<Tensor> raw;
  for (int s = 0; s < 3; ++s) {
    const int64_t g = 64 / cfg.strides[s];
    raw.push_back(Tensor::normal({2, 24, g, g}, 0, 1, rng, DType::f64).set_requires_grad(true));
  }
  const std::vector<TargetBox> ts{{0, 1, 0.3, 0.6, 0.2, 0.15}, {1, 2, 0.7, 0.25, 0.08, 0.1}};
  const auto as = build_targets(raw, ts, cfg);
  const auto obj = objectness_targets(raw, as);
  GradCheckOptions opt;
  opt.max_probes_per_tensor = 0;
  const auto r = check_gradients(
      "compute_loss", [&] { return loss_from_targets(raw, as, obj, cfg).total; }, raw, opt);
  MESSAGE("loss max rel error ", r.max_rel_error, " over ", r.probes, " probes");
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("loss: a step against the gradient lowers the loss") {
  const auto cfg = tiny("cst-yolo");
  Rng rng(18);
  std::vector<Tensor> raw;
  for (int s = 0; s < 3; ++s) {
    const int64_t g = 64 / cfg.strides[s];
    raw.push_back(Tensor::normal({1, 24, g, g}, 0, 1, rng, DType::f64).set_requires_grad(true));
  }
  const std::vector<TargetBox> ts{{0, 0, 0.4, 0.4, 0.3, 0.2}};
  const double before = compute_loss(raw, ts, cfg).total.item();
  compute_loss(raw, ts, cfg).total.backward();
  for (auto& r : raw) {
    auto v = r.mutable_data<double>();
    const auto g = r.grad_data<double>();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= 0.1 * g[i];
  }
  CHECK(compute_loss(raw, ts, cfg).total.item() < before);
}
