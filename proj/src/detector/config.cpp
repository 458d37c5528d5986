#include <cmath>

#include "cstyolo/detector.hpp"
#include "cstyolo/errors.hpp"
#include "json.hpp"

namespace cstyolo {

using nlohmann::json;

namespace {

struct Builder {
  std::vector<LayerSpec> layers;
  int at(const std::string& type, std::vector<int> from, std::vector<double> args = {}) {
    layers.push_back({std::move(from), type, std::move(args)});
    return static_cast<int>(layers.size()) - 1;
  }
  int add(const std::string& type, std::vector<double> args = {}) {
    return at(type, {-1}, std::move(args));
  }
};

struct Options {
  bool cst = true;
  bool welan = true;
  bool mcs = true;
  bool strided_down = true;
};

std::vector<LayerSpec> layout(const Options& o) {
  Builder b;
  auto elan = [&](double hidden, double c2) {
    return o.welan ? b.add("welan", {hidden, c2, 1}) : b.add("elan", {hidden, c2});
  };
  auto elan_h = [&](double hidden, double c2) {
    return o.welan ? b.add("welan_h", {hidden, c2, 2}) : b.add("elan_h", {hidden, c2});
  };
  auto down = [&](double hidden) { return b.add(o.strided_down ? "cbsconcat" : "mp", {hidden}); };
  auto neck_down = [&](double hidden) { return b.add(o.strided_down ? "catconv" : "mp", {hidden}); };

  b.add("cbs", {32, 3, 1});
  b.add("cbs", {64, 3, 2});
  b.add("cbs", {64, 3, 1});
  b.add("cbs", {128, 3, 2});
  elan(64, 256);
  down(128);
  const int p3 = elan(128, 512);
  down(256);
  const int p4 = elan(256, 1024);
  down(512);
  if (o.cst) b.add("cst", {1024, 4, 4});
  else if (o.welan) b.add("welan", {256, 1024, 1});
  else b.add("elan", {256, 1024});
  const int spp = b.add("sppcspc", {512});

  b.add("cbs", {256, 1, 1});
  const int up4 = b.add("upsample");
  const int lat4 = b.at("cbs", {p4}, {256, 1, 1});
  b.at("concat", {lat4, up4});
  const int n4 = elan_h(256, 256);
  b.add("cbs", {128, 1, 1});
  const int up3 = b.add("upsample");
  const int src3 = o.mcs ? b.at("mcs", {p3}, {256}) : p3;
  const int lat3 = b.at("cbs", {src3}, {128, 1, 1});
  b.at("concat", {lat3, up3});
  const int out3 = elan_h(128, 128);
  const int d3 = neck_down(128);
  b.at("concat", {d3, n4});
  const int out4 = elan_h(256, 256);
  const int d4 = neck_down(256);
  b.at("concat", {d4, spp});
  const int out5 = elan_h(512, 512);

  const int r3 = b.at("repconv", {out3}, {256});
  const int r4 = b.at("repconv", {out4}, {512});
  const int r5 = b.at("repconv", {out5}, {1024});
  b.at("detect", {r3, r4, r5});
  return b.layers;
}

// Rows are P3, P4, P5; (w, h) pairs at 640 input.
constexpr std::array<std::array<double, 6>, 3> kCocoAnchors{{
    {12, 16, 19, 36, 40, 28},
    {36, 75, 76, 55, 72, 146},
    {142, 110, 192, 243, 459, 401},
}};

json layer_to_json(const LayerSpec& l) {
  json j;
  j["from"] = l.from.size() == 1 ? json(l.from[0]) : json(l.from);
  j["type"] = l.type;
  j["args"] = l.args;
  return j;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names{
      "cst-yolo",          "yolov7-baseline",    "ablation:w/o-cst",
      "ablation:w/o-welan", "ablation:w/o-mcs", "ablation:w/-maxpool"};
  return names;
}

std::array<std::array<double, 6>, 3> default_anchors(int input_size) {
  auto a = kCocoAnchors;
  for (auto& row : a)
    for (double& v : row) v *= input_size / 640.0;
  return a;
}

int64_t scale_width(double channels, double width) {
  return static_cast<int64_t>(std::ceil(channels * width / 8.0)) * 8;
}

NetworkConfig builtin_config(const std::string& arch, int num_classes, double width,
                             int input_size) {
  Options o;
  if (arch == "cst-yolo") {
  } else if (arch == "yolov7-baseline") {
    o = {false, false, false, false};
  } else if (arch == "ablation:w/o-cst") {
    o.cst = false;
  } else if (arch == "ablation:w/o-welan") {
    o.welan = false;
  } else if (arch == "ablation:w/o-mcs") {
    o.mcs = false;
  } else if (arch == "ablation:w/-maxpool") {
    o.strided_down = false;
  } else {
    throw ConfigError("unknown architecture '" + arch + "'");
  }
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (!(width > 0)) throw ConfigError("width must be positive");
  if (input_size <= 0 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32");
  }
  NetworkConfig cfg;
  cfg.name = arch;
  cfg.num_classes = num_classes;
  cfg.width = width;
  cfg.input_size = input_size;
  cfg.anchors = default_anchors(input_size);
  cfg.layers = layout(o);
  return cfg;
}

std::string network_config_to_json(const NetworkConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["num_classes"] = cfg.num_classes;
  j["width"] = cfg.width;
  j["input_size"] = cfg.input_size;
  j["anchors"] = cfg.anchors;
  j["strides"] = cfg.strides;
  j["loss"] = {{"box_gain", cfg.loss.box_gain},
               {"obj_gain", cfg.loss.obj_gain},
               {"cls_gain", cfg.loss.cls_gain},
               {"anchor_t", cfg.loss.anchor_t},
               {"balance", cfg.loss.balance}};
  json layers = json::array();
  for (const auto& l : cfg.layers) layers.push_back(layer_to_json(l));
  j["layers"] = layers;
  return j.dump(1);
}

NetworkConfig network_config_from_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
  try {
    NetworkConfig cfg;
    const int nc = get_or(j, "num_classes", 3);
    const double width = get_or(j, "width", 0.25);
    const int input = get_or(j, "input_size", 256);
    if (j.contains("layers")) {
      cfg = builtin_config("cst-yolo", nc, width, input);
      cfg.name = get_or<std::string>(j, "name", "custom");
      cfg.layers.clear();
      for (const auto& l : j.at("layers")) {
        LayerSpec s;
        const json& f = l.at("from");
        s.from = f.is_array() ? f.get<std::vector<int>>() : std::vector<int>{f.get<int>()};
        s.type = l.at("type").get<std::string>();
        s.args = get_or(l, "args", std::vector<double>{});
        cfg.layers.push_back(s);
      }
    } else {
      cfg = builtin_config(get_or<std::string>(j, "arch", "cst-yolo"), nc, width, input);
    }
    if (j.contains("anchors")) cfg.anchors = j.at("anchors").get<decltype(cfg.anchors)>();
    if (j.contains("strides")) cfg.strides = j.at("strides").get<std::array<int, 3>>();
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      cfg.loss.box_gain = get_or(l, "box_gain", cfg.loss.box_gain);
      cfg.loss.obj_gain = get_or(l, "obj_gain", cfg.loss.obj_gain);
      cfg.loss.cls_gain = get_or(l, "cls_gain", cfg.loss.cls_gain);
      cfg.loss.anchor_t = get_or(l, "anchor_t", cfg.loss.anchor_t);
      cfg.loss.balance = get_or(l, "balance", cfg.loss.balance);
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

}  // namespace cstyolo
