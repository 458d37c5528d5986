#include "cstyolo/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cstyolo/checkpoint.hpp"
#include "cstyolo/grad_suite.hpp"
#include "json.hpp"

namespace cstyolo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + p.string());
  out << text;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct Dataset {
  std::vector<data::DatasetRecord> records;
  std::vector<std::string> stems;
  std::string name;
  std::string split;
};

Dataset load_dataset(const fs::path& root, const std::string& manifest, const std::string& split) {
  const auto m = data::read_manifest(resolve(root, manifest));
  std::string use = split;
  if (use.empty()) use = m.has_split("test") ? "test" : "val";
  if (!m.has_split(use)) throw ConfigError("manifest has no split '" + use + "'");
  Dataset d;
  d.records = data::load_split(root, m, use);
  for (const auto& r : d.records) d.stems.push_back(r.stem);
  d.name = m.dataset;
  d.split = use;
  return d;
}

// ---- subcommands ----

int cmd_synth(uint64_t seed, int n, int size, const fs::path& out_dir, std::ostream& out) {
  data::SynthOptions so;
  so.seed = seed;
  so.n_images = n;
  so.image_size = size;
  const auto s = data::synth_blobs(out_dir, so);
  out << "wrote " << n << " images to " << out_dir.string() << "\n";
  for (const auto& [name, count] : s.objects_per_class) out << "  " << name << ": " << count << "\n";
  for (const auto& [split, stems] : s.manifest.splits) {
    out << "  split " << split << ": " << stems.size() << "\n";
  }
  return 0;
}

int cmd_train(const fs::path& config_path, const std::string& arch, const fs::path& data_override,
              const fs::path& out_override, int epochs_override, std::ostream& out) {
  RunConfig rc = read_run_config(config_path);
  if (!arch.empty()) {
    rc.network = builtin_config(arch, rc.network.num_classes, rc.network.width, rc.network.input_size);
  }
  if (!data_override.empty()) rc.data_root = data_override;
  if (!out_override.empty()) rc.output_dir = out_override;
  if (epochs_override > 0) rc.train.epochs = epochs_override;
  if (rc.data_root.empty()) throw ConfigError("no data root given (config data.root or --data)");
  if (rc.classes.empty()) rc.classes = default_classes(rc.network.num_classes);
  if (static_cast<int>(rc.classes.size()) != rc.network.num_classes) {
    throw ConfigError("data.classes has " + std::to_string(rc.classes.size()) +
                      " names but the network has " + std::to_string(rc.network.num_classes) +
                      " classes");
  }
  const Dataset tr = load_dataset(rc.data_root, rc.manifest, rc.train_split);
  const Dataset va = load_dataset(rc.data_root, rc.manifest, rc.val_split);
  if (rc.train.batch > static_cast<int>(tr.records.size())) {
    throw ConfigError("batch " + std::to_string(rc.train.batch) + " exceeds the training set size " +
                      std::to_string(tr.records.size()));
  }
  fs::create_directories(rc.output_dir);
  Detector net(rc.network, rc.train.seed);
  out << rc.network.name << ": " << net.num_parameters() << " parameters, " << tr.records.size()
      << " train / " << va.records.size() << " val images\n";
  std::ofstream log(rc.output_dir / "metrics.csv", std::ios::trunc);
  log << epoch_log_header() << "\n";
  out << epoch_log_header() << "\n";
  train(net, tr.records, va.records, rc.classes, rc.train, [&](const EpochLog& e) {
    const std::string line = epoch_log_line(e);
    log << line << "\n";
    log.flush();
    out << line << "\n";
    out.flush();
  });
  save_checkpoint(rc.output_dir / "model.ckpt", net);
  write_text(rc.output_dir / "config.json", network_config_to_json(rc.network));
  const auto r = evaluate_model(net, va.records, rc.classes);
  out << render_eval(r, rc.network.name + " on " + va.name + "/" + va.split);
  out << "checkpoint: " << (rc.output_dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval_model(const fs::path& ckpt, const fs::path& data_root, const std::string& manifest,
                   const std::string& split, bool csv, std::ostream& out) {
  auto net = load_detector(ckpt);
  const Dataset d = load_dataset(data_root, manifest, split);
  const auto classes = default_classes(net->config().num_classes);
  const auto r = evaluate_model(*net, d.records, classes);
  out << (csv ? render_eval_csv(r) : render_eval(r, net->config().name + " on " + d.name + "/" + d.split));
  return 0;
}

int cmd_eval_detections(const fs::path& dets_path, const fs::path& data_root,
                        const std::string& manifest, const std::string& split, int num_classes,
                        bool csv, std::ostream& out) {
  const Dataset d = load_dataset(data_root, manifest, split);
  const auto classes = default_classes(num_classes);
  const auto dets = detections_from_csv(read_text(dets_path), d.stems, classes, dets_path.string());
  std::vector<GroundTruth> gts;
  for (size_t i = 0; i < d.records.size(); ++i) {
    data::Annotation a = d.records[i].annotation;
    a.width = d.records[i].image.width;
    a.height = d.records[i].image.height;
    const auto g = data::to_ground_truth(a, classes, static_cast<int>(i));
    gts.insert(gts.end(), g.begin(), g.end());
  }
  const auto r = evaluate(dets, gts, classes);
  out << (csv ? render_eval_csv(r) : render_eval(r, dets_path.filename().string() + " on " + d.name + "/" + d.split));
  return 0;
}

int cmd_eval_published(const fs::path& table_path, const fs::path& claims_path,
                       const std::string& model, const std::string& baseline, bool csv,
                       std::ostream& out) {
  const Table t = read_table_csv(table_path.string());
  if (csv) {
    out << render_table_csv(t);
    return 0;
  }
  out << render_table(t) << "\n";
  std::vector<Claim> claims;
  if (!claims_path.empty()) claims = read_claims_csv(claims_path.string());
  out << render_deltas(compute_deltas(t, model, baseline), claims, model, baseline);
  return 0;
}

int cmd_predict(const fs::path& ckpt, const fs::path& image, double conf, double iou,
                std::ostream& out) {
  auto net = load_detector(ckpt);
  data::DatasetRecord rec;
  rec.stem = image.stem().string();
  rec.image_path = image;
  rec.image = data::read_image(image);
  EvalOptions opt;
  opt.conf_thresh = conf;
  opt.iou_thresh = iou;
  opt.batch = 1;
  const auto dets = predict(*net, {rec}, opt);
  out << detections_to_csv({rec.stem}, dets, default_classes(net->config().num_classes));
  return 0;
}

int cmd_fuse(const fs::path& ckpt, const fs::path& out_path, std::ostream& out) {
  auto net = load_detector(ckpt);
  if (net->fused()) {
    out << ckpt.string() << " is already fused\n";
  } else {
    net->eval();
    net->fuse();
  }
  fs::path dest = out_path;
  if (dest.empty()) dest = ckpt.parent_path() / (ckpt.stem().string() + ".fused" + ckpt.extension().string());
  save_checkpoint(dest, *net);
  out << "fused checkpoint: " << dest.string() << " (" << net->num_parameters() << " parameters)\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, std::ostream& out) {
  const GradSuiteEntry* worst = nullptr;
  const auto entries = run_gradient_suite(seed, [&](const GradSuiteEntry& e) {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s max rel err %.3e  (tol %.0e, %lld probes)  %s\n",
                  e.result.name.c_str(), e.result.max_rel_error, e.tolerance,
                  static_cast<long long>(e.result.probes), e.passed() ? "ok" : "FAIL");
    out << line;
    out.flush();
  });
  int failed = 0;
  for (const auto& e : entries) {
    if (e.passed()) continue;
    ++failed;
    if (!worst || e.result.max_rel_error / e.tolerance > worst->result.max_rel_error / worst->tolerance) {
      worst = &e;
    }
  }
  if (failed == 0) {
    out << "gradcheck: all " << entries.size() << " checks passed\n";
    return 0;
  }
  out << "gradcheck: " << failed << " of " << entries.size() << " checks failed; worst offender "
      << worst->result.name << " (max rel err " << fmt("%.3e", worst->result.max_rel_error) << ")\n";
  return 1;
}

}  // namespace

std::vector<std::string> default_classes(int num_classes) {
  if (num_classes == 3) return data::blood_cell_classes();
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir,
                           const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(source + ": top level must be an object");
  RunConfig rc;
  try {
    if (j.contains("network")) {
      rc.network = network_config_from_json(j["network"].dump(), source);
    } else {
      rc.network = builtin_config("cst-yolo");
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      TrainConfig& tc = rc.train;
      tc.lr0 = t.value("lr0", tc.lr0);
      tc.lr_min_fraction = t.value("lr_min_fraction", tc.lr_min_fraction);
      tc.momentum = t.value("momentum", tc.momentum);
      tc.weight_decay = t.value("weight_decay", tc.weight_decay);
      tc.batch = t.value("batch", tc.batch);
      tc.epochs = t.value("epochs", tc.epochs);
      tc.warmup_steps = t.value("warmup_steps", tc.warmup_steps);
      tc.seed = t.value("seed", tc.seed);
      if (t.contains("schedule") && t["schedule"] != "cosine") {
        throw ConfigError(source + ": only the cosine schedule is supported");
      }
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      if (d.contains("root")) rc.data_root = resolve(base_dir, d["root"].get<std::string>());
      rc.manifest = d.value("manifest", rc.manifest);
      rc.train_split = d.value("train_split", rc.train_split);
      rc.val_split = d.value("val_split", rc.val_split);
      if (d.contains("classes")) rc.classes = d["classes"].get<std::vector<std::string>>();
    }
    if (j.contains("output") && j["output"].contains("dir")) {
      rc.output_dir = resolve(base_dir, j["output"]["dir"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  rc.train.validate();
  return rc;
}

RunConfig read_run_config(const fs::path& path) {
  return parse_run_config(read_text(path), path.parent_path(), path.string());
}

std::string detections_to_csv(const std::vector<std::string>& stems,
                              const std::vector<std::vector<Detection>>& dets,
                              const std::vector<std::string>& classes) {
  std::ostringstream os;
  os << "image,class,x1,y1,x2,y2,confidence\n";
  char buf[256];
  for (size_t i = 0; i < dets.size(); ++i) {
    for (const auto& d : dets[i]) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.2f,%.2f,%.2f,%.2f,%.6f\n", stems.at(i).c_str(),
                    classes.at(d.cls).c_str(), d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.confidence);
      os << buf;
    }
  }
  return os.str();
}

std::vector<Detection> detections_from_csv(const std::string& text,
                                           const std::vector<std::string>& stems,
                                           const std::vector<std::string>& classes,
                                           const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::vector<Detection> out;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (line_no == 1 && !f.empty() && f[0] == "image") continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (f.size() != 7) throw ParseError(where + ": expected 7 fields");
    const auto s = std::find(stems.begin(), stems.end(), f[0]);
    if (s == stems.end()) throw ParseError(where + ": unknown image '" + f[0] + "'");
    const auto c = std::find(classes.begin(), classes.end(), f[1]);
    if (c == classes.end()) throw ParseError(where + ": unknown class '" + f[1] + "'");
    Detection d;
    try {
      d.box = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
      d.confidence = std::stod(f[6]);
    } catch (const std::exception&) {
      throw ParseError(where + ": bad number");
    }
    if (!(d.box.x2 > d.box.x1 && d.box.y2 > d.box.y1)) throw ParseError(where + ": empty box");
    if (!(d.confidence >= 0 && d.confidence <= 1)) throw ParseError(where + ": confidence outside [0, 1]");
    d.image = static_cast<int>(s - stems.begin());
    d.cls = static_cast<int>(c - classes.begin());
    out.push_back(d);
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cstyolo: blood cell detector training, evaluation and tooling"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Write a synthetic blob dataset");
  uint64_t synth_seed = 7;
  int synth_n = 200, synth_size = 256;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--n", synth_n, "Number of images")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a network from a JSON run config");
  std::string tr_config, tr_arch, tr_data, tr_out;
  int tr_epochs = 0;
  tr->add_option("--config", tr_config, "Run config JSON")->required();
  tr->add_option("--arch", tr_arch,
                 "cst-yolo | yolov7-baseline | ablation:<w/o-cst|w/o-welan|w/o-mcs|w/-maxpool>");
  tr->add_option("--data", tr_data, "Dataset root (overrides data.root)");
  tr->add_option("--out", tr_out, "Output directory (overrides output.dir)");
  tr->add_option("--epochs", tr_epochs, "Epoch count (overrides train.epochs)")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Per-class AP and mAP@0.5 report");
  std::string ev_ckpt, ev_data, ev_manifest = "manifest.txt", ev_split, ev_published, ev_claims,
                       ev_dets, ev_model = "CST-YOLO", ev_baseline = "YOLOv7";
  int ev_classes = 3;
  bool ev_csv = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to evaluate");
  ev->add_option("--data", ev_data, "Dataset root");
  ev->add_option("--manifest", ev_manifest, "Manifest path relative to the dataset root")->capture_default_str();
  ev->add_option("--split", ev_split, "Split name (default: test, else val)");
  ev->add_option("--detections", ev_dets, "Detection CSV to score instead of a checkpoint");
  ev->add_option("--classes", ev_classes, "Class count for --detections")->capture_default_str();
  ev->add_option("--published", ev_published, "Published AP table CSV to re-aggregate");
  ev->add_option("--claims", ev_claims, "Stated improvements CSV for --published");
  ev->add_option("--model", ev_model, "Model row for deltas")->capture_default_str();
  ev->add_option("--baseline", ev_baseline, "Baseline row for deltas")->capture_default_str();
  ev->add_flag("--csv", ev_csv, "CSV output");

  auto* pr = app.add_subcommand("predict", "Detections for one image as CSV");
  std::string pr_ckpt, pr_image;
  double pr_conf = 0.25, pr_iou = 0.45;
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint")->required();
  pr->add_option("--image", pr_image, "PNG or BMP image")->required();
  pr->add_option("--conf", pr_conf, "Confidence threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  pr->add_option("--iou", pr_iou, "NMS IoU threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

  auto* fu = app.add_subcommand("fuse", "Reparameterize RepConv blocks of a checkpoint");
  std::string fu_ckpt, fu_out;
  fu->add_option("--checkpoint", fu_ckpt, "Checkpoint")->required();
  fu->add_option("--out", fu_out, "Output path (default: <name>.fused.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(synth_seed, synth_n, synth_size, synth_out, out);
    if (*tr) return cmd_train(tr_config, tr_arch, tr_data, tr_out, tr_epochs, out);
    if (*ev) {
      if (!ev_published.empty()) {
        return cmd_eval_published(ev_published, ev_claims, ev_model, ev_baseline, ev_csv, out);
      }
      if (ev_data.empty()) throw ConfigError("eval needs --data, or --published");
      if (!ev_dets.empty()) {
        return cmd_eval_detections(ev_dets, ev_data, ev_manifest, ev_split, ev_classes, ev_csv, out);
      }
      if (ev_ckpt.empty()) throw ConfigError("eval needs --checkpoint or --detections");
      return cmd_eval_model(ev_ckpt, ev_data, ev_manifest, ev_split, ev_csv, out);
    }
    if (*pr) return cmd_predict(pr_ckpt, pr_image, pr_conf, pr_iou, out);
    if (*gc) return cmd_gradcheck(gc_seed, out);
    if (*fu) return cmd_fuse(fu_ckpt, fu_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace cstyolo::cli
