#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cstyolo/train.hpp"

namespace cstyolo::cli {

/// Training run description read from JSON:
///
///   {
///     "network": { "arch": "cst-yolo", "num_classes": 3, "width": 0.25, "input_size": 256 },
///     "train":   { "lr0": 0.001, "lr_min_fraction": 0.01, "momentum": 0.937,
///                  "weight_decay": 0.0005, "batch": 20, "epochs": 150,
///                  "warmup_steps": 0, "seed": 0 },
///     "data":    { "root": "DIR", "manifest": "manifest.txt", "train_split": "train",
///                  "val_split": "val", "classes": ["WBC", "RBC", "Platelets"] },
///     "output":  { "dir": "runs/cst-yolo" }
///   }
///
/// "network" accepts everything `network_config_from_json` does. Relative
/// paths resolve against the config file's directory. Every section and field
/// is optional.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  std::filesystem::path data_root;
  std::string manifest = "manifest.txt";
  std::string train_split = "train";
  std::string val_split = "val";
  std::vector<std::string> classes;
  std::filesystem::path output_dir = "runs/cst-yolo";
};

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {},
                           const std::string& source = "<json>");
RunConfig read_run_config(const std::filesystem::path& path);

/// `image,class,x1,y1,x2,y2,confidence` with a header line; image is the record stem.
std::string detections_to_csv(const std::vector<std::string>& stems,
                              const std::vector<std::vector<Detection>>& dets,
                              const std::vector<std::string>& classes);
/// Detections grouped by stem order; rows naming unknown stems or classes throw ParseError.
std::vector<Detection> detections_from_csv(const std::string& text,
                                           const std::vector<std::string>& stems,
                                           const std::vector<std::string>& classes,
                                           const std::string& source = "<csv>");

/// Class names for a network: the blood-cell names for three classes,
/// otherwise class0, class1, ...
std::vector<std::string> default_classes(int num_classes);

/// Exit codes: 0 success, 1 verification or runtime failure, 2 usage or config error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cstyolo::cli
