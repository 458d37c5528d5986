#pragma once

#include <map>
#include <string>
#include <vector>

namespace cstyolo {

/// Axis-aligned box in pixel corners.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

/// Throws ContractError for zero-area or inverted boxes.
double iou(const Box& a, const Box& b);

struct Detection {
  Box box;
  int cls = 0;
  double confidence = 0;
  int image = 0;
};

struct GroundTruth {
  Box box;
  int cls = 0;
  int image = 0;
};

struct MatchResult {
  /// One flag per input detection, in input order.
  std::vector<bool> tp;
  int false_negatives = 0;
};

/// VOC greedy matching: per image and class, detections in descending
/// confidence (ties by input index) take the unmatched ground truth of highest
/// IoU (ties by ground-truth index) when that IoU reaches `iou_thresh`.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                             double iou_thresh = 0.5);

enum class ApMethod { all_point, eleven_point };

struct ApResult {
  double ap = 0;
  /// Set when there were neither ground truths nor detections.
  bool undefined = false;
};

/// Area under the precision envelope for flags ordered by descending confidence.
ApResult average_precision(const std::vector<bool>& flags, int total_gt,
                           ApMethod method = ApMethod::all_point);

/// Unweighted mean of per-class APs; throws ContractError when empty.
double map_at_50(const std::map<std::string, double>& per_class);

struct ClassEval {
  std::string name;
  double ap = 0;
  bool undefined = false;
  int tp = 0, fp = 0, fn = 0, gt = 0;
};

struct EvalResult {
  std::vector<ClassEval> classes;
  double map50 = 0;
};

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    const std::vector<std::string>& class_names, double iou_thresh = 0.5,
                    ApMethod method = ApMethod::all_point);

// ---- reports ----

struct TableRow {
  std::string group;
  std::string dataset;
  std::string model;
  std::vector<double> ap;  // per class, in column order
  double overall = 0;      // as published; NaN when not given
};

struct Table {
  std::vector<std::string> columns;  // class names
  std::vector<TableRow> rows;
};

/// Reads `group,dataset,model,<class...>,Overall` CSV.
Table read_table_csv(const std::string& path);

/// Stated improvement (percent) of a model over a baseline, per dataset.
struct Claim {
  std::string dataset;
  double stated = 0;
};
std::vector<Claim> read_claims_csv(const std::string& path);

/// Delta of the mean-AP Overall of `model` against `baseline` on one dataset.
struct Delta {
  std::string dataset;
  double model_overall = 0;
  double baseline_overall = 0;
  double absolute = 0;  // model - baseline
  double relative = 0;  // absolute / baseline
};

/// Per dataset, recomputes both Overalls as the mean of the class APs and
/// returns the difference.
std::vector<Delta> compute_deltas(const Table& t, const std::string& model,
                                  const std::string& baseline);

/// Fixed-width text table (columns, Overall recomputed, published Overall).
std::string render_table(const Table& t);
/// CSV with recomputed Overall appended.
std::string render_table_csv(const Table& t);
/// Delta lines plus a footnote for every claim that disagrees with the
/// absolute difference in points at one decimal.
std::string render_deltas(const std::vector<Delta>& deltas, const std::vector<Claim>& claims,
                          const std::string& model, const std::string& baseline);

/// Text table of one evaluation.
std::string render_eval(const EvalResult& r, const std::string& title);
std::string render_eval_csv(const EvalResult& r);

}  // namespace cstyolo
