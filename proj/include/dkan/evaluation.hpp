#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dkan/dataset.hpp"

namespace dkan {

struct Detection {
  std::string image_id;
  CategoryId category;
  BoundingBox box;
  double confidence = 0.0;
};

/// Intersection over union; 0 when either box is degenerate.
double iou(const BoundingBox& a, const BoundingBox& b);

using GroundTruthIndex = std::map<std::string, std::vector<BoundingBox>>;

struct ApResult {
  double ap = 0.0;
  std::vector<double> recall;     // one point per ranked detection
  std::vector<double> precision;
  std::size_t num_ground_truth = 0;
};

/// AP at IoU 0.5 for one category, all-points interpolated.
///
/// Detections are ranked by confidence (ties: image id, then box corners) and
/// matched greedily: each one claims the highest-IoU still-unclaimed ground
/// truth in its image when that IoU is at least `iou_threshold`, otherwise it
/// is a false positive. With no ground truth the AP is 0.
ApResult average_precision(std::vector<Detection> detections, const GroundTruthIndex& ground_truth,
                           double iou_threshold = 0.5);
double average_precision_50(std::vector<Detection> detections, const GroundTruthIndex& ground_truth);

struct ConfusionMatrix {
  std::vector<std::string> labels;  // categories in index order, then "BG"
  std::vector<std::vector<double>> counts;
  std::vector<std::vector<double>> ratios;  // row-normalized counts
};

struct CategoryAp {
  std::string category;
  double ap = 0.0;
};

struct EvalReport {
  std::string tag;
  std::vector<std::string> base_categories;
  std::vector<std::string> novel_categories;
  std::vector<CategoryAp> per_category_ap;  // base categories first, then novel
  double ap_base = 0.0;
  double ap_novel = 0.0;
  double ap_all = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;

  double ap_of(const std::string& category) const;
};

/// Rows: ground-truth categories then background; columns: predicted categories
/// then background. A ground-truth box goes to the category of its best-IoU
/// detection above both thresholds (background if none); detections above
/// conf_threshold that are nobody's best match land in the background row.
ConfusionMatrix confusion_matrix(const std::vector<Detection>& detections, const DatasetPartition& partition,
                                 double conf_threshold = 0.3, double iou_threshold = 0.5);

/// Per-category AP50 over partition.test plus base/novel/all group means.
EvalReport evaluate_groups(const std::vector<Detection>& detections, const DatasetPartition& partition,
                           double conf_threshold = 0.3);

/// Element-wise mean of reports over the same categories (APs and confusion ratios).
EvalReport average_reports(const std::vector<EvalReport>& reports);

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& detections);
std::vector<Detection> read_detections(const std::filesystem::path& path, const std::vector<CategoryId>& categories);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

}  // namespace dkan
