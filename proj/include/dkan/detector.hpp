#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dkan/dataset.hpp"
#include "dkan/evaluation.hpp"
#include "dkan/heads.hpp"
#include "dkan/tensor.hpp"
#include "dkan/util.hpp"

namespace dkan {

enum class HeadKind { cosine, linear };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& text);

/// Architecture and sampling settings of the bundled mini two-stage detector.
struct DetectorConfig {
  int input_size = 800;
  int in_channels = 3;
  std::array<int, 5> backbone_channels{16, 24, 32, 48, 64};
  int fpn_channels = 16;
  int representation_dim = 64;
  int roi_resolution = 4;
  int roi_sampling_ratio = 2;
  /// Box side that maps to P4 in the level assignment rule.
  double roi_canonical_size = 224.0;

  double anchor_scale = 8.0;  // anchor side = anchor_scale * stride
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int rpn_batch_per_image = 256;
  double rpn_positive_fraction = 0.5;
  int rpn_pre_nms_top_n = 1000;
  int rpn_post_nms_train = 1000;
  int rpn_post_nms_test = 300;
  double rpn_nms_iou = 0.7;

  int roi_batch_per_image = 512;
  double roi_positive_fraction = 0.25;
  double roi_foreground_iou = 0.5;
  BoxCoderWeights roi_box_weights{10.0, 10.0, 5.0, 5.0};

  HeadKind head_kind = HeadKind::cosine;
  double alpha = 20.0;

  int num_anchors() const { return static_cast<int>(anchor_ratios.size()); }
  /// Throws UsageError on out-of-range settings.
  void validate() const;
};

/// Settings scaled down for CPU runs on 64 px synthetic images.
DetectorConfig desk_detector_config();

/// One named parameter tensor.
struct Param {
  std::string name;
  std::string group;  // backbone, fpn, rpn, roi, cls_base, cls_novel, bbox
  std::vector<int> shape;
  std::vector<double> data;
  bool frozen = false;

  std::size_t size() const { return data.size(); }
};

/// Ordered parameter store addressable by stable names.
class DetectorParams {
 public:
  Param& add(std::string name, std::string group, std::vector<int> shape);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  void set_group_frozen(const std::string& group, bool frozen);
  void set_all_frozen(bool frozen);

  /// SHA-1 over names, shapes and raw double bytes, in store order.
  std::string checksum() const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Gradient buffers aligned with a DetectorParams store.
struct ParamGrads {
  std::vector<std::vector<double>> values;

  explicit ParamGrads(const DetectorParams& params);
  ParamGrads() = default;
  void zero();
  void add(const ParamGrads& other, double scale = 1.0);
  double squared_norm() const;
};

/// A detector plus its category layout. Merged class indices are
/// [base categories..., novel categories..., background].
struct DetectorModel {
  DetectorConfig config;
  DetectorParams params;
  std::vector<CategoryId> base_categories;
  std::vector<CategoryId> novel_categories;

  int num_base() const { return static_cast<int>(base_categories.size()); }
  int num_novel() const { return static_cast<int>(novel_categories.size()); }
  int background_label() const { return num_base() + num_novel(); }
  /// Merged label of a category; throws when the model does not know it.
  int label_of(const CategoryId& category) const;
  const CategoryId& category_of_label(int label) const;
};

/// Fresh Det_base-shaped model (no novel head) with seeded initialization.
DetectorModel create_detector(const DetectorConfig& config, const std::vector<CategoryId>& base_categories,
                              std::uint64_t seed);

/// Appends a novel cosine (or linear) head with N(0, 0.01^2) weights.
void add_novel_head(DetectorModel& model, const std::vector<CategoryId>& novel_categories, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Input

struct PreparedInput {
  Tensor3 tensor;
  double scale_x = 1.0;  // input pixels per source pixel
  double scale_y = 1.0;
};

/// Bilinear resize to input_size x input_size, centre to [-1, 1] and replicate
/// the grayscale plane to in_channels. Throws DataError on missing pixels.
PreparedInput prepare_input(const DefectImage& image, const DetectorConfig& config);

// ---------------------------------------------------------------------------
// Contract operations

/// Backbone + FPN. Throws Error naming the first level holding non-finite values.
FeaturePyramid extract_pyramid(const Tensor3& input, const DetectorModel& model);
FeaturePyramid extract_pyramid(const DefectImage& image, const DetectorModel& model);

struct Proposal {
  BoundingBox box;
  double objectness = 0.0;  // sigmoid of the RPN logit
};

struct RpnOutputs {
  std::vector<BoundingBox> anchors;   // all levels, level-major then (y, x, ratio)
  std::vector<int> anchor_level;
  std::vector<double> objectness;     // logits, one per anchor
  std::vector<std::array<double, 4>> deltas;
};

std::vector<BoundingBox> level_anchors(int height, int width, int stride, const DetectorConfig& config);
RpnOutputs rpn_forward(const FeaturePyramid& pyramid, const DetectorModel& model);

/// Greedy NMS; returns kept indices in descending score order (ties by index).
std::vector<std::size_t> nms(const std::vector<BoundingBox>& boxes, const std::vector<double>& scores,
                             double iou_threshold);

/// Decode, clip to the input, take the per-level top-n, NMS and truncate.
std::vector<Proposal> proposals_from_rpn(const RpnOutputs& rpn, int image_size, int pre_nms_top_n,
                                         int max_proposals, double nms_iou);
std::vector<Proposal> propose_regions(const FeaturePyramid& pyramid, const DetectorModel& model, int max_proposals,
                                      double nms_iou);

/// FPN level (0 = P2 ... 3 = P5) that pools a box.
int roi_level(const BoundingBox& box, const DetectorConfig& config);

/// ROIAlign over the assigned level: fpn_channels x roi_resolution^2 values,
/// channel-major. grad_level (optional) receives the scatter of grad_pooled.
std::vector<double> roi_align(const Tensor3& level, int stride, const BoundingBox& box, int resolution,
                              int sampling_ratio);
void roi_align_backward(const Tensor3& level, int stride, const BoundingBox& box, int resolution, int sampling_ratio,
                        std::span<const double> grad_pooled, Tensor3& grad_level);

using RoiFeature = std::vector<double>;

/// ROIAlign then the two fc layers. Boxes are clamped to the input first; a
/// box that collapses to zero area throws DataError naming its index.
std::vector<RoiFeature> pool_roi_features(const FeaturePyramid& pyramid, const std::vector<Proposal>& proposals,
                                          const DetectorModel& model);

/// Incremental RCNN heads on one ROI feature.
HeadOutputs apply_heads(const RoiFeature& feature, const DetectorModel& model);

// ---------------------------------------------------------------------------
// Losses. Both are pure functions of their inputs and return gradients with
// respect to the network outputs they consume.

struct RpnTargets {
  std::vector<int> labels;                     // 1 positive, 0 negative, -1 ignored
  std::vector<std::array<double, 4>> deltas;   // regression target per anchor (positives only used)
};

struct RpnLoss {
  double classification = 0.0;
  double regression = 0.0;
  double total() const { return classification + regression; }
  std::vector<double> grad_objectness;
  std::vector<std::array<double, 4>> grad_deltas;
};

/// Mean BCE over sampled anchors plus smooth-L1 (beta 1/9) over positives,
/// both divided by the sampled-anchor count.
RpnLoss rpn_loss(const std::vector<double>& objectness, const std::vector<std::array<double, 4>>& deltas,
                 const RpnTargets& targets);

struct RcnnTargets {
  std::vector<int> labels;  // merged labels; background = logits width - 1
  std::vector<std::array<double, 4>> deltas;
};

struct RcnnLoss {
  double classification = 0.0;
  double regression = 0.0;
  double total() const { return classification + regression; }
  std::vector<std::vector<double>> grad_logits;
  std::vector<std::array<double, 4>> grad_deltas;
};

/// Mean cross-entropy over ROIs plus smooth-L1 (beta 1) over foreground ROIs
/// divided by the ROI count.
RcnnLoss rcnn_loss(const std::vector<std::vector<double>>& merged_logits,
                   const std::vector<std::array<double, 4>>& deltas, const RcnnTargets& targets);

/// Anchor labelling at the configured IoU thresholds; every ground-truth box
/// also claims its best anchor(s). Sampling keeps at most rpn_batch_per_image
/// labelled anchors, up to rpn_positive_fraction of them positive.
RpnTargets assign_rpn_targets(const std::vector<BoundingBox>& anchors, const std::vector<BoundingBox>& gt_boxes,
                              const DetectorConfig& config, Rng& rng);

struct SampledRois {
  std::vector<BoundingBox> boxes;
  RcnnTargets targets;
};

/// Adds the ground-truth boxes to the proposals and samples roi_batch_per_image
/// ROIs with up to roi_positive_fraction foreground (IoU >= roi_foreground_iou).
SampledRois sample_rois(const std::vector<Proposal>& proposals, const std::vector<BoundingBox>& gt_boxes,
                        const std::vector<int>& gt_labels, int background_label, const DetectorConfig& config,
                        Rng& rng);

// ---------------------------------------------------------------------------
// Inference

struct DetectOptions {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 100;
};

/// Per-class thresholded (strictly above score_threshold) and NMS-filtered
/// detections in source-image coordinates, sorted by confidence.
std::vector<Detection> detect(const DefectImage& image, const DetectorModel& model, const DetectOptions& options);

}  // namespace dkan
