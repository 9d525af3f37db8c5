#pragma once

// Forward passes that keep their intermediates, and the matching backward
// passes. The detector's public operations are thin wrappers over these; the
// trainer uses them directly.

#include <array>
#include <cstdint>
#include <vector>

#include "dkan/detector.hpp"
#include "dkan/distillation.hpp"

namespace dkan {

struct BackboneTrace {
  Tensor3 input;
  std::array<Tensor3, 5> stages;               // post-ReLU, strides 2..32
  std::array<Tensor3, kPyramidLevels> merged;  // lateral + upsampled top-down, before the output conv
  FeaturePyramid pyramid;
};

BackboneTrace backbone_forward(const Tensor3& input, const DetectorModel& model);
/// grad_pyramid holds dL/dP per level; accumulates into grads.
void backbone_backward(const BackboneTrace& trace, const DetectorModel& model,
                       const std::array<Tensor3, kPyramidLevels>& grad_pyramid, ParamGrads& grads);

struct RpnTrace {
  std::array<Tensor3, kPyramidLevels> hidden;  // post-ReLU shared conv
  RpnOutputs outputs;
};

RpnTrace rpn_head_forward(const FeaturePyramid& pyramid, const DetectorModel& model);
/// Accumulates parameter gradients and adds dL/dP into grad_pyramid.
void rpn_head_backward(const FeaturePyramid& pyramid, const RpnTrace& trace, const DetectorModel& model,
                       const std::vector<double>& grad_objectness,
                       const std::vector<std::array<double, 4>>& grad_deltas, ParamGrads& grads,
                       std::array<Tensor3, kPyramidLevels>& grad_pyramid);

struct RoiTrace {
  std::vector<BoundingBox> boxes;
  std::vector<int> levels;
  std::vector<std::vector<double>> pooled;
  std::vector<std::vector<double>> fc6;
  std::vector<RoiFeature> features;  // fc7 output
  std::vector<HeadOutputs> heads;
};

HeadOutputs heads_forward(const RoiFeature& feature, const DetectorModel& model);
RoiTrace roi_head_forward(const FeaturePyramid& pyramid, const std::vector<BoundingBox>& boxes,
                          const DetectorModel& model);

struct RoiHeadGrads {
  std::vector<std::vector<double>> base_logits;   // per ROI, |C_base| + 1
  std::vector<std::vector<double>> novel_logits;  // per ROI, |C_novel|
  std::vector<std::array<double, 4>> deltas;
};

void roi_head_backward(const FeaturePyramid& pyramid, const RoiTrace& trace, const DetectorModel& model,
                       const RoiHeadGrads& upstream, ParamGrads& grads,
                       std::array<Tensor3, kPyramidLevels>& grad_pyramid);

// ---------------------------------------------------------------------------
// One training image

struct TrainSample {
  std::string id;
  Tensor3 input;
  std::vector<BoundingBox> boxes;  // input coordinates
  std::vector<int> labels;         // merged labels of the model being trained
};

TrainSample make_train_sample(const DefectImage& image, const DetectorModel& model);

/// Forward state and loss terms of one image. Loss terms are per-image
/// values: RPN and RCNN are means over the image's sampled anchors / ROIs,
/// FKA is the pyramid divergence and LKA the mean over the image's ROIs.
struct ImageStep {
  BackboneTrace backbone;
  RpnTrace rpn;
  std::vector<Proposal> proposals;
  RoiTrace roi;
  RpnLoss rpn_loss;
  RcnnLoss rcnn_loss;
  bool distilled = false;
  double fka = 0.0;
  std::array<Tensor3, kPyramidLevels> fka_grad;
  double lka = 0.0;
  std::vector<std::vector<double>> lka_grad;  // d(lka)/d(student base category logits)

  std::size_t num_rois() const { return roi.boxes.size(); }
};

struct TeacherView {
  const DetectorModel* model = nullptr;
  double tau = 5.0;
};

/// Runs the student on one sample; when a teacher is given its pyramid and
/// its base logits on the student's sampled ROIs are computed as well.
/// Proposals are treated as constants in the backward pass; passing them in
/// pins them (finite-difference checks rely on this).
ImageStep forward_image(const DetectorModel& model, const TrainSample& sample, std::uint64_t seed,
                        const TeacherView& teacher = {}, const std::vector<Proposal>* proposals = nullptr);

/// Multipliers applied to each per-image loss term's gradient.
struct ImageGradScales {
  double rpn = 1.0;
  double rcnn = 1.0;
  double fka = 0.0;
  double lka = 0.0;
};

void backward_image(const DetectorModel& model, const ImageStep& step, const ImageGradScales& scales,
                    ParamGrads& grads);

}  // namespace dkan
