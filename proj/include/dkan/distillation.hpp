#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "dkan/tensor.hpp"

namespace dkan {

/// Softmax temperature shared by both knowledge-align losses. Must be > 0.
class Temperature {
 public:
  explicit Temperature(double tau);
  double value() const { return tau_; }

 private:
  double tau_;
};

/// Loss weights of the fine-tuning objective; both non-negative.
struct DistillWeights {
  double lambda_fka = 1.0;
  double lambda_lka = 0.01;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Feature knowledge align
//
// Each channel of a C x H x W map is turned into a distribution over its H*W
// locations with softmax(y / tau). A level's divergence is
//
//   (tau^2 / C) * sum_c KL(teacher_c || student_c)
//
// and the loss sums the divergences of P2..P5. Gradients are taken with respect
// to the student map only.

/// Channel-wise spatial softmax; every channel of the result sums to 1.
Tensor3 channel_spatial_softmax(const Tensor3& feature_map, Temperature tau);

/// KL(teacher || student) for one level. When grad_student is non-null it is
/// overwritten with d(divergence)/d(student).
double fka_level_divergence(const Tensor3& teacher, const Tensor3& student, Temperature tau,
                            Tensor3* grad_student = nullptr, std::string_view level_name = "");

/// Unweighted sum over the four pyramid levels.
double fka_loss(const FeaturePyramid& teacher, const FeaturePyramid& student, Temperature tau,
                std::array<Tensor3, kPyramidLevels>* grad_student = nullptr);

// ---------------------------------------------------------------------------
// Logit knowledge align
//
// Per ROI, base-category logits (background excluded) of both networks are
// softened with softmax(n / tau) and compared as
//
//   (tau^2 / C_base) * KL(student || teacher)
//
// The batch value is the mean over ROIs.

std::vector<double> base_logit_softmax(std::span<const double> base_logits, Temperature tau);

/// Divergence for a single ROI; grad_student (optional) is overwritten.
double lka_roi_divergence(std::span<const double> student, std::span<const double> teacher, Temperature tau,
                          std::span<double> grad_student = {});

/// Mean of lka_roi_divergence over ROIs. grad_student, when given, is resized
/// to match and holds d(mean)/d(student logits).
double lka_loss(const std::vector<std::vector<double>>& student, const std::vector<std::vector<double>>& teacher,
                Temperature tau, std::vector<std::vector<double>>* grad_student = nullptr);

struct LossComponents {
  double rpn = 0.0;
  double rcnn = 0.0;
  double fka = 0.0;
  double lka = 0.0;
};

/// rpn + rcnn + lambda_fka * fka + lambda_lka * lka. Throws DivergenceError
/// naming the first non-finite component.
double total_loss(const LossComponents& parts, const DistillWeights& weights);

}  // namespace dkan
