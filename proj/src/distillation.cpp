#include "dkan/distillation.hpp"

#include <cmath>
#include <string>

#include "dkan/error.hpp"
#include "dkan/heads.hpp"

namespace dkan {

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("temperature must be positive, got " + std::to_string(tau));
}

void DistillWeights::validate() const {
  if (!(lambda_fka >= 0.0) || !(lambda_lka >= 0.0)) throw UsageError("distillation weights must be non-negative");
}

Tensor3 channel_spatial_softmax(const Tensor3& feature_map, Temperature tau) {
  Tensor3 out(feature_map.channels, feature_map.height, feature_map.width);
  for (int c = 0; c < feature_map.channels; ++c) {
    const auto p = softmax(feature_map.channel(c), tau.value());
    std::copy(p.begin(), p.end(), out.channel(c).begin());
  }
  return out;
}

double fka_level_divergence(const Tensor3& teacher, const Tensor3& student, Temperature tau, Tensor3* grad_student,
                            std::string_view level_name) {
  if (!teacher.same_shape(student))
    throw Error("FKA shape mismatch at level " + std::string(level_name.empty() ? "?" : level_name) + ": teacher " +
                teacher.shape_string() + " vs student " + student.shape_string());
  const double t = tau.value();
  const int channels = teacher.channels;
  if (grad_student) *grad_student = Tensor3(student.channels, student.height, student.width);

  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    const auto log_pt = log_softmax(teacher.channel(c), t);
    const auto log_ps = log_softmax(student.channel(c), t);
    double kl = 0.0;
    for (std::size_t j = 0; j < log_pt.size(); ++j) {
      const double pt = std::exp(log_pt[j]);
      if (pt > 0.0) kl += pt * (log_pt[j] - log_ps[j]);
    }
    total += kl;
    if (grad_student) {
      // d/dy_s [tau^2/C * KL(pt || ps)] = (tau / C) * (ps - pt)
      auto g = grad_student->channel(c);
      for (std::size_t j = 0; j < log_pt.size(); ++j)
        g[j] = (t / channels) * (std::exp(log_ps[j]) - std::exp(log_pt[j]));
    }
  }
  return t * t / channels * total;
}

double fka_loss(const FeaturePyramid& teacher, const FeaturePyramid& student, Temperature tau,
                std::array<Tensor3, kPyramidLevels>* grad_student) {
  if (teacher.empty() || student.empty()) throw Error("FKA needs two non-empty pyramids");
  double sum = 0.0;
  for (int l = 0; l < kPyramidLevels; ++l)
    sum += fka_level_divergence(teacher.levels[l], student.levels[l], tau,
                                grad_student ? &(*grad_student)[l] : nullptr, kPyramidNames[l]);
  return sum;
}

std::vector<double> base_logit_softmax(std::span<const double> base_logits, Temperature tau) {
  return softmax(base_logits, tau.value());
}

double lka_roi_divergence(std::span<const double> student, std::span<const double> teacher, Temperature tau,
                          std::span<double> grad_student) {
  if (student.size() != teacher.size())
    throw Error("LKA logit length mismatch: student " + std::to_string(student.size()) + " vs teacher " +
                std::to_string(teacher.size()));
  const double t = tau.value();
  const double n = static_cast<double>(student.size());
  const auto log_ps = log_softmax(student, t);
  const auto log_pt = log_softmax(teacher, t);
  double kl = 0.0;
  for (std::size_t i = 0; i < log_ps.size(); ++i) kl += std::exp(log_ps[i]) * (log_ps[i] - log_pt[i]);
  if (!grad_student.empty()) {
    // d/dz_k [tau^2/C * KL(ps || pt)] = (tau / C) * ps_k * (log(ps_k/pt_k) - KL)
    for (std::size_t k = 0; k < log_ps.size(); ++k)
      grad_student[k] = (t / n) * std::exp(log_ps[k]) * ((log_ps[k] - log_pt[k]) - kl);
  }
  return t * t / n * kl;
}

double lka_loss(const std::vector<std::vector<double>>& student, const std::vector<std::vector<double>>& teacher,
                Temperature tau, std::vector<std::vector<double>>* grad_student) {
  if (student.size() != teacher.size())
    throw Error("LKA ROI count mismatch: student " + std::to_string(student.size()) + " vs teacher " +
                std::to_string(teacher.size()));
  if (grad_student) grad_student->assign(student.size(), {});
  if (student.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(student.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < student.size(); ++r) {
    std::span<double> g;
    if (grad_student) {
      (*grad_student)[r].assign(student[r].size(), 0.0);
      g = (*grad_student)[r];
    }
    sum += lka_roi_divergence(student[r], teacher[r], tau, g);
    for (double& v : g) v *= inv;
  }
  return sum * inv;
}

double total_loss(const LossComponents& parts, const DistillWeights& weights) {
  const std::pair<const char*, double> named[] = {
      {"loss_rpn", parts.rpn}, {"loss_rcnn", parts.rcnn}, {"loss_fka", parts.fka}, {"loss_lka", parts.lka}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite loss component ") + name);
  return parts.rpn + parts.rcnn + weights.lambda_fka * parts.fka + weights.lambda_lka * parts.lka;
}

}  // namespace dkan
