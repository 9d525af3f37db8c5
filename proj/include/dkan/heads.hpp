#pragma once

#include <array>
#include <span>
#include <vector>

#include "dkan/dataset.hpp"

namespace dkan {

/// Guard applied to both norms of the cosine score; a zero feature or weight
/// row scores 0 instead of dividing by zero.
inline constexpr double kCosineEpsilon = 1e-12;

/// Row-major [rows x dim] class weight vectors scored by alpha * cos(f, w_j).
struct CosineHeadWeights {
  int rows = 0;
  int dim = 0;
  std::vector<double> weights;
  double alpha = 20.0;
  bool has_background_row = false;  // last row scores background

  std::span<const double> row(int j) const { return {weights.data() + static_cast<std::size_t>(j) * dim, static_cast<std::size_t>(dim)}; }
  /// Throws when alpha <= 0 or a row has (near) zero norm.
  void validate() const;
};

struct HeadOutputs {
  std::vector<double> base_logits;   // |C_base| categories followed by the background slot
  std::vector<double> novel_logits;  // |C_novel| categories
  std::array<double, 4> box_deltas{};

  /// Base logits without the background slot.
  std::span<const double> base_category_logits() const { return {base_logits.data(), base_logits.size() - 1}; }
  double background_logit() const { return base_logits.back(); }
};

// Core span-level kernels shared with the detector, which keeps head weights
// in its parameter store.
void cosine_scores(std::span<const double> feature, std::span<const double> weights, int rows, double alpha,
                   std::span<double> out);
/// Accumulates dL/dfeature and dL/dweights given dL/dscores.
void cosine_scores_backward(std::span<const double> feature, std::span<const double> weights, int rows, double alpha,
                            std::span<const double> grad_scores, std::span<double> grad_feature,
                            std::span<double> grad_weights);

std::vector<double> cosine_logits(std::span<const double> feature, const CosineHeadWeights& head);

/// Scores one ROI feature with the decoupled base head (which carries the
/// background row) and novel head. The heads share the feature, not weights.
HeadOutputs classify_incremental(std::span<const double> feature, const CosineHeadWeights& base_head,
                                 const CosineHeadWeights& novel_head);

struct RegressionHeadWeights {
  int dim = 0;
  std::vector<double> weights;  // [4 x dim]
  std::array<double, 4> bias{};
};

/// One (dx, dy, dw, dh) per ROI, independent of the predicted category.
std::array<double, 4> regress_class_agnostic(std::span<const double> feature, const RegressionHeadWeights& head);

/// Centre/size delta parameterization. Deltas are divided by `weights` on decode.
using BoxCoderWeights = std::array<double, 4>;
inline constexpr BoxCoderWeights kUnitBoxWeights{1.0, 1.0, 1.0, 1.0};
BoundingBox decode_box(const BoundingBox& reference, const std::array<double, 4>& deltas,
                       const BoxCoderWeights& weights = kUnitBoxWeights);
std::array<double, 4> encode_box(const BoundingBox& reference, const BoundingBox& target,
                                 const BoxCoderWeights& weights = kUnitBoxWeights);

/// Logits in merged order: base categories, novel categories, background.
std::vector<double> merged_logits(const HeadOutputs& outputs);
/// Softmax over merged_logits(); sums to 1.
std::vector<double> merge_head_scores(const HeadOutputs& outputs);

/// Numerically stable softmax of logits / temperature.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0);

}  // namespace dkan
