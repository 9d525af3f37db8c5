#include "dkan/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dkan/error.hpp"

namespace dkan {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Newton refinement of the double-precision root to full binary128 precision.
__float128 quad_sqrt(__float128 v) {
  if (v <= 0) return 0;
  __float128 x = std::sqrt(static_cast<double>(v));
  if (x == 0) return 0;
  for (int i = 0; i < 3; ++i) x = (x + v / x) / 2;
  return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void CosineHeadWeights::validate() const {
  if (!(alpha > 0.0)) throw Error("cosine head alpha must be positive");
  if (weights.size() != static_cast<std::size_t>(rows) * dim) throw Error("cosine head weight size mismatch");
  for (int j = 0; j < rows; ++j)
    if (norm(row(j)) <= kCosineEpsilon) throw Error("cosine head row " + std::to_string(j) + " has zero norm");
}

void cosine_scores(std::span<const double> feature, std::span<const double> weights, int rows, double alpha,
                   std::span<double> out) {
  // Products of two doubles are exact in binary128, so accumulating there and
  // rounding once makes the score independent of a positive rescaling of f.
  const std::size_t dim = feature.size();
  __float128 ff = 0;
  for (double x : feature) ff += static_cast<__float128>(x) * x;
  const __float128 fn = std::max(quad_sqrt(ff), static_cast<__float128>(kCosineEpsilon));
  for (int j = 0; j < rows; ++j) {
    const auto w = weights.subspan(j * dim, dim);
    __float128 ww = 0, fw = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      ww += static_cast<__float128>(w[i]) * w[i];
      fw += static_cast<__float128>(feature[i]) * w[i];
    }
    const __float128 wn = std::max(quad_sqrt(ww), static_cast<__float128>(kCosineEpsilon));
    const double cosine = std::clamp(static_cast<double>(fw / (fn * wn)), -1.0, 1.0);
    out[j] = alpha * cosine;
  }
}

void cosine_scores_backward(std::span<const double> feature, std::span<const double> weights, int rows, double alpha,
                            std::span<const double> grad_scores, std::span<double> grad_feature,
                            std::span<double> grad_weights) {
  const std::size_t dim = feature.size();
  const double fn_raw = norm(feature);
  const bool f_guarded = fn_raw <= kCosineEpsilon;
  const double fn = f_guarded ? kCosineEpsilon : fn_raw;
  for (int j = 0; j < rows; ++j) {
    const double g = grad_scores[j];
    if (g == 0.0) continue;
    const auto w = weights.subspan(j * dim, dim);
    const double wn_raw = norm(w);
    const bool w_guarded = wn_raw <= kCosineEpsilon;
    const double wn = w_guarded ? kCosineEpsilon : wn_raw;
    const double d = dot(feature, w);
    const double score = d / (fn * wn);
    // d/df [f.w / (|f||w|)] = w / (|f||w|) - (f.w) f / (|f|^3 |w|); the second
    // term vanishes while the norm is pinned to epsilon.
    if (!grad_feature.empty()) {
      for (std::size_t i = 0; i < dim; ++i) {
        double v = w[i] / (fn * wn);
        if (!f_guarded) v -= score * feature[i] / (fn * fn);
        grad_feature[i] += alpha * g * v;
      }
    }
    if (!grad_weights.empty()) {
      auto gw = grad_weights.subspan(j * dim, dim);
      for (std::size_t i = 0; i < dim; ++i) {
        double v = feature[i] / (fn * wn);
        if (!w_guarded) v -= score * w[i] / (wn * wn);
        gw[i] += alpha * g * v;
      }
    }
  }
}

std::vector<double> cosine_logits(std::span<const double> feature, const CosineHeadWeights& head) {
  if (static_cast<int>(feature.size()) != head.dim)
    throw Error("feature dimension " + std::to_string(feature.size()) + " does not match head dimension " +
                std::to_string(head.dim));
  std::vector<double> out(head.rows);
  cosine_scores(feature, head.weights, head.rows, head.alpha, out);
  return out;
}

HeadOutputs classify_incremental(std::span<const double> feature, const CosineHeadWeights& base_head,
                                 const CosineHeadWeights& novel_head) {
  const auto check = [&](const CosineHeadWeights& h, const char* name) {
    if (static_cast<int>(feature.size()) != h.dim)
      throw Error(std::string(name) + " head expects feature dimension " + std::to_string(h.dim) + ", got " +
                  std::to_string(feature.size()));
  };
  check(base_head, "base");
  check(novel_head, "novel");
  if (!base_head.has_background_row) throw Error("base head must carry the background row");
  HeadOutputs out;
  out.base_logits = cosine_logits(feature, base_head);
  out.novel_logits = cosine_logits(feature, novel_head);
  return out;
}

std::array<double, 4> regress_class_agnostic(std::span<const double> feature, const RegressionHeadWeights& head) {
  if (static_cast<int>(feature.size()) != head.dim) throw Error("regression head dimension mismatch");
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k)
    out[k] = head.bias[k] + dot(feature, std::span<const double>(head.weights).subspan(k * head.dim, head.dim));
  return out;
}

BoundingBox decode_box(const BoundingBox& reference, const std::array<double, 4>& deltas,
                       const BoxCoderWeights& weights) {
  // exp() clamp as in the usual Faster R-CNN coder.
  constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)
  const double w = reference.width(), h = reference.height();
  const double cx = reference.x1 + 0.5 * w, cy = reference.y1 + 0.5 * h;
  const double dx = deltas[0] / weights[0], dy = deltas[1] / weights[1];
  const double dw = std::min(deltas[2] / weights[2], kMaxLogScale);
  const double dh = std::min(deltas[3] / weights[3], kMaxLogScale);
  const double pcx = cx + dx * w, pcy = cy + dy * h;
  const double pw = w * std::exp(dw), ph = h * std::exp(dh);
  return {pcx - 0.5 * pw, pcy - 0.5 * ph, pcx + 0.5 * pw, pcy + 0.5 * ph};
}

std::array<double, 4> encode_box(const BoundingBox& reference, const BoundingBox& target,
                                 const BoxCoderWeights& weights) {
  const double w = reference.width(), h = reference.height();
  const double cx = reference.x1 + 0.5 * w, cy = reference.y1 + 0.5 * h;
  const double tw = target.width(), th = target.height();
  const double tcx = target.x1 + 0.5 * tw, tcy = target.y1 + 0.5 * th;
  return {weights[0] * (tcx - cx) / w, weights[1] * (tcy - cy) / h, weights[2] * std::log(tw / w),
          weights[3] * std::log(th / h)};
}

std::vector<double> merged_logits(const HeadOutputs& outputs) {
  if (outputs.base_logits.empty()) throw Error("head outputs carry no background slot");
  std::vector<double> out(outputs.base_logits.begin(), outputs.base_logits.end() - 1);
  out.insert(out.end(), outputs.novel_logits.begin(), outputs.novel_logits.end());
  out.push_back(outputs.base_logits.back());
  return out;
}

std::vector<double> merge_head_scores(const HeadOutputs& outputs) { return softmax(merged_logits(outputs)); }

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace dkan
