#include <gtest/gtest.h>

#include <cmath>

#include "dkan/error.hpp"
#include "dkan/heads.hpp"
#include "dkan/util.hpp"

namespace dkan {
namespace {

CosineHeadWeights head(int rows, int dim, Rng& rng, double alpha, bool bg) {
  CosineHeadWeights h{rows, dim, std::vector<double>(static_cast<std::size_t>(rows) * dim), alpha, bg};
  for (auto& w : h.weights) w = rng.normal();
  return h;
}

std::vector<double> random_feature(int dim, Rng& rng) {
  std::vector<double> f(dim);
  for (auto& v : f) v = rng.uniform(-2, 2);
  return f;
}

TEST(Cosine, HandValues) {
  CosineHeadWeights h{1, 2, {3, 4}, 20.0, false};
  EXPECT_DOUBLE_EQ(cosine_logits(std::vector<double>{3, 4}, h)[0], 20.0);
  h.weights = {0, 1};
  EXPECT_DOUBLE_EQ(cosine_logits(std::vector<double>{1, 0}, h)[0], 0.0);
  h.weights = {1, 0};
  EXPECT_NEAR(cosine_logits(std::vector<double>{1, 1}, h)[0], 20.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(cosine_logits(std::vector<double>{1, 1}, h)[0], 14.1421, 1e-4);
}

TEST(Cosine, BoundedByAlpha) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double alpha = std::array<double, 4>{5, 10, 20, 50}[t % 4];
    const auto h = head(4, 8, rng, alpha, false);
    for (double v : cosine_logits(random_feature(8, rng), h)) EXPECT_LE(std::abs(v), alpha);
  }
}

// Features on a 2^-10 grid with at most 21 significant bits, so k * f is an
// exact double for every k used here and the scaled input really is k f.
std::vector<double> dyadic_feature(int dim, Rng& rng) {
  std::vector<double> f(dim);
  for (auto& v : f) v = std::ldexp(static_cast<double>(rng.uniform_index(1 << 21)) - (1 << 20), -10);
  return f;
}

TEST(Cosine, ExactlyScaleInvariant) {
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    const auto h = head(5, 16, rng, 20.0, false);
    const auto f = dyadic_feature(16, rng);
    const auto base = cosine_logits(f, h);
    for (double k : {0.5, 3.0, 100.0}) {
      auto g = f;
      for (auto& v : g) {
        ASSERT_EQ(std::fma(k, v, -(k * v)), 0.0);
        v *= k;
      }
      EXPECT_EQ(cosine_logits(g, h), base) << "k=" << k;
    }
  }
}

TEST(Cosine, RoundedScalingDriftsByAtMostAnUlpOrTwo) {
  Rng rng(12);
  for (int t = 0; t < 300; ++t) {
    const auto h = head(5, 16, rng, 20.0, false);
    const auto f = random_feature(16, rng);
    const auto base = cosine_logits(f, h);
    for (double k : {3.0, 100.0, 1e-3}) {
      auto g = f;
      for (auto& v : g) v *= k;
      const auto scaled = cosine_logits(g, h);
      for (std::size_t j = 0; j < base.size(); ++j) EXPECT_NEAR(scaled[j], base[j], 4 * 20.0 * 0x1p-52);
    }
  }
}

TEST(Cosine, ZeroFeatureScoresZero) {
  Rng rng(3);
  const auto h = head(3, 4, rng, 20.0, false);
  for (double v : cosine_logits(std::vector<double>(4, 0.0), h)) EXPECT_EQ(v, 0.0);
}

TEST(Cosine, ValidateRejectsBadHeads) {
  CosineHeadWeights h{1, 2, {1, 0}, 0.0, false};
  EXPECT_THROW(h.validate(), Error);
  h.alpha = 5;
  h.weights = {0, 0};
  EXPECT_THROW(h.validate(), Error);
}

TEST(Cosine, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  const int rows = 3, dim = 5;
  auto f = random_feature(dim, rng);
  auto h = head(rows, dim, rng, 10.0, false);
  const auto gs = random_feature(rows, rng);
  auto objective = [&] {
    std::vector<double> s(rows);
    cosine_scores(f, h.weights, rows, h.alpha, s);
    double o = 0;
    for (int j = 0; j < rows; ++j) o += s[j] * gs[j];
    return o;
  };
  std::vector<double> gf(dim, 0.0), gw(h.weights.size(), 0.0);
  cosine_scores_backward(f, h.weights, rows, h.alpha, gs, gf, gw);
  const double e = 1e-6;
  for (int i = 0; i < dim; ++i) {
    const double s = f[i];
    f[i] = s + e;
    const double up = objective();
    f[i] = s - e;
    const double dn = objective();
    f[i] = s;
    EXPECT_NEAR(gf[i], (up - dn) / (2 * e), 1e-7);
  }
  for (std::size_t i = 0; i < h.weights.size(); ++i) {
    const double s = h.weights[i];
    h.weights[i] = s + e;
    const double up = objective();
    h.weights[i] = s - e;
    const double dn = objective();
    h.weights[i] = s;
    EXPECT_NEAR(gw[i], (up - dn) / (2 * e), 1e-7);
  }
}

TEST(Incremental, DimensionsAndDecoupling) {
  Rng rng(5);
  const auto base = head(4, 6, rng, 20, true);
  auto novel = head(3, 6, rng, 20, false);
  const auto f = random_feature(6, rng);
  const auto a = classify_incremental(f, base, novel);
  EXPECT_EQ(a.base_logits.size(), 4u);
  EXPECT_EQ(a.novel_logits.size(), 3u);
  EXPECT_EQ(a.base_category_logits().size(), 3u);
  for (auto& w : novel.weights) w += 0.37;
  const auto b = classify_incremental(f, base, novel);
  EXPECT_EQ(a.base_logits, b.base_logits);
  EXPECT_NE(a.novel_logits, b.novel_logits);
}

TEST(Incremental, AlignedFeatureWinsTheMerge) {
  // base rows: e0 (Cr), e1, e2, e3 (background); novel rows e4, e5, e6
  const int d = 7;
  CosineHeadWeights base{4, d, std::vector<double>(4 * d, 0.0), 20, true};
  CosineHeadWeights novel{3, d, std::vector<double>(3 * d, 0.0), 20, false};
  for (int j = 0; j < 4; ++j) base.weights[j * d + j] = 1;
  for (int j = 0; j < 3; ++j) novel.weights[j * d + 4 + j] = 1;
  std::vector<double> f(d, 0.0);
  f[0] = 2.5;
  const auto scores = merge_head_scores(classify_incremental(f, base, novel));
  ASSERT_EQ(scores.size(), 7u);
  EXPECT_EQ(std::max_element(scores.begin(), scores.end()) - scores.begin(), 0);
}

TEST(Merge, UniformShiftAndHandSoftmax) {
  HeadOutputs o;
  o.base_logits = {0, 0, 0, 0};
  o.novel_logits = {0, 0, 0};
  for (double p : merge_head_scores(o)) EXPECT_NEAR(p, 1.0 / 7.0, 1e-15);

  o.base_logits = {2, 0, 0, 0};
  const auto p = merge_head_scores(o);
  const double z = std::exp(2.0) + 6.0;
  EXPECT_NEAR(p[0], std::exp(2.0) / z, 1e-15);
  for (int i = 1; i < 7; ++i) EXPECT_NEAR(p[i], 1.0 / z, 1e-15);

  // merged order is base categories, novel categories, background
  o.base_logits = {1, 2, 3, 9};
  o.novel_logits = {4, 5, 6};
  EXPECT_EQ(merged_logits(o), (std::vector<double>{1, 2, 3, 4, 5, 6, 9}));

  HeadOutputs shifted = o;
  for (auto& v : shifted.base_logits) v += 7.5;
  for (auto& v : shifted.novel_logits) v += 7.5;
  const auto a = merge_head_scores(o), b = merge_head_scores(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Softmax, TemperatureFlattens) {
  const std::vector<double> l{1, 0};
  const auto p = softmax(l);
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  EXPECT_NEAR(p[1], 0.2689, 1e-4);
  EXPECT_LT(softmax(l, 100.0)[0], p[0]);
  const auto lp = log_softmax(l, 2.0);
  const auto q = softmax(l, 2.0);
  EXPECT_NEAR(std::exp(lp[0]), q[0], 1e-15);
}

TEST(Regression, ClassAgnosticFourDeltas) {
  Rng rng(6);
  RegressionHeadWeights r{5, std::vector<double>(20), {0.1, 0.2, 0.3, 0.4}};
  for (auto& w : r.weights) w = rng.normal();
  const auto f = random_feature(5, rng);
  const auto d = regress_class_agnostic(f, r);
  EXPECT_EQ(d.size(), 4u);
  double s = r.bias[2];
  for (int i = 0; i < 5; ++i) s += r.weights[2 * 5 + i] * f[i];
  EXPECT_NEAR(d[2], s, 1e-12);
}

TEST(BoxCoder, HandDecodeAndIdentity) {
  const BoundingBox ref{0, 0, 10, 10};
  const auto out = decode_box(ref, {0.1, 0.1, 0, 0});
  EXPECT_NEAR(out.x1, 1, 1e-12);
  EXPECT_NEAR(out.y1, 1, 1e-12);
  EXPECT_NEAR(out.x2, 11, 1e-12);
  EXPECT_NEAR(out.y2, 11, 1e-12);
  EXPECT_EQ(decode_box(ref, {0, 0, 0, 0}), ref);
  // log-size deltas: doubling the width about the centre
  const auto wide = decode_box(ref, {0, 0, std::log(2.0), 0});
  EXPECT_NEAR(wide.x1, -5, 1e-12);
  EXPECT_NEAR(wide.x2, 15, 1e-12);
}

TEST(BoxCoder, EncodeInvertsDecode) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const BoundingBox a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(12, 30), rng.uniform(12, 30)};
    const BoundingBox b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(12, 30), rng.uniform(12, 30)};
    const BoxCoderWeights w{10, 10, 5, 5};
    const auto back = decode_box(a, encode_box(a, b, w), w);
    EXPECT_NEAR(back.x1, b.x1, 1e-9);
    EXPECT_NEAR(back.y2, b.y2, 1e-9);
  }
}

}  // namespace
}  // namespace dkan
