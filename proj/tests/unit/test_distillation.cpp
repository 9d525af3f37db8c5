#include <gtest/gtest.h>

#include <cmath>

#include "dkan/distillation.hpp"
#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {
namespace {

// KL(p || q) straight from the definition
double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

std::vector<double> softmax_of(const std::vector<double>& x, double tau) {
  std::vector<double> e(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i] / tau);
  for (auto& v : e) v /= z;
  return e;
}

Tensor3 map_of(std::initializer_list<double> values) {
  Tensor3 t(1, 1, static_cast<int>(values.size()));
  t.data.assign(values);
  return t;
}

Tensor3 random_map(int c, int h, int w, Rng& rng, double scale = 1.0) {
  Tensor3 t(c, h, w);
  for (auto& v : t.data) v = scale * rng.uniform(-1, 1);
  return t;
}

FeaturePyramid random_pyramid(Rng& rng) {
  FeaturePyramid p;
  const int sizes[] = {8, 4, 2, 2};
  for (int l = 0; l < kPyramidLevels; ++l) p.levels[l] = random_map(3, sizes[l], sizes[l], rng, 2.0);
  return p;
}

TEST(ChannelSoftmax, HandValuesAndInvariances) {
  const auto p = channel_spatial_softmax(map_of({1, 0}), Temperature(1));
  EXPECT_NEAR(p.data[0], 0.7311, 1e-4);
  EXPECT_NEAR(p.data[1], 0.2689, 1e-4);

  Tensor3 c(2, 3, 3, 4.2);
  for (double v : channel_spatial_softmax(c, Temperature(5)).data) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);

  Rng rng(1);
  Tensor3 x = random_map(2, 3, 4, rng);
  const auto a = channel_spatial_softmax(x, Temperature(2));
  for (double& v : x.channel(1)) v += 13.0;
  const auto b = channel_spatial_softmax(x, Temperature(2));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-14);
}

TEST(Fka, HandKlValue) {
  const double v = fka_level_divergence(map_of({1, 0}), map_of({0, 1}), Temperature(1));
  EXPECT_NEAR(v, 0.4621, 1e-3);
  EXPECT_NEAR(v, (std::exp(1.0) - 1) / (std::exp(1.0) + 1), 1e-14);  // tanh(1/2)
}

TEST(Fka, FourLevelsSumTheHandValue) {
  FeaturePyramid t, s;
  for (int l = 0; l < kPyramidLevels; ++l) {
    t.levels[l] = map_of({1, 0});
    s.levels[l] = map_of({0, 1});
  }
  EXPECT_NEAR(fka_loss(t, s, Temperature(1)), 1.8484, 1e-3);
}

TEST(Fka, DirectionIsTeacherToStudent) {
  // Asymmetric case: KL(T||S) and KL(S||T) differ.
  const double tau = 1.0;
  const auto pt = softmax_of({2, 0}, tau), ps = softmax_of({0, 1}, tau);
  const double forward = kl(pt, ps), backward = kl(ps, pt);
  ASSERT_GT(std::abs(forward - backward), 0.1);
  EXPECT_NEAR(fka_level_divergence(map_of({2, 0}), map_of({0, 1}), Temperature(tau)), forward, 1e-14);
}

TEST(Fka, IdentityNonNegativityAndTemperatureScaling) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_map(3, 4, 5, rng, 3.0), b = random_map(3, 4, 5, rng, 3.0);
    const double tau = rng.uniform(0.5, 8);
    EXPECT_EQ(fka_level_divergence(a, a, Temperature(tau)), 0.0);
    const double v = fka_level_divergence(a, b, Temperature(tau));
    EXPECT_GE(v, 0.0);
    // oracle: tau^2 / C * sum_c KL
    double want = 0;
    for (int c = 0; c < 3; ++c) {
      const auto ca = a.channel(c), cb = b.channel(c);
      want += kl(softmax_of({ca.begin(), ca.end()}, tau), softmax_of({cb.begin(), cb.end()}, tau));
    }
    EXPECT_NEAR(v, tau * tau / 3 * want, 1e-12);
  }
}

TEST(Fka, ChannelPermutationLeavesValue) {
  Rng rng(3);
  const auto a = random_map(3, 2, 3, rng), b = random_map(3, 2, 3, rng);
  auto permute = [](const Tensor3& x) {
    Tensor3 y = x;
    const int order[] = {2, 0, 1};
    for (int c = 0; c < 3; ++c) std::copy(x.channel(order[c]).begin(), x.channel(order[c]).end(), y.channel(c).begin());
    return y;
  };
  EXPECT_NEAR(fka_level_divergence(a, b, Temperature(2)), fka_level_divergence(permute(a), permute(b), Temperature(2)),
              1e-14);
}

TEST(Fka, ShapeMismatchNamesTheLevel) {
  try {
    fka_level_divergence(Tensor3(2, 3, 3), Tensor3(2, 3, 4), Temperature(1), nullptr, "P3");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("P3"), std::string::npos) << e.what();
  }
}

// Relative error with a 1e-4 floor on the scale: central differences of a
// loss of order 1 carry about 1e-10 of cancellation noise.
bool grad_close(double numeric, double analytic) {
  return std::abs(numeric - analytic) < 1e-4 * std::max({std::abs(numeric), std::abs(analytic), 1e-4});
}

TEST(Fka, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto teacher = random_pyramid(rng);
    auto student = random_pyramid(rng);
    const Temperature tau(rng.uniform(0.5, 6));
    std::array<Tensor3, kPyramidLevels> grad;
    fka_loss(teacher, student, tau, &grad);
    const double h = 1e-6;
    for (int l = 0; l < kPyramidLevels; ++l)
      for (std::size_t i = 0; i < student.levels[l].size(); ++i) {
        double& x = student.levels[l].data[i];
        const double s = x;
        x = s + h;
        const double up = fka_loss(teacher, student, tau);
        x = s - h;
        const double dn = fka_loss(teacher, student, tau);
        x = s;
        const double num = (up - dn) / (2 * h), ana = grad[l].data[i];
        EXPECT_TRUE(grad_close(num, ana)) << "level " << l << " index " << i << ": " << num << " vs " << ana;
      }
  }
}

TEST(Lka, HandKlValue) {
  const std::vector<double> teacher{1, 0}, student{0, 1};
  EXPECT_NEAR(lka_roi_divergence(student, teacher, Temperature(1)), 0.2311, 1e-3);
  const auto p = base_logit_softmax(std::vector<double>{1, 0}, Temperature(1));
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  for (double v : base_logit_softmax(std::vector<double>{3, 3, 3}, Temperature(2))) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  EXPECT_LT(base_logit_softmax(std::vector<double>{1, 0}, Temperature(100))[0], p[0]);
}

TEST(Lka, DirectionIsStudentToTeacher) {
  const auto ps = softmax_of({0, 1}, 1), pt = softmax_of({2, 0}, 1);
  ASSERT_GT(std::abs(kl(ps, pt) - kl(pt, ps)), 0.1);
  EXPECT_NEAR(lka_roi_divergence(std::vector<double>{0, 1}, std::vector<double>{2, 0}, Temperature(1)),
              kl(ps, pt) / 2, 1e-14);
}

TEST(Lka, IdentityShiftAndMean) {
  Rng rng(5);
  std::vector<std::vector<double>> s(4, std::vector<double>(3)), t = s;
  for (auto& r : s)
    for (auto& v : r) v = rng.uniform(-5, 5);
  for (auto& r : t)
    for (auto& v : r) v = rng.uniform(-5, 5);
  EXPECT_EQ(lka_loss(s, s, Temperature(5)), 0.0);
  double sum = 0;
  for (int i = 0; i < 4; ++i) sum += lka_roi_divergence(s[i], t[i], Temperature(5));
  EXPECT_NEAR(lka_loss(s, t, Temperature(5)), sum / 4, 1e-14);
  auto s2 = s, t2 = t;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) s2[i][j] += 2.5, t2[i][j] += 2.5;
  EXPECT_NEAR(lka_loss(s2, t2, Temperature(5)), lka_loss(s, t, Temperature(5)), 1e-13);
  EXPECT_THROW(lka_loss(s, {t[0]}, Temperature(5)), Error);
}

TEST(Lka, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int rois = 1 + static_cast<int>(rng.uniform_index(4)), c = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<std::vector<double>> s(rois, std::vector<double>(c)), t = s;
    for (auto& r : s)
      for (auto& v : r) v = rng.uniform(-4, 4);
    for (auto& r : t)
      for (auto& v : r) v = rng.uniform(-4, 4);
    const Temperature tau(rng.uniform(0.5, 6));
    std::vector<std::vector<double>> grad;
    lka_loss(s, t, tau, &grad);
    const double h = 1e-6;
    for (int i = 0; i < rois; ++i)
      for (int j = 0; j < c; ++j) {
        const double x = s[i][j];
        s[i][j] = x + h;
        const double up = lka_loss(s, t, tau);
        s[i][j] = x - h;
        const double dn = lka_loss(s, t, tau);
        s[i][j] = x;
        const double num = (up - dn) / (2 * h);
        EXPECT_TRUE(grad_close(num, grad[i][j])) << num << " vs " << grad[i][j];
      }
  }
}

TEST(Temperature, MustBePositive) {
  EXPECT_THROW(Temperature(0), UsageError);
  EXPECT_THROW(Temperature(-1), UsageError);
  EXPECT_EQ(Temperature(5).value(), 5.0);
}

TEST(TotalLoss, ArithmeticAndLinearity) {
  EXPECT_DOUBLE_EQ(total_loss({1, 2, 3, 4}, {1, 0.01}), 6.04);
  EXPECT_EQ(total_loss({1.25, 2.5, 3, 4}, {0, 0}), 1.25 + 2.5);
  const double one = total_loss({1, 2, 3, 4}, {1, 0.01}), two = total_loss({1, 2, 3, 4}, {2, 0.01});
  EXPECT_DOUBLE_EQ(two - one, 3.0);
  EXPECT_THROW(DistillWeights({-1, 0}).validate(), UsageError);
}

TEST(TotalLoss, NonFiniteComponentIsNamed) {
  try {
    total_loss({1, 2, std::nan(""), 4}, {1, 0.01});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("fka"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace dkan
