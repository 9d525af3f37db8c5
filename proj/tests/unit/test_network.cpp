#include <gtest/gtest.h>

#include <cmath>

#include "dkan/network.hpp"

namespace dkan {
namespace {

// A small desk-sized detector and a 64 px synthetic image with two defects.
struct Fixture {
  DetectorModel student;
  DetectorModel teacher;
  TrainSample sample;

  Fixture() {
    DetectorConfig cfg = desk_detector_config();
    cfg.rpn_batch_per_image = 16;
    cfg.roi_batch_per_image = 8;
    const auto cats = synthetic_categories(4);
    const std::vector<CategoryId> base{cats[0], cats[1]}, novel{cats[2], cats[3]};
    teacher = create_detector(cfg, base, 11);
    student = create_detector(cfg, base, 12);
    add_novel_head(student, novel, 13);
    SyntheticConfig sc;
    auto img = render_synthetic_image(cats[2], sc, "g", 5).image;
    sample = make_train_sample(img, student);
  }

  double loss(const DetectorModel& m, const ImageGradScales& w, const std::vector<Proposal>& fixed) const {
    const ImageStep s = forward_image(m, sample, 77, {&teacher, 2.0}, &fixed);
    return w.rpn * s.rpn_loss.total() + w.rcnn * s.rcnn_loss.total() + w.fka * s.fka + w.lka * s.lka;
  }
};

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(Network, BackwardMatchesFiniteDifferencesOnEveryParameterTensor) {
  Fixture f;
  const ImageGradScales w{0.7, 1.3, 0.9, 0.4};
  ImageStep s = forward_image(f.student, f.sample, 77, {&f.teacher, 2.0});
  ASSERT_TRUE(s.distilled);
  ASSERT_GT(s.num_rois(), 0u);
  ParamGrads g(f.student.params);
  backward_image(f.student, s, w, g);

  Rng pick(3);
  const double h = 1e-5;
  for (std::size_t pi = 0; pi < f.student.params.size(); ++pi) {
    auto& p = f.student.params.all()[pi];
    for (int t = 0; t < 4; ++t) {
      const std::size_t k = pick.uniform_index(p.size());
      const double saved = p.data[k];
      p.data[k] = saved + h;
      const double up = f.loss(f.student, w, s.proposals);
      p.data[k] = saved - h;
      const double down = f.loss(f.student, w, s.proposals);
      p.data[k] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.values[pi][k];
      if (std::abs(numeric) < 1e-8 && std::abs(analytic) < 1e-8) continue;
      EXPECT_LT(relative_error(analytic, numeric), 1e-4) << p.name << "[" << k << "] analytic " << analytic
                                                         << " numeric " << numeric;
    }
  }
}

TEST(Network, TeacherGetsNoGradientAndStaysUnchanged) {
  Fixture f;
  const std::string before = f.teacher.params.checksum();
  ImageStep s = forward_image(f.student, f.sample, 1, {&f.teacher, 5.0});
  ParamGrads g(f.student.params);
  backward_image(f.student, s, {1, 1, 1, 1}, g);
  EXPECT_EQ(before, f.teacher.params.checksum());
}

TEST(Network, NovelHeadGradientIgnoresLka) {
  // LKA reads base logits only, so with every other term off the novel head
  // receives exactly zero gradient.
  Fixture f;
  ImageStep s = forward_image(f.student, f.sample, 9, {&f.teacher, 5.0});
  ParamGrads g(f.student.params);
  backward_image(f.student, s, {0, 0, 0, 1}, g);
  for (double v : g.values[f.student.params.index_of("cls.novel.weight")]) EXPECT_EQ(v, 0.0);
  double base = 0;
  for (double v : g.values[f.student.params.index_of("cls.base.weight")]) base += std::abs(v);
  EXPECT_GT(base, 0.0);
}

TEST(Network, ForwardIsDeterministic) {
  Fixture f;
  const auto a = forward_image(f.student, f.sample, 4, {&f.teacher, 5.0});
  const auto b = forward_image(f.student, f.sample, 4, {&f.teacher, 5.0});
  EXPECT_EQ(a.rpn_loss.total(), b.rpn_loss.total());
  EXPECT_EQ(a.rcnn_loss.total(), b.rcnn_loss.total());
  EXPECT_EQ(a.fka, b.fka);
  EXPECT_EQ(a.lka, b.lka);
}

}  // namespace
}  // namespace dkan
