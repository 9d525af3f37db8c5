#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numeric>

#include "dkan/error.hpp"
#include "dkan/evaluation.hpp"
#include "dkan/training.hpp"
#include "dkan/util.hpp"

namespace dkan {
namespace {

// Six synthetic categories split 3 base / 3 novel with K = 2.
struct Bench {
  std::vector<DefectImage> images;
  DatasetPartition partition;

  Bench() {
    SyntheticConfig sc;
    sc.images_per_category = 24;
    images = generate_synthetic_dataset(sc, 21);
    const auto c = synthetic_categories(6);
    partition = build_ifsnd_split(images, {{c[0], c[1], c[2]}, {c[3], c[4], c[5]}, 2, 0}, 6, 12);
  }
};

TrainConfig quick(int pretrain, int finetune) {
  TrainConfig c = desk_config();
  c.pretrain_iterations = pretrain;
  c.iterations = finetune;
  return c;
}

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    bench_ = std::make_unique<Bench>();
    pretrain_log_ = std::make_unique<std::vector<LossRecord>>();
    base_ = std::make_unique<DetectorModel>(pretrain_base(bench_->partition.base_train,
                                                          bench_->partition.spec.base_categories, quick(500, 0),
                                                          [](const LossRecord& r) { pretrain_log_->push_back(r); }));
  }
  static void TearDownTestSuite() {
    base_.reset();
    bench_.reset();
    pretrain_log_.reset();
  }

  static std::unique_ptr<Bench> bench_;
  static std::unique_ptr<DetectorModel> base_;
  static std::unique_ptr<std::vector<LossRecord>> pretrain_log_;
};

std::unique_ptr<Bench> Training::bench_;
std::unique_ptr<DetectorModel> Training::base_;
std::unique_ptr<std::vector<LossRecord>> Training::pretrain_log_;

TEST_F(Training, PretrainLossTrendsDown) {
  const auto& log = *pretrain_log_;
  ASSERT_EQ(log.size(), 500u);
  auto mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += log[i].loss_total;
    return s / 50;
  };
  EXPECT_LT(mean(450), mean(0));
  EXPECT_LT(mean(450), 0.5 * mean(0));
  for (const auto& r : log) EXPECT_EQ(r.loss_total, r.loss_rpn + r.loss_rcnn);
}

TEST_F(Training, PretrainedDetectorFindsASingleBrightDefect) {
  // Test images holding exactly one base-category defect.
  int checked = 0, hits = 0;
  for (const auto& img : bench_->partition.test) {
    if (img.instances.size() != 1 || !bench_->partition.spec.is_base(img.instances[0].category)) continue;
    ++checked;
    auto dets = detect(img, *base_, {0.3, 0.5, 100});
    if (dets.size() == 1 && dets[0].category == img.instances[0].category &&
        iou(dets[0].box, img.instances[0].box) > 0.5)
      ++hits;
  }
  ASSERT_GT(checked, 3);
  EXPECT_GE(hits * 2, checked) << hits << " of " << checked;
}

TEST_F(Training, PretrainIsDeterministic) {
  const auto a = pretrain_base(bench_->partition.base_train, bench_->partition.spec.base_categories, quick(6, 0));
  const auto b = pretrain_base(bench_->partition.base_train, bench_->partition.spec.base_categories, quick(6, 0));
  EXPECT_EQ(a.params.checksum(), b.params.checksum());
  auto other = quick(6, 0);
  other.seed = 1;
  const auto c = pretrain_base(bench_->partition.base_train, bench_->partition.spec.base_categories, other);
  EXPECT_NE(a.params.checksum(), c.params.checksum());
}

TEST_F(Training, PretrainRejectsBadInput) {
  EXPECT_THROW(pretrain_base({}, bench_->partition.spec.base_categories, quick(1, 0)), DataError);
  EXPECT_THROW(pretrain_base(bench_->partition.novel_train, bench_->partition.spec.base_categories, quick(1, 0)),
               DataError);
}

TEST_F(Training, StudentLaws) {
  const auto cfg = quick(0, 1);
  const auto s = build_student(*base_, bench_->partition.spec.novel_categories, cfg);
  EXPECT_EQ(s.model.params.get("cls.base.weight").shape[0], 4);
  EXPECT_EQ(s.model.params.get("cls.novel.weight").shape[0], 3);
  EXPECT_EQ(s.model.params.get("cls.base.weight").data, base_->params.get("cls.base.weight").data);
  EXPECT_EQ(s.model.params.get("backbone.conv1.weight").data, base_->params.get("backbone.conv1.weight").data);
  for (const auto& p : s.model.params.all()) EXPECT_FALSE(p.frozen) << p.name;
  const auto t = build_student(*base_, bench_->partition.spec.novel_categories, cfg);
  EXPECT_EQ(s.model.params.get("cls.novel.weight").data, t.model.params.get("cls.novel.weight").data);
  EXPECT_THROW(build_student(s.model, bench_->partition.spec.novel_categories, cfg), Error);
}

TEST_F(Training, TeacherStaysFrozen) {
  const TeacherSnapshot teacher(*base_);
  for (const auto& p : teacher.model().params.all()) EXPECT_TRUE(p.frozen);
  const std::string before = teacher.current_checksum();
  const auto cfg = quick(0, 20);
  auto s = build_student(teacher.model(), bench_->partition.spec.novel_categories, cfg);
  const auto data = finetune_data(bench_->partition.base_train, bench_->partition.novel_train, bench_->partition.spec,
                                  cfg, 0);
  s = finetune_dkan(std::move(s), teacher, data, cfg);
  EXPECT_EQ(teacher.current_checksum(), before);
  EXPECT_EQ(teacher.checksum_at_creation(), before);
  EXPECT_NE(s.model.params.checksum(), teacher.model().params.checksum());
}

TEST_F(Training, ZeroLambdasReduceToDetectionLoss) {
  const TeacherSnapshot teacher(*base_);
  auto cfg = quick(0, 12);
  cfg.distill = {0.0, 0.0};
  auto s = build_student(teacher.model(), bench_->partition.spec.novel_categories, cfg);
  std::vector<LossRecord> log;
  finetune_dkan(std::move(s), teacher, bench_->partition.novel_train, cfg,
                [&](const LossRecord& r) { log.push_back(r); });
  ASSERT_EQ(log.size(), 12u);
  for (const auto& r : log) EXPECT_EQ(r.loss_total, r.loss_rpn + r.loss_rcnn);
  // still measured, just weighted by zero; step 0 starts from the teacher's weights
  EXPECT_GT(log.back().loss_fka, 0.0);
}

TEST_F(Training, DistillationTermsAreLoggedWithTheirWeights) {
  const TeacherSnapshot teacher(*base_);
  auto cfg = quick(0, 3);
  cfg.distill = {2.0, 0.5};
  auto s = build_student(teacher.model(), bench_->partition.spec.novel_categories, cfg);
  std::vector<LossRecord> log;
  finetune_dkan(std::move(s), teacher, bench_->partition.novel_train, cfg,
                [&](const LossRecord& r) { log.push_back(r); });
  for (const auto& r : log)
    EXPECT_DOUBLE_EQ(r.loss_total, r.loss_rpn + r.loss_rcnn + 2.0 * r.loss_fka + 0.5 * r.loss_lka);
  // the student starts as a copy of the teacher: nothing to distill at step 0
  EXPECT_EQ(log[0].loss_fka, 0.0);
  EXPECT_EQ(log[0].loss_lka, 0.0);
}

TEST_F(Training, FinetuneDataPolicies) {
  auto cfg = quick(0, 1);
  const auto& p = bench_->partition;
  const auto balanced = finetune_data(p.base_train, p.novel_train, p.spec, cfg, 3);
  EXPECT_EQ(balanced.size(), 12u);  // 2 per base category + 2 per novel category
  cfg.finetune_data_policy = FinetunePolicy::novel_only;
  EXPECT_EQ(finetune_data(p.base_train, p.novel_train, p.spec, cfg, 3).size(), 6u);
}

TEST_F(Training, SingleSeedExperimentMeanIsTheRun) {
  const TeacherSnapshot teacher(*base_);
  const auto result = run_experiment(bench_->partition, teacher, quick(0, 8), 1, "t");
  ASSERT_TRUE(result.complete());
  ASSERT_EQ(result.runs.size(), 1u);
  const auto& r = *result.runs[0].report;
  EXPECT_EQ(result.runs[0].seed, mix_seed(0, 0));
  EXPECT_EQ(result.mean.ap_all, r.ap_all);
  EXPECT_EQ(result.mean.ap_base, r.ap_base);
  EXPECT_EQ(result.mean.tag, "t");
  for (const auto& c : r.per_category_ap) {
    EXPECT_GE(c.ap, 0.0);
    EXPECT_LE(c.ap, 1.0);
  }
}

TEST_F(Training, SeedMeanLiesWithinTheRuns) {
  const TeacherSnapshot teacher(*base_);
  const auto result = run_experiment(bench_->partition, teacher, quick(0, 4), 3);
  ASSERT_TRUE(result.complete());
  double lo = 1, hi = 0;
  for (const auto& run : result.runs) lo = std::min(lo, run.report->ap_all), hi = std::max(hi, run.report->ap_all);
  EXPECT_GE(result.mean.ap_all, lo - 1e-15);
  EXPECT_LE(result.mean.ap_all, hi + 1e-15);
  EXPECT_NE(result.runs[0].seed, result.runs[1].seed);
}

TEST_F(Training, DivergenceIsRecordedPerSeed) {
  const TeacherSnapshot teacher(*base_);
  auto cfg = quick(0, 30);
  cfg.learning_rate = 1e6;
  cfg.warmup_iterations = 0;
  const auto result = run_experiment(bench_->partition, teacher, cfg, 1);
  EXPECT_FALSE(result.complete());
  EXPECT_FALSE(result.runs[0].failure.empty());
}

TEST(LossRecordJson, HasEveryComponent) {
  const std::string j = loss_record_json({3, 1.5, 2.0, 0.25, 0.125, 3.75});
  for (const char* k : {"\"step\"", "\"loss_rpn\"", "\"loss_rcnn\"", "\"loss_fka\"", "\"loss_lka\"", "\"loss_total\""})
    EXPECT_NE(j.find(k), std::string::npos) << k;
}

}  // namespace
}  // namespace dkan
