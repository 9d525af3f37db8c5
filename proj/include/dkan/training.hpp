#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dkan/config.hpp"
#include "dkan/dataset.hpp"
#include "dkan/detector.hpp"
#include "dkan/evaluation.hpp"

namespace dkan {

/// One line of the training log.
struct LossRecord {
  int step = 0;
  double loss_rpn = 0.0;
  double loss_rcnn = 0.0;
  double loss_fka = 0.0;
  double loss_lka = 0.0;
  double loss_total = 0.0;
};

std::string loss_record_json(const LossRecord& record);

using LossCallback = std::function<void(const LossRecord&)>;

/// Frozen copy of Det_base. The checksum is taken at construction.
class TeacherSnapshot {
 public:
  explicit TeacherSnapshot(DetectorModel base);

  const DetectorModel& model() const { return model_; }
  const std::string& checksum_at_creation() const { return checksum_; }
  std::string current_checksum() const { return model_.params.checksum(); }
  /// Throws Error when the parameters no longer match the creation checksum.
  void verify() const;

 private:
  DetectorModel model_;
  std::string checksum_;
};

/// Det_S: copied backbone/RPN/ROI head/regressor and base classifier, plus a
/// fresh novel head. Nothing is frozen.
struct StudentModel {
  DetectorModel model;
};

/// Stage I: trains a fresh detector on base-category data for
/// config.pretrain_iterations steps of RPN + RCNN loss.
DetectorModel pretrain_base(const std::vector<DefectImage>& base_train, const std::vector<CategoryId>& base_categories,
                            const TrainConfig& config, const LossCallback& on_step = {});

StudentModel build_student(const DetectorModel& base, const std::vector<CategoryId>& novel_categories,
                           const TrainConfig& config);

/// Fine-tuning images per config.finetune_data_policy: the K-shot novel set,
/// preceded (balanced policy) by K images per base category from base_train.
std::vector<DefectImage> finetune_data(const std::vector<DefectImage>& base_train,
                                       const std::vector<DefectImage>& novel_shots, const SplitSpec& spec,
                                       const TrainConfig& config, std::uint64_t seed);

/// Stage II: RPN + RCNN on the student plus lambda-weighted FKA and LKA
/// against the teacher. The teacher is verified unchanged afterwards.
StudentModel finetune_dkan(StudentModel student, const TeacherSnapshot& teacher,
                           const std::vector<DefectImage>& data, const TrainConfig& config,
                           const LossCallback& on_step = {});

struct EvalOptions {
  double score_threshold = 0.01;  // detections kept for AP
  double conf_threshold = 0.3;    // confusion matrix rule
};

/// Runs detect() over partition.test and scores the result.
std::vector<Detection> detect_all(const std::vector<DefectImage>& images, const DetectorModel& model,
                                  double score_threshold);
EvalReport evaluate_model(const DetectorModel& model, const DatasetPartition& partition, const EvalOptions& options = {});

struct SeedRun {
  int index = 0;
  std::uint64_t seed = 0;
  std::optional<EvalReport> report;
  std::string failure;  // empty on success
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  EvalReport mean;  // over successful runs
  bool complete() const;
};

/// Seed i resamples the K-shot set from remainder + novel_train with
/// mix_seed(config.seed, i), fine-tunes a student from the shared teacher and
/// evaluates it on the test split. Failed seeds are recorded, not rethrown.
ExperimentResult run_experiment(const DatasetPartition& partition, const TeacherSnapshot& teacher,
                                const TrainConfig& config, int num_seeds, const std::string& tag = "");

}  // namespace dkan
