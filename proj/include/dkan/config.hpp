#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dkan/detector.hpp"
#include "dkan/distillation.hpp"

namespace dkan {

enum class FinetunePolicy { novel_only, balanced_base_plus_novel };

std::string to_string(FinetunePolicy policy);
FinetunePolicy finetune_policy_from_string(const std::string& text);

enum class Preset { full, desk };

struct TrainConfig {
  Preset preset = Preset::full;
  int input_size = 800;
  int batch_size = 4;
  int iterations = 2000;           // fine-tuning steps
  int pretrain_iterations = 2000;  // Det_base steps
  double learning_rate = 0.02;
  double weight_decay = 0.0001;
  double momentum = 0.9;
  int warmup_iterations = 0;       // linear ramp from 0.001 * lr, 0 disables
  double tau = 5.0;
  DistillWeights distill{1.0, 0.01};
  double alpha = 20.0;
  HeadKind head_kind = HeadKind::cosine;
  std::uint64_t seed = 0;
  FinetunePolicy finetune_data_policy = FinetunePolicy::balanced_base_plus_novel;
  int threads = 0;                 // 0 keeps the OpenMP default

  /// Throws UsageError when a numeric field is out of range.
  void validate() const;
};

/// Full-scale defaults: 800 px, batch 4, 2000 iterations, lr 0.02, decay 1e-4,
/// tau 5, lambda (1, 0.01), alpha 20.
TrainConfig full_config();
/// CPU-sized preset on 64 px inputs.
TrainConfig desk_config();
TrainConfig config_for_preset(const std::string& name);

/// Sets one field from its textual value; key names mirror the field names
/// (lambda_fka / lambda_lka for the distillation weights).
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// Flat "key = value" lines; '#' starts a comment. A `preset` key, if present,
/// is applied before the remaining keys regardless of its position.
TrainConfig parse_config_text(const std::string& text, TrainConfig base);
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base);

/// Every field as (key, value) in declaration order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
std::string config_to_text(const TrainConfig& config);

/// Detector architecture implied by the training config.
DetectorConfig detector_config_for(const TrainConfig& config);

}  // namespace dkan
