#pragma once

#include <string>
#include <vector>

#include "dkan/reporting.hpp"
#include "dkan/training.hpp"

namespace dkan {

/// Names accepted by run_sweep: lambda1, lambda2, tau, alpha.
std::vector<std::string> sweep_parameters();
/// TrainConfig key a sweep parameter maps to. Throws UsageError on unknown names.
std::string sweep_config_key(const std::string& parameter);

struct SweepPoint {
  std::string value;
  ExperimentResult result;
};

/// One run_experiment per value, each on a copy of `base` with the parameter
/// overwritten. alpha reaches the student heads only; the teacher keeps its own.
std::vector<SweepPoint> run_sweep(const DatasetPartition& partition, const TeacherSnapshot& teacher,
                                  const TrainConfig& base, const std::string& parameter,
                                  const std::vector<std::string>& values, int num_seeds);

std::vector<SweepRow> sweep_rows(const std::vector<SweepPoint>& points);
/// AP_B / AP_N / AP_All against the swept value.
std::string sweep_plot_svg(const std::string& parameter, const std::vector<SweepRow>& rows);

}  // namespace dkan
