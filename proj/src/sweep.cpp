#include "dkan/sweep.hpp"

#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {

std::vector<std::string> sweep_parameters() { return {"lambda1", "lambda2", "tau", "alpha"}; }

std::string sweep_config_key(const std::string& parameter) {
  if (parameter == "lambda1") return "lambda_fka";
  if (parameter == "lambda2") return "lambda_lka";
  if (parameter == "tau" || parameter == "alpha") return parameter;
  throw UsageError("unknown sweep parameter '" + parameter + "'; valid: " + join(sweep_parameters(), ", "));
}

std::vector<SweepPoint> run_sweep(const DatasetPartition& partition, const TeacherSnapshot& teacher,
                                  const TrainConfig& base, const std::string& parameter,
                                  const std::vector<std::string>& values, int num_seeds) {
  const std::string key = sweep_config_key(parameter);
  if (values.empty()) throw UsageError("sweep over '" + parameter + "' needs at least one value");
  // Validate every value before spending time on the first run.
  std::vector<TrainConfig> configs;
  for (const auto& v : values) {
    TrainConfig c = base;
    set_config_value(c, key, v);
    c.validate();
    configs.push_back(c);
  }
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.push_back({values[i], run_experiment(partition, teacher, configs[i], num_seeds, parameter + "=" + values[i])});
  return out;
}

std::vector<SweepRow> sweep_rows(const std::vector<SweepPoint>& points) {
  std::vector<SweepRow> rows;
  for (const auto& p : points) rows.push_back({p.value, p.result.mean});
  return rows;
}

std::string sweep_plot_svg(const std::string& parameter, const std::vector<SweepRow>& rows) {
  std::vector<std::string> x;
  PlotSeries b{"AP_B", {}}, n{"AP_N", {}}, a{"AP_All", {}};
  for (const auto& r : rows) {
    x.push_back(r.value);
    b.values.push_back(r.report.ap_base);
    n.values.push_back(r.report.ap_novel);
    a.values.push_back(r.report.ap_all);
  }
  return line_plot_svg("AP50 vs " + parameter, parameter, x, {b, n, a});
}

}  // namespace dkan
