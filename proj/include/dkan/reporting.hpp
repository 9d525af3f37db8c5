#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dkan/config.hpp"
#include "dkan/evaluation.hpp"

namespace dkan {

/// Throws DataError when the reports disagree on their base/novel category lists.
void require_consistent_categories(const std::vector<EvalReport>& reports);

/// Fixed-width text table: one row per report (tag, AP_B, AP_N, AP_All and
/// per-category AP). APs are printed in percent.
std::string format_report_table(const std::vector<EvalReport>& reports);

/// Four-row loss ablation grid. Reports must be tagged none, fka, lka and
/// both (any order); rows are printed in that order with check marks.
std::string format_ablation_grid(const std::vector<EvalReport>& reports);

struct SweepRow {
  std::string value;
  EvalReport report;
};

std::string format_sweep_table(const std::string& parameter, const std::vector<SweepRow>& rows);

struct PlotSeries {
  std::string name;
  std::vector<double> values;
};

/// Static SVG line chart with categorical x positions.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::vector<std::string>& x,
                          const std::vector<PlotSeries>& series);
/// Heat map of the row-normalized ratios with percent labels.
std::string confusion_matrix_svg(const ConfusionMatrix& matrix, const std::string& title);

/// Record written next to every artifact-producing command.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;   // path -> git-style blob hash
  std::map<std::string, std::string> outputs;  // role -> path
  std::map<std::string, std::string> notes;    // free-form facts, e.g. teacher checksums
  std::string started;
  std::string finished;
};

std::string run_manifest_json(const RunManifest& manifest);
void write_run_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace dkan
