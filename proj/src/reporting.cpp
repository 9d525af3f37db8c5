#include "dkan/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void require_consistent_categories(const std::vector<EvalReport>& reports) {
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].base_categories != reports[0].base_categories ||
        reports[i].novel_categories != reports[0].novel_categories)
      throw DataError("report '" + reports[i].tag + "' covers base {" + join(reports[i].base_categories, ",") +
                      "} / novel {" + join(reports[i].novel_categories, ",") + "}, but '" + reports[0].tag +
                      "' covers base {" + join(reports[0].base_categories, ",") + "} / novel {" +
                      join(reports[0].novel_categories, ",") + "}");
  }
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  require_consistent_categories(reports);
  if (reports.empty()) return "";
  std::size_t tag_w = 6;
  for (const auto& r : reports) tag_w = std::max(tag_w, r.tag.size() + 2);
  std::ostringstream os;
  os << pad("run", tag_w) << pad("AP_B", 8) << pad("AP_N", 8) << pad("AP_All", 8);
  for (const auto& c : reports[0].per_category_ap) os << pad(c.category, 8);
  os << "\n";
  for (const auto& r : reports) {
    os << pad(r.tag.empty() ? "-" : r.tag, tag_w) << pad(pct(r.ap_base), 8) << pad(pct(r.ap_novel), 8)
       << pad(pct(r.ap_all), 8);
    for (const auto& c : r.per_category_ap) os << pad(pct(c.ap), 8);
    os << "\n";
  }
  return os.str();
}

std::string format_ablation_grid(const std::vector<EvalReport>& reports) {
  require_consistent_categories(reports);
  const std::vector<std::pair<std::string, std::pair<bool, bool>>> rows = {
      {"none", {false, false}}, {"fka", {true, false}}, {"lka", {false, true}}, {"both", {true, true}}};
  if (reports.size() != rows.size()) throw UsageError("ablation grid needs exactly four reports");
  std::ostringstream os;
  os << pad("FKA", 6) << pad("LKA", 6) << pad("AP_B", 8) << pad("AP_N", 8) << pad("AP_All", 8) << "\n";
  for (const auto& [tag, flags] : rows) {
    auto it = std::find_if(reports.begin(), reports.end(), [&](const EvalReport& r) { return r.tag == tag; });
    if (it == reports.end()) throw UsageError("ablation grid: no report tagged '" + tag + "'");
    os << pad(flags.first ? "x" : "-", 6) << pad(flags.second ? "x" : "-", 6) << pad(pct(it->ap_base), 8)
       << pad(pct(it->ap_novel), 8) << pad(pct(it->ap_all), 8) << "\n";
  }
  return os.str();
}

std::string format_sweep_table(const std::string& parameter, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << pad(parameter, 10) << pad("AP_B", 8) << pad("AP_N", 8) << pad("AP_All", 8) << "\n";
  for (const auto& r : rows)
    os << pad(r.value, 10) << pad(pct(r.report.ap_base), 8) << pad(pct(r.report.ap_novel), 8)
       << pad(pct(r.report.ap_all), 8) << "\n";
  return os.str();
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::vector<std::string>& x,
                          const std::vector<PlotSeries>& series) {
  const double W = 480, H = 320, L = 56, R = 110, T = 36, Bm = 48;
  const double pw = W - L - R, ph = H - T - Bm;
  double lo = 0.0, hi = 1.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  const auto px = [&](std::size_t i) { return L + (x.size() > 1 ? pw * i / (x.size() - 1) : pw / 2); };
  const auto py = [&](double v) { return T + ph * (1.0 - (v - lo) / (hi - lo)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << pct(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    os << "<text x=\"" << px(i) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << xml_escape(x[i])
       << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
     << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 5];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size() && i < x.size(); ++i)
      os << px(i) << "," << py(series[s].values[i]) << " ";
    os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].values.size() && i < x.size(); ++i)
      os << "<circle cx=\"" << px(i) << "\" cy=\"" << py(series[s].values[i]) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    os << "<text x=\"" << L + pw + 10 << "\" y=\"" << T + 14 + 16 * s << "\" fill=\"" << color << "\">"
       << xml_escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string confusion_matrix_svg(const ConfusionMatrix& m, const std::string& title) {
  const std::size_t n = m.labels.size();
  const double cell = 44, L = 60, T = 50;
  const double W = L + cell * n + 20, H = T + cell * n + 30;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(title)
     << "</text>\n";
  for (std::size_t j = 0; j < n; ++j)
    os << "<text x=\"" << L + cell * (j + 0.5) << "\" y=\"" << T - 8 << "\" text-anchor=\"middle\">"
       << xml_escape(m.labels[j]) << "</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    os << "<text x=\"" << L - 8 << "\" y=\"" << T + cell * (i + 0.5) + 4 << "\" text-anchor=\"end\">"
       << xml_escape(m.labels[i]) << "</text>\n";
    for (std::size_t j = 0; j < n; ++j) {
      const double v = i < m.ratios.size() && j < m.ratios[i].size() ? m.ratios[i][j] : 0.0;
      const int shade = static_cast<int>(std::lround(255 * (1.0 - std::clamp(v, 0.0, 1.0))));
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
      os << "<rect x=\"" << L + cell * j << "\" y=\"" << T + cell * i << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"" << fill << "\" stroke=\"#888\"/>\n";
      os << "<text x=\"" << L + cell * (j + 0.5) << "\" y=\"" << T + cell * (i + 0.5) + 4
         << "\" text-anchor=\"middle\" fill=\"" << (v > 0.6 ? "white" : "black") << "\">" << pct(v) << "</text>\n";
    }
  }
  os << "<text x=\"" << L + cell * n / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">predicted</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string run_manifest_json(const RunManifest& m) {
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : m.config) config[k] = v;
  nlohmann::json j = {{"format", "dkan-run-manifest"},
                      {"command", m.command},
                      {"argv", m.argv},
                      {"config", config},
                      {"seeds", m.seeds},
                      {"inputs", m.inputs},
                      {"outputs", m.outputs},
                      {"notes", m.notes},
                      {"started", m.started},
                      {"finished", m.finished}};
  return j.dump(2) + "\n";
}

void write_run_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  write_text_file(path, run_manifest_json(manifest));
}

}  // namespace dkan
