#include "dkan/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {

using nlohmann::json;

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

ApResult average_precision(std::vector<Detection> detections, const GroundTruthIndex& ground_truth,
                           double iou_threshold) {
  std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return std::tie(a.image_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
           std::tie(b.image_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
  });

  ApResult result;
  std::map<std::string, std::vector<bool>> claimed;
  for (const auto& [id, boxes] : ground_truth) {
    result.num_ground_truth += boxes.size();
    claimed[id].assign(boxes.size(), false);
  }
  if (result.num_ground_truth == 0) return result;

  std::size_t tp = 0, fp = 0;
  for (const auto& det : detections) {
    bool matched = false;
    if (auto it = ground_truth.find(det.image_id); it != ground_truth.end()) {
      auto& flags = claimed[det.image_id];
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        if (flags[j]) continue;
        const double o = iou(det.box, it->second[j]);
        if (o > best) best = o, best_j = j;
      }
      if (best >= iou_threshold) {
        flags[best_j] = true;
        matched = true;
      }
    }
    matched ? ++tp : ++fp;
    result.recall.push_back(static_cast<double>(tp) / result.num_ground_truth);
    result.precision.push_back(static_cast<double>(tp) / (tp + fp));
  }

  // Area under the monotone precision envelope.
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), result.recall.begin(), result.recall.end());
  mpre.insert(mpre.end(), result.precision.begin(), result.precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  result.ap = ap;
  return result;
}

double average_precision_50(std::vector<Detection> detections, const GroundTruthIndex& ground_truth) {
  return average_precision(std::move(detections), ground_truth, 0.5).ap;
}

double EvalReport::ap_of(const std::string& category) const {
  for (const auto& c : per_category_ap)
    if (c.category == category) return c.ap;
  throw Error("category " + category + " not in report");
}

namespace {

std::vector<CategoryId> evaluated_categories(const DatasetPartition& partition) {
  auto cats = partition.spec.all_categories();
  std::sort(cats.begin(), cats.end());
  return cats;
}

void check_detections(const std::vector<Detection>& detections, const DatasetPartition& partition) {
  std::set<std::string> ids;
  for (const auto& img : partition.test) ids.insert(img.id);
  const auto cats = partition.spec.all_categories();
  for (const auto& d : detections) {
    if (!ids.count(d.image_id)) throw DataError("detection references unknown image id '" + d.image_id + "'");
    if (std::find(cats.begin(), cats.end(), d.category) == cats.end())
      throw DataError("detection references category '" + d.category.name + "' outside the split");
  }
}

double mean_ap(const std::vector<CategoryAp>& aps, const std::vector<CategoryId>& group) {
  if (group.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : group)
    for (const auto& a : aps)
      if (a.category == c.name) sum += a.ap;
  return sum / static_cast<double>(group.size());
}

}  // namespace

ConfusionMatrix confusion_matrix(const std::vector<Detection>& detections, const DatasetPartition& partition,
                                 double conf_threshold, double iou_threshold) {
  const auto cats = evaluated_categories(partition);
  const std::size_t n = cats.size();
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < n; ++i) slot[cats[i].index] = i;

  ConfusionMatrix cm;
  for (const auto& c : cats) cm.labels.push_back(c.name);
  cm.labels.push_back("BG");
  cm.counts.assign(n + 1, std::vector<double>(n + 1, 0.0));

  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < detections.size(); ++i)
    if (detections[i].confidence > conf_threshold) by_image[detections[i].image_id].push_back(i);

  std::vector<bool> used(detections.size(), false);
  for (const auto& img : partition.test) {
    const auto& dets = by_image[img.id];
    for (const auto& gt : img.instances) {
      auto gs = slot.find(gt.category.index);
      if (gs == slot.end()) continue;
      double best = -1.0;
      std::size_t best_d = 0;
      for (std::size_t d : dets) {
        const double o = iou(detections[d].box, gt.box);
        if (o >= iou_threshold && o > best) best = o, best_d = d;
      }
      if (best < 0.0) {
        cm.counts[gs->second][n] += 1;
      } else {
        used[best_d] = true;
        cm.counts[gs->second][slot.at(detections[best_d].category.index)] += 1;
      }
    }
  }
  for (const auto& [id, dets] : by_image)
    for (std::size_t d : dets)
      if (!used[d]) cm.counts[n][slot.at(detections[d].category.index)] += 1;

  cm.ratios = cm.counts;
  for (auto& row : cm.ratios) {
    double total = 0.0;
    for (double v : row) total += v;
    if (total > 0.0)
      for (double& v : row) v /= total;
  }
  return cm;
}

EvalReport evaluate_groups(const std::vector<Detection>& detections, const DatasetPartition& partition,
                           double conf_threshold) {
  check_detections(detections, partition);
  const auto& spec = partition.spec;
  const auto cats = spec.all_categories();

  EvalReport report;
  for (const auto& c : spec.base_categories) report.base_categories.push_back(c.name);
  for (const auto& c : spec.novel_categories) report.novel_categories.push_back(c.name);
  report.per_category_ap.resize(cats.size());
  std::vector<std::string> warnings(cats.size());

#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(cats.size()); ++i) {
    const auto& c = cats[i];
    std::vector<Detection> dets;
    for (const auto& d : detections)
      if (d.category == c) dets.push_back(d);
    GroundTruthIndex gt;
    for (const auto& img : partition.test)
      for (const auto& inst : img.instances)
        if (inst.category == c) gt[img.id].push_back(inst.box);
    const ApResult r = average_precision(std::move(dets), gt, 0.5);
    if (r.num_ground_truth == 0) warnings[i] = "category " + c.name + " has no ground truth; AP set to 0";
    report.per_category_ap[i] = {c.name, r.ap};
  }
  for (auto& w : warnings)
    if (!w.empty()) report.warnings.push_back(std::move(w));

  report.ap_base = mean_ap(report.per_category_ap, spec.base_categories);
  report.ap_novel = mean_ap(report.per_category_ap, spec.novel_categories);
  report.ap_all = mean_ap(report.per_category_ap, cats);
  report.confusion = confusion_matrix(detections, partition, conf_threshold, 0.5);
  return report;
}

EvalReport average_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw Error("average_reports: no reports");
  EvalReport mean = reports.front();
  const double n = static_cast<double>(reports.size());
  for (std::size_t r = 1; r < reports.size(); ++r) {
    const auto& o = reports[r];
    if (o.per_category_ap.size() != mean.per_category_ap.size() || o.confusion.labels != mean.confusion.labels)
      throw Error("average_reports: category sets differ");
    for (std::size_t i = 0; i < mean.per_category_ap.size(); ++i) mean.per_category_ap[i].ap += o.per_category_ap[i].ap;
    mean.ap_base += o.ap_base;
    mean.ap_novel += o.ap_novel;
    mean.ap_all += o.ap_all;
    for (std::size_t i = 0; i < mean.confusion.counts.size(); ++i)
      for (std::size_t j = 0; j < mean.confusion.counts[i].size(); ++j) {
        mean.confusion.counts[i][j] += o.confusion.counts[i][j];
        mean.confusion.ratios[i][j] += o.confusion.ratios[i][j];
      }
  }
  for (auto& c : mean.per_category_ap) c.ap /= n;
  mean.ap_base /= n;
  mean.ap_novel /= n;
  mean.ap_all /= n;
  for (auto& row : mean.confusion.counts)
    for (double& v : row) v /= n;
  for (auto& row : mean.confusion.ratios)
    for (double& v : row) v /= n;
  return mean;
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& detections) {
  std::ostringstream os;
  for (const auto& d : detections) {
    json r = {{"image_id", d.image_id}, {"category", d.category.name}, {"x1", d.box.x1},          {"y1", d.box.y1},
              {"x2", d.box.x2},         {"y2", d.box.y2},              {"confidence", d.confidence}};
    os << r.dump() << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<Detection> read_detections(const std::filesystem::path& path, const std::vector<CategoryId>& categories) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detections file: " + path.string());
  std::vector<Detection> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json r = json::parse(line);
      Detection d;
      d.image_id = r.at("image_id").get<std::string>();
      d.category = find_category(categories, r.at("category").get<std::string>());
      d.box = {r.at("x1").get<double>(), r.at("y1").get<double>(), r.at("x2").get<double>(), r.at("y2").get<double>()};
      d.confidence = r.at("confidence").get<double>();
      if (!d.box.valid()) throw DataError("invalid box");
      if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw DataError("confidence outside [0,1]");
      out.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string report_to_json(const EvalReport& report) {
  json aps = json::array();
  for (const auto& c : report.per_category_ap) aps.push_back({{"category", c.category}, {"ap", c.ap}});
  json j = {{"format", "dkan-eval-report"},
            {"version", 1},
            {"tag", report.tag},
            {"base_categories", report.base_categories},
            {"novel_categories", report.novel_categories},
            {"per_category_ap", aps},
            {"ap_base", report.ap_base},
            {"ap_novel", report.ap_novel},
            {"ap_all", report.ap_all},
            {"confusion", {{"labels", report.confusion.labels},
                           {"counts", report.confusion.counts},
                           {"ratios", report.confusion.ratios}}},
            {"warnings", report.warnings}};
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "dkan-eval-report") throw DataError("not an evaluation report");
    r.tag = j.value("tag", "");
    r.base_categories = j.at("base_categories").get<std::vector<std::string>>();
    r.novel_categories = j.at("novel_categories").get<std::vector<std::string>>();
    for (const auto& a : j.at("per_category_ap"))
      r.per_category_ap.push_back({a.at("category").get<std::string>(), a.at("ap").get<double>()});
    r.ap_base = j.at("ap_base").get<double>();
    r.ap_novel = j.at("ap_novel").get<double>();
    r.ap_all = j.at("ap_all").get<double>();
    const auto& cm = j.at("confusion");
    r.confusion.labels = cm.at("labels").get<std::vector<std::string>>();
    r.confusion.counts = cm.at("counts").get<std::vector<std::vector<double>>>();
    r.confusion.ratios = cm.at("ratios").get<std::vector<std::vector<double>>>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

}  // namespace dkan
