#include "dkan/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "dkan/error.hpp"
#include "dkan/network.hpp"

namespace dkan {

std::string to_string(HeadKind kind) { return kind == HeadKind::cosine ? "cosine" : "linear"; }

HeadKind head_kind_from_string(const std::string& text) {
  if (text == "cosine") return HeadKind::cosine;
  if (text == "linear" || text == "fc") return HeadKind::linear;
  throw UsageError("unknown head kind '" + text + "' (expected cosine or linear)");
}

void DetectorConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid detector config: " + what);
  };
  require(input_size >= 32, "input_size must be at least 32");
  require(in_channels >= 1, "in_channels must be positive");
  for (int c : backbone_channels) require(c >= 1, "backbone channels must be positive");
  require(fpn_channels >= 1 && representation_dim >= 1, "fpn_channels and representation_dim must be positive");
  require(roi_resolution >= 1 && roi_sampling_ratio >= 1, "ROI resolution and sampling ratio must be positive");
  require(roi_canonical_size > 0, "roi_canonical_size must be positive");
  require(anchor_scale > 0 && !anchor_ratios.empty(), "anchor settings");
  for (double r : anchor_ratios) require(r > 0, "anchor ratios must be positive");
  require(rpn_negative_iou <= rpn_positive_iou, "rpn IoU thresholds out of order");
  require(rpn_batch_per_image >= 1 && roi_batch_per_image >= 1, "sampling batch sizes must be positive");
  require(rpn_positive_fraction > 0 && rpn_positive_fraction <= 1, "rpn_positive_fraction in (0,1]");
  require(roi_positive_fraction > 0 && roi_positive_fraction <= 1, "roi_positive_fraction in (0,1]");
  require(rpn_pre_nms_top_n >= 1 && rpn_post_nms_train >= 1 && rpn_post_nms_test >= 1, "proposal counts");
  require(rpn_nms_iou > 0 && rpn_nms_iou < 1, "rpn_nms_iou in (0,1)");
  require(alpha > 0, "alpha must be positive");
}

DetectorConfig desk_detector_config() {
  DetectorConfig c;
  c.input_size = 64;
  c.roi_canonical_size = 32.0;
  c.anchor_scale = 2.0;
  c.rpn_batch_per_image = 64;
  c.rpn_pre_nms_top_n = 200;
  c.rpn_post_nms_train = 64;
  c.rpn_post_nms_test = 50;
  c.roi_batch_per_image = 32;
  return c;
}

// ---------------------------------------------------------------------------
// Parameter store

Param& DetectorParams::add(std::string name, std::string group, std::vector<int> shape) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  index_[name] = params_.size();
  params_.push_back(Param{std::move(name), std::move(group), std::move(shape), std::vector<double>(n, 0.0), false});
  return params_.back();
}

std::size_t DetectorParams::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return it->second;
}

Param& DetectorParams::get(const std::string& name) { return params_[index_of(name)]; }
const Param& DetectorParams::get(const std::string& name) const { return params_[index_of(name)]; }

std::size_t DetectorParams::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void DetectorParams::set_group_frozen(const std::string& group, bool frozen) {
  for (auto& p : params_)
    if (p.group == group) p.frozen = frozen;
}

void DetectorParams::set_all_frozen(bool frozen) {
  for (auto& p : params_) p.frozen = frozen;
}

std::string DetectorParams::checksum() const {
  std::vector<unsigned char> bytes;
  for (const auto& p : params_) {
    bytes.insert(bytes.end(), p.name.begin(), p.name.end());
    bytes.push_back(0);
    for (int d : p.shape) {
      const auto* b = reinterpret_cast<const unsigned char*>(&d);
      bytes.insert(bytes.end(), b, b + sizeof d);
    }
    const auto* b = reinterpret_cast<const unsigned char*>(p.data.data());
    bytes.insert(bytes.end(), b, b + p.data.size() * sizeof(double));
  }
  return sha1_hex(bytes);
}

ParamGrads::ParamGrads(const DetectorParams& params) {
  values.reserve(params.size());
  for (const auto& p : params.all()) values.emplace_back(p.size(), 0.0);
}

void ParamGrads::zero() {
  for (auto& v : values) std::fill(v.begin(), v.end(), 0.0);
}

void ParamGrads::add(const ParamGrads& other, double scale) {
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values[i].size(); ++j) values[i][j] += scale * other.values[i][j];
}

double ParamGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& v : values)
    for (double x : v) s += x * x;
  return s;
}

int DetectorModel::label_of(const CategoryId& category) const {
  for (int i = 0; i < num_base(); ++i)
    if (base_categories[i] == category) return i;
  for (int j = 0; j < num_novel(); ++j)
    if (novel_categories[j] == category) return num_base() + j;
  throw DataError("category " + category.name + " is not known to the detector");
}

const CategoryId& DetectorModel::category_of_label(int label) const {
  if (label < 0 || label >= background_label()) throw Error("label " + std::to_string(label) + " is not a category");
  return label < num_base() ? base_categories[label] : novel_categories[label - num_base()];
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void fill_normal(Param& p, Rng& rng, double stddev) {
  for (double& v : p.data) v = stddev * rng.normal();
}

void fill_uniform(Param& p, Rng& rng, double bound) {
  for (double& v : p.data) v = rng.uniform(-bound, bound);
}

int fan_in(const Param& p) {
  int n = 1;
  for (std::size_t i = 1; i < p.shape.size(); ++i) n *= p.shape[i];
  return n;
}

void add_class_head(DetectorModel& model, const std::string& which, int rows, Rng& rng) {
  const int d = model.config.representation_dim;
  const std::string group = "cls_" + which;
  fill_normal(model.params.add("cls." + which + ".weight", group, {rows, d}), rng, 0.01);
  if (model.config.head_kind == HeadKind::linear) model.params.add("cls." + which + ".bias", group, {rows});
}

}  // namespace

DetectorModel create_detector(const DetectorConfig& config, const std::vector<CategoryId>& base_categories,
                              std::uint64_t seed) {
  config.validate();
  if (base_categories.empty()) throw UsageError("detector needs at least one base category");
  DetectorModel m;
  m.config = config;
  m.base_categories = base_categories;
  Rng rng(seed);
  auto& P = m.params;

  int in = config.in_channels;
  for (int i = 0; i < 5; ++i) {
    const int out = config.backbone_channels[i];
    auto& w = P.add("backbone.conv" + std::to_string(i + 1) + ".weight", "backbone", {out, in, 3, 3});
    fill_normal(w, rng, std::sqrt(2.0 / fan_in(w)));
    P.add("backbone.conv" + std::to_string(i + 1) + ".bias", "backbone", {out});
    in = out;
  }
  const int C = config.fpn_channels;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const std::string lv = std::to_string(l + 2);
    auto& lat = P.add("fpn.lateral" + lv + ".weight", "fpn", {C, config.backbone_channels[l + 1], 1, 1});
    fill_uniform(lat, rng, std::sqrt(3.0 / fan_in(lat)));
    P.add("fpn.lateral" + lv + ".bias", "fpn", {C});
    auto& out = P.add("fpn.output" + lv + ".weight", "fpn", {C, C, 3, 3});
    fill_uniform(out, rng, std::sqrt(3.0 / fan_in(out)));
    P.add("fpn.output" + lv + ".bias", "fpn", {C});
  }
  const int A = config.num_anchors();
  fill_normal(P.add("rpn.conv.weight", "rpn", {C, C, 3, 3}), rng, 0.01);
  P.add("rpn.conv.bias", "rpn", {C});
  fill_normal(P.add("rpn.cls.weight", "rpn", {A, C, 1, 1}), rng, 0.01);
  P.add("rpn.cls.bias", "rpn", {A});
  fill_normal(P.add("rpn.bbox.weight", "rpn", {4 * A, C, 1, 1}), rng, 0.01);
  P.add("rpn.bbox.bias", "rpn", {4 * A});

  const int D = config.representation_dim;
  const int pooled = C * config.roi_resolution * config.roi_resolution;
  auto& fc6 = P.add("roi.fc6.weight", "roi", {D, pooled});
  fill_uniform(fc6, rng, std::sqrt(3.0 / fan_in(fc6)));
  P.add("roi.fc6.bias", "roi", {D});
  auto& fc7 = P.add("roi.fc7.weight", "roi", {D, D});
  fill_uniform(fc7, rng, std::sqrt(3.0 / fan_in(fc7)));
  P.add("roi.fc7.bias", "roi", {D});

  add_class_head(m, "base", m.num_base() + 1, rng);
  fill_normal(P.add("bbox.weight", "bbox", {4, D}), rng, 0.001);
  P.add("bbox.bias", "bbox", {4});
  return m;
}

void add_novel_head(DetectorModel& model, const std::vector<CategoryId>& novel_categories, std::uint64_t seed) {
  if (!model.novel_categories.empty()) throw Error("detector already has a novel head");
  if (novel_categories.empty()) throw UsageError("novel head needs at least one category");
  for (const auto& c : novel_categories)
    for (const auto& b : model.base_categories)
      if (c == b) throw UsageError("category " + c.name + " is both base and novel");
  model.novel_categories = novel_categories;
  Rng rng(seed);
  add_class_head(model, "novel", model.num_novel(), rng);
}

// ---------------------------------------------------------------------------
// Input

PreparedInput prepare_input(const DefectImage& image, const DetectorConfig& config) {
  if (!image.has_pixels()) throw DataError("image " + image.id + " has no pixel data loaded");
  const int S = config.input_size;
  PreparedInput out;
  out.tensor = Tensor3(config.in_channels, S, S);
  out.scale_x = static_cast<double>(S) / image.width;
  out.scale_y = static_cast<double>(S) / image.height;
  auto plane = out.tensor.channel(0);
  for (int y = 0; y < S; ++y) {
    const double sy = std::clamp((y + 0.5) / out.scale_y - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < S; ++x) {
      const double sx = std::clamp((x + 0.5) / out.scale_x - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * image.pixel(y0, x0) + fx * image.pixel(y0, x1)) +
                       fy * ((1 - fx) * image.pixel(y1, x0) + fx * image.pixel(y1, x1));
      plane[static_cast<std::size_t>(y) * S + x] = 2.0 * v - 1.0;
    }
  }
  for (int c = 1; c < config.in_channels; ++c) std::copy(plane.begin(), plane.end(), out.tensor.channel(c).begin());
  return out;
}

FeaturePyramid extract_pyramid(const DefectImage& image, const DetectorModel& model) {
  return extract_pyramid(prepare_input(image, model.config).tensor, model);
}

// ---------------------------------------------------------------------------
// RPN

std::vector<BoundingBox> level_anchors(int height, int width, int stride, const DetectorConfig& config) {
  std::vector<BoundingBox> out;
  out.reserve(static_cast<std::size_t>(height) * width * config.num_anchors());
  const double size = config.anchor_scale * stride;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
      for (double r : config.anchor_ratios) {
        // r is height / width at constant area
        const double w = size / std::sqrt(r), h = size * std::sqrt(r);
        out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  }
  return out;
}

RpnOutputs rpn_forward(const FeaturePyramid& pyramid, const DetectorModel& model) {
  return rpn_head_forward(pyramid, model).outputs;
}

std::vector<std::size_t> nms(const std::vector<BoundingBox>& boxes, const std::vector<double>& scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) throw Error("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou(boxes[i], boxes[j]) > iou_threshold) removed[j] = 1;
    }
  }
  return keep;
}

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

std::vector<Proposal> proposals_from_rpn(const RpnOutputs& rpn, int image_size, int pre_nms_top_n,
                                         int max_proposals, double nms_iou) {
  std::vector<BoundingBox> boxes;
  std::vector<double> logits;
  const double S = image_size;
  for (int l = 0; l < kPyramidLevels; ++l) {
    std::vector<std::size_t> idx;
    for (std::size_t a = 0; a < rpn.anchors.size(); ++a)
      if (rpn.anchor_level[a] == l) idx.push_back(a);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return rpn.objectness[a] > rpn.objectness[b]; });
    int taken = 0;
    for (std::size_t a : idx) {
      if (taken >= pre_nms_top_n) break;
      BoundingBox b = decode_box(rpn.anchors[a], rpn.deltas[a]);
      b = {std::clamp(b.x1, 0.0, S), std::clamp(b.y1, 0.0, S), std::clamp(b.x2, 0.0, S), std::clamp(b.y2, 0.0, S)};
      if (!std::isfinite(rpn.objectness[a]) || b.width() < 1e-3 || b.height() < 1e-3) continue;
      boxes.push_back(b);
      logits.push_back(rpn.objectness[a]);
      ++taken;
    }
  }
  const auto keep = nms(boxes, logits, nms_iou);
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < keep.size() && static_cast<int>(out.size()) < max_proposals; ++i)
    out.push_back({boxes[keep[i]], sigmoid(logits[keep[i]])});
  return out;
}

std::vector<Proposal> propose_regions(const FeaturePyramid& pyramid, const DetectorModel& model, int max_proposals,
                                      double nms_iou) {
  if (pyramid.empty()) throw Error("propose_regions: empty pyramid");
  if (max_proposals < 1) throw UsageError("max_proposals must be positive");
  if (!(nms_iou > 0 && nms_iou < 1)) throw UsageError("nms_iou must lie in (0,1)");
  const int image_size = pyramid.levels[0].height * pyramid.strides[0];
  return proposals_from_rpn(rpn_forward(pyramid, model), std::min(image_size, model.config.input_size),
                            model.config.rpn_pre_nms_top_n, max_proposals, nms_iou);
}

// ---------------------------------------------------------------------------
// ROI pooling

int roi_level(const BoundingBox& box, const DetectorConfig& config) {
  const double s = std::sqrt(std::max(box.area(), 1e-12));
  const int lvl = static_cast<int>(std::floor(4.0 + std::log2(s / config.roi_canonical_size + 1e-8)));
  return std::clamp(lvl, 2, 5) - 2;
}

namespace {

// Visits every bilinear tap of ROIAlign (half-pixel aligned) as
// f(output_bin, feature_index_within_channel, weight). Weights already
// include the 1 / samples^2 averaging.
template <typename F>
void for_each_tap(int H, int W, int stride, const BoundingBox& box, int R, int S, F&& f) {
  const double x1 = box.x1 / stride - 0.5, y1 = box.y1 / stride - 0.5;
  const double bw = (box.x2 / stride - 0.5 - x1) / R, bh = (box.y2 / stride - 0.5 - y1) / R;
  const double norm = 1.0 / (S * S);
  for (int ph = 0; ph < R; ++ph) {
    for (int pw = 0; pw < R; ++pw) {
      const int bin = ph * R + pw;
      for (int iy = 0; iy < S; ++iy) {
        double y = y1 + ph * bh + (iy + 0.5) * bh / S;
        for (int ix = 0; ix < S; ++ix) {
          double x = x1 + pw * bw + (ix + 0.5) * bw / S;
          if (y < -1.0 || y > H || x < -1.0 || x > W) continue;
          double yy = std::max(y, 0.0), xx = std::max(x, 0.0);
          int y_lo = static_cast<int>(yy), x_lo = static_cast<int>(xx);
          int y_hi, x_hi;
          if (y_lo >= H - 1) {
            y_lo = y_hi = H - 1;
            yy = y_lo;
          } else {
            y_hi = y_lo + 1;
          }
          if (x_lo >= W - 1) {
            x_lo = x_hi = W - 1;
            xx = x_lo;
          } else {
            x_hi = x_lo + 1;
          }
          const double ly = yy - y_lo, lx = xx - x_lo, hy = 1 - ly, hx = 1 - lx;
          f(bin, y_lo * W + x_lo, hy * hx * norm);
          f(bin, y_lo * W + x_hi, hy * lx * norm);
          f(bin, y_hi * W + x_lo, ly * hx * norm);
          f(bin, y_hi * W + x_hi, ly * lx * norm);
        }
      }
    }
  }
}

}  // namespace

std::vector<double> roi_align(const Tensor3& level, int stride, const BoundingBox& box, int resolution,
                              int sampling_ratio) {
  const int bins = resolution * resolution;
  std::vector<double> out(static_cast<std::size_t>(level.channels) * bins, 0.0);
  for (int c = 0; c < level.channels; ++c) {
    const auto plane = level.channel(c);
    double* o = out.data() + static_cast<std::size_t>(c) * bins;
    for_each_tap(level.height, level.width, stride, box, resolution, sampling_ratio,
                 [&](int bin, int idx, double w) { o[bin] += w * plane[idx]; });
  }
  return out;
}

void roi_align_backward(const Tensor3& level, int stride, const BoundingBox& box, int resolution, int sampling_ratio,
                        std::span<const double> grad_pooled, Tensor3& grad_level) {
  const int bins = resolution * resolution;
  for (int c = 0; c < level.channels; ++c) {
    auto g = grad_level.channel(c);
    const double* go = grad_pooled.data() + static_cast<std::size_t>(c) * bins;
    for_each_tap(level.height, level.width, stride, box, resolution, sampling_ratio,
                 [&](int bin, int idx, double w) { g[idx] += w * go[bin]; });
  }
}

std::vector<RoiFeature> pool_roi_features(const FeaturePyramid& pyramid, const std::vector<Proposal>& proposals,
                                          const DetectorModel& model) {
  if (pyramid.empty()) throw Error("pool_roi_features: empty pyramid");
  const double S = model.config.input_size;
  std::vector<BoundingBox> boxes;
  boxes.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const BoundingBox b = proposals[i].box.clamped(S, S);
    if (!b.valid())
      throw DataError("proposal " + std::to_string(i) + " collapses to zero area after clamping to the image");
    boxes.push_back(b);
  }
  return roi_head_forward(pyramid, boxes, model).features;
}

HeadOutputs apply_heads(const RoiFeature& feature, const DetectorModel& model) {
  return heads_forward(feature, model);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

double smooth_l1(double d, double beta, double& grad) {
  const double a = std::abs(d);
  if (a < beta) {
    grad = d / beta;
    return 0.5 * d * d / beta;
  }
  grad = d > 0 ? 1.0 : -1.0;
  return a - 0.5 * beta;
}

}  // namespace

RpnLoss rpn_loss(const std::vector<double>& objectness, const std::vector<std::array<double, 4>>& deltas,
                 const RpnTargets& targets) {
  const std::size_t n = objectness.size();
  if (deltas.size() != n || targets.labels.size() != n || targets.deltas.size() != n)
    throw Error("rpn_loss: inputs and targets cover different anchor counts");
  RpnLoss out;
  out.grad_objectness.assign(n, 0.0);
  out.grad_deltas.assign(n, {0, 0, 0, 0});
  std::size_t sampled = 0;
  for (int l : targets.labels) sampled += l >= 0;
  if (sampled == 0) return out;
  const double inv = 1.0 / static_cast<double>(sampled);
  constexpr double kBeta = 1.0 / 9.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = targets.labels[i];
    if (label < 0) continue;
    const double x = objectness[i], y = label;
    out.classification += (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)))) * inv;
    out.grad_objectness[i] = (sigmoid(x) - y) * inv;
    if (label == 1) {
      for (int k = 0; k < 4; ++k) {
        double g;
        out.regression += smooth_l1(deltas[i][k] - targets.deltas[i][k], kBeta, g) * inv;
        out.grad_deltas[i][k] = g * inv;
      }
    }
  }
  return out;
}

RcnnLoss rcnn_loss(const std::vector<std::vector<double>>& merged_logits,
                   const std::vector<std::array<double, 4>>& deltas, const RcnnTargets& targets) {
  const std::size_t n = merged_logits.size();
  if (deltas.size() != n || targets.labels.size() != n || targets.deltas.size() != n)
    throw Error("rcnn_loss: inputs and targets cover different ROI counts");
  RcnnLoss out;
  out.grad_logits.resize(n);
  out.grad_deltas.assign(n, {0, 0, 0, 0});
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = merged_logits[i];
    const int label = targets.labels[i];
    const int bg = static_cast<int>(z.size()) - 1;
    if (label < 0 || label > bg) throw Error("rcnn_loss: label out of range");
    const auto logp = log_softmax(z);
    out.classification -= logp[label] * inv;
    out.grad_logits[i].resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k)
      out.grad_logits[i][k] = (std::exp(logp[k]) - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv;
    if (label != bg) {
      for (int k = 0; k < 4; ++k) {
        double g;
        out.regression += smooth_l1(deltas[i][k] - targets.deltas[i][k], 1.0, g) * inv;
        out.grad_deltas[i][k] = g * inv;
      }
    }
  }
  return out;
}

RpnTargets assign_rpn_targets(const std::vector<BoundingBox>& anchors, const std::vector<BoundingBox>& gt_boxes,
                              const DetectorConfig& config, Rng& rng) {
  const std::size_t n = anchors.size();
  RpnTargets t;
  t.labels.assign(n, 0);
  t.deltas.assign(n, {0, 0, 0, 0});
  std::vector<int> match(n, -1);
  if (!gt_boxes.empty()) {
    std::vector<double> best_for_gt(gt_boxes.size(), 0.0);
    std::vector<double> best(n, 0.0);
    std::vector<std::vector<double>> ious(n, std::vector<double>(gt_boxes.size()));
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        const double v = iou(anchors[a], gt_boxes[g]);
        ious[a][g] = v;
        if (v > best[a]) best[a] = v, match[a] = static_cast<int>(g);
        best_for_gt[g] = std::max(best_for_gt[g], v);
      }
      if (match[a] < 0) match[a] = 0;
      t.labels[a] = best[a] >= config.rpn_positive_iou ? 1 : (best[a] < config.rpn_negative_iou ? 0 : -1);
    }
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      if (best_for_gt[g] <= 0) continue;
      for (std::size_t a = 0; a < n; ++a)
        if (ious[a][g] == best_for_gt[g]) t.labels[a] = 1;
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < n; ++a) {
    if (t.labels[a] == 1) pos.push_back(a);
    else if (t.labels[a] == 0) neg.push_back(a);
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  const std::size_t max_pos =
      static_cast<std::size_t>(config.rpn_batch_per_image * config.rpn_positive_fraction);
  const std::size_t num_pos = std::min(pos.size(), max_pos);
  const std::size_t num_neg = std::min(neg.size(), static_cast<std::size_t>(config.rpn_batch_per_image) - num_pos);
  for (std::size_t i = num_pos; i < pos.size(); ++i) t.labels[pos[i]] = -1;
  for (std::size_t i = num_neg; i < neg.size(); ++i) t.labels[neg[i]] = -1;
  for (std::size_t i = 0; i < num_pos; ++i) {
    const std::size_t a = pos[i];
    t.deltas[a] = encode_box(anchors[a], gt_boxes[match[a]]);
  }
  return t;
}

SampledRois sample_rois(const std::vector<Proposal>& proposals, const std::vector<BoundingBox>& gt_boxes,
                        const std::vector<int>& gt_labels, int background_label, const DetectorConfig& config,
                        Rng& rng) {
  if (gt_boxes.size() != gt_labels.size()) throw Error("sample_rois: boxes and labels differ in length");
  std::vector<BoundingBox> cand;
  cand.reserve(proposals.size() + gt_boxes.size());
  for (const auto& p : proposals) cand.push_back(p.box);
  cand.insert(cand.end(), gt_boxes.begin(), gt_boxes.end());

  std::vector<std::size_t> fg, bg;
  std::vector<int> match(cand.size(), -1);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(cand[i], gt_boxes[g]);
      if (v > best) best = v, match[i] = static_cast<int>(g);
    }
    (best >= config.roi_foreground_iou ? fg : bg).push_back(i);
  }
  rng.shuffle(fg);
  rng.shuffle(bg);
  const std::size_t batch = config.roi_batch_per_image;
  const std::size_t num_fg =
      std::min(fg.size(), static_cast<std::size_t>(batch * config.roi_positive_fraction));
  const std::size_t num_bg = std::min(bg.size(), batch - num_fg);

  SampledRois out;
  for (std::size_t i = 0; i < num_fg; ++i) {
    const std::size_t c = fg[i];
    out.boxes.push_back(cand[c]);
    out.targets.labels.push_back(gt_labels[match[c]]);
    out.targets.deltas.push_back(encode_box(cand[c], gt_boxes[match[c]], config.roi_box_weights));
  }
  for (std::size_t i = 0; i < num_bg; ++i) {
    out.boxes.push_back(cand[bg[i]]);
    out.targets.labels.push_back(background_label);
    out.targets.deltas.push_back({0, 0, 0, 0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<Detection> detect(const DefectImage& image, const DetectorModel& model, const DetectOptions& options) {
  const auto input = prepare_input(image, model.config);
  const FeaturePyramid pyramid = extract_pyramid(input.tensor, model);
  const auto proposals =
      propose_regions(pyramid, model, model.config.rpn_post_nms_test, model.config.rpn_nms_iou);
  std::vector<Detection> out;
  if (proposals.empty()) return out;
  std::vector<BoundingBox> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  const auto roi = roi_head_forward(pyramid, boxes, model);

  const int num_classes = model.background_label();
  const double S = model.config.input_size;
  std::vector<std::vector<BoundingBox>> cls_boxes(num_classes);
  std::vector<std::vector<double>> cls_scores(num_classes);
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const auto scores = merge_head_scores(roi.heads[r]);
    BoundingBox b = decode_box(boxes[r], roi.heads[r].box_deltas, model.config.roi_box_weights);
    b = {std::clamp(b.x1, 0.0, S), std::clamp(b.y1, 0.0, S), std::clamp(b.x2, 0.0, S), std::clamp(b.y2, 0.0, S)};
    if (!b.valid()) continue;
    for (int c = 0; c < num_classes; ++c) {
      if (scores[c] > options.score_threshold) {
        cls_boxes[c].push_back(b);
        cls_scores[c].push_back(scores[c]);
      }
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t k : nms(cls_boxes[c], cls_scores[c], options.nms_iou)) {
      const BoundingBox& b = cls_boxes[c][k];
      out.push_back({image.id, model.category_of_label(c),
                     {b.x1 / input.scale_x, b.y1 / input.scale_y, b.x2 / input.scale_x, b.y2 / input.scale_y},
                     std::clamp(cls_scores[c][k], 0.0, 1.0)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  if (static_cast<int>(out.size()) > options.max_detections) out.resize(options.max_detections);
  return out;
}

}  // namespace dkan
