#include "dkan/network.hpp"

#include <cmath>

#include "dkan/error.hpp"
#include "dkan/kernels.hpp"

namespace dkan {

namespace {

using kernels::ConvShape;

std::span<const double> data_of(const DetectorModel& m, const std::string& name) { return m.params.get(name).data; }

std::span<double> grad_of(ParamGrads& g, const DetectorModel& m, const std::string& name) {
  return g.values[m.params.index_of(name)];
}

std::string stage_name(int i) { return "backbone.conv" + std::to_string(i + 1); }
std::string lateral_name(int l) { return "fpn.lateral" + std::to_string(l + 2); }
std::string output_name(int l) { return "fpn.output" + std::to_string(l + 2); }

ConvShape stage_shape(const DetectorConfig& c, int i) {
  return {i == 0 ? c.in_channels : c.backbone_channels[i - 1], c.backbone_channels[i], 3, 2, 1};
}
ConvShape lateral_shape(const DetectorConfig& c, int l) { return {c.backbone_channels[l + 1], c.fpn_channels, 1, 1, 0}; }
ConvShape output_shape(const DetectorConfig& c) { return {c.fpn_channels, c.fpn_channels, 3, 1, 1}; }

// dst += nearest-neighbour 2x upsample of src, cropped to dst's size.
void add_upsampled(const Tensor3& src, Tensor3& dst) {
  for (int c = 0; c < dst.channels; ++c)
    for (int y = 0; y < dst.height; ++y)
      for (int x = 0; x < dst.width; ++x) dst.at(c, y, x) += src.at(c, y / 2, x / 2);
}

// Adjoint of add_upsampled: dsrc += sum of the children of each source cell.
void add_upsampled_adjoint(const Tensor3& grad_dst, Tensor3& grad_src) {
  for (int c = 0; c < grad_dst.channels; ++c)
    for (int y = 0; y < grad_dst.height; ++y)
      for (int x = 0; x < grad_dst.width; ++x) grad_src.at(c, y / 2, x / 2) += grad_dst.at(c, y, x);
}

Tensor3 zeros_like(const Tensor3& t) { return Tensor3(t.channels, t.height, t.width); }

void add_into(Tensor3& dst, const Tensor3& src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Backbone + FPN

BackboneTrace backbone_forward(const Tensor3& input, const DetectorModel& model) {
  const auto& cfg = model.config;
  if (input.channels != cfg.in_channels)
    throw Error("input has " + std::to_string(input.channels) + " channels, detector expects " +
                std::to_string(cfg.in_channels));
  BackboneTrace t;
  t.input = input;
  const Tensor3* x = &t.input;
  for (int i = 0; i < 5; ++i) {
    kernels::conv2d_forward(*x, data_of(model, stage_name(i) + ".weight"), data_of(model, stage_name(i) + ".bias"),
                            stage_shape(cfg, i), t.stages[i]);
    kernels::relu_inplace(t.stages[i].data);
    x = &t.stages[i];
  }
  for (int l = kPyramidLevels - 1; l >= 0; --l) {
    kernels::conv2d_forward(t.stages[l + 1], data_of(model, lateral_name(l) + ".weight"),
                            data_of(model, lateral_name(l) + ".bias"), lateral_shape(cfg, l), t.merged[l]);
    if (l + 1 < kPyramidLevels) add_upsampled(t.merged[l + 1], t.merged[l]);
  }
  for (int l = 0; l < kPyramidLevels; ++l)
    kernels::conv2d_forward(t.merged[l], data_of(model, output_name(l) + ".weight"),
                            data_of(model, output_name(l) + ".bias"), output_shape(cfg), t.pyramid.levels[l]);
  return t;
}

void backbone_backward(const BackboneTrace& t, const DetectorModel& model,
                       const std::array<Tensor3, kPyramidLevels>& grad_pyramid, ParamGrads& grads) {
  const auto& cfg = model.config;
  std::array<Tensor3, kPyramidLevels> grad_merged;
  std::array<Tensor3, 5> grad_stage;
  for (int i = 0; i < 5; ++i) grad_stage[i] = zeros_like(t.stages[i]);

  // P2 first: each merged map feeds its own output conv and the level below.
  for (int l = 0; l < kPyramidLevels; ++l) {
    kernels::conv2d_backward(t.merged[l], data_of(model, output_name(l) + ".weight"), output_shape(cfg),
                             grad_pyramid[l], &grad_merged[l], grad_of(grads, model, output_name(l) + ".weight"),
                             grad_of(grads, model, output_name(l) + ".bias"));
    if (l > 0) add_upsampled_adjoint(grad_merged[l - 1], grad_merged[l]);
  }
  for (int l = 0; l < kPyramidLevels; ++l) {
    Tensor3 g;
    kernels::conv2d_backward(t.stages[l + 1], data_of(model, lateral_name(l) + ".weight"), lateral_shape(cfg, l),
                             grad_merged[l], &g, grad_of(grads, model, lateral_name(l) + ".weight"),
                             grad_of(grads, model, lateral_name(l) + ".bias"));
    add_into(grad_stage[l + 1], g);
  }
  for (int i = 4; i >= 0; --i) {
    kernels::relu_backward(t.stages[i].data, grad_stage[i].data);
    Tensor3 g;
    kernels::conv2d_backward(i == 0 ? t.input : t.stages[i - 1], data_of(model, stage_name(i) + ".weight"),
                             stage_shape(cfg, i), grad_stage[i], i == 0 ? nullptr : &g,
                             grad_of(grads, model, stage_name(i) + ".weight"),
                             grad_of(grads, model, stage_name(i) + ".bias"));
    if (i > 0) add_into(grad_stage[i - 1], g);
  }
}

FeaturePyramid extract_pyramid(const Tensor3& input, const DetectorModel& model) {
  if (input.height != model.config.input_size || input.width != model.config.input_size)
    throw Error("input is " + input.shape_string() + ", detector expects " +
                std::to_string(model.config.input_size) + " px square");
  FeaturePyramid p = backbone_forward(input, model).pyramid;
  for (int l = 0; l < kPyramidLevels; ++l)
    for (double v : p.levels[l].data)
      if (!std::isfinite(v)) throw Error(std::string("non-finite activation in pyramid level ") + kPyramidNames[l]);
  return p;
}

// ---------------------------------------------------------------------------
// RPN head

RpnTrace rpn_head_forward(const FeaturePyramid& pyramid, const DetectorModel& model) {
  if (pyramid.empty()) throw Error("RPN: empty pyramid");
  const auto& cfg = model.config;
  const int C = cfg.fpn_channels, A = cfg.num_anchors();
  RpnTrace t;
  auto& out = t.outputs;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const Tensor3& P = pyramid.levels[l];
    kernels::conv2d_forward(P, data_of(model, "rpn.conv.weight"), data_of(model, "rpn.conv.bias"),
                            {C, C, 3, 1, 1}, t.hidden[l]);
    kernels::relu_inplace(t.hidden[l].data);
    Tensor3 obj, del;
    kernels::conv2d_forward(t.hidden[l], data_of(model, "rpn.cls.weight"), data_of(model, "rpn.cls.bias"),
                            {C, A, 1, 1, 0}, obj);
    kernels::conv2d_forward(t.hidden[l], data_of(model, "rpn.bbox.weight"), data_of(model, "rpn.bbox.bias"),
                            {C, 4 * A, 1, 1, 0}, del);
    const auto anchors = level_anchors(P.height, P.width, pyramid.strides[l], cfg);
    out.anchors.insert(out.anchors.end(), anchors.begin(), anchors.end());
    for (int y = 0; y < P.height; ++y) {
      for (int x = 0; x < P.width; ++x) {
        for (int a = 0; a < A; ++a) {
          out.anchor_level.push_back(l);
          out.objectness.push_back(obj.at(a, y, x));
          out.deltas.push_back({del.at(4 * a, y, x), del.at(4 * a + 1, y, x), del.at(4 * a + 2, y, x),
                                del.at(4 * a + 3, y, x)});
        }
      }
    }
  }
  return t;
}

void rpn_head_backward(const FeaturePyramid& pyramid, const RpnTrace& t, const DetectorModel& model,
                       const std::vector<double>& grad_objectness,
                       const std::vector<std::array<double, 4>>& grad_deltas, ParamGrads& grads,
                       std::array<Tensor3, kPyramidLevels>& grad_pyramid) {
  const auto& cfg = model.config;
  const int C = cfg.fpn_channels, A = cfg.num_anchors();
  std::size_t offset = 0;
  for (int l = 0; l < kPyramidLevels; ++l) {
    const Tensor3& H = t.hidden[l];
    Tensor3 gobj(A, H.height, H.width), gdel(4 * A, H.height, H.width);
    for (int y = 0; y < H.height; ++y) {
      for (int x = 0; x < H.width; ++x) {
        for (int a = 0; a < A; ++a, ++offset) {
          gobj.at(a, y, x) = grad_objectness[offset];
          for (int k = 0; k < 4; ++k) gdel.at(4 * a + k, y, x) = grad_deltas[offset][k];
        }
      }
    }
    Tensor3 gh, tmp;
    kernels::conv2d_backward(H, data_of(model, "rpn.cls.weight"), {C, A, 1, 1, 0}, gobj, &gh,
                             grad_of(grads, model, "rpn.cls.weight"), grad_of(grads, model, "rpn.cls.bias"));
    kernels::conv2d_backward(H, data_of(model, "rpn.bbox.weight"), {C, 4 * A, 1, 1, 0}, gdel, &tmp,
                             grad_of(grads, model, "rpn.bbox.weight"), grad_of(grads, model, "rpn.bbox.bias"));
    add_into(gh, tmp);
    kernels::relu_backward(H.data, gh.data);
    kernels::conv2d_backward(pyramid.levels[l], data_of(model, "rpn.conv.weight"), {C, C, 3, 1, 1}, gh, &tmp,
                             grad_of(grads, model, "rpn.conv.weight"), grad_of(grads, model, "rpn.conv.bias"));
    add_into(grad_pyramid[l], tmp);
  }
}

// ---------------------------------------------------------------------------
// ROI head

namespace {

void class_logits(const RoiFeature& f, const DetectorModel& m, const std::string& which, int rows,
                  std::vector<double>& out) {
  out.assign(rows, 0.0);
  if (rows == 0) return;
  const auto w = data_of(m, "cls." + which + ".weight");
  if (m.config.head_kind == HeadKind::cosine)
    cosine_scores(f, w, rows, m.config.alpha, out);
  else
    kernels::linear_forward(f, w, data_of(m, "cls." + which + ".bias"), out);
}

void class_logits_backward(const RoiFeature& f, const DetectorModel& m, const std::string& which, int rows,
                           std::span<const double> grad_out, std::span<double> grad_f, ParamGrads& grads) {
  if (rows == 0) return;
  const auto w = data_of(m, "cls." + which + ".weight");
  if (m.config.head_kind == HeadKind::cosine)
    cosine_scores_backward(f, w, rows, m.config.alpha, grad_out, grad_f, grad_of(grads, m, "cls." + which + ".weight"));
  else
    kernels::linear_backward(f, w, grad_out, grad_f, grad_of(grads, m, "cls." + which + ".weight"),
                             grad_of(grads, m, "cls." + which + ".bias"));
}

}  // namespace

HeadOutputs heads_forward(const RoiFeature& feature, const DetectorModel& model) {
  if (static_cast<int>(feature.size()) != model.config.representation_dim)
    throw Error("ROI feature has dimension " + std::to_string(feature.size()) + ", heads expect " +
                std::to_string(model.config.representation_dim));
  HeadOutputs h;
  class_logits(feature, model, "base", model.num_base() + 1, h.base_logits);
  class_logits(feature, model, "novel", model.num_novel(), h.novel_logits);
  kernels::linear_forward(feature, data_of(model, "bbox.weight"), data_of(model, "bbox.bias"), h.box_deltas);
  return h;
}

RoiTrace roi_head_forward(const FeaturePyramid& pyramid, const std::vector<BoundingBox>& boxes,
                          const DetectorModel& model) {
  const auto& cfg = model.config;
  const int D = cfg.representation_dim;
  RoiTrace t;
  t.boxes = boxes;
  const std::size_t n = boxes.size();
  t.levels.resize(n);
  t.pooled.resize(n);
  t.fc6.resize(n);
  t.features.resize(n);
  t.heads.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int l = roi_level(boxes[r], cfg);
    t.levels[r] = l;
    t.pooled[r] = roi_align(pyramid.levels[l], pyramid.strides[l], boxes[r], cfg.roi_resolution,
                            cfg.roi_sampling_ratio);
    t.fc6[r].assign(D, 0.0);
    kernels::linear_forward(t.pooled[r], data_of(model, "roi.fc6.weight"), data_of(model, "roi.fc6.bias"), t.fc6[r]);
    kernels::relu_inplace(t.fc6[r]);
    t.features[r].assign(D, 0.0);
    kernels::linear_forward(t.fc6[r], data_of(model, "roi.fc7.weight"), data_of(model, "roi.fc7.bias"),
                            t.features[r]);
    kernels::relu_inplace(t.features[r]);
    t.heads[r] = heads_forward(t.features[r], model);
  }
  return t;
}

void roi_head_backward(const FeaturePyramid& pyramid, const RoiTrace& t, const DetectorModel& model,
                       const RoiHeadGrads& up, ParamGrads& grads, std::array<Tensor3, kPyramidLevels>& grad_pyramid) {
  const auto& cfg = model.config;
  const int D = cfg.representation_dim;
  for (std::size_t r = 0; r < t.boxes.size(); ++r) {
    const auto& f = t.features[r];
    std::vector<double> gf(D, 0.0);
    class_logits_backward(f, model, "base", model.num_base() + 1, up.base_logits[r], gf, grads);
    class_logits_backward(f, model, "novel", model.num_novel(), up.novel_logits[r], gf, grads);
    kernels::linear_backward(f, data_of(model, "bbox.weight"), up.deltas[r], gf, grad_of(grads, model, "bbox.weight"),
                             grad_of(grads, model, "bbox.bias"));
    kernels::relu_backward(f, gf);
    std::vector<double> g6(D, 0.0);
    kernels::linear_backward(t.fc6[r], data_of(model, "roi.fc7.weight"), gf, g6,
                             grad_of(grads, model, "roi.fc7.weight"), grad_of(grads, model, "roi.fc7.bias"));
    kernels::relu_backward(t.fc6[r], g6);
    std::vector<double> gp(t.pooled[r].size(), 0.0);
    kernels::linear_backward(t.pooled[r], data_of(model, "roi.fc6.weight"), g6, gp,
                             grad_of(grads, model, "roi.fc6.weight"), grad_of(grads, model, "roi.fc6.bias"));
    const int l = t.levels[r];
    roi_align_backward(pyramid.levels[l], pyramid.strides[l], t.boxes[r], cfg.roi_resolution, cfg.roi_sampling_ratio,
                       gp, grad_pyramid[l]);
  }
}

// ---------------------------------------------------------------------------
// Training image

TrainSample make_train_sample(const DefectImage& image, const DetectorModel& model) {
  auto in = prepare_input(image, model.config);
  TrainSample s;
  s.id = image.id;
  s.input = std::move(in.tensor);
  for (const auto& inst : image.instances) {
    const auto& b = inst.box;
    s.boxes.push_back({b.x1 * in.scale_x, b.y1 * in.scale_y, b.x2 * in.scale_x, b.y2 * in.scale_y});
    s.labels.push_back(model.label_of(inst.category));
  }
  return s;
}

ImageStep forward_image(const DetectorModel& model, const TrainSample& sample, std::uint64_t seed,
                        const TeacherView& teacher, const std::vector<Proposal>* proposals) {
  const auto& cfg = model.config;
  ImageStep s;
  s.backbone = backbone_forward(sample.input, model);
  const FeaturePyramid& pyr = s.backbone.pyramid;
  s.rpn = rpn_head_forward(pyr, model);

  Rng rng(seed);
  const RpnTargets anchors = assign_rpn_targets(s.rpn.outputs.anchors, sample.boxes, cfg, rng);
  s.rpn_loss = rpn_loss(s.rpn.outputs.objectness, s.rpn.outputs.deltas, anchors);

  s.proposals = proposals ? *proposals
                          : proposals_from_rpn(s.rpn.outputs, cfg.input_size, cfg.rpn_pre_nms_top_n,
                                               cfg.rpn_post_nms_train, cfg.rpn_nms_iou);
  const SampledRois rois = sample_rois(s.proposals, sample.boxes, sample.labels, model.background_label(), cfg, rng);
  s.roi = roi_head_forward(pyr, rois.boxes, model);

  std::vector<std::vector<double>> merged;
  std::vector<std::array<double, 4>> deltas;
  for (const auto& h : s.roi.heads) {
    merged.push_back(merged_logits(h));
    deltas.push_back(h.box_deltas);
  }
  s.rcnn_loss = rcnn_loss(merged, deltas, rois.targets);

  if (teacher.model) {
    const DetectorModel& tm = *teacher.model;
    if (tm.num_base() != model.num_base())
      throw Error("teacher scores " + std::to_string(tm.num_base()) + " base categories, student " +
                  std::to_string(model.num_base()));
    const Temperature tau(teacher.tau);
    const FeaturePyramid tpyr = backbone_forward(sample.input, tm).pyramid;
    s.fka = fka_loss(tpyr, pyr, tau, &s.fka_grad);
    const RoiTrace troi = roi_head_forward(tpyr, rois.boxes, tm);
    std::vector<std::vector<double>> student_logits, teacher_logits;
    for (std::size_t r = 0; r < rois.boxes.size(); ++r) {
      const auto sl = s.roi.heads[r].base_category_logits();
      const auto tl = troi.heads[r].base_category_logits();
      student_logits.emplace_back(sl.begin(), sl.end());
      teacher_logits.emplace_back(tl.begin(), tl.end());
    }
    s.lka = lka_loss(student_logits, teacher_logits, tau, &s.lka_grad);
    s.distilled = true;
  }
  return s;
}

void backward_image(const DetectorModel& model, const ImageStep& s, const ImageGradScales& scales,
                    ParamGrads& grads) {
  const FeaturePyramid& pyr = s.backbone.pyramid;
  std::array<Tensor3, kPyramidLevels> grad_pyr;
  for (int l = 0; l < kPyramidLevels; ++l) grad_pyr[l] = zeros_like(pyr.levels[l]);

  const int nb = model.num_base(), nn = model.num_novel();
  const std::size_t n = s.num_rois();
  RoiHeadGrads up;
  up.base_logits.assign(n, std::vector<double>(nb + 1, 0.0));
  up.novel_logits.assign(n, std::vector<double>(nn, 0.0));
  up.deltas.assign(n, {0, 0, 0, 0});
  for (std::size_t r = 0; r < n; ++r) {
    const auto& g = s.rcnn_loss.grad_logits[r];
    for (int i = 0; i < nb; ++i) up.base_logits[r][i] = scales.rcnn * g[i];
    for (int j = 0; j < nn; ++j) up.novel_logits[r][j] = scales.rcnn * g[nb + j];
    up.base_logits[r][nb] = scales.rcnn * g[nb + nn];
    for (int k = 0; k < 4; ++k) up.deltas[r][k] = scales.rcnn * s.rcnn_loss.grad_deltas[r][k];
    if (s.distilled && scales.lka != 0.0)
      for (int i = 0; i < nb; ++i) up.base_logits[r][i] += scales.lka * s.lka_grad[r][i];
  }
  roi_head_backward(pyr, s.roi, model, up, grads, grad_pyr);

  std::vector<double> gobj = s.rpn_loss.grad_objectness;
  std::vector<std::array<double, 4>> gdel = s.rpn_loss.grad_deltas;
  for (double& v : gobj) v *= scales.rpn;
  for (auto& d : gdel)
    for (double& v : d) v *= scales.rpn;
  rpn_head_backward(pyr, s.rpn, model, gobj, gdel, grads, grad_pyr);

  if (s.distilled && scales.fka != 0.0)
    for (int l = 0; l < kPyramidLevels; ++l) add_into(grad_pyr[l], s.fka_grad[l], scales.fka);
  backbone_backward(s.backbone, model, grad_pyr, grads);
}

}  // namespace dkan
