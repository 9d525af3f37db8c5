#include "dkan/training.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include <nlohmann/json.hpp>
#include <omp.h>

#include "dkan/error.hpp"
#include "dkan/network.hpp"

namespace dkan {

std::string loss_record_json(const LossRecord& r) {
  nlohmann::json j = {{"step", r.step},         {"loss_rpn", r.loss_rpn},   {"loss_rcnn", r.loss_rcnn},
                      {"loss_fka", r.loss_fka}, {"loss_lka", r.loss_lka}, {"loss_total", r.loss_total}};
  return j.dump();
}

TeacherSnapshot::TeacherSnapshot(DetectorModel base) : model_(std::move(base)) {
  model_.params.set_all_frozen(true);
  checksum_ = model_.params.checksum();
}

void TeacherSnapshot::verify() const {
  const std::string now = current_checksum();
  if (now != checksum_) throw Error("teacher parameters changed during fine-tuning (" + checksum_ + " -> " + now + ")");
}

namespace {

// Salts for child seeds, so the streams of one run never overlap.
enum : std::uint64_t { kInitSalt = 1, kBatchSalt = 2, kSampleSalt = 3, kNovelHeadSalt = 4, kBaseShotSalt = 5 };

std::string describe(const LossRecord& r) {
  std::ostringstream os;
  os << "loss_rpn=" << r.loss_rpn << " loss_rcnn=" << r.loss_rcnn << " loss_fka=" << r.loss_fka
     << " loss_lka=" << r.loss_lka;
  return os.str();
}

// Runs f(i) for i in [0, n) across threads and rethrows the first failure by index.
template <typename F>
void parallel_for_each(int n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct LoopSettings {
  int iterations = 0;
  std::uint64_t seed = 0;
  TeacherView teacher;
  DistillWeights weights{0.0, 0.0};
};

// Shared SGD loop for both stages. Per-image work runs in parallel; gradients
// are reduced in batch order so results do not depend on the thread count.
void train_loop(DetectorModel& model, const std::vector<DefectImage>& images, const TrainConfig& config,
                const LoopSettings& loop, const LossCallback& on_step) {
  if (images.empty()) throw DataError("training set is empty");
  if (config.threads > 0) omp_set_num_threads(config.threads);
  const int B = config.batch_size;
  auto& params = model.params.all();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.size(), 0.0);

  Rng order_rng(mix_seed(loop.seed, kBatchSalt));
  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  LossRecord last_finite;
  std::vector<ImageStep> steps(B);
  std::vector<ParamGrads> image_grads(B, ParamGrads(model.params));
  ParamGrads grads(model.params);

  for (int step = 0; step < loop.iterations; ++step) {
    std::vector<std::size_t> batch(B);
    for (int b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch[b] = order[cursor++];
    }

    parallel_for_each(B, [&](int b) {
      const TrainSample sample = make_train_sample(images[batch[b]], model);
      const std::uint64_t s = mix_seed(mix_seed(loop.seed, kSampleSalt), static_cast<std::uint64_t>(step) * B + b);
      steps[b] = forward_image(model, sample, s, loop.teacher);
    });

    LossRecord rec;
    rec.step = step;
    std::size_t total_rois = 0;
    for (const auto& s : steps) {
      rec.loss_rpn += s.rpn_loss.total() / B;
      rec.loss_rcnn += s.rcnn_loss.total() / B;
      rec.loss_fka += s.fka / B;
      rec.loss_lka += s.lka * static_cast<double>(s.num_rois());
      total_rois += s.num_rois();
    }
    rec.loss_lka = total_rois ? rec.loss_lka / static_cast<double>(total_rois) : 0.0;
    try {
      rec.loss_total = total_loss({rec.loss_rpn, rec.loss_rcnn, rec.loss_fka, rec.loss_lka}, loop.weights);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step) + " (" + describe(rec) +
                            "); last finite step " + std::to_string(last_finite.step) + ": " +
                            describe(last_finite));
    }

    parallel_for_each(B, [&](int b) {
      image_grads[b].zero();
      ImageGradScales sc;
      sc.rpn = 1.0 / B;
      sc.rcnn = 1.0 / B;
      sc.fka = loop.weights.lambda_fka / B;
      sc.lka = total_rois ? loop.weights.lambda_lka * static_cast<double>(steps[b].num_rois()) / total_rois : 0.0;
      backward_image(model, steps[b], sc, image_grads[b]);
    });
    grads.zero();
    for (int b = 0; b < B; ++b) grads.add(image_grads[b]);
    if (!std::isfinite(grads.squared_norm()))
      throw DivergenceError("non-finite gradient at step " + std::to_string(step) + " (" + describe(rec) + ")");

    double lr = config.learning_rate;
    if (step < config.warmup_iterations) {
      const double a = static_cast<double>(step) / config.warmup_iterations;
      lr *= 0.001 * (1 - a) + a;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].frozen) continue;
      auto& w = params[i].data;
      auto& v = velocity[i];
      const auto& g = grads.values[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = config.momentum * v[k] + g[k] + config.weight_decay * w[k];
        w[k] -= lr * v[k];
      }
    }
    last_finite = rec;
    if (on_step) on_step(rec);
  }
}

}  // namespace

DetectorModel pretrain_base(const std::vector<DefectImage>& base_train, const std::vector<CategoryId>& base_categories,
                            const TrainConfig& config, const LossCallback& on_step) {
  config.validate();
  if (base_train.empty()) throw DataError("pretrain_base: base_train is empty");
  SplitSpec check{base_categories, {}, 1, 0};
  for (const auto& img : base_train)
    for (const auto& inst : img.instances)
      if (!check.is_base(inst.category))
        throw DataError("pretrain_base: image " + img.id + " holds non-base category " + inst.category.name);
  DetectorModel model = create_detector(detector_config_for(config), base_categories, mix_seed(config.seed, kInitSalt));
  train_loop(model, base_train, config, {config.pretrain_iterations, config.seed, {}, {0.0, 0.0}}, on_step);
  return model;
}

StudentModel build_student(const DetectorModel& base, const std::vector<CategoryId>& novel_categories,
                           const TrainConfig& config) {
  config.validate();
  if (base.num_novel() != 0) throw Error("build_student: base detector already has novel categories");
  const auto& head = base.params.get("cls.base.weight");
  if (head.shape.empty() || head.shape[0] != base.num_base() + 1)
    throw Error("build_student: base classifier has " + std::to_string(head.shape.empty() ? 0 : head.shape[0]) +
                " rows but metadata lists " + std::to_string(base.num_base()) + " base categories (+1 background)");
  StudentModel s{base};
  s.model.params.set_all_frozen(false);
  s.model.config.alpha = config.alpha;
  add_novel_head(s.model, novel_categories, mix_seed(config.seed, kNovelHeadSalt));
  return s;
}

std::vector<DefectImage> finetune_data(const std::vector<DefectImage>& base_train,
                                       const std::vector<DefectImage>& novel_shots, const SplitSpec& spec,
                                       const TrainConfig& config, std::uint64_t seed) {
  std::vector<DefectImage> out;
  if (config.finetune_data_policy == FinetunePolicy::balanced_base_plus_novel)
    out = sample_base_shots(base_train, spec.base_categories, spec.k_shot, mix_seed(seed, kBaseShotSalt));
  out.insert(out.end(), novel_shots.begin(), novel_shots.end());
  return out;
}

StudentModel finetune_dkan(StudentModel student, const TeacherSnapshot& teacher, const std::vector<DefectImage>& data,
                           const TrainConfig& config, const LossCallback& on_step) {
  config.validate();
  teacher.verify();
  if (data.empty()) throw DataError("finetune_dkan: fine-tuning set is empty");
  LoopSettings loop{config.iterations, config.seed, {&teacher.model(), config.tau}, config.distill};
  train_loop(student.model, data, config, loop, on_step);
  teacher.verify();
  return student;
}

std::vector<Detection> detect_all(const std::vector<DefectImage>& images, const DetectorModel& model,
                                  double score_threshold) {
  std::vector<std::vector<Detection>> per(images.size());
  DetectOptions opt;
  opt.score_threshold = score_threshold;
  parallel_for_each(static_cast<int>(images.size()), [&](int i) { per[i] = detect(images[i], model, opt); });
  std::vector<Detection> out;
  for (auto& d : per) out.insert(out.end(), d.begin(), d.end());
  return out;
}

EvalReport evaluate_model(const DetectorModel& model, const DatasetPartition& partition, const EvalOptions& options) {
  return evaluate_groups(detect_all(partition.test, model, options.score_threshold), partition,
                         options.conf_threshold);
}

bool ExperimentResult::complete() const {
  for (const auto& r : runs)
    if (!r.failure.empty()) return false;
  return !runs.empty();
}

ExperimentResult run_experiment(const DatasetPartition& partition, const TeacherSnapshot& teacher,
                                const TrainConfig& config, int num_seeds, const std::string& tag) {
  if (num_seeds < 1) throw UsageError("num_seeds must be at least 1");
  std::vector<DefectImage> pool = partition.remainder;
  pool.insert(pool.end(), partition.novel_train.begin(), partition.novel_train.end());

  ExperimentResult result;
  std::vector<EvalReport> ok;
  for (int i = 0; i < num_seeds; ++i) {
    SeedRun run;
    run.index = i;
    run.seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));
    try {
      TrainConfig c = config;
      c.seed = run.seed;
      const auto shots = sample_k_shot(pool, partition.spec.novel_categories, partition.spec.k_shot, run.seed);
      const auto data = finetune_data(partition.base_train, shots, partition.spec, c, run.seed);
      StudentModel student = build_student(teacher.model(), partition.spec.novel_categories, c);
      student = finetune_dkan(std::move(student), teacher, data, c);
      EvalReport rep = evaluate_model(student.model, partition);
      rep.tag = tag;
      ok.push_back(rep);
      run.report = std::move(rep);
    } catch (const std::exception& e) {
      run.failure = e.what();
    }
    result.runs.push_back(std::move(run));
  }
  if (!ok.empty()) {
    result.mean = average_reports(ok);
    result.mean.tag = tag;
  }
  return result;
}

}  // namespace dkan
