// dkan: command-line front end for the incremental few-shot defect detection
// pipeline. Every artifact-producing verb writes <out>/manifest.json.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dkan/checkpoint.hpp"
#include "dkan/config.hpp"
#include "dkan/dataset.hpp"
#include "dkan/error.hpp"
#include "dkan/evaluation.hpp"
#include "dkan/reporting.hpp"
#include "dkan/sweep.hpp"
#include "dkan/training.hpp"
#include "dkan/util.hpp"

namespace fs = std::filesystem;
using namespace dkan;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

fs::path output_root() {
  const char* env = std::getenv("DKAN_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// Relative --out paths land under the output root; absolute ones are kept.
fs::path resolve_out(const std::string& out) {
  const fs::path p(out);
  return p.is_absolute() ? p : output_root() / p;
}

fs::path require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " path is required");
  if (!fs::exists(path)) throw DataError(what + " not found: " + path);
  return path;
}

// Names the VOC reader understands: NEU-DET long names plus every short label
// the synthetic generator can emit.
NameMap ingestion_names() {
  NameMap names = neu_det_name_map();
  for (const auto& c : synthetic_categories(10)) names[c.name] = c;
  return names;
}

const std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>>& named_splits() {
  static const std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> splits = {
      {"split1", {{"Cr", "In", "PS"}, {"Pa", "Sc", "RS"}}},
      {"split2", {{"In", "RS", "Sc"}, {"Cr", "Pa", "PS"}}},
      {"split3", {{"PS", "Pa", "Sc"}, {"Cr", "In", "RS"}}},
  };
  return splits;
}

// ---------------------------------------------------------------------------
// Training configuration flags shared by pretrain / finetune / experiment / sweep

struct ConfigOptions {
  std::string file;
  std::string preset;
  std::vector<std::pair<std::string, std::string>> overrides;  // in command-line order
  bool print = false;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "flat key = value file with TrainConfig field names");
    app->add_option("--preset", preset, "full (default) or desk; overrides a preset key in --config")
        ->check(CLI::IsMember({"full", "desk"}));
    app->add_flag("--print-config", print, "print the effective configuration and exit");

    const TrainConfig full = full_config(), desk = desk_config();
    const auto pe = config_entries(full), de = config_entries(desk);
    for (std::size_t i = 0; i < pe.size(); ++i) {
      const std::string key = pe[i].first;
      if (key == "preset") continue;
      std::string flag = "--" + key;
      for (char& ch : flag)
        if (ch == '_') ch = '-';
      std::string help = "default " + pe[i].second;
      if (de[i].second != pe[i].second) help += " (desk " + de[i].second + ")";
      app->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    }
    app->add_option_function<std::string>(
        "--lambda1", [this](const std::string& v) { overrides.emplace_back("lambda_fka", v); }, "alias of --lambda-fka");
    app->add_option_function<std::string>(
        "--lambda2", [this](const std::string& v) { overrides.emplace_back("lambda_lka", v); }, "alias of --lambda-lka");
    app->add_option_function<std::string>(
        "--lr", [this](const std::string& v) { overrides.emplace_back("learning_rate", v); },
        "alias of --learning-rate");
  }

  // preset, then the file, then individual flags
  TrainConfig effective() const {
    TrainConfig c = config_for_preset(preset.empty() ? "full" : preset);
    if (!file.empty()) {
      if (!fs::exists(file)) throw UsageError("config file not found: " + file);
      std::string text = read_text_file(file);
      if (!preset.empty()) {
        std::string kept, line;
        std::istringstream in(text);
        while (std::getline(in, line)) {
          const auto eq = line.find('=');
          if (eq != std::string::npos && trim(line.substr(0, eq)) == "preset") continue;
          kept += line + "\n";
        }
        text = kept;
      }
      c = parse_config_text(text, c);
    }
    for (const auto& [k, v] : overrides) set_config_value(c, k, v);
    c.validate();
    return c;
  }
};

struct Manifest {
  RunManifest m;
  fs::path out;

  Manifest(std::string command, const std::vector<std::string>& argv, fs::path dir) : out(std::move(dir)) {
    m.command = std::move(command);
    m.argv = argv;
    m.started = utc_timestamp();
  }
  void input(const fs::path& p) { m.inputs[p.string()] = git_blob_hash(p); }
  void output(const std::string& role, const fs::path& p) { m.outputs[role] = p.string(); }
  void config(const TrainConfig& c) { m.config = config_entries(c); }
  void write() {
    m.finished = utc_timestamp();
    write_run_manifest(out / "manifest.json", m);
  }
};

// Upstream artifacts default to where the producing verb writes them.
fs::path default_partition() { return output_root() / "split" / "partition.jsonl"; }
fs::path default_teacher() { return output_root() / "pretrain" / "base.ckpt"; }
fs::path default_student() { return output_root() / "finetune" / "student.ckpt"; }

PartitionManifest load_partition(const std::string& path, Manifest& man, bool pixels = true) {
  const fs::path p = require_input(path.empty() ? default_partition().string() : path, "partition manifest");
  man.input(p);
  PartitionManifest pm = read_partition_manifest(p);
  if (pixels) load_partition_pixels(pm);
  return pm;
}

Checkpoint load_model(const fs::path& path, const std::string& what, Manifest& man) {
  if (!fs::exists(path)) throw DataError(what + " checkpoint not found: " + path.string());
  man.input(path);
  return load_checkpoint(path);
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

void require_same_categories(const std::vector<CategoryId>& model, const std::vector<CategoryId>& split,
                             const std::string& what) {
  std::vector<std::string> a, b;
  for (const auto& c : model) a.push_back(c.name);
  for (const auto& c : split) b.push_back(c.name);
  if (a != b)
    throw DataError(what + " categories {" + join(a, ",") + "} do not match the partition's {" + join(b, ",") + "}");
}

// Writes train_log.jsonl and echoes a progress line every `every` steps.
struct TrainLog {
  std::ofstream file;
  int every;
  int total;
  std::string label;

  TrainLog(const fs::path& path, int every_steps, int total_steps, std::string what)
      : file(path), every(every_steps), total(total_steps), label(std::move(what)) {
    if (!file) throw DataError("cannot write " + path.string());
  }
  LossCallback callback() {
    return [this](const LossRecord& r) {
      file << loss_record_json(r) << "\n";
      if (every > 0 && (r.step % every == 0 || r.step == total))
        std::cerr << label << " step " << r.step << "/" << total << "  loss " << r.loss_total << "\n";
    };
  }
};

void write_report_files(const EvalReport& report, const fs::path& dir, Manifest& man) {
  write_text_file(dir / "report.json", report_to_json(report));
  const std::string table = format_report_table({report});
  write_text_file(dir / "report.txt", table);
  write_text_file(dir / "confusion.svg",
                  confusion_matrix_svg(report.confusion, "confusion" + (report.tag.empty() ? "" : " " + report.tag)));
  man.output("report", (dir / "report.json").string());
  man.output("table", (dir / "report.txt").string());
  man.output("confusion", (dir / "confusion.svg").string());
  std::cout << table;
}

void write_experiment_runs(const ExperimentResult& result, const fs::path& path) {
  std::ofstream os(path);
  for (const auto& run : result.runs) {
    nlohmann::json j = {{"index", run.index}, {"seed", run.seed}, {"failure", run.failure}};
    if (run.report) j["report"] = nlohmann::json::parse(report_to_json(*run.report));
    os << j.dump() << "\n";
  }
}

void report_failures(const ExperimentResult& result) {
  for (const auto& run : result.runs)
    if (!run.failure.empty()) std::cerr << "seed run " << run.index << " failed: " << run.failure << "\n";
  if (!result.complete()) throw DivergenceError("one or more seed runs failed");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"dkan: incremental few-shot defect detection with distilled knowledge alignment"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Relative --out directories are created under $DKAN_OUTPUT_ROOT (default ./runs).\n"
             "Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.");
  int log_every = 50;
  app.add_option("--log-every", log_every, "training progress line interval on stderr, 0 silences")
      ->capture_default_str();

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render a synthetic VOC-style defect dataset");
  SyntheticConfig sc;
  sc.images_per_category = 300;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "synth";
  synth->add_option("--out", synth_out, "dataset directory")->capture_default_str();
  synth->add_option("--categories", sc.num_categories, "number of categories (2..10)")->capture_default_str();
  synth->add_option("--images-per-category", sc.images_per_category)->capture_default_str();
  synth->add_option("--image-size", sc.image_size)->capture_default_str();
  synth->add_option("--noise", sc.noise, "background noise amplitude")->capture_default_str();
  synth->add_option("--max-instances", sc.max_instances)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();

  // split ---------------------------------------------------------------
  auto* split = app.add_subcommand("split", "build a base/novel partition manifest");
  std::string dataset, split_name, base_list, novel_list, split_out = "split";
  int k_shot = 5, test_per = 60, train_per = 240;
  std::uint64_t split_seed = 0;
  split->add_option("--dataset", dataset, "VOC-style dataset root")->required();
  split->add_option("--name", split_name, "split1, split2 or split3");
  split->add_option("--base", base_list, "explicit base categories, comma separated");
  split->add_option("--novel", novel_list, "explicit novel categories, comma separated");
  split->add_option("--k", k_shot, "shots per novel category")->capture_default_str();
  split->add_option("--seed", split_seed)->capture_default_str();
  split->add_option("--test-per-category", test_per)->capture_default_str();
  split->add_option("--train-per-category", train_per, "base-train images per base category")
      ->capture_default_str();
  split->add_option("--out", split_out)->capture_default_str();

  // pretrain ------------------------------------------------------------
  auto* pretrain = app.add_subcommand("pretrain", "train the base detector (teacher)");
  ConfigOptions pretrain_cfg;
  std::string pretrain_partition, pretrain_out = "pretrain";
  pretrain->add_option("--partition", pretrain_partition, "partition.jsonl from split (default $DKAN_OUTPUT_ROOT/split/partition.jsonl)");
  pretrain->add_option("--out", pretrain_out)->capture_default_str();
  pretrain_cfg.attach(pretrain);

  // finetune ------------------------------------------------------------
  auto* finetune = app.add_subcommand("finetune", "fine-tune a student on the partition's K-shot set");
  ConfigOptions finetune_cfg;
  std::string finetune_partition, teacher_path, finetune_out = "finetune";
  finetune->add_option("--partition", finetune_partition, "partition.jsonl from split (default $DKAN_OUTPUT_ROOT/split/partition.jsonl)");
  finetune->add_option("--teacher", teacher_path, "base checkpoint (default $DKAN_OUTPUT_ROOT/pretrain/base.ckpt)");
  finetune->add_option("--out", finetune_out)->capture_default_str();
  finetune_cfg.attach(finetune);

  // eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "score a checkpoint or a detections file on the test split");
  std::string eval_partition, eval_ckpt, eval_dets, eval_tag, eval_out = "eval";
  double conf_threshold = 0.3, score_threshold = 0.01;
  eval->add_option("--partition", eval_partition, "partition.jsonl from split (default $DKAN_OUTPUT_ROOT/split/partition.jsonl)");
  eval->add_option("--checkpoint", eval_ckpt, "detector checkpoint (default $DKAN_OUTPUT_ROOT/finetune/student.ckpt)");
  eval->add_option("--detections", eval_dets, "detections.jsonl to score instead of running a checkpoint");
  eval->add_option("--tag", eval_tag, "label stored in the report");
  eval->add_option("--conf-threshold", conf_threshold, "confusion-matrix confidence rule")->capture_default_str();
  eval->add_option("--score-threshold", score_threshold, "detections kept for AP")->capture_default_str();
  eval->add_option("--out", eval_out)->capture_default_str();

  // experiment ----------------------------------------------------------
  auto* experiment = app.add_subcommand("experiment", "resample K shots per seed, fine-tune and evaluate");
  ConfigOptions experiment_cfg;
  std::string experiment_partition, experiment_teacher, experiment_tag, experiment_out = "experiment";
  int experiment_seeds = 10;
  experiment->add_option("--partition", experiment_partition, "partition.jsonl from split (default $DKAN_OUTPUT_ROOT/split/partition.jsonl)");
  experiment->add_option("--teacher", experiment_teacher, "base checkpoint (default $DKAN_OUTPUT_ROOT/pretrain/base.ckpt)");
  experiment->add_option("--seeds", experiment_seeds, "seed runs averaged")->capture_default_str();
  experiment->add_option("--tag", experiment_tag, "label stored in the report");
  experiment->add_option("--out", experiment_out)->capture_default_str();
  experiment_cfg.attach(experiment);

  // sweep ---------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "run an experiment per value of one hyperparameter");
  ConfigOptions sweep_cfg;
  std::string sweep_partition, sweep_teacher, sweep_param, sweep_out;
  std::vector<std::string> sweep_values;
  bool sweep_values_given = false;
  int sweep_seeds = 10;
  sweep->add_option("--partition", sweep_partition, "partition.jsonl from split (default $DKAN_OUTPUT_ROOT/split/partition.jsonl)");
  sweep->add_option("--teacher", sweep_teacher, "base checkpoint (default $DKAN_OUTPUT_ROOT/pretrain/base.ckpt)");
  sweep->add_option("--param", sweep_param, "lambda1, lambda2, tau or alpha")->required();
  sweep->add_option_function<std::string>(
      "--values",
      [&](const std::string& v) {
        sweep_values_given = true;
        for (auto& s : split_list(v))
          if (!trim(s).empty()) sweep_values.push_back(trim(s));
      },
      "comma-separated values, e.g. 3,4,5,6,7");
  sweep->add_option("--seeds", sweep_seeds, "seed runs per value")->capture_default_str();
  sweep->add_option("--out", sweep_out, "default sweep-<param>");
  sweep_cfg.attach(sweep);

  // report --------------------------------------------------------------
  auto* report = app.add_subcommand("report", "tabulate reports; four tagged none/fka/lka/both give the ablation grid");
  std::vector<std::string> report_files;
  std::string report_out = "report";
  report->add_option("reports", report_files, "report.json files")->required();
  report->add_option("--out", report_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      const fs::path out = resolve_out(synth_out);
      Manifest man("synth", args, out);
      const auto images = generate_synthetic_dataset(sc, synth_seed);
      std::map<int, std::string> xml_names;
      for (const auto& [name, cat] : neu_det_name_map()) xml_names[cat.index] = name;
      write_voc_dataset(out, images, xml_names);
      man.m.seeds = {synth_seed};
      man.m.notes = {{"categories", std::to_string(sc.num_categories)},
                     {"images_per_category", std::to_string(sc.images_per_category)},
                     {"image_size", std::to_string(sc.image_size)},
                     {"noise", std::to_string(sc.noise)},
                     {"max_instances", std::to_string(sc.max_instances)}};
      man.output("dataset", out.string());
      man.write();
      std::cout << "wrote " << images.size() << " images to " << out.string() << "\n";
      return 0;
    }

    if (split->parsed()) {
      std::vector<std::string> base_names, novel_names;
      if (!split_name.empty()) {
        const auto it = named_splits().find(split_name);
        if (it == named_splits().end()) {
          std::vector<std::string> valid;
          for (const auto& [n, _] : named_splits()) valid.push_back(n);
          throw UsageError("unknown split '" + split_name + "'; valid names: " + join(valid, ", "));
        }
        if (!base_list.empty() || !novel_list.empty()) throw UsageError("--name cannot be combined with --base/--novel");
        base_names = it->second.first;
        novel_names = it->second.second;
      } else {
        if (base_list.empty() || novel_list.empty()) throw UsageError("give --name or both --base and --novel");
        base_names = split_list(base_list);
        novel_names = split_list(novel_list);
      }
      const fs::path root = require_input(dataset, "dataset");
      const fs::path out = resolve_out(split_out);
      Manifest man("split", args, out);

      IngestResult ingest = parse_voc_annotations(root, ingestion_names());
      for (const auto& w : ingest.warnings) std::cerr << "warning: " << w.path << ": " << w.message << "\n";
      if (!ingest.errors.empty()) {
        for (const auto& e : ingest.errors) std::cerr << "error: " << e.path << ": " << e.message << "\n";
        throw DataError(std::to_string(ingest.errors.size()) + " annotation file(s) could not be read");
      }
      std::set<CategoryId> present;
      for (const auto& img : ingest.images)
        for (const auto& inst : img.instances) present.insert(inst.category);
      const std::vector<CategoryId> categories(present.begin(), present.end());

      SplitSpec spec;
      for (const auto& n : base_names) spec.base_categories.push_back(find_category(categories, trim(n)));
      for (const auto& n : novel_names) spec.novel_categories.push_back(find_category(categories, trim(n)));
      spec.k_shot = k_shot;
      spec.seed = split_seed;
      spec.validate();

      const DatasetPartition part = build_ifsnd_split(ingest.images, spec, test_per, train_per);
      fs::create_directories(out);
      const fs::path manifest_path = out / "partition.jsonl";
      write_partition_manifest(manifest_path, part, categories, fs::absolute(root));
      man.m.seeds = {split_seed};
      man.m.notes = {{"split", split_name.empty() ? "custom" : split_name},
                     {"k", std::to_string(k_shot)},
                     {"test_per_category", std::to_string(test_per)},
                     {"train_per_category", std::to_string(train_per)},
                     {"dataset", fs::absolute(root).string()}};
      man.output("partition", manifest_path.string());
      man.write();
      std::cout << "test " << part.test.size() << ", base_train " << part.base_train.size() << ", novel_train "
                << part.novel_train.size() << " -> " << manifest_path.string() << "\n";
      return 0;
    }

    if (pretrain->parsed()) {
      const TrainConfig cfg = pretrain_cfg.effective();
      if (pretrain_cfg.print) {
        std::cout << config_to_text(cfg);
        return 0;
      }
      const fs::path out = resolve_out(pretrain_out);
      Manifest man("pretrain", args, out);
      man.config(cfg);
      man.m.seeds = {cfg.seed};
      const PartitionManifest pm = load_partition(pretrain_partition, man);
      fs::create_directories(out);
      TrainLog log(out / "train_log.jsonl", log_every, cfg.pretrain_iterations, "pretrain");
      const DetectorModel base =
          pretrain_base(pm.partition.base_train, pm.partition.spec.base_categories, cfg, log.callback());
      const fs::path ckpt = out / "base.ckpt";
      save_checkpoint(ckpt, base, {{"stage", "base"}, {"seed", std::to_string(cfg.seed)}});
      man.output("checkpoint", ckpt.string());
      man.output("train_log", (out / "train_log.jsonl").string());
      man.write();
      std::cout << "wrote " << ckpt.string() << "\n";
      return 0;
    }

    if (finetune->parsed()) {
      const TrainConfig cfg = finetune_cfg.effective();
      if (finetune_cfg.print) {
        std::cout << config_to_text(cfg);
        return 0;
      }
      const fs::path out = resolve_out(finetune_out);
      Manifest man("finetune", args, out);
      man.config(cfg);
      man.m.seeds = {cfg.seed};
      Checkpoint teacher_ckpt = load_model(or_default(teacher_path, default_teacher()), "teacher", man);
      const PartitionManifest pm = load_partition(finetune_partition, man);
      require_same_categories(teacher_ckpt.model.base_categories, pm.partition.spec.base_categories, "teacher base");
      const TeacherSnapshot teacher(std::move(teacher_ckpt.model));
      const auto data = finetune_data(pm.partition.base_train, pm.partition.novel_train, pm.partition.spec, cfg, cfg.seed);
      StudentModel student = build_student(teacher.model(), pm.partition.spec.novel_categories, cfg);
      fs::create_directories(out);
      TrainLog log(out / "train_log.jsonl", log_every, cfg.iterations, "finetune");
      student = finetune_dkan(std::move(student), teacher, data, cfg, log.callback());
      const fs::path ckpt = out / "student.ckpt";
      save_checkpoint(ckpt, student.model, {{"stage", "student"}, {"seed", std::to_string(cfg.seed)}});
      man.m.notes = {{"teacher_checksum_before", teacher.checksum_at_creation()},
                     {"teacher_checksum_after", teacher.current_checksum()},
                     {"finetune_images", std::to_string(data.size())}};
      man.output("checkpoint", ckpt.string());
      man.output("train_log", (out / "train_log.jsonl").string());
      man.write();
      std::cout << "wrote " << ckpt.string() << "\n";
      return 0;
    }

    if (eval->parsed()) {
      if (!eval_ckpt.empty() && !eval_dets.empty()) throw UsageError("give --checkpoint or --detections, not both");
      if (eval_dets.empty() && eval_ckpt.empty()) eval_ckpt = default_student().string();
      const fs::path out = resolve_out(eval_out);
      Manifest man("eval", args, out);
      const PartitionManifest pm = load_partition(eval_partition, man, !eval_ckpt.empty());
      std::vector<Detection> dets;
      if (!eval_ckpt.empty()) {
        const Checkpoint ck = load_model(eval_ckpt, "evaluated", man);
        require_same_categories(ck.model.base_categories, pm.partition.spec.base_categories, "checkpoint base");
        if (!ck.model.novel_categories.empty())
          require_same_categories(ck.model.novel_categories, pm.partition.spec.novel_categories, "checkpoint novel");
        dets = detect_all(pm.partition.test, ck.model, score_threshold);
      } else {
        const fs::path p = require_input(eval_dets, "detections file");
        man.input(p);
        for (auto& d : read_detections(p, pm.categories))
          if (d.confidence > score_threshold) dets.push_back(std::move(d));
      }
      fs::create_directories(out);
      if (!eval_ckpt.empty()) {
        write_detections(out / "detections.jsonl", dets);
        man.output("detections", (out / "detections.jsonl").string());
      }
      EvalReport rep = evaluate_groups(dets, pm.partition, conf_threshold);
      rep.tag = eval_tag;
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
      write_report_files(rep, out, man);
      man.m.notes = {{"conf_threshold", std::to_string(conf_threshold)},
                     {"score_threshold", std::to_string(score_threshold)}};
      man.write();
      return 0;
    }

    if (experiment->parsed()) {
      const TrainConfig cfg = experiment_cfg.effective();
      if (experiment_cfg.print) {
        std::cout << config_to_text(cfg);
        return 0;
      }
      if (experiment_seeds < 1) throw UsageError("--seeds must be at least 1");
      const fs::path out = resolve_out(experiment_out);
      Manifest man("experiment", args, out);
      man.config(cfg);
      Checkpoint teacher_ckpt = load_model(or_default(experiment_teacher, default_teacher()), "teacher", man);
      const PartitionManifest pm = load_partition(experiment_partition, man);
      require_same_categories(teacher_ckpt.model.base_categories, pm.partition.spec.base_categories, "teacher base");
      const TeacherSnapshot teacher(std::move(teacher_ckpt.model));
      const ExperimentResult result = run_experiment(pm.partition, teacher, cfg, experiment_seeds, experiment_tag);
      fs::create_directories(out);
      for (const auto& r : result.runs) man.m.seeds.push_back(r.seed);
      write_experiment_runs(result, out / "runs.jsonl");
      man.output("runs", (out / "runs.jsonl").string());
      if (!result.runs.empty() && result.complete()) write_report_files(result.mean, out, man);
      man.write();
      report_failures(result);
      return 0;
    }

    if (sweep->parsed()) {
      const std::string key = sweep_config_key(sweep_param);
      if (!sweep_values_given || sweep_values.empty()) throw UsageError("--values needs at least one value");
      const TrainConfig cfg = sweep_cfg.effective();
      if (sweep_cfg.print) {
        std::cout << config_to_text(cfg);
        return 0;
      }
      if (sweep_seeds < 1) throw UsageError("--seeds must be at least 1");
      const fs::path out = resolve_out(sweep_out.empty() ? "sweep-" + sweep_param : sweep_out);
      Manifest man("sweep", args, out);
      man.config(cfg);
      Checkpoint teacher_ckpt = load_model(or_default(sweep_teacher, default_teacher()), "teacher", man);
      const PartitionManifest pm = load_partition(sweep_partition, man);
      require_same_categories(teacher_ckpt.model.base_categories, pm.partition.spec.base_categories, "teacher base");
      const TeacherSnapshot teacher(std::move(teacher_ckpt.model));
      const auto points = run_sweep(pm.partition, teacher, cfg, sweep_param, sweep_values, sweep_seeds);

      fs::create_directories(out);
      nlohmann::json rows = nlohmann::json::array();
      bool complete = true;
      for (const auto& p : points) {
        complete = complete && p.result.complete();
        const fs::path runs = out / ("runs_" + p.value + ".jsonl");
        write_experiment_runs(p.result, runs);
        rows.push_back({{"value", p.value}, {"report", nlohmann::json::parse(report_to_json(p.result.mean))}});
        for (const auto& r : p.result.runs)
          if (p.value == points.front().value) man.m.seeds.push_back(r.seed);
      }
      const auto table_rows = sweep_rows(points);
      const std::string table = format_sweep_table(sweep_param, table_rows);
      write_text_file(out / "sweep.json",
                      nlohmann::json{{"parameter", sweep_param}, {"config_key", key}, {"rows", rows}}.dump(2) + "\n");
      write_text_file(out / "sweep.txt", table);
      write_text_file(out / "sweep.svg", sweep_plot_svg(sweep_param, table_rows));
      man.output("table", (out / "sweep.txt").string());
      man.output("rows", (out / "sweep.json").string());
      man.output("plot", (out / "sweep.svg").string());
      man.write();
      std::cout << table;
      if (!complete) {
        for (const auto& p : points) {
          for (const auto& run : p.result.runs)
            if (!run.failure.empty())
              std::cerr << sweep_param << "=" << p.value << " seed run " << run.index << " failed: " << run.failure
                        << "\n";
        }
        throw DivergenceError("one or more seed runs failed");
      }
      return 0;
    }

    if (report->parsed()) {
      const fs::path out = resolve_out(report_out);
      Manifest man("report", args, out);
      std::vector<EvalReport> reports;
      for (const auto& f : report_files) {
        const fs::path p = require_input(f, "report");
        man.input(p);
        reports.push_back(report_from_json(read_text_file(p)));
      }
      require_consistent_categories(reports);
      fs::create_directories(out);
      const std::string table = format_report_table(reports);
      write_text_file(out / "table.txt", table);
      man.output("table", (out / "table.txt").string());
      std::cout << table;

      std::set<std::string> tags;
      for (const auto& r : reports) tags.insert(r.tag);
      if (reports.size() == 4 && tags == std::set<std::string>{"none", "fka", "lka", "both"}) {
        const std::string grid = format_ablation_grid(reports);
        write_text_file(out / "ablation.txt", grid);
        man.output("ablation", (out / "ablation.txt").string());
        std::cout << "\n" << grid;
      }
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const std::string name = reports[i].tag.empty() ? std::to_string(i) : reports[i].tag;
        const fs::path svg = out / ("confusion_" + name + ".svg");
        write_text_file(svg, confusion_matrix_svg(reports[i].confusion, "confusion " + name));
        man.output("confusion_" + name, svg.string());
      }
      man.write();
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
