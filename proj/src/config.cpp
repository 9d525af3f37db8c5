#include "dkan/config.hpp"

#include <charconv>
#include <sstream>

#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {

std::string to_string(FinetunePolicy policy) {
  return policy == FinetunePolicy::novel_only ? "novel_only" : "balanced_base_plus_novel";
}

FinetunePolicy finetune_policy_from_string(const std::string& text) {
  if (text == "novel_only") return FinetunePolicy::novel_only;
  if (text == "balanced_base_plus_novel" || text == "balanced") return FinetunePolicy::balanced_base_plus_novel;
  throw UsageError("unknown finetune_data_policy '" + text + "' (expected novel_only or balanced_base_plus_novel)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid config: " + what);
  };
  require(input_size >= 32, "input_size must be at least 32");
  require(batch_size >= 1, "batch_size must be positive");
  require(iterations >= 0 && pretrain_iterations >= 0, "iteration counts must be non-negative");
  require(learning_rate > 0, "learning_rate must be positive");
  require(weight_decay >= 0, "weight_decay must be non-negative");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0,1)");
  require(warmup_iterations >= 0, "warmup_iterations must be non-negative");
  require(tau > 0, "tau must be positive");
  distill.validate();
  require(alpha > 0, "alpha must be positive");
  require(threads >= 0, "threads must be non-negative");
}

TrainConfig full_config() { return TrainConfig{}; }

TrainConfig desk_config() {
  TrainConfig c;
  c.preset = Preset::desk;
  c.input_size = 64;
  c.iterations = 500;
  c.pretrain_iterations = 1000;
  c.warmup_iterations = 50;
  return c;
}

TrainConfig config_for_preset(const std::string& name) {
  if (name == "full") return full_config();
  if (name == "desk") return desk_config();
  throw UsageError("unknown preset '" + name + "' (expected full or desk)");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

}  // namespace

void set_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "preset") {
    const auto fresh = config_for_preset(value);
    c = fresh;
  } else if (key == "input_size") {
    c.input_size = parse_number<int>(key, value);
  } else if (key == "batch_size") {
    c.batch_size = parse_number<int>(key, value);
  } else if (key == "iterations") {
    c.iterations = parse_number<int>(key, value);
  } else if (key == "pretrain_iterations") {
    c.pretrain_iterations = parse_number<int>(key, value);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_number<double>(key, value);
  } else if (key == "weight_decay") {
    c.weight_decay = parse_number<double>(key, value);
  } else if (key == "momentum") {
    c.momentum = parse_number<double>(key, value);
  } else if (key == "warmup_iterations") {
    c.warmup_iterations = parse_number<int>(key, value);
  } else if (key == "tau") {
    c.tau = parse_number<double>(key, value);
  } else if (key == "lambda_fka" || key == "lambda1") {
    c.distill.lambda_fka = parse_number<double>(key, value);
  } else if (key == "lambda_lka" || key == "lambda2") {
    c.distill.lambda_lka = parse_number<double>(key, value);
  } else if (key == "alpha") {
    c.alpha = parse_number<double>(key, value);
  } else if (key == "head_kind") {
    c.head_kind = head_kind_from_string(value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "finetune_data_policy") {
    c.finetune_data_policy = finetune_policy_from_string(value);
  } else if (key == "threads") {
    c.threads = parse_number<int>(key, value);
  } else {
    throw UsageError("unknown config key '" + key + "'");
  }
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [k, v] : entries)
    if (k == "preset") set_config_value(base, k, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") set_config_value(base, k, v);
  base.validate();
  return base;
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  if (!std::filesystem::exists(path)) throw UsageError("config file not found: " + path.string());
  return parse_config_text(read_text_file(path), std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  // shortest text that round-trips, so an echoed config reproduces the run
  auto num = [](double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (r.ec != std::errc{} || r.ptr - buf > 24) r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  return {
      {"preset", c.preset == Preset::desk ? "desk" : "full"},
      {"input_size", std::to_string(c.input_size)},
      {"batch_size", std::to_string(c.batch_size)},
      {"iterations", std::to_string(c.iterations)},
      {"pretrain_iterations", std::to_string(c.pretrain_iterations)},
      {"learning_rate", num(c.learning_rate)},
      {"weight_decay", num(c.weight_decay)},
      {"momentum", num(c.momentum)},
      {"warmup_iterations", std::to_string(c.warmup_iterations)},
      {"tau", num(c.tau)},
      {"lambda_fka", num(c.distill.lambda_fka)},
      {"lambda_lka", num(c.distill.lambda_lka)},
      {"alpha", num(c.alpha)},
      {"head_kind", to_string(c.head_kind)},
      {"seed", std::to_string(c.seed)},
      {"finetune_data_policy", to_string(c.finetune_data_policy)},
      {"threads", std::to_string(c.threads)},
  };
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

DetectorConfig detector_config_for(const TrainConfig& c) {
  DetectorConfig d = c.preset == Preset::desk ? desk_detector_config() : DetectorConfig{};
  d.input_size = c.input_size;
  d.alpha = c.alpha;
  d.head_kind = c.head_kind;
  return d;
}

}  // namespace dkan
