#include "dkan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dkan/error.hpp"

namespace dkan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'K', 'A', 'N', 'C', 'K', 'P', 'T'};

nlohmann::json categories_json(const std::vector<CategoryId>& cats) {
  auto arr = nlohmann::json::array();
  for (const auto& c : cats) arr.push_back({{"name", c.name}, {"index", c.index}});
  return arr;
}

std::vector<CategoryId> categories_from(const nlohmann::json& arr) {
  std::vector<CategoryId> out;
  for (const auto& c : arr) out.push_back({c.at("name").get<std::string>(), c.at("index").get<int>()});
  return out;
}

}  // namespace

nlohmann::json detector_config_to_json(const DetectorConfig& c) {
  return {
      {"input_size", c.input_size},
      {"in_channels", c.in_channels},
      {"backbone_channels", c.backbone_channels},
      {"fpn_channels", c.fpn_channels},
      {"representation_dim", c.representation_dim},
      {"roi_resolution", c.roi_resolution},
      {"roi_sampling_ratio", c.roi_sampling_ratio},
      {"roi_canonical_size", c.roi_canonical_size},
      {"anchor_scale", c.anchor_scale},
      {"anchor_ratios", c.anchor_ratios},
      {"rpn_positive_iou", c.rpn_positive_iou},
      {"rpn_negative_iou", c.rpn_negative_iou},
      {"rpn_batch_per_image", c.rpn_batch_per_image},
      {"rpn_positive_fraction", c.rpn_positive_fraction},
      {"rpn_pre_nms_top_n", c.rpn_pre_nms_top_n},
      {"rpn_post_nms_train", c.rpn_post_nms_train},
      {"rpn_post_nms_test", c.rpn_post_nms_test},
      {"rpn_nms_iou", c.rpn_nms_iou},
      {"roi_batch_per_image", c.roi_batch_per_image},
      {"roi_positive_fraction", c.roi_positive_fraction},
      {"roi_foreground_iou", c.roi_foreground_iou},
      {"roi_box_weights", c.roi_box_weights},
      {"head_kind", to_string(c.head_kind)},
      {"alpha", c.alpha},
  };
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("input_size", c.input_size);
  get("in_channels", c.in_channels);
  get("backbone_channels", c.backbone_channels);
  get("fpn_channels", c.fpn_channels);
  get("representation_dim", c.representation_dim);
  get("roi_resolution", c.roi_resolution);
  get("roi_sampling_ratio", c.roi_sampling_ratio);
  get("roi_canonical_size", c.roi_canonical_size);
  get("anchor_scale", c.anchor_scale);
  get("anchor_ratios", c.anchor_ratios);
  get("rpn_positive_iou", c.rpn_positive_iou);
  get("rpn_negative_iou", c.rpn_negative_iou);
  get("rpn_batch_per_image", c.rpn_batch_per_image);
  get("rpn_positive_fraction", c.rpn_positive_fraction);
  get("rpn_pre_nms_top_n", c.rpn_pre_nms_top_n);
  get("rpn_post_nms_train", c.rpn_post_nms_train);
  get("rpn_post_nms_test", c.rpn_post_nms_test);
  get("rpn_nms_iou", c.rpn_nms_iou);
  get("roi_batch_per_image", c.roi_batch_per_image);
  get("roi_positive_fraction", c.roi_positive_fraction);
  get("roi_foreground_iou", c.roi_foreground_iou);
  get("roi_box_weights", c.roi_box_weights);
  if (j.contains("head_kind")) c.head_kind = head_kind_from_string(j.at("head_kind").get<std::string>());
  get("alpha", c.alpha);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const DetectorModel& model,
                     const std::map<std::string, std::string>& metadata) {
  nlohmann::json header;
  header["format"] = "dkan-checkpoint";
  header["metadata"] = metadata;
  header["detector"] = detector_config_to_json(model.config);
  header["base_categories"] = categories_json(model.base_categories);
  header["novel_categories"] = categories_json(model.novel_categories);
  auto params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.params.all()) {
    params.push_back({{"name", p.name},
                      {"group", p.group},
                      {"shape", p.shape},
                      {"offset", offset},
                      {"count", p.size()},
                      {"frozen", p.frozen}});
    offset += p.size();
  }
  header["params"] = params;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_bytes = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_bytes), sizeof header_bytes);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> blob;
  blob.reserve(offset);
  for (const auto& p : model.params.all())
    for (double v : p.data) blob.push_back(static_cast<float>(v));
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_bytes = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_bytes), sizeof header_bytes);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + " is not a DKAN checkpoint");
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  if (header_bytes > (1u << 30)) throw DataError(path.string() + ": implausible header size");
  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.metadata = header.value("metadata", std::map<std::string, std::string>{});
    ck.model.config = detector_config_from_json(header.at("detector"));
    ck.model.base_categories = categories_from(header.at("base_categories"));
    ck.model.novel_categories = categories_from(header.at("novel_categories"));
    std::uint64_t total = 0;
    for (const auto& p : header.at("params")) total += p.at("count").get<std::uint64_t>();
    std::vector<float> blob(total);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated parameter blob");
    for (const auto& p : header.at("params")) {
      Param& dst = ck.model.params.add(p.at("name").get<std::string>(), p.at("group").get<std::string>(),
                                       p.at("shape").get<std::vector<int>>());
      const auto off = p.at("offset").get<std::uint64_t>();
      if (dst.size() != p.at("count").get<std::size_t>() || off + dst.size() > total)
        throw DataError(path.string() + ": inconsistent entry for " + dst.name);
      for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] = blob[off + i];
      dst.frozen = p.value("frozen", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
  return ck;
}

void round_to_float(DetectorParams& params) {
  for (auto& p : params.all())
    for (double& v : p.data) v = static_cast<float>(v);
}

}  // namespace dkan
