#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "dkan/detector.hpp"

namespace dkan {

// Binary layout (all integers little-endian):
//   "DKANCKPT"  u32 version  u64 header_bytes  <JSON header>  <float32 blob>
// The header lists every parameter with its shape, group, frozen flag and
// offset (in floats) into the blob, plus the detector config and the base /
// novel category order. See docs/formats.md.
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json detector_config_to_json(const DetectorConfig& config);
/// Missing keys keep their defaults.
DetectorConfig detector_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  DetectorModel model;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, const DetectorModel& model,
                     const std::map<std::string, std::string>& metadata = {});
/// Throws DataError naming the path when the file is missing or malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter through float32, the precision checkpoints store.
void round_to_float(DetectorParams& params);

}  // namespace dkan
