#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dkan {

/// A defect category: short label plus its dense index within a dataset.
struct CategoryId {
  std::string name;
  int index = -1;

  friend bool operator==(const CategoryId& a, const CategoryId& b) { return a.index == b.index && a.name == b.name; }
  friend bool operator<(const CategoryId& a, const CategoryId& b) { return a.index < b.index; }
};

/// Axis-aligned box in continuous, 0-based pixel coordinates (corner format).
struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return valid() ? width() * height() : 0.0; }
  bool valid() const { return x1 < x2 && y1 < y2; }
  BoundingBox clamped(double w, double h) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Instance {
  CategoryId category;
  BoundingBox box;

  friend bool operator==(const Instance& a, const Instance& b) { return a.category == b.category && a.box == b.box; }
};

/// Grayscale image with its annotated defects. Pixels are row-major in [0, 1];
/// they may be left empty when only annotations were loaded.
struct DefectImage {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  std::vector<Instance> instances;

  bool has_pixels() const { return !pixels.empty(); }
  float pixel(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool contains_category(const CategoryId& c) const;
  /// Most frequent instance category (lowest index on ties). Requires instances.
  CategoryId primary_category() const;
};

struct SplitSpec {
  std::vector<CategoryId> base_categories;
  std::vector<CategoryId> novel_categories;
  int k_shot = 5;
  std::uint64_t seed = 0;

  /// Base first, then novel, each in the order given.
  std::vector<CategoryId> all_categories() const;
  bool is_base(const CategoryId& c) const;
  bool is_novel(const CategoryId& c) const;
  /// Throws UsageError on overlap, empty sets or k_shot < 1.
  void validate() const;
};

struct DatasetPartition {
  std::vector<DefectImage> base_train;
  std::vector<DefectImage> novel_train;
  std::vector<DefectImage> test;
  /// Images not drawn into test or base_train, unmodified and excluding the
  /// novel_train ids. Together with novel_train this is the pool that later
  /// K-shot resamples draw from.
  std::vector<DefectImage> remainder;
  SplitSpec spec;
};

using NameMap = std::map<std::string, CategoryId>;

/// The six NEU-DET classes: crazing, inclusion, pitted_surface, patches,
/// scratches, rolled-in_scale mapped to Cr, In, PS, Pa, Sc, RS (indices 0..5).
NameMap neu_det_name_map();
std::vector<CategoryId> neu_det_categories();
/// Resolves short labels ("Cr") or long names ("crazing") against a category list.
CategoryId find_category(const std::vector<CategoryId>& categories, const std::string& name);

// ---------------------------------------------------------------------------
// VOC ingestion

struct IngestIssue {
  std::string path;
  std::string message;
};

struct IngestResult {
  std::vector<DefectImage> images;  // sorted by id
  std::vector<IngestIssue> errors;    // per-file failures (missing or unreadable annotation)
  std::vector<IngestIssue> warnings;  // rejected objects
  std::vector<std::string> empty_images;  // ids parsed with zero valid objects
  std::size_t object_nodes = 0;
  std::size_t parsed_instances = 0;
  std::size_t rejected_objects = 0;
};

struct IngestOptions {
  bool load_pixels = true;
};

/// Parses one VOC XML document. Degenerate boxes become warnings; names absent
/// from the map are appended to `unmapped`.
DefectImage parse_voc_xml(const std::string& xml_text, const std::string& id, const NameMap& names,
                          IngestResult& result, std::vector<std::string>& unmapped, const std::string& source);

/// Reads a VOC-style tree: images under JPEGImages/, IMAGES/ or images/ (else the
/// root) with one XML per image under Annotations/, ANNOTATIONS/ or annotations/.
/// Throws DataError listing every class name missing from `names`.
IngestResult parse_voc_annotations(const std::filesystem::path& root, const NameMap& names,
                                   const IngestOptions& options = {});

/// Writes images (PNG) and VOC XML annotations under root/JPEGImages and root/Annotations.
void write_voc_dataset(const std::filesystem::path& root, const std::vector<DefectImage>& images,
                       const std::map<int, std::string>& xml_names);

// ---------------------------------------------------------------------------
// Splits

DatasetPartition build_ifsnd_split(const std::vector<DefectImage>& images, const SplitSpec& spec,
                                   int test_per_category, int base_train_per_category);

/// Draws k images per novel category, each reduced to a single instance of
/// that category. Output is grouped by category in spec order.
std::vector<DefectImage> sample_k_shot(const std::vector<DefectImage>& pool,
                                       const std::vector<CategoryId>& novel_categories, int k, std::uint64_t seed);

/// K images per base category drawn from base_train (annotations kept).
std::vector<DefectImage> sample_base_shots(const std::vector<DefectImage>& base_train,
                                           const std::vector<CategoryId>& base_categories, int k,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Manifests

/// Line-delimited JSON: one header record, then one record per image.
void write_partition_manifest(const std::filesystem::path& path, const DatasetPartition& partition,
                              const std::vector<CategoryId>& categories, const std::filesystem::path& dataset_root);

struct PartitionManifest {
  std::filesystem::path dataset_root;
  std::vector<CategoryId> categories;
  DatasetPartition partition;  // images carry annotations only
};

PartitionManifest read_partition_manifest(const std::filesystem::path& path);

/// Fills pixels for every image in the partition from the dataset root.
void load_partition_pixels(PartitionManifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  int num_categories = 6;
  int images_per_category = 50;
  int image_size = 64;
  double noise = 0.06;
  int max_instances = 2;
};

/// One rendered image plus each defect's noise-free intensity mask.
struct SyntheticSample {
  DefectImage image;
  std::vector<std::vector<float>> instance_masks;
};

std::vector<CategoryId> synthetic_categories(int num_categories);
SyntheticSample render_synthetic_image(const CategoryId& category, const SyntheticConfig& config,
                                       const std::string& id, std::uint64_t seed);
std::vector<DefectImage> generate_synthetic_dataset(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace dkan
