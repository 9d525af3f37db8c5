#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dkan/dataset.hpp"
#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace dkan {

namespace {

const char* const kImageDirs[] = {"JPEGImages", "IMAGES", "images"};
const char* const kAnnotationDirs[] = {"Annotations", "ANNOTATIONS", "annotations"};
const char* const kImageExtensions[] = {".png", ".jpg", ".jpeg", ".bmp"};

fs::path first_existing(const fs::path& root, std::span<const char* const> names) {
  for (const char* n : names)
    if (fs::is_directory(root / n)) return root / n;
  return root;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return std::find(std::begin(kImageExtensions), std::end(kImageExtensions), ext) != std::end(kImageExtensions);
}

std::optional<double> number_at(const pt::ptree& node, const char* key) {
  auto v = node.get_optional<std::string>(key);
  if (!v) return std::nullopt;
  try {
    std::size_t used = 0;
    const double d = std::stod(trim(*v), &used);
    if (!std::isfinite(d)) return std::nullopt;
    return d;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void load_gray(const fs::path& file, DefectImage& img) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read image: " + file.string());
  if (img.width > 0 && (m.cols != img.width || m.rows != img.height))
    throw DataError("image " + file.string() + " is " + std::to_string(m.cols) + "x" + std::to_string(m.rows) +
                    " but annotation says " + std::to_string(img.width) + "x" + std::to_string(img.height));
  img.width = m.cols;
  img.height = m.rows;
  img.pixels.resize(static_cast<std::size_t>(m.rows) * m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < m.cols; ++x) img.pixels[static_cast<std::size_t>(y) * m.cols + x] = row[x] / 255.0f;
  }
}

std::optional<fs::path> find_image(const fs::path& dir, const std::string& id) {
  for (const char* ext : kImageExtensions) {
    const fs::path p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

}  // namespace

DefectImage parse_voc_xml(const std::string& xml_text, const std::string& id, const NameMap& names,
                          IngestResult& result, std::vector<std::string>& unmapped, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(xml_text);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw DataError("malformed XML " + source + ": " + e.message());
  }
  const auto ann = tree.get_child_optional("annotation");
  if (!ann) throw DataError("missing <annotation> root in " + source);

  DefectImage img;
  img.id = id;
  if (auto size = ann->get_child_optional("size")) {
    img.width = static_cast<int>(number_at(*size, "width").value_or(0));
    img.height = static_cast<int>(number_at(*size, "height").value_or(0));
  }

  int object_index = 0;
  for (const auto& [tag, node] : *ann) {
    if (tag != "object") continue;
    ++result.object_nodes;
    const std::string where = source + " object #" + std::to_string(object_index++);
    const std::string name = trim(node.get<std::string>("name", ""));
    const auto it = names.find(name);
    if (it == names.end()) {
      unmapped.push_back(name);
      ++result.rejected_objects;
      result.warnings.push_back({where, "unmapped class name '" + name + "'"});
      continue;
    }
    const auto bnd = node.get_child_optional("bndbox");
    std::optional<double> x1, y1, x2, y2;
    if (bnd) {
      x1 = number_at(*bnd, "xmin");
      y1 = number_at(*bnd, "ymin");
      x2 = number_at(*bnd, "xmax");
      y2 = number_at(*bnd, "ymax");
    }
    if (!x1 || !y1 || !x2 || !y2) {
      ++result.rejected_objects;
      result.warnings.push_back({where, "missing or non-numeric bndbox"});
      continue;
    }
    BoundingBox box{*x1, *y1, *x2, *y2};
    if (!box.valid()) {
      ++result.rejected_objects;
      std::ostringstream msg;
      msg << "degenerate bndbox (" << box.x1 << "," << box.y1 << "," << box.x2 << "," << box.y2 << ")";
      result.warnings.push_back({where, msg.str()});
      continue;
    }
    if (img.width > 0 && img.height > 0) box = box.clamped(img.width, img.height);
    if (!box.valid()) {
      ++result.rejected_objects;
      result.warnings.push_back({where, "bndbox lies outside the image"});
      continue;
    }
    img.instances.push_back({it->second, box});
    ++result.parsed_instances;
  }
  return img;
}

IngestResult parse_voc_annotations(const fs::path& root, const NameMap& names, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  const fs::path image_dir = first_existing(root, kImageDirs);
  const fs::path ann_dir = first_existing(root, kAnnotationDirs);

  std::set<std::string> stems;
  std::map<std::string, fs::path> image_files;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) {
      image_files[e.path().stem().string()] = e.path();
      stems.insert(e.path().stem().string());
    }
  }
  for (const auto& e : fs::directory_iterator(ann_dir))
    if (e.is_regular_file() && e.path().extension() == ".xml") stems.insert(e.path().stem().string());

  const std::vector<std::string> ids(stems.begin(), stems.end());
  struct Slot {
    IngestResult partial;
    std::vector<std::string> unmapped;
    std::optional<DefectImage> image;
  };
  std::vector<Slot> slots(ids.size());

#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(ids.size()); ++i) {
    Slot& slot = slots[i];
    const std::string& id = ids[i];
    const fs::path xml = ann_dir / (id + ".xml");
    const auto img_it = image_files.find(id);
    try {
      if (!fs::exists(xml)) {
        slot.partial.errors.push_back({img_it->second.string(), "missing annotation file " + xml.string()});
        continue;
      }
      DefectImage img = parse_voc_xml(read_text_file(xml), id, names, slot.partial, slot.unmapped, xml.string());
      if (options.load_pixels) {
        if (img_it == image_files.end()) {
          slot.partial.errors.push_back({xml.string(), "no image file for annotation"});
          continue;
        }
        load_gray(img_it->second, img);
      }
      if (img.instances.empty()) slot.partial.empty_images.push_back(id);
      slot.image = std::move(img);
    } catch (const Error& e) {
      slot.partial.errors.push_back({xml.string(), e.what()});
    }
  }

  IngestResult result;
  std::set<std::string> unmapped;
  for (auto& slot : slots) {
    auto& p = slot.partial;
    result.errors.insert(result.errors.end(), p.errors.begin(), p.errors.end());
    result.warnings.insert(result.warnings.end(), p.warnings.begin(), p.warnings.end());
    result.empty_images.insert(result.empty_images.end(), p.empty_images.begin(), p.empty_images.end());
    result.object_nodes += p.object_nodes;
    result.parsed_instances += p.parsed_instances;
    result.rejected_objects += p.rejected_objects;
    unmapped.insert(slot.unmapped.begin(), slot.unmapped.end());
    if (slot.image) result.images.push_back(std::move(*slot.image));
  }
  if (!unmapped.empty())
    throw DataError("class names missing from the name map: " +
                    join(std::vector<std::string>(unmapped.begin(), unmapped.end()), ", "));
  return result;
}

void write_voc_dataset(const fs::path& root, const std::vector<DefectImage>& images,
                       const std::map<int, std::string>& xml_names) {
  const fs::path image_dir = root / "JPEGImages";
  const fs::path ann_dir = root / "Annotations";
  fs::create_directories(image_dir);
  fs::create_directories(ann_dir);
  for (const auto& img : images) {
    cv::Mat m(img.height, img.width, CV_8UC1);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        m.at<unsigned char>(y, x) =
            static_cast<unsigned char>(std::lround(std::clamp(img.pixel(y, x), 0.0f, 1.0f) * 255.0f));
    const fs::path file = image_dir / (img.id + ".png");
    if (!cv::imwrite(file.string(), m)) throw DataError("cannot write image: " + file.string());

    pt::ptree ann;
    ann.put("annotation.filename", img.id + ".png");
    ann.put("annotation.size.width", img.width);
    ann.put("annotation.size.height", img.height);
    ann.put("annotation.size.depth", 1);
    for (const auto& inst : img.instances) {
      pt::ptree obj;
      const auto it = xml_names.find(inst.category.index);
      obj.put("name", it != xml_names.end() ? it->second : inst.category.name);
      obj.put("difficult", 0);
      obj.put("bndbox.xmin", inst.box.x1);
      obj.put("bndbox.ymin", inst.box.y1);
      obj.put("bndbox.xmax", inst.box.x2);
      obj.put("bndbox.ymax", inst.box.y2);
      ann.add_child("annotation.object", obj);
    }
    std::ostringstream os;
    pt::write_xml(os, ann, pt::xml_writer_make_settings<std::string>(' ', 2));
    write_text_file(ann_dir / (img.id + ".xml"), os.str());
  }
}

void load_partition_pixels(PartitionManifest& manifest) {
  const fs::path image_dir = first_existing(manifest.dataset_root, kImageDirs);
  auto& p = manifest.partition;
  for (auto* list : {&p.test, &p.base_train, &p.novel_train, &p.remainder}) {
    for (auto& img : *list) {
      const auto file = find_image(image_dir, img.id);
      if (!file) throw DataError("image file for id '" + img.id + "' not found under " + image_dir.string());
      load_gray(*file, img);
    }
  }
}

}  // namespace dkan
