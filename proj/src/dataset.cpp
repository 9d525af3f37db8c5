#include "dkan/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {

using nlohmann::json;

BoundingBox BoundingBox::clamped(double w, double h) const {
  return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h), std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h)};
}

bool DefectImage::contains_category(const CategoryId& c) const {
  return std::any_of(instances.begin(), instances.end(), [&](const Instance& i) { return i.category == c; });
}

CategoryId DefectImage::primary_category() const {
  if (instances.empty()) throw DataError("image " + id + " has no instances");
  std::map<int, std::pair<int, CategoryId>> counts;
  for (const auto& inst : instances) {
    auto& slot = counts[inst.category.index];
    slot.first++;
    slot.second = inst.category;
  }
  const auto best = std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    return a.second.first < b.second.first;  // first maximum wins, i.e. lowest index on ties
  });
  return best->second.second;
}

std::vector<CategoryId> SplitSpec::all_categories() const {
  std::vector<CategoryId> all = base_categories;
  all.insert(all.end(), novel_categories.begin(), novel_categories.end());
  return all;
}

bool SplitSpec::is_base(const CategoryId& c) const {
  return std::find(base_categories.begin(), base_categories.end(), c) != base_categories.end();
}

bool SplitSpec::is_novel(const CategoryId& c) const {
  return std::find(novel_categories.begin(), novel_categories.end(), c) != novel_categories.end();
}

void SplitSpec::validate() const {
  if (base_categories.empty()) throw UsageError("split has no base categories");
  if (novel_categories.empty()) throw UsageError("split has no novel categories");
  if (k_shot < 1) throw UsageError("k_shot must be >= 1, got " + std::to_string(k_shot));
  for (const auto& c : base_categories)
    if (is_novel(c)) throw UsageError("category " + c.name + " is both base and novel");
  std::set<int> seen;
  for (const auto& c : all_categories())
    if (!seen.insert(c.index).second) throw UsageError("category " + c.name + " listed twice");
}

NameMap neu_det_name_map() {
  const auto cats = neu_det_categories();
  return {{"crazing", cats[0]},  {"inclusion", cats[1]}, {"pitted_surface", cats[2]},
          {"patches", cats[3]},  {"scratches", cats[4]}, {"rolled-in_scale", cats[5]}};
}

std::vector<CategoryId> neu_det_categories() {
  return {{"Cr", 0}, {"In", 1}, {"PS", 2}, {"Pa", 3}, {"Sc", 4}, {"RS", 5}};
}

CategoryId find_category(const std::vector<CategoryId>& categories, const std::string& name) {
  for (const auto& c : categories)
    if (c.name == name) return c;
  const auto neu = neu_det_name_map();
  if (auto it = neu.find(name); it != neu.end()) {
    for (const auto& c : categories)
      if (c.name == it->second.name) return c;
  }
  std::vector<std::string> names;
  for (const auto& c : categories) names.push_back(c.name);
  throw UsageError("unknown category '" + name + "' (known: " + join(names, ", ") + ")");
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::vector<const DefectImage*> images_of(const std::vector<const DefectImage*>& images, const CategoryId& c) {
  std::vector<const DefectImage*> out;
  for (const auto* img : images)
    if (!img->instances.empty() && img->primary_category() == c) out.push_back(img);
  std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  return out;
}

DefectImage keep_only(const DefectImage& img, const std::vector<CategoryId>& keep) {
  DefectImage copy = img;
  std::erase_if(copy.instances, [&](const Instance& i) {
    return std::find(keep.begin(), keep.end(), i.category) == keep.end();
  });
  return copy;
}

}  // namespace

DatasetPartition build_ifsnd_split(const std::vector<DefectImage>& images, const SplitSpec& spec,
                                   int test_per_category, int base_train_per_category) {
  spec.validate();
  if (test_per_category < 1 || base_train_per_category < 1)
    throw UsageError("test_per_category and base_train_per_category must be positive");

  std::vector<const DefectImage*> all;
  for (const auto& img : images) all.push_back(&img);

  Rng rng(spec.seed);
  const auto categories = spec.all_categories();

  // Shortfall check before any drawing so the error names every category.
  std::vector<std::string> shortfalls;
  std::map<int, std::vector<const DefectImage*>> by_category;
  for (const auto& c : categories) {
    by_category[c.index] = images_of(all, c);
    const int need = test_per_category + (spec.is_base(c) ? base_train_per_category : spec.k_shot);
    const int have = static_cast<int>(by_category[c.index].size());
    if (have < need)
      shortfalls.push_back(c.name + " (needs " + std::to_string(need) + ", has " + std::to_string(have) +
                           ", short by " + std::to_string(need - have) + ")");
  }
  if (!shortfalls.empty()) throw DataError("insufficient images for split: " + join(shortfalls, "; "));

  DatasetPartition part;
  part.spec = spec;

  // Test first, then base train, then the K-shot novel draw.
  std::map<int, std::vector<const DefectImage*>> rest;
  for (const auto& c : categories) {
    auto list = by_category[c.index];
    rng.shuffle(list);
    for (int i = 0; i < test_per_category; ++i) part.test.push_back(*list[i]);
    rest[c.index].assign(list.begin() + test_per_category, list.end());
  }
  for (const auto& c : spec.base_categories) {
    auto& list = rest[c.index];
    rng.shuffle(list);
    for (int i = 0; i < base_train_per_category; ++i)
      part.base_train.push_back(keep_only(*list[i], spec.base_categories));
    list.erase(list.begin(), list.begin() + base_train_per_category);
  }

  std::vector<DefectImage> pool;
  for (const auto& c : spec.novel_categories)
    for (const auto* img : rest[c.index]) pool.push_back(*img);
  const std::uint64_t shot_seed = mix_seed(spec.seed, rng.next());
  part.novel_train = sample_k_shot(pool, spec.novel_categories, spec.k_shot, shot_seed);

  std::set<std::string> taken;
  for (const auto& img : part.novel_train) taken.insert(img.id);
  for (const auto& c : categories)
    for (const auto* img : rest[c.index])
      if (!taken.count(img->id)) part.remainder.push_back(*img);
  // Images outside the evaluated categories stay available as remainder too.
  std::set<std::string> used;
  for (const auto* list : {&part.test, &part.base_train, &part.novel_train, &part.remainder})
    for (const auto& img : *list) used.insert(img.id);
  for (const auto* img : all)
    if (!used.count(img->id)) part.remainder.push_back(*img);
  return part;
}

std::vector<DefectImage> sample_k_shot(const std::vector<DefectImage>& pool,
                                       const std::vector<CategoryId>& novel_categories, int k, std::uint64_t seed) {
  if (k < 1) throw UsageError("k must be >= 1");
  Rng rng(seed);
  std::vector<const DefectImage*> sorted;
  for (const auto& img : pool) sorted.push_back(&img);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  std::set<std::string> chosen;
  std::vector<DefectImage> out;
  for (const auto& c : novel_categories) {
    std::vector<const DefectImage*> candidates;
    for (const auto* img : sorted)
      if (img->contains_category(c) && !chosen.count(img->id)) candidates.push_back(img);
    if (static_cast<int>(candidates.size()) < k)
      throw DataError("insufficient pool for category " + c.name + ": needs " + std::to_string(k) + ", has " +
                      std::to_string(candidates.size()));
    rng.shuffle(candidates);
    for (int i = 0; i < k; ++i) {
      const DefectImage& src = *candidates[i];
      std::vector<std::size_t> matching;
      for (std::size_t j = 0; j < src.instances.size(); ++j)
        if (src.instances[j].category == c) matching.push_back(j);
      const std::size_t pick = matching[rng.uniform_index(matching.size())];
      DefectImage copy = src;
      copy.instances = {src.instances[pick]};
      chosen.insert(copy.id);
      out.push_back(std::move(copy));
    }
  }
  return out;
}

std::vector<DefectImage> sample_base_shots(const std::vector<DefectImage>& base_train,
                                           const std::vector<CategoryId>& base_categories, int k,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<const DefectImage*> all;
  for (const auto& img : base_train) all.push_back(&img);
  std::vector<DefectImage> out;
  for (const auto& c : base_categories) {
    auto list = images_of(all, c);
    if (static_cast<int>(list.size()) < k)
      throw DataError("insufficient base images for category " + c.name + ": needs " + std::to_string(k) +
                      ", has " + std::to_string(list.size()));
    rng.shuffle(list);
    for (int i = 0; i < k; ++i) out.push_back(*list[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

json image_record(const DefectImage& img, const char* partition) {
  json cats = json::array();
  json boxes = json::array();
  for (const auto& inst : img.instances) {
    cats.push_back(inst.category.name);
    boxes.push_back({inst.box.x1, inst.box.y1, inst.box.x2, inst.box.y2});
  }
  return {{"id", img.id},     {"partition", partition}, {"width", img.width},
          {"height", img.height}, {"categories", cats},   {"boxes", boxes}};
}

json category_list(const std::vector<CategoryId>& cats) {
  json out = json::array();
  for (const auto& c : cats) out.push_back(c.name);
  return out;
}

}  // namespace

void write_partition_manifest(const std::filesystem::path& path, const DatasetPartition& partition,
                              const std::vector<CategoryId>& categories, const std::filesystem::path& dataset_root) {
  std::ostringstream os;
  json header = {{"format", "dkan-partition"},
                 {"version", 1},
                 {"dataset_root", dataset_root.string()},
                 {"categories", category_list(categories)},
                 {"base", category_list(partition.spec.base_categories)},
                 {"novel", category_list(partition.spec.novel_categories)},
                 {"k_shot", partition.spec.k_shot},
                 {"seed", partition.spec.seed}};
  os << header.dump() << "\n";
  const std::pair<const std::vector<DefectImage>*, const char*> groups[] = {
      {&partition.test, "test"},
      {&partition.base_train, "base_train"},
      {&partition.novel_train, "novel_train"},
      {&partition.remainder, "remainder"}};
  for (const auto& [list, name] : groups)
    for (const auto& img : *list) os << image_record(img, name).dump() << "\n";
  write_text_file(path, os.str());
}

PartitionManifest read_partition_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open partition manifest: " + path.string());
  PartitionManifest m;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty partition manifest: " + path.string());
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "dkan-partition") throw DataError("not a partition manifest: " + path.string());
    if (header.value("version", 0) != 1) throw DataError("unsupported partition manifest version in " + path.string());
    m.dataset_root = header.at("dataset_root").get<std::string>();
    int idx = 0;
    for (const auto& n : header.at("categories")) m.categories.push_back({n.get<std::string>(), idx++});
    for (const auto& n : header.at("base")) m.partition.spec.base_categories.push_back(find_category(m.categories, n));
    for (const auto& n : header.at("novel"))
      m.partition.spec.novel_categories.push_back(find_category(m.categories, n));
    m.partition.spec.k_shot = header.at("k_shot").get<int>();
    m.partition.spec.seed = header.at("seed").get<std::uint64_t>();

    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const json r = json::parse(line);
      DefectImage img;
      img.id = r.at("id").get<std::string>();
      img.width = r.at("width").get<int>();
      img.height = r.at("height").get<int>();
      const auto& cats = r.at("categories");
      const auto& boxes = r.at("boxes");
      if (cats.size() != boxes.size()) throw DataError("record " + img.id + ": categories/boxes length mismatch");
      for (std::size_t i = 0; i < cats.size(); ++i) {
        const auto& b = boxes[i];
        img.instances.push_back({find_category(m.categories, cats[i].get<std::string>()),
                                 {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}});
      }
      const std::string part = r.at("partition").get<std::string>();
      if (part == "test") m.partition.test.push_back(std::move(img));
      else if (part == "base_train") m.partition.base_train.push_back(std::move(img));
      else if (part == "novel_train") m.partition.novel_train.push_back(std::move(img));
      else if (part == "remainder") m.partition.remainder.push_back(std::move(img));
      else throw DataError("unknown partition '" + part + "' in " + path.string());
    }
  } catch (const json::exception& e) {
    throw DataError("malformed partition manifest " + path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace dkan
