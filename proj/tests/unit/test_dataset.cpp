#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "dkan/dataset.hpp"
#include "dkan/error.hpp"
#include "dkan/util.hpp"

namespace dkan {
namespace {

namespace fs = std::filesystem;

const std::string kMinimalXml = R"(<annotation>
  <filename>img.jpg</filename>
  <size><width>200</width><height>200</height><depth>1</depth></size>
  <object><name>crazing</name><bndbox><xmin>10</xmin><ymin>10</ymin><xmax>50</xmax><ymax>50</ymax></bndbox></object>
</annotation>)";

TEST(Voc, MinimalFileGivesOneInstance) {
  IngestResult res;
  std::vector<std::string> unmapped;
  const auto img = parse_voc_xml(kMinimalXml, "img", neu_det_name_map(), res, unmapped, "img.xml");
  ASSERT_EQ(img.instances.size(), 1u);
  EXPECT_EQ(img.instances[0].category.name, "Cr");
  EXPECT_EQ(img.instances[0].box, (BoundingBox{10, 10, 50, 50}));
  EXPECT_EQ(img.width, 200);
  EXPECT_TRUE(unmapped.empty());
}

TEST(Voc, DegenerateBoxIsRejectedWithWarning) {
  const std::string xml = R"(<annotation><size><width>200</width><height>200</height></size>
    <object><name>crazing</name><bndbox><xmin>50</xmin><ymin>50</ymin><xmax>10</xmax><ymax>10</ymax></bndbox></object>
    <object><name>inclusion</name><bndbox><xmin>1</xmin><ymin>2</ymin><xmax>30</xmax><ymax>40</ymax></bndbox></object>
  </annotation>)";
  IngestResult res;
  std::vector<std::string> unmapped;
  const auto img = parse_voc_xml(xml, "x", neu_det_name_map(), res, unmapped, "x.xml");
  ASSERT_EQ(img.instances.size(), 1u);
  EXPECT_EQ(img.instances[0].category.name, "In");
  EXPECT_EQ(res.warnings.size(), 1u);
}

TEST(Voc, UnknownClassNamesAreCollected) {
  IngestResult res;
  std::vector<std::string> unmapped;
  NameMap names{{"inclusion", {"In", 1}}};
  parse_voc_xml(kMinimalXml, "img", names, res, unmapped, "img.xml");
  EXPECT_EQ(unmapped, std::vector<std::string>{"crazing"});
}

TEST(Voc, WriteThenReadRoundTrips) {
  SyntheticConfig sc;
  sc.num_categories = 3;
  sc.images_per_category = 4;
  const auto images = generate_synthetic_dataset(sc, 3);
  const fs::path root = fs::temp_directory_path() / "dkan_voc_roundtrip";
  fs::remove_all(root);
  std::map<int, std::string> xml_names;
  for (const auto& [name, c] : neu_det_name_map()) xml_names[c.index] = name;
  write_voc_dataset(root, images, xml_names);

  const auto res = parse_voc_annotations(root, neu_det_name_map());
  EXPECT_TRUE(res.errors.empty());
  ASSERT_EQ(res.images.size(), images.size());
  std::map<std::string, const DefectImage*> by_id;
  for (const auto& img : images) by_id[img.id] = &img;
  for (const auto& got : res.images) {
    const auto& want = *by_id.at(got.id);
    ASSERT_EQ(got.instances.size(), want.instances.size());
    for (std::size_t i = 0; i < got.instances.size(); ++i) {
      EXPECT_EQ(got.instances[i].category, want.instances[i].category);
      EXPECT_NEAR(got.instances[i].box.x1, want.instances[i].box.x1, 1e-6);
      EXPECT_NEAR(got.instances[i].box.y2, want.instances[i].box.y2, 1e-6);
    }
    ASSERT_EQ(got.pixels.size(), want.pixels.size());
    for (std::size_t p = 0; p < got.pixels.size(); ++p) EXPECT_NEAR(got.pixels[p], want.pixels[p], 0.5 / 255 + 1e-6);
  }
  fs::remove_all(root);
}

TEST(Voc, MissingNamesAreReportedTogether) {
  SyntheticConfig sc;
  sc.num_categories = 2;
  sc.images_per_category = 1;
  const fs::path root = fs::temp_directory_path() / "dkan_voc_names";
  fs::remove_all(root);
  write_voc_dataset(root, generate_synthetic_dataset(sc, 1), {});
  try {
    parse_voc_annotations(root, NameMap{});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Cr"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("In"), std::string::npos);
  }
  fs::remove_all(root);
}

TEST(Categories, FindByShortOrLongName) {
  const auto cats = neu_det_categories();
  EXPECT_EQ(find_category(cats, "Sc").index, 4);
  EXPECT_EQ(find_category(cats, "scratches").index, 4);
  EXPECT_THROW(find_category(cats, "dents"), UsageError);
}

// Annotation-only images, `per` per NEU category, one instance each.
std::vector<DefectImage> neu_shaped(int per) {
  std::vector<DefectImage> out;
  for (const auto& c : neu_det_categories())
    for (int i = 0; i < per; ++i) {
      DefectImage img;
      img.id = c.name + "_" + std::to_string(1000 + i);
      img.width = img.height = 200;
      img.instances.push_back({c, {10.0 + i % 7, 20, 60, 90}});
      out.push_back(img);
    }
  return out;
}

SplitSpec split1(int k, std::uint64_t seed) {
  const auto c = neu_det_categories();
  return {{c[0], c[1], c[2]}, {c[3], c[4], c[5]}, k, seed};
}

std::vector<std::string> ids(const std::vector<DefectImage>& v) {
  std::vector<std::string> out;
  for (const auto& i : v) out.push_back(i.id);
  return out;
}

TEST(Split, NeuShapedSplitOneSizes) {
  const auto images = neu_shaped(300);
  const auto p = build_ifsnd_split(images, split1(5, 0), 60, 240);
  EXPECT_EQ(p.test.size(), 360u);
  EXPECT_EQ(p.base_train.size(), 720u);
  EXPECT_EQ(p.novel_train.size(), 15u);
  for (const auto& img : p.novel_train) EXPECT_EQ(img.instances.size(), 1u);

  std::set<std::string> seen;
  for (const auto* part : {&p.test, &p.base_train, &p.novel_train, &p.remainder})
    for (const auto& img : *part) EXPECT_TRUE(seen.insert(img.id).second) << img.id;
  EXPECT_EQ(seen.size(), images.size());
}

TEST(Split, SameSeedSamePartition) {
  const auto images = neu_shaped(300);
  const auto a = build_ifsnd_split(images, split1(5, 3), 60, 240);
  const auto b = build_ifsnd_split(images, split1(5, 3), 60, 240);
  EXPECT_EQ(ids(a.test), ids(b.test));
  EXPECT_EQ(ids(a.base_train), ids(b.base_train));
  EXPECT_EQ(ids(a.novel_train), ids(b.novel_train));
  EXPECT_EQ(ids(a.remainder), ids(b.remainder));
  const auto c = build_ifsnd_split(images, split1(5, 4), 60, 240);
  EXPECT_NE(ids(a.test), ids(c.test));
}

TEST(Split, ShortfallNamesTheCategory) {
  auto images = neu_shaped(80);
  // Pa keeps only 20 images after the test draw
  const auto p = build_ifsnd_split(images, split1(5, 0), 60, 20);
  EXPECT_EQ(p.novel_train.size(), 15u);
  try {
    build_ifsnd_split(images, split1(30, 0), 60, 20);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("Pa"), std::string::npos) << e.what();
  }
}

TEST(Split, OverlappingSpecIsRejected) {
  const auto c = neu_det_categories();
  SplitSpec bad{{c[0], c[1]}, {c[1], c[2]}, 5, 0};
  EXPECT_THROW(bad.validate(), UsageError);
  SplitSpec zero{{c[0]}, {c[1]}, 0, 0};
  EXPECT_THROW(zero.validate(), UsageError);
}

TEST(KShot, DrawsKSingleInstanceImages) {
  const auto pa = neu_det_categories()[3];
  std::vector<DefectImage> pool;
  for (int i = 0; i < 100; ++i) {
    DefectImage img;
    img.id = "pa" + std::to_string(i);
    img.instances = {{pa, {0, 0, 10, 10}}, {pa, {20, 20, 30, 30}}};
    pool.push_back(img);
  }
  const auto out = sample_k_shot(pool, {pa}, 5, 0);
  ASSERT_EQ(out.size(), 5u);
  for (const auto& img : out) {
    EXPECT_EQ(img.instances.size(), 1u);
    EXPECT_EQ(img.instances[0].category, pa);
  }
  EXPECT_EQ(ids(sample_k_shot(pool, {pa}, 5, 0)), ids(out));
}

TEST(KShot, KEqualToPoolTakesEverything) {
  const auto pa = neu_det_categories()[3];
  std::vector<DefectImage> pool;
  for (int i = 0; i < 6; ++i) pool.push_back({"p" + std::to_string(i), 10, 10, {}, {{pa, {0, 0, 5, 5}}}});
  auto a = ids(sample_k_shot(pool, {pa}, 6, 11));
  EXPECT_EQ(a, ids(sample_k_shot(pool, {pa}, 6, 11)));
  std::sort(a.begin(), a.end());
  EXPECT_EQ(a, ids(pool));
  EXPECT_THROW(sample_k_shot(pool, {pa}, 7, 11), DataError);
}

TEST(KShot, InstanceChoiceFollowsTheSeed) {
  // One candidate image, so the draw consumes exactly one uniform_index(3).
  const auto pa = neu_det_categories()[3];
  DefectImage img{"only", 50, 50, {}, {{pa, {0, 0, 5, 5}}, {pa, {10, 10, 15, 15}}, {pa, {20, 20, 25, 25}}}};
  std::set<std::size_t> chosen;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto out = sample_k_shot({img}, {pa}, 1, seed);
    ASSERT_EQ(out[0].instances.size(), 1u);
    const std::size_t expect = Rng(seed).uniform_index(3);
    EXPECT_EQ(out[0].instances[0].box, img.instances[expect].box);
    chosen.insert(expect);
  }
  EXPECT_EQ(chosen.size(), 3u);
}

TEST(BaseShots, KPerBaseCategory) {
  const auto images = neu_shaped(20);
  const auto c = neu_det_categories();
  const auto out = sample_base_shots(images, {c[0], c[1]}, 4, 2);
  ASSERT_EQ(out.size(), 8u);
  EXPECT_THROW(sample_base_shots(images, {c[0]}, 21, 2), DataError);
}

TEST(PartitionManifest, RoundTrips) {
  const auto images = neu_shaped(12);
  const auto p = build_ifsnd_split(images, split1(2, 1), 4, 5);
  const fs::path path = fs::temp_directory_path() / "dkan_partition.jsonl";
  write_partition_manifest(path, p, neu_det_categories(), "/data/neu");
  const auto m = read_partition_manifest(path);
  EXPECT_EQ(m.dataset_root, fs::path("/data/neu"));
  EXPECT_EQ(m.categories.size(), 6u);
  EXPECT_EQ(ids(m.partition.test), ids(p.test));
  EXPECT_EQ(ids(m.partition.base_train), ids(p.base_train));
  EXPECT_EQ(ids(m.partition.novel_train), ids(p.novel_train));
  EXPECT_EQ(ids(m.partition.remainder), ids(p.remainder));
  EXPECT_EQ(m.partition.spec.k_shot, 2);
  EXPECT_EQ(m.partition.spec.novel_categories, p.spec.novel_categories);
  ASSERT_FALSE(m.partition.novel_train.empty());
  EXPECT_EQ(m.partition.novel_train[0].instances, p.novel_train[0].instances);
  fs::remove(path);
}

TEST(Synthetic, DeterministicAndAnnotated) {
  SyntheticConfig sc;
  sc.images_per_category = 50;
  const auto a = generate_synthetic_dataset(sc, 7);
  const auto b = generate_synthetic_dataset(sc, 7);
  ASSERT_EQ(a.size(), 300u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_FALSE(a[i].instances.empty());
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].pixels, b[i].pixels);
    EXPECT_EQ(a[i].instances, b[i].instances);
  }
}

TEST(Synthetic, TwoCategoriesOneImageEach) {
  SyntheticConfig sc;
  sc.num_categories = 2;
  sc.images_per_category = 1;
  const auto v = generate_synthetic_dataset(sc, 0);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_NE(v[0].primary_category(), v[1].primary_category());
}

TEST(Synthetic, BoxIsTightAroundThePrimitive) {
  SyntheticConfig sc;
  const auto cats = synthetic_categories(6);
  for (int t = 0; t < 60; ++t) {
    const auto s = render_synthetic_image(cats[t % 6], sc, "t", 100 + t);
    ASSERT_EQ(s.instance_masks.size(), s.image.instances.size());
    for (std::size_t k = 0; k < s.instance_masks.size(); ++k) {
      int x1 = sc.image_size, y1 = sc.image_size, x2 = -1, y2 = -1;
      for (int y = 0; y < sc.image_size; ++y)
        for (int x = 0; x < sc.image_size; ++x)
          if (s.instance_masks[k][y * sc.image_size + x] != 0.0f) {
            x1 = std::min(x1, x), y1 = std::min(y1, y);
            x2 = std::max(x2, x + 1), y2 = std::max(y2, y + 1);
          }
      const auto& box = s.image.instances[k].box;
      EXPECT_NEAR(box.x1, x1, 1.0);
      EXPECT_NEAR(box.y1, y1, 1.0);
      EXPECT_NEAR(box.x2, x2, 1.0);
      EXPECT_NEAR(box.y2, y2, 1.0);
    }
  }
}

}  // namespace
}  // namespace dkan
