#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "dkan/util.hpp"

namespace dkan {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformIndexStaysInRangeAndCoversIt) {
  Rng r(1);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.uniform_index(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalHasRoughlyUnitMoments) {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng r(9);
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
}

TEST(MixSeed, ChildSeedsDiffer) {
  std::set<std::uint64_t> s;
  for (std::uint64_t salt = 0; salt < 100; ++salt) s.insert(mix_seed(7, salt));
  EXPECT_EQ(s.size(), 100u);
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}

TEST(Hashing, KnownDigests) {
  EXPECT_EQ(sha1_hex(std::string_view("abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
  const auto p = std::filesystem::temp_directory_path() / "dkan_blob_test.txt";
  write_text_file(p, "hello\n");
  // `git hash-object` of the same content
  EXPECT_EQ(git_blob_hash(p), "ce013625030ba8dba906f756967f9e9ca394464a");
  std::filesystem::remove(p);
}

TEST(Strings, SplitTrimJoin) {
  EXPECT_EQ(split_list(" a,b,, c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(trim("  x y \t\n"), "x y");
  EXPECT_EQ(join({"a", "b", "c"}, ", "), "a, b, c");
}

}  // namespace
}  // namespace dkan
