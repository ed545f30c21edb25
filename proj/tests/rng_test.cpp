#include <gtest/gtest.h>

#include "diffcl/rng.hpp"

namespace diffcl {
namespace {

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngTest, SubstreamsAreIndependentOfParentState) {
  Rng a(42);
  const Rng before = a.substream("views");
  a.next_u64();
  Rng after = a.substream("views");
  Rng copy = before;
  EXPECT_EQ(copy.next_u64(), after.next_u64());
}

TEST(RngTest, DistinctPurposesDiffer) {
  Rng root(7);
  Rng a = root.substream("visual");
  Rng b = root.substream("textual");
  Rng c = root.substream(1);
  Rng d = root.substream(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(RngTest, UniformAndNormalMoments) {
  Rng rng(3);
  const int n = 20000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.01);
  EXPECT_NEAR(sn / n, 0.0, 0.03);
  EXPECT_NEAR(sn2 / n, 1.0, 0.05);
}

TEST(RngTest, UniformIndexInRange) {
  Rng rng(5);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 3000; ++i) ++counts[rng.uniform_index(3)];
  for (int c : counts) EXPECT_NEAR(c, 1000, 100);
}

}  // namespace
}  // namespace diffcl
