#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace apgcn;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // mean 0.5, sd of the mean sqrt(1/12/1e5)
  EXPECT_NEAR(sum / 100000, 0.5, 4 * std::sqrt(1.0 / 12 / 100000));
}

TEST(Rng, BelowCoversRangeUniformly) {
  Rng r(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 4 * std::sqrt(70000 * (1.0 / 7) * (6.0 / 7)));
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  shuffle(w.begin(), w.end(), r);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Rng, MixSeedSeparatesPairs) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 20; ++a)
    for (std::uint64_t b = 0; b < 20; ++b) seen.insert(mix_seed(a, b));
  EXPECT_EQ(seen.size(), 400u);
}

TEST(Matrix, ShapeAndAccess) {
  Matrix<double> m(2, 3, 1.5);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  m(1, 2) = 4;
  EXPECT_EQ(m.row(1)[2], 4);
  EXPECT_EQ(m.storage()[5], 4);
  EXPECT_THROW(Matrix<double>(2, 2, std::vector<double>{1, 2, 3}), InvalidArgument);
  EXPECT_THROW(Matrix<double>::from_rows({{1, 2}, {3}}), InvalidArgument);
}

TEST(Matrix, MatmulMatchesTripleLoop) {
  Rng r(9);
  auto a = oracle::random_matrix(4, 3, r);
  auto b = oracle::random_matrix(3, 5, r);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  EXPECT_THROW(matmul(a, a), InvalidArgument);
}

TEST(Matrix, TransposeAndFinite) {
  auto m = Matrix<double>::from_rows({{1, 2, 3}, {4, 5, 6}});
  auto t = transpose(m);
  EXPECT_EQ(t, Matrix<double>::from_rows({{1, 4}, {2, 5}, {3, 6}}));
  EXPECT_TRUE(all_finite(m));
  m(0, 0) = std::nan("");
  EXPECT_FALSE(all_finite(m));
}

TEST(SparseRows, RoundTripsDense) {
  auto m = Matrix<double>::from_rows({{0, 2, 0}, {0, 0, 0}, {1, 0, 3}});
  auto s = SparseRows<double>::from_dense(m);
  EXPECT_EQ(s.nnz(), 3u);
  EXPECT_EQ(s.offsets, (std::vector<std::size_t>{0, 1, 1, 3}));
  EXPECT_EQ(s.to_dense(), m);
}
