#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "slotner/nn/kernels.hpp"

using slotner::Error;
using slotner::ShapeError;
using namespace slotner::nn;

namespace {

Array<double> random_array(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Array<double> a({r, c});
  for (auto& x : a.data) x = d(rng);
  return a;
}

}  // namespace

TEST(Array, ShapeAndIndexing) {
  Array<float> a({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_EQ(a(1, 2), 6.0f);
  EXPECT_EQ(a.row(1)[0], 4.0f);
  EXPECT_EQ(shape_string(a.shape), "[2x3]");
  EXPECT_THROW(Array<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Array, CastPreservesShape) {
  Array<double> a({1, 2}, std::vector<double>{0.5, -1.25});
  auto f = a.cast<float>();
  EXPECT_EQ(f.shape, a.shape);
  EXPECT_EQ(f.data[1], -1.25f);
}

TEST(Kernels, GemmVariantsMatchNaiveProduct) {
  std::mt19937_64 rng(3);
  const std::size_t m = 5, k = 7, n = 4;
  auto a = random_array(m, k, rng);
  auto b = random_array(k, n, rng);
  Array<double> naive({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) naive(i, j) += a(i, p) * b(p, j);

  Array<double> c({m, n});
  kernel::gemm_acc(a.data.data(), b.data.data(), c.data.data(), m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data[i], naive.data[i], 1e-12);

  // a * b computed as a * (b^T)^T
  Array<double> bt({n, k});
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt(j, p) = b(p, j);
  Array<double> c2({m, n});
  kernel::gemm_nt_acc(a.data.data(), bt.data.data(), c2.data.data(), m, k, n);
  for (std::size_t i = 0; i < c2.size(); ++i) EXPECT_NEAR(c2.data[i], naive.data[i], 1e-12);

  // a * b computed as (a^T)^T * b
  Array<double> at({k, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at(p, i) = a(i, p);
  Array<double> c3({m, n});
  kernel::gemm_tn_acc(at.data.data(), b.data.data(), c3.data.data(), k, m, n);
  for (std::size_t i = 0; i < c3.size(); ++i) EXPECT_NEAR(c3.data[i], naive.data[i], 1e-12);
}

TEST(Kernels, SoftmaxRowsSumToOneAndArePositive) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.0f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> x(9);
    for (auto& v : x) v = d(rng);
    kernel::softmax_row(x.data(), x.size());
    double s = 0.0;
    for (float v : x) {
      EXPECT_GT(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Kernels, BlockedSoftmaxEntriesAreExactlyZero) {
  std::vector<double> x{3.0, 100.0, -2.0, 0.5};
  std::vector<unsigned char> blocked{0, 1, 0, 1};
  kernel::softmax_row(x.data(), x.size(), blocked.data());
  EXPECT_EQ(x[1], 0.0);
  EXPECT_EQ(x[3], 0.0);
  EXPECT_NEAR(x[0] + x[2], 1.0, 1e-12);
  EXPECT_NEAR(x[0], std::exp(3.0) / (std::exp(3.0) + std::exp(-2.0)), 1e-12);
}

TEST(Kernels, HandComputedTwoByTwoAttentionWeights) {
  // d = 2, one head: scores = Q K^T / sqrt(2)
  Array<double> q({2, 2}, std::vector<double>{1, 0, 0, 2});
  Array<double> k({2, 2}, std::vector<double>{1, 1, -1, 0});
  auto w = kernel::attention_weights(q, k, 1, nullptr);
  const double s = 1.0 / std::sqrt(2.0);
  // row 0: scores (1, -1) * s ; row 1: scores (2, 0) * s
  const double w00 = std::exp(s) / (std::exp(s) + std::exp(-s));
  const double w10 = std::exp(2 * s) / (std::exp(2 * s) + 1.0);
  EXPECT_NEAR(w(0, 0), w00, 1e-12);
  EXPECT_NEAR(w(0, 1), 1 - w00, 1e-12);
  EXPECT_NEAR(w(1, 0), w10, 1e-12);
  EXPECT_NEAR(w(1, 1), 1 - w10, 1e-12);
}

TEST(Kernels, AttentionPreconditions) {
  Array<double> q({2, 4}), k({3, 4});
  EXPECT_THROW(kernel::attention_weights(q, k, 3, nullptr), ShapeError);
  AttentionMask wrong(3, 3);
  EXPECT_THROW(kernel::attention_weights(q, k, 2, &wrong), ShapeError);
  AttentionMask full(2, 3);
  for (std::size_t c = 0; c < 3; ++c) full.block(1, c);
  EXPECT_THROW(kernel::attention_weights(q, k, 2, &full), Error);
  EXPECT_THROW(full.block(2, 0), ShapeError);
}

TEST(AttentionMask, Counting) {
  AttentionMask m(3, 4);
  m.block(0, 1);
  m.block(2, 3);
  m.block(2, 0);
  EXPECT_EQ(m.blocked_count(), 3u);
  EXPECT_EQ(m.blocked_in_row(2), 2u);
  EXPECT_TRUE(m.is_blocked(0, 1));
  EXPECT_FALSE(m.is_blocked(1, 1));
  ASSERT_EQ(m.blocked_pairs().size(), 3u);
  EXPECT_EQ(m.blocked_pairs()[0], std::make_pair(std::size_t{0}, std::size_t{1}));
}
