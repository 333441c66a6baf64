#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"

using namespace ea;
using namespace ea::testing;

namespace {

EnergyBasis basis_from(std::size_t c, std::size_t sp, std::vector<double> e, std::uint64_t seed,
                       std::string tag = "b") {
  std::mt19937_64 rng(seed);
  const std::size_t n = c * sp * sp;
  e.resize(n, 0.0);
  return EnergyBasis(c, sp, std::move(e), random_orthogonal(n, rng), std::move(tag));
}

std::vector<double> descending(std::size_t n) {
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = static_cast<double>(n - i);
  return e;
}

}  // namespace

TEST(TopThird, Sizes) {
  EXPECT_EQ(top_third(basis_from(1, 5, descending(25), 1)).size(), 9u);
  EXPECT_EQ(top_third(basis_from(3, 5, descending(75), 1)).size(), 25u);
  EXPECT_EQ(top_third(basis_from(1, 3, descending(9), 1)).size(), 3u);
}

TEST(TopThird, ZeroEnergyPadding) {
  const auto list = top_third(basis_from(1, 5, {2.0}, 2));
  ASSERT_EQ(list.size(), 9u);
  EXPECT_NEAR(norm2(list[0]), 1.0, 1e-12);
  for (std::size_t i = 1; i < 9; ++i)
    for (double v : list[i]) EXPECT_EQ(v, 0.0);
}

TEST(Similarity, SelfBlockIsIdentity) {
  const EnergyBasis b = basis_from(1, 5, descending(25), 3);
  const Matrix s = pairwise_similarity(top_third(b), top_third(b));
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(s(i, j), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(Similarity, SignFlipInvariance) {
  const EnergyBasis a = basis_from(1, 3, descending(9), 4);
  const EnergyBasis b = basis_from(1, 3, descending(9), 5);
  auto lb = top_third(b);
  const Matrix s1 = pairwise_similarity(top_third(a), lb);
  for (auto& v : lb[1]) v = -v;
  const Matrix s2 = pairwise_similarity(top_third(a), lb);
  EXPECT_EQ(s1, s2);
  const Matrix signed1 = pairwise_similarity(top_third(a), top_third(b), false);
  const Matrix signed2 = pairwise_similarity(top_third(a), lb, false);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(signed1(i, 1), -signed2(i, 1));
}

TEST(Similarity, RandomBaselineMatchesTheory) {
  // E|cos| for independent isotropic directions in d dims is
  // Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2)).
  for (std::size_t d : {25u, 75u}) {
    const double dd = static_cast<double>(d);
    const double exact = std::exp(std::lgamma(dd / 2) - std::lgamma((dd + 1) / 2)) / std::sqrt(std::numbers::pi);
    EXPECT_NEAR(random_direction_baseline(d, 20000, 1), exact, 0.005) << d;
  }
  EXPECT_NEAR(random_direction_baseline(75, 20000, 2), 0.092, 0.005);
}

TEST(Similarity, MatrixLayoutAndLabels) {
  const std::vector<EnergyBasis> bases = {basis_from(1, 3, descending(9), 6, "A"),
                                          basis_from(1, 3, descending(9), 7, "B")};
  const SimilarityMatrix sm = similarity_matrix(bases);
  EXPECT_EQ(sm.block, 3u);
  EXPECT_EQ(sm.values.rows(), 6u);
  EXPECT_EQ(sm.labels, (std::vector<std::string>{"A#0", "A#1", "A#2", "B#0", "B#1", "B#2"}));
  EXPECT_EQ(sm.sources, (std::vector<std::string>{"A", "B"}));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(sm.values(i, j), sm.values(j, i), 1e-15);
      EXPECT_GE(sm.values(i, j), 0.0);
      EXPECT_LE(sm.values(i, j), 1.0);
    }
  EXPECT_NEAR(sm.values(0, 0), 1.0, 1e-12);
}

TEST(Similarity, DimensionMismatch) {
  const std::vector<EnergyBasis> bases = {basis_from(1, 3, descending(9), 1), basis_from(1, 5, descending(25), 1)};
  EXPECT_THROW(similarity_matrix(bases), DimensionError);
  EXPECT_THROW(pairwise_similarity(top_third(bases[0]), top_third(bases[1])), DimensionError);
  EXPECT_THROW(similarity_matrix(std::span<const EnergyBasis>{}), InvalidInput);
}

TEST(Similarity, RandomDirectionBasis) {
  const EnergyBasis r = random_direction_basis(1, 5, 3);
  EXPECT_EQ(r.tag(), "RND");
  EXPECT_EQ(r.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(norm2(r.vector(i)), 1.0, 1e-12);
}

TEST(Summary, WorkedExample) {
  const std::vector<AttackRecord> recs = {{0, true, 1, 0.1}, {1, true, 3, 0.2}, {2, false, 10000, -1}, {3, true, 5, 0.3}};
  const auto s = summarize(recs);
  EXPECT_EQ(s.n_images, 4u);
  EXPECT_EQ(s.n_success, 3u);
  EXPECT_DOUBLE_EQ(s.asr, 75.0);
  EXPECT_DOUBLE_EQ(*s.avg_queries, 3.0);
  EXPECT_DOUBLE_EQ(*s.median_queries, 3.0);
  const auto all = summarize(recs, QueryStatsOver::all);
  EXPECT_DOUBLE_EQ(*all.avg_queries, 10009.0 / 4);
  EXPECT_DOUBLE_EQ(*all.median_queries, 3.0);  // lower median of {1,3,5,10000}
}

TEST(Summary, AllFailuresHaveNoQueryStats) {
  const std::vector<AttackRecord> recs = {{0, false, 10, -1}, {1, false, 10, -2}};
  const auto s = summarize(recs);
  EXPECT_EQ(s.asr, 0.0);
  EXPECT_FALSE(s.avg_queries.has_value());
  EXPECT_FALSE(s.median_queries.has_value());
  EXPECT_THROW(summarize(std::span<const AttackRecord>{}), InvalidInput);
}

TEST(Summary, PermutationInvariant) {
  std::vector<AttackRecord> recs;
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < 31; ++i) recs.push_back({i, rng() % 3 != 0, 1 + rng() % 500, 0.0});
  const auto a = summarize(recs);
  std::shuffle(recs.begin(), recs.end(), rng);
  const auto b = summarize(recs);
  EXPECT_EQ(a.asr, b.asr);
  EXPECT_EQ(*a.avg_queries, *b.avg_queries);
  EXPECT_EQ(*a.median_queries, *b.median_queries);
}

TEST(Export, PgmQuantizationAndRoundTrip) {
  EXPECT_EQ(quantize_unit(0.5), 128);
  EXPECT_EQ(quantize_unit(0.0), 0);
  EXPECT_EQ(quantize_unit(1.0), 255);
  EXPECT_EQ(quantize_unit(-3.0), 0);
  EXPECT_EQ(quantize_unit(7.0), 255);
  Matrix m(2, 3);
  const std::vector<double> vals = {0.0, 0.25, 0.5, 0.75, 1.0, 0.1};
  std::copy(vals.begin(), vals.end(), m.data().begin());
  const std::string bytes = encode_pgm(m);
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  const GrayImage g = parse_pgm(bytes);
  EXPECT_EQ(g.width, 3u);
  EXPECT_EQ(g.height, 2u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(g.pixels[i], static_cast<std::uint8_t>(std::floor(255 * vals[i] + 0.5)));
  EXPECT_THROW(parse_pgm("P6\n1 1\n255\nx"), FormatError);
  EXPECT_THROW(parse_pgm("P5\n2 2\n255\nxyz"), FormatError);
}

TEST(Export, CsvQuotingAndLayout) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  SimilarityMatrix sm;
  sm.labels = {"x,1", "y"};
  sm.values = Matrix(2, 2);
  sm.values(0, 0) = 1.0;
  sm.values(1, 0) = 0.5;
  EXPECT_EQ(encode_csv(sm), ",\"x,1\",y\r\n\"x,1\",1,0\r\ny,0.5,0\r\n");
}
