#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cral/data.hpp"
#include "cral/errors.hpp"

using namespace cral;

namespace {

DomainDataset parse(const std::string& text, std::size_t dim = 10) {
  std::istringstream is(text);
  return parse_sparse_dataset(is, "mem", dim);
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

std::size_t count(const std::vector<std::size_t>& labels, std::size_t c) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
}

}  // namespace

TEST(SparseFormat, ParsesLabeledUnlabeledAndComments) {
  auto d = parse("# header\n1 0:1.5 3:-2\n\n0 9:1e-3   # trailing\n? 2:4\r\n");
  ASSERT_EQ(d.labeled.size(), 2u);
  ASSERT_EQ(d.unlabeled.size(), 1u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(d.labeled[0].indices, (std::vector<std::uint32_t>{0, 3}));
  EXPECT_EQ(d.labeled[0].values, (std::vector<double>{1.5, -2}));
  EXPECT_EQ(d.labeled[1].values[0], 1e-3);
  EXPECT_EQ(d.unlabeled[0].indices[0], 2u);
  EXPECT_EQ(d.feature_dim, 10u);
}

TEST(SparseFormat, RejectsMalformedLinesWithLineNumbers) {
  EXPECT_EQ(error_line("1 0:1\n2 0:1\n"), 2u);          // bad label
  EXPECT_EQ(error_line("1 0:1\n0 3:1 3:2\n"), 2u);      // duplicate index
  EXPECT_EQ(error_line("1 4:1 2:1\n"), 1u);             // decreasing
  EXPECT_EQ(error_line("1 10:1\n"), 1u);                // out of range
  EXPECT_EQ(error_line("1 -1:1\n"), 1u);
  EXPECT_EQ(error_line("1 0:abc\n"), 1u);
  EXPECT_EQ(error_line("1 0:nan\n"), 1u);
  EXPECT_EQ(error_line("1 0=1\n"), 1u);
  EXPECT_EQ(error_line("1  0:1\n"), 1u);                // double space
  EXPECT_EQ(error_line("1\n"), 1u);                     // no pairs
  EXPECT_EQ(error_line("\n\n1 0:1 1:\n"), 3u);
  try {
    parse("1 3:1 3:2\n");
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate index 3"), std::string::npos) << e.what();
  }
}

TEST(SparseFormat, RoundTripIsExact) {
  auto domains = generate_synthetic(SyntheticSpec{2, 8, 20, 10, 3.0, 3.0, 0.1, 4});
  for (const auto& d : domains) {
    std::stringstream ss;
    write_sparse_dataset(ss, d);
    auto back = parse_sparse_dataset(ss, "rt", d.feature_dim);
    EXPECT_EQ(back.labeled, d.labeled);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.unlabeled, d.unlabeled);
  }
  DomainDataset tiny{"t", 4, {SparseVector{{1}, {0.1}}, SparseVector{}}, {0, 1}, {}};
  std::stringstream ss;
  write_sparse_dataset(ss, tiny);
  auto back = parse_sparse_dataset(ss, "rt", 4);
  EXPECT_EQ(to_dense(back.labeled, 4), to_dense(tiny.labeled, 4));
}

TEST(Dense, ConversionRoundTrip) {
  std::vector<double> row{0, 1.5, 0, -2};
  auto sv = to_sparse(row);
  EXPECT_EQ(sv.indices, (std::vector<std::uint32_t>{1, 3}));
  std::vector<SparseVector> samples{sv, SparseVector{{0}, {7}}};
  auto t = to_dense(samples, 4);
  EXPECT_EQ(t, Tensor::matrix({{0, 1.5, 0, -2}, {7, 0, 0, 0}}));
  std::vector<std::size_t> rows{1};
  EXPECT_EQ(to_dense(samples, rows, 4), Tensor::matrix({{7, 0, 0, 0}}));
  EXPECT_THROW(to_dense(samples, 2), DimensionError);
}

TEST(Synthetic, BalancedAndDeterministic) {
  SyntheticSpec spec{3, 10, 101, 50, 3.0, 3.0, 0.0, 7};
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].labeled, b[i].labeled);
    EXPECT_EQ(a[i].unlabeled, b[i].unlabeled);
    EXPECT_EQ(a[i].labeled.size(), 101u);
    EXPECT_EQ(a[i].unlabeled.size(), 50u);
    const auto ones = count(a[i].labels, 1);
    EXPECT_TRUE(ones == 50 || ones == 51);
    EXPECT_NO_THROW(a[i].validate());
  }
  spec.seed = 8;
  EXPECT_NE(generate_synthetic(spec)[0].labeled, a[0].labeled);
  spec.label_noise = 0.5;
  EXPECT_THROW(generate_synthetic(spec), SpecError);
}

TEST(Synthetic, LabelNoiseKeepsBalance) {
  SyntheticSpec spec{2, 6, 200, 10, 6.0, 0.0, 0.2, 3};
  auto clean = generate_synthetic(SyntheticSpec{2, 6, 200, 10, 6.0, 0.0, 0.0, 3});
  auto noisy = generate_synthetic(spec);
  EXPECT_EQ(count(noisy[0].labels, 1), 100u);
  std::size_t flipped = 0;
  for (std::size_t k = 0; k < 200; ++k) flipped += clean[0].labels[k] != noisy[0].labels[k];
  EXPECT_EQ(flipped, 40u);
}

// Welch z-test per feature on domain means, Bonferroni over features.
TEST(Synthetic, ZeroShiftGivesMatchingDomainMeans) {
  auto min_p = [](const std::vector<DomainDataset>& d) {
    const std::size_t dim = d[0].feature_dim;
    auto a = to_dense(d[0].labeled, dim), b = to_dense(d[1].labeled, dim);
    double lowest = 1.0;
    for (std::size_t j = 0; j < dim; ++j) {
      auto stats = [&](const Tensor& t) {
        double s = 0, sq = 0;
        for (std::size_t r = 0; r < t.rows(); ++r) s += t.at(r, j);
        const double m = s / static_cast<double>(t.rows());
        for (std::size_t r = 0; r < t.rows(); ++r) sq += (t.at(r, j) - m) * (t.at(r, j) - m);
        return std::pair{m, sq / static_cast<double>(t.rows() - 1) / static_cast<double>(t.rows())};
      };
      auto [ma, va] = stats(a);
      auto [mb, vb] = stats(b);
      const double z = std::abs(ma - mb) / std::sqrt(va + vb);
      lowest = std::min(lowest, std::erfc(z / std::sqrt(2.0)));
    }
    return lowest * static_cast<double>(dim);
  };
  EXPECT_GT(min_p(generate_synthetic(SyntheticSpec{2, 16, 1000, 10, 3.0, 0.0, 0.0, 11})), 0.001);
  EXPECT_LT(min_p(generate_synthetic(SyntheticSpec{2, 16, 1000, 10, 3.0, 3.0, 0.0, 11})), 1e-6);
}

// Logistic regression trained on half the samples separates the other half.
TEST(Synthetic, WellSeparatedClassesAreLinearlySeparable) {
  auto d = generate_synthetic(SyntheticSpec{1 + 1, 16, 400, 10, 6.0, 3.0, 0.0, 2})[0];
  auto x = to_dense(d.labeled, 16);
  std::vector<double> w(17, 0.0);
  auto score = [&](std::size_t r) {
    double s = w[16];
    for (std::size_t j = 0; j < 16; ++j) s += w[j] * x.at(r, j);
    return s;
  };
  for (int it = 0; it < 300; ++it) {
    std::vector<double> g(17, 0.0);
    for (std::size_t r = 0; r < 200; ++r) {
      const double err = 1.0 / (1.0 + std::exp(-score(r))) - static_cast<double>(d.labels[r]);
      for (std::size_t j = 0; j < 16; ++j) g[j] += err * x.at(r, j);
      g[16] += err;
    }
    for (std::size_t j = 0; j < 17; ++j) w[j] -= 0.1 * g[j] / 200.0;
  }
  std::size_t correct = 0;
  for (std::size_t r = 200; r < 400; ++r) correct += (score(r) > 0 ? 1u : 0u) == d.labels[r];
  EXPECT_GT(correct / 200.0, 0.95);
}

TEST(Folds, StratifiedFiveFolds) {
  std::vector<std::size_t> labels(2000);
  for (std::size_t k = 0; k < 2000; ++k) labels[k] = k % 2;
  auto folds = stratified_folds(labels, 5, 3);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 400u);
    std::vector<std::size_t> fl;
    for (auto i : f) {
      fl.push_back(labels[i]);
      EXPECT_TRUE(seen.insert(i).second);
    }
    EXPECT_EQ(count(fl, 0), 200u);
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
  }
  EXPECT_EQ(seen.size(), 2000u);
  EXPECT_EQ(stratified_folds(labels, 5, 3), folds);
  EXPECT_NE(stratified_folds(labels, 5, 4), folds);
}

TEST(Folds, UnevenSizesDifferByAtMostOne) {
  std::vector<std::size_t> labels(23, 0);
  for (std::size_t k = 0; k < 11; ++k) labels[k] = 1;
  auto folds = stratified_folds(labels, 4, 1);
  std::size_t lo = 100, hi = 0;
  for (const auto& f : folds) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
  }
  EXPECT_LE(hi - lo, 1u);
  EXPECT_THROW(stratified_folds(labels, 1, 1), SpecError);
  std::vector<std::size_t> tiny{0, 0, 0, 1, 1};
  EXPECT_THROW(stratified_folds(tiny, 3, 1), DataError);
}

TEST(Split, FractionsAndErrors) {
  std::vector<std::size_t> labels(100);
  for (std::size_t k = 0; k < 100; ++k) labels[k] = k < 50 ? 0 : 1;
  std::vector<double> f{0.6, 0.2, 0.2};
  auto parts = stratified_split(labels, f, 5);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].size(), 60u);
  EXPECT_EQ(parts[1].size(), 20u);
  EXPECT_EQ(parts[2].size(), 20u);
  std::vector<std::size_t> l1;
  for (auto i : parts[1]) l1.push_back(labels[i]);
  EXPECT_EQ(count(l1, 1), 10u);

  std::vector<double> bad{0.5, 0.4};
  EXPECT_THROW(stratified_split(labels, bad, 1), SpecError);
  std::vector<double> zero{1.0, 0.0};
  EXPECT_THROW(stratified_split(labels, zero, 1), SpecError);
  std::vector<std::size_t> few{0, 1};
  EXPECT_THROW(stratified_split(few, f, 1), DataError);
}

TEST(Subsets, LabeledSubsetAndMerge) {
  auto d = generate_synthetic(SyntheticSpec{2, 4, 10, 2, 3.0, 3.0, 0.0, 1})[0];
  std::vector<std::size_t> a{0, 3}, b{5};
  auto sa = labeled_subset(d, a), sb = labeled_subset(d, b);
  EXPECT_EQ(sa.labels[1], d.labels[3]);
  std::vector<LabeledSet> parts{sa, sb};
  auto m = merge(parts);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.samples[2], d.labeled[5]);
  std::vector<std::size_t> oob{10};
  EXPECT_THROW(labeled_subset(d, oob), DataError);
}
