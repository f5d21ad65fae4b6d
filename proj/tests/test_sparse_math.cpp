#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "seqopt/sparse_math.hpp"

using namespace seqopt;

namespace {

DenseVector vec(std::initializer_list<double> v) {
  DenseVector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::vector<Index> ids(std::initializer_list<Index> v) { return v; }

constexpr double kSentinel = filtered_sentinel<double>();

}  // namespace

// --- supporting set and threshold -------------------------------------------

TEST(SupportingSet, GapOfExactlyOneExcludesLowerValue) {
  EXPECT_EQ(supporting_set(vec({1.0, 0.0})), ids({0}));
  EXPECT_EQ(supporting_set(vec({2.0, 1.0, 0.2})), ids({0}));
}

TEST(SupportingSet, ConstantVectorKeepsEverything) {
  EXPECT_EQ(supporting_set(DenseVector::Constant(5, 0.3)), ids({0, 1, 2, 3, 4}));
}

TEST(SupportingSet, SentinelsNeverEnter) {
  EXPECT_EQ(supporting_set(vec({kSentinel, 0.0, 0.0})), ids({1, 2}));
  EXPECT_THROW(supporting_set(vec({kSentinel, kSentinel})), DomainError);
}

TEST(Tau, HandValues) {
  EXPECT_DOUBLE_EQ(tau(vec({1.0, 0.0})), 0.0);
  EXPECT_DOUBLE_EQ(tau(vec({1.2, 0.8})), 0.5);
  EXPECT_NEAR(tau(DenseVector::Constant(4, 2.0)), 2.0 - 0.25, 1e-15);
}

TEST(Tau, SeparatesSupportFromTheRest) {
  std::mt19937_64 rng(5);
  for (int c = 0; c < 200; ++c) {
    const DenseVector z = oracle::random_vector(rng, 40, 1.5);
    const auto s = supporting_set(z);
    const double t = tau(z);
    std::vector<bool> in(40, false);
    for (Index i : s) in[static_cast<std::size_t>(i)] = true;
    for (Index i = 0; i < 40; ++i) {
      if (in[static_cast<std::size_t>(i)]) {
        EXPECT_GT(z(i), t);
      } else {
        EXPECT_LE(z(i), t);
      }
    }
  }
}

// --- sparsemax ---------------------------------------------------------------

TEST(SparsemaxDist, HandCases) {
  const auto d = sparsemax_dist(vec({1.2, 0.8}), 1.0);
  EXPECT_NEAR(d.probabilities(0), 0.7, 1e-15);
  EXPECT_NEAR(d.probabilities(1), 0.3, 1e-15);
  EXPECT_EQ(sparsemax_dist(vec({1.0, 0.0}), 1.0).probabilities, vec({1.0, 0.0}));
  EXPECT_TRUE(sparsemax_dist(DenseVector::Constant(8, -3.0), 0.5).probabilities.isApprox(DenseVector::Constant(8, 0.125)));
}

TEST(SparsemaxDist, FilteredEntryHasZeroProbability) {
  const auto d = sparsemax_dist(vec({1.0, kSentinel}), 1.0);
  EXPECT_EQ(d.probabilities, vec({1.0, 0.0}));
  EXPECT_EQ(d.support, ids({0}));
}

TEST(SparsemaxDist, RejectsBadAlphaAndNonFiniteValues) {
  EXPECT_THROW(sparsemax_dist(vec({1.0, 0.0}), 0.0), ConfigError);
  EXPECT_THROW(sparsemax_dist(vec({1.0, 0.0}), -1.0), ConfigError);
  EXPECT_THROW(sparsemax_dist(vec({1.0, std::nan("")}), 1.0), DomainError);
}

TEST(SparsemaxDist, MatchesSimplexProjectionOracle) {
  std::mt19937_64 rng(17);
  const Index dims[] = {2, 3, 8, 64, 512};
  const double alphas[] = {0.1, 0.5, 1.0, 2.0, 80.0};
  for (int c = 0; c < 500; ++c) {
    const Index n = dims[c % 5];
    const double alpha = alphas[(c / 5) % 5];
    const DenseVector q = oracle::random_vector(rng, n, 1.0 + c % 7);
    const auto d = sparsemax_dist(q, alpha);
    const auto ref = oracle::sparsemax(q, alpha);
    for (Index i = 0; i < n; ++i) ASSERT_NEAR(d.probabilities(i), ref[static_cast<std::size_t>(i)], 1e-9);
  }
}

TEST(SparsemaxDist, DistributionInvariants) {
  std::mt19937_64 rng(23);
  for (int c = 0; c < 300; ++c) {
    const DenseVector q = oracle::random_vector(rng, 30, 2.0);
    const auto d = sparsemax_dist(q, 0.7);
    EXPECT_NEAR(d.probabilities.sum(), 1.0, 1e-9);
    EXPECT_GE(d.probabilities.minCoeff(), 0.0);
    std::vector<Index> positive;
    for (Index i = 0; i < 30; ++i) {
      if (d.probabilities(i) > 0) positive.push_back(i);
    }
    EXPECT_EQ(d.support, positive);
    for (Index i = 0; i < 30; ++i) {
      for (Index j = 0; j < 30; ++j) {
        if (q(i) > q(j)) {
          EXPECT_GE(d.probabilities(i), d.probabilities(j));
        }
      }
    }
  }
}

TEST(SparsemaxDist, ShiftInvariant) {
  std::mt19937_64 rng(29);
  for (int c = 0; c < 100; ++c) {
    const DenseVector q = oracle::random_vector(rng, 20, 1.0);
    const DenseVector shifted = q.array() + 3.75;
    EXPECT_LT((sparsemax_dist(q, 0.5).probabilities - sparsemax_dist(shifted, 0.5).probabilities).cwiseAbs().maxCoeff(),
              1e-12);
    EXPECT_LT((softmax_dist(q, 0.5).probabilities - softmax_dist(shifted, 0.5).probabilities).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(SparsemaxDist, SupportGrowsWithAlpha) {
  std::mt19937_64 rng(31);
  for (int c = 0; c < 50; ++c) {
    const DenseVector q = oracle::random_vector(rng, 50, 1.0);
    Index previous = 0;
    for (double alpha : {0.01, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0}) {
      const Index size = sparsemax_dist(q, alpha).support_size();
      EXPECT_GE(size, previous);
      previous = size;
    }
  }
}

TEST(SparsemaxDist, TiedValuesEnterOrLeaveTogether) {
  // Four-way tie at the top, the rest far below.
  const DenseVector q = vec({0.5, 2.0, -4.0, 2.0, 2.0, -3.0, 2.0});
  const auto d = sparsemax_dist(q, 1.0);
  EXPECT_EQ(d.support, ids({1, 3, 4, 6}));
  for (Index i : d.support) EXPECT_DOUBLE_EQ(d.probabilities(i), 0.25);
  // Permuting the tied block does not change the result.
  const DenseVector p = vec({2.0, 2.0, 2.0, 2.0, 0.5, -4.0, -3.0});
  EXPECT_EQ(sparsemax_dist(p, 1.0).support, ids({0, 1, 2, 3}));
}

TEST(SparsemaxValue, HandCases) {
  EXPECT_NEAR(sparsemax_value(vec({1.2, 0.8}), 1.0), 1.29, 1e-15);
  EXPECT_DOUBLE_EQ(sparsemax_value(vec({1.0, 0.0}), 1.0), 1.0);
  EXPECT_DOUBLE_EQ(sparsemax_value(vec({0.0, 0.0}), 1.0), 0.25);
}

TEST(SparsemaxValue, VariationalIdentity) {
  std::mt19937_64 rng(37);
  for (int c = 0; c < 500; ++c) {
    const double alpha = std::pow(10.0, -1.0 + 2.0 * (c % 11) / 10.0);
    const DenseVector q = oracle::random_vector(rng, 2 + c % 60, 1.0);
    const auto d = sparsemax_dist(q, alpha);
    const double lhs = alpha * sparsemax_value(q, alpha);
    const double rhs = d.probabilities.dot(q) + alpha * tsallis_entropy(d, 2.0, 1.0);
    EXPECT_NEAR(lhs, rhs, 1e-9);
    EXPECT_NEAR(lhs, oracle::sparse_value(q, alpha), 1e-9);
  }
}

TEST(SparsemaxValue, SingletonSupportCollapsesToMax) {
  EXPECT_DOUBLE_EQ(0.01 * sparsemax_value(vec({0.0, 2.0}), 0.01), 2.0);
}

// --- softmax and log-sum-exp -------------------------------------------------

TEST(SoftmaxDist, HandCases) {
  const auto d = softmax_dist(vec({std::log(3.0), 0.0}), 1.0);
  EXPECT_NEAR(d.probabilities(0), 0.75, 1e-15);
  EXPECT_NEAR(d.probabilities(1), 0.25, 1e-15);
  EXPECT_TRUE(softmax_dist(DenseVector::Constant(4, 7.0), 2.0).probabilities.isApprox(DenseVector::Constant(4, 0.25)));
}

TEST(SoftmaxDist, FilteredEntriesAreExactlyZeroAndRestRenormalized) {
  const DenseVector q = vec({0.3, -1.0, 2.0, 0.7});
  Mask ignored(4);
  ignored << false, true, false, true;
  const auto d = softmax_dist(apply_filter(q, ignored), 1.0);
  EXPECT_EQ(d.probabilities(1), 0.0);
  EXPECT_EQ(d.probabilities(3), 0.0);
  const double z = std::exp(0.3) + std::exp(2.0);
  EXPECT_NEAR(d.probabilities(0), std::exp(0.3) / z, 1e-15);
  EXPECT_NEAR(d.probabilities(2), std::exp(2.0) / z, 1e-15);
  EXPECT_EQ(d.support, ids({0, 2}));
}

TEST(SoftmaxDist, StableForLargeValues) {
  const auto d = softmax_dist(vec({1000.0, 999.0}), 1.0);
  EXPECT_TRUE(d.probabilities.allFinite());
  EXPECT_NEAR(d.probabilities(0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(LogSumExp, HandCases) {
  EXPECT_NEAR(logsumexp_value(vec({0.0, 0.0}), 1.0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(logsumexp_value(vec({4.5}), 1.0), 4.5);
  EXPECT_NEAR(logsumexp_value(vec({10.0, 0.0}), 1.0), 10.0 + std::log1p(std::exp(-10.0)), 1e-14);
  EXPECT_THROW(logsumexp_value(vec({kSentinel}), 1.0), DomainError);
}

TEST(LogSumExp, BoundsAndLimit) {
  std::mt19937_64 rng(41);
  for (int c = 0; c < 200; ++c) {
    const DenseVector q = oracle::random_vector(rng, 25, 3.0);
    const double alpha = 0.2 + 0.1 * (c % 10);
    EXPECT_GE(logsumexp_value(q, alpha), q.maxCoeff() / alpha);
    EXPECT_NEAR(alpha * logsumexp_value(q, alpha), oracle::soft_value(q, alpha), 1e-12);
    EXPECT_NEAR(1e-6 * logsumexp_value(q, 1e-6), q.maxCoeff(), 1e-4);
  }
}

// --- entropy -----------------------------------------------------------------

TEST(TsallisEntropy, HandCases) {
  const auto one_hot = sparsemax_dist(vec({5.0, 0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(tsallis_entropy(one_hot, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(tsallis_entropy(one_hot, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(tsallis_entropy(one_hot, 3.0), 0.0);
  const auto uniform = sparsemax_dist(vec({0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(tsallis_entropy(uniform, 2.0, 1.0), 0.25);
  EXPECT_NEAR(tsallis_entropy(uniform, 1.0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(tsallis_entropy(uniform, 2.0, 3.0), 0.75);
  // (1 - 2 * 0.5^3) / (3 * 2)
  EXPECT_NEAR(tsallis_entropy(uniform, 3.0), 0.125, 1e-15);
  EXPECT_THROW(tsallis_entropy(uniform, 2.0, 0.0), ConfigError);
}

TEST(TsallisEntropy, IndexTwoIsHalfExpectedComplement) {
  std::mt19937_64 rng(43);
  for (int c = 0; c < 50; ++c) {
    const auto d = softmax_dist(oracle::random_vector(rng, 12, 1.0), 1.0);
    const double direct = (d.probabilities.array() * (1.0 - d.probabilities.array())).sum() / 2.0;
    EXPECT_NEAR(tsallis_entropy(d, 2.0), direct, 1e-15);
  }
}

// --- filter ------------------------------------------------------------------

TEST(ApplyFilter, HandCases) {
  Mask ignored(2);
  ignored << true, false;
  const auto f = apply_filter(vec({1.0, 2.0}), ignored);
  EXPECT_EQ(f.values(0), kSentinel);
  EXPECT_EQ(f.values(1), 2.0);
  EXPECT_EQ(sparsemax_dist(f, 1.0).probabilities, vec({0.0, 1.0}));

  const DenseVector q = vec({0.1, -0.2, 0.3});
  EXPECT_EQ(apply_filter(q, Mask::Constant(3, false)).values, q);
  EXPECT_THROW(apply_filter(q, Mask::Constant(3, true)), DomainError);
  EXPECT_THROW(apply_filter(q, Mask::Constant(2, false)), ConfigError);
}

TEST(ApplyFilter, HardZeroUnderBothDistributions) {
  std::mt19937_64 rng(47);
  std::bernoulli_distribution coin(0.6);
  for (int c = 0; c < 200; ++c) {
    const DenseVector q = oracle::random_vector(rng, 64, 5.0);
    Mask ignored(64);
    for (Index i = 0; i < 64; ++i) ignored(i) = coin(rng);
    ignored(c % 64) = false;
    const auto f = apply_filter(q, ignored);
    for (double alpha : {0.01, 1.0, 100.0}) {
      const auto sp = sparsemax_dist(f, alpha);
      const auto sm = softmax_dist(f, alpha);
      for (Index i = 0; i < 64; ++i) {
        if (!ignored(i)) continue;
        ASSERT_EQ(sp.probabilities(i), 0.0);
        ASSERT_EQ(sm.probabilities(i), 0.0);
      }
    }
  }
}

TEST(BelowKthLargest, StrictRuleWithTies) {
  Mask expected(4);
  expected << false, true, false, true;
  EXPECT_TRUE((below_kth_largest(vec({3, 1, 2, 0}), 2) == expected).all());
  expected << false, false, false, true;
  EXPECT_TRUE((below_kth_largest(vec({3, 2, 2, 0}), 2) == expected).all());
  EXPECT_FALSE(below_kth_largest(vec({3, 2, 2, 0}), 4).any());
  EXPECT_THROW(below_kth_largest(vec({1, 2}), 0), ConfigError);
  EXPECT_THROW(below_kth_largest(vec({1, 2}), 3), ConfigError);
}

TEST(SoftBackup, ScalesByAlpha) {
  const DenseVector q = vec({0.0, 0.0});
  EXPECT_NEAR(soft_backup(q, 1.0, Backup::logsumexp), std::log(2.0), 1e-15);
  EXPECT_NEAR(soft_backup(q, 2.0, Backup::sparsemax), 0.5, 1e-15);
  EXPECT_EQ(argmax_live(vec({1.0, 3.0, 3.0})), 1);
  EXPECT_EQ(argmax_live(vec({kSentinel, -5.0})), 1);
}
