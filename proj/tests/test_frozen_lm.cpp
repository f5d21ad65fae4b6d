#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>

#include "oracles.hpp"
#include "seqopt/frozen_lm.hpp"

using namespace seqopt;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.vocab_size = 50;
  s.embed_dim = 8;
  s.input_dim = 6;
  s.hidden = 16;
  return s;
}

/// Model with a hand-set head and a one-dimensional encoder whose initial
/// state is `e`.
QFunctionModel model_with_head(const DenseMatrix& head, const DenseVector& e, MlpParams<double> adapter) {
  const Index v = head.rows(), d = head.cols();
  auto enc = std::make_shared<const FrozenEncoder>(DenseMatrix::Zero(v, 1), DenseMatrix::Zero(d, d + 1),
                                                   DenseVector::Zero(d), e, 0);
  auto h = std::make_shared<const LmHead>(LmHead{head, 0});
  return QFunctionModel(enc, h, std::move(adapter), 1e-3);
}

}  // namespace

// --- encoder -----------------------------------------------------------------

TEST(EncodePrefix, EmptyPrefixIsInitialState) {
  const FrozenEncoder enc(20, 4, 6, 3);
  EXPECT_EQ(encode_prefix(enc, {}), enc.initial_state());
}

TEST(EncodePrefix, DeterministicUnderSeed) {
  const FrozenEncoder a(20, 4, 6, 3), b(20, 4, 6, 3), c(20, 4, 6, 4);
  const TokenSeq p = {1, 7, 19, 0};
  EXPECT_EQ(encode_prefix(a, p), encode_prefix(b, p));
  EXPECT_NE(encode_prefix(a, p), encode_prefix(c, p));
}

TEST(EncodePrefix, OneStepMatchesHandRecurrence) {
  const FrozenEncoder enc(10, 3, 4, 11);
  const Token z = 6;
  const Index d = 4, din = 3;
  DenseVector expected(d);
  for (Index i = 0; i < d; ++i) {
    double s = enc.bias()(i);
    for (Index j = 0; j < d; ++j) s += enc.recurrence()(i, j) * enc.initial_state()(j);
    for (Index j = 0; j < din; ++j) s += enc.recurrence()(i, d + j) * enc.embedding()(z, j);
    expected(i) = std::tanh(s);
  }
  const TokenSeq p = {z};
  EXPECT_LT((encode_prefix(enc, p) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EncodePrefix, AllPrefixesAgreeWithIndividualEncodings) {
  const FrozenEncoder enc(10, 3, 4, 12);
  const TokenSeq tokens = {3, 1, 4, 1, 5};
  const auto all = encode_all_prefixes(enc, tokens);
  ASSERT_EQ(all.size(), 6u);
  for (std::size_t t = 0; t <= tokens.size(); ++t) {
    EXPECT_EQ(all[t], encode_prefix(enc, std::span<const Token>(tokens.data(), t)));
  }
}

TEST(EncodePrefix, OutOfRangeTokenIsInputError) {
  const FrozenEncoder enc(10, 3, 4, 1);
  const TokenSeq bad = {10};
  const TokenSeq negative = {-1};
  EXPECT_THROW(encode_prefix(enc, bad), InputError);
  EXPECT_THROW(encode_prefix(enc, negative), InputError);
}

// --- head and action values --------------------------------------------------

TEST(BaseLogits, HandMatrixVectorProduct) {
  DenseMatrix w(2, 2);
  w << 1, 0, 0, 2;
  DenseVector e(2);
  e << 3, 4;
  const auto m = model_with_head(w, e, MlpParams<double>::zeros(2, 4));
  DenseVector expected(2);
  expected << 3, 8;
  EXPECT_EQ(base_logits(m, e), expected);
}

TEST(BaseLogits, IdentityHeadOnBasisVector) {
  const auto head = LmHead::identity_padded(5, 7);
  DenseVector e = DenseVector::Zero(7);
  e(3) = 1.0;
  DenseVector expected = DenseVector::Zero(5);
  expected(3) = 1.0;
  EXPECT_EQ(DenseVector(head.matrix * e), expected);
  EXPECT_THROW(LmHead::identity_padded(5, 4), ConfigError);
}

TEST(BaseLogits, MatchesDotProductLoop) {
  const auto m = QFunctionModel::create(small_spec(), 5, 1e-3);
  const DenseVector e = encode_prefix(m.encoder(), TokenSeq{4, 9});
  const DenseVector logits = base_logits(m, e);
  for (Index i = 0; i < m.vocab_size(); ++i) {
    double s = 0;
    for (Index j = 0; j < m.dim(); ++j) s += m.head().matrix(i, j) * e(j);
    EXPECT_NEAR(logits(i), s, 1e-13);
  }
}

TEST(QValues, IdentityAdapterGivesBaseLogits) {
  const ModelSpec s = small_spec();
  auto base = QFunctionModel::create(s, 5, 1e-3);
  const QFunctionModel m(base.shared_encoder(), base.shared_head(),
                         mlp_identity<double>(s.embed_dim, 2 * s.embed_dim), 1e-3);
  const TokenSeq p = {1, 2, 3};
  const DenseVector e = encode_prefix(m.encoder(), p);
  EXPECT_LT((q_values(m, p) - base_logits(m, e)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QValues, ZeroAdapterGivesZeroQ) {
  const ModelSpec s = small_spec();
  auto base = QFunctionModel::create(s, 5, 1e-3);
  const QFunctionModel m(base.shared_encoder(), base.shared_head(), MlpParams<double>::zeros(s.embed_dim, 4), 1e-3);
  EXPECT_TRUE(q_values(m, TokenSeq{7}).isZero(0.0));
}

TEST(QValues, MatchesManualPipeline) {
  const auto m = QFunctionModel::create(small_spec(), 6, 1e-3);
  const TokenSeq p = {2, 0, 49};
  DenseVector s = m.encoder().initial_state();
  for (Token t : p) s = m.encoder().step(s, t);
  const auto& a = m.adapter();
  const DenseVector h = (a.w1 * s + a.b1).cwiseMax(0.0);
  const DenseVector adapted = a.w2 * h + a.b2;
  const DenseVector expected = m.head().matrix * adapted;
  EXPECT_LT((q_values(m, p) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QValues, BatchColumnsMatchSingleEncodings) {
  const auto m = QFunctionModel::create(small_spec(), 7, 1e-3);
  DenseMatrix enc(m.dim(), 3);
  for (Index j = 0; j < 3; ++j) enc.col(j) = encode_prefix(m.encoder(), TokenSeq{static_cast<Token>(j)});
  const DenseMatrix q = q_from_encodings(m, enc);
  const DenseMatrix b = base_logits_batch(m, enc);
  for (Index j = 0; j < 3; ++j) {
    EXPECT_LT((q.col(j) - q_from_encoding(m, enc.col(j))).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((b.col(j) - base_logits(m, enc.col(j))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(QFunctionModel, CopiesShareFrozenParts) {
  const auto m = QFunctionModel::create(small_spec(), 8, 1e-3);
  const QFunctionModel copy = m;
  EXPECT_EQ(copy.shared_encoder().get(), m.shared_encoder().get());
  EXPECT_EQ(copy.shared_head().get(), m.shared_head().get());
}

TEST(QFunctionModel, RejectsInconsistentShapes) {
  auto m = QFunctionModel::create(small_spec(), 8, 1e-3);
  EXPECT_THROW(QFunctionModel(m.shared_encoder(), m.shared_head(), MlpParams<double>::zeros(9, 4), 1e-3), ConfigError);
  ModelSpec bad = small_spec();
  bad.tabular = true;
  EXPECT_THROW(QFunctionModel::create(bad, 1, 1e-3), ConfigError);
}

// --- ignorable set -----------------------------------------------------------

TEST(IgnorableSet, HandCasesThroughTheHead) {
  auto check = [](std::initializer_list<double> logits, Index k, std::initializer_list<bool> expected) {
    DenseMatrix w(static_cast<Index>(logits.size()), 1);
    Index i = 0;
    for (double v : logits) w(i++, 0) = v;
    const auto m = model_with_head(w, DenseVector::Ones(1), MlpParams<double>::zeros(1, 2));
    const auto set = ignorable_set(m, {}, k);
    i = 0;
    for (bool b : expected) EXPECT_EQ(set.ignored(i++), b);
    return set.retained();
  };
  EXPECT_EQ(check({3, 1, 2, 0}, 2, {false, true, false, true}), 2);
  EXPECT_EQ(check({3, 2, 2, 0}, 2, {false, false, false, true}), 3);
  EXPECT_EQ(check({3, 2, 2, 0}, 4, {false, false, false, false}), 4);
}

TEST(IgnorableSet, KOutOfRangeIsConfigError) {
  const auto m = QFunctionModel::create(small_spec(), 8, 1e-3);
  EXPECT_THROW(ignorable_set(m, {}, 0), ConfigError);
  EXPECT_THROW(ignorable_set(m, {}, 51), ConfigError);
}

TEST(IgnorableSet, StrictBoundaryAndPrefixDependence) {
  ModelSpec s = small_spec();
  s.vocab_size = 300;
  auto m = QFunctionModel::create(s, 9, 1e-3);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<Token> tok(0, 299);
  int differing = 0;
  Mask previous;
  for (int c = 0; c < 20; ++c) {
    TokenSeq prefix(static_cast<std::size_t>(c % 4));
    for (auto& t : prefix) t = tok(rng);
    const Index k = 1 + c * 13;
    const auto set = ignorable_set(m, prefix, k);
    EXPECT_GE(set.retained(), k);
    const DenseVector logits = base_logits(m, encode_prefix(m.encoder(), prefix));
    double min_kept = 1e300, max_ignored = -1e300;
    for (Index i = 0; i < 300; ++i) {
      if (set.ignored(i)) {
        max_ignored = std::max(max_ignored, logits(i));
      } else {
        min_kept = std::min(min_kept, logits(i));
      }
    }
    if (set.ignored.any()) {
      EXPECT_GT(min_kept, max_ignored);
    }
    const auto same_k = ignorable_set(m, TokenSeq{static_cast<Token>(c)}, 100);
    if (previous.size() > 0 && !(same_k.ignored == previous).all()) ++differing;
    previous = same_k.ignored;
  }
  EXPECT_GT(differing, 0);
}

TEST(IgnorableSet, UnaffectedByAdapterTraining) {
  auto m = QFunctionModel::create(small_spec(), 10, 1e-2);
  const TokenSeq p = {5, 6};
  const Mask before = ignorable_set(m, p, 10).ignored;
  for (int i = 0; i < 20; ++i) train_adapter_step(m, p, 3, 5.0);
  EXPECT_TRUE((ignorable_set(m, p, 10).ignored == before).all());
}

// --- TD regression -----------------------------------------------------------

TEST(TrainAdapterStep, TargetEqualToCurrentQIsAFixedPoint) {
  auto m = QFunctionModel::create(small_spec(), 11, 1e-2);
  const TokenSeq p = {1};
  const double q = q_values(m, p)(4);
  const auto before = m.adapter();
  EXPECT_EQ(train_adapter_step(m, p, 4, q), 0.0);
  for_each_tensor([](const auto& a, const auto& b) { EXPECT_EQ(a, b); }, m.adapter(), before);
}

TEST(TrainAdapterStep, ReturnsSquaredResidualBeforeUpdate) {
  auto m = QFunctionModel::create(small_spec(), 12, 1e-2);
  const TokenSeq p = {1, 2};
  const double r = q_values(m, p)(7) - 1.5;
  EXPECT_NEAR(train_adapter_step(m, p, 7, 1.5), r * r, 1e-12);
}

TEST(TrainAdapterStep, RejectsNonFiniteTarget) {
  auto m = QFunctionModel::create(small_spec(), 12, 1e-2);
  EXPECT_THROW(train_adapter_step(m, {}, 0, std::numeric_limits<double>::infinity()), NumericError);
  EXPECT_THROW(train_adapter_step(m, {}, 50, 0.0), InputError);
}

TEST(TrainAdapterStep, OverfitsASingleSample) {
  auto m = QFunctionModel::create(small_spec(), 13, 1e-3);
  const TokenSeq p = {8, 8};
  const double initial = train_adapter_step(m, p, 2, 3.0);
  double loss = initial;
  for (int i = 0; i < 200; ++i) loss = train_adapter_step(m, p, 2, 3.0);
  EXPECT_LT(loss, 1e-3 * initial);
}

TEST(TdGradient, MatchesFiniteDifferences) {
  for (int c = 0; c < 20; ++c) {
    auto m = QFunctionModel::create(small_spec(), 100 + c, 1e-3);
    std::mt19937_64 rng(200 + c);
    const TokenSeq p = {static_cast<Token>(c), static_cast<Token>(2 * c)};
    const DenseVector e = encode_prefix(m.encoder(), p);
    const Token a = static_cast<Token>((7 * c) % 50);
    const double target = std::normal_distribution<double>(0, 1)(rng);
    auto g = MlpParams<double>::zeros(8, 16);
    accumulate_td_gradient(m, e, a, target, g);
    const DenseVector pre = mlp_forward(m.adapter(), e).cache.pre;
    auto loss = [&]() {
      const double r = q_from_encoding(m, e)(a) - target;
      return r * r;
    };
    auto check = [&](auto& tensor, const auto& grad, bool feeds_relu, Index hidden_rows) {
      for (Index k = 0; k < tensor.size(); k += 3) {
        if (feeds_relu && std::abs(pre(k % hidden_rows)) < 1e-3) continue;
        double& w = tensor.data()[k];
        const double saved = w;
        const double numeric = oracle::central_difference(
            [&](double v) {
              w = v;
              return loss();
            },
            saved, 1e-6);
        w = saved;
        EXPECT_LT(oracle::relative_error(grad.data()[k], numeric), 1e-5) << "case " << c << " k " << k;
      }
    };
    auto& ad = m.adapter();
    check(ad.w1, g.w1, true, 16);
    check(ad.b1, g.b1, true, 16);
    check(ad.w2, g.w2, false, 16);
    check(ad.b2, g.b2, false, 16);
  }
}

TEST(TdGradient, BatchEqualsSequentialAccumulation) {
  const auto m = QFunctionModel::create(small_spec(), 14, 1e-3);
  const TokenSeq tokens = {3, 9, 27, 31};
  const auto encs = encode_all_prefixes(m.encoder(), tokens);
  DenseMatrix e(m.dim(), 4);
  std::vector<Token> actions;
  std::vector<double> targets;
  auto seq = MlpParams<double>::zeros(8, 16);
  double seq_loss = 0;
  for (Index j = 0; j < 4; ++j) {
    e.col(j) = encs[static_cast<std::size_t>(j)];
    actions.push_back(tokens[static_cast<std::size_t>(j)]);
    targets.push_back(0.1 * double(j) - 0.2);
    seq_loss += accumulate_td_gradient(m, e.col(j), actions.back(), targets.back(), seq);
  }
  auto batch = MlpParams<double>::zeros(8, 16);
  const double batch_loss = accumulate_td_gradient_batch(m, e, actions, targets, batch);
  EXPECT_NEAR(batch_loss, seq_loss, 1e-12);
  for_each_tensor([](const auto& a, const auto& b) { EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12); }, batch, seq);

  const std::vector<double> short_targets = {1.0};
  EXPECT_THROW(accumulate_td_gradient_batch(m, e, actions, short_targets, batch), ConfigError);
}

TEST(FrozenParts, BytesUnchangedByTraining) {
  auto m = QFunctionModel::create(small_spec(), 15, 1e-2);
  const std::string before = serialize_frozen(m);
  for (int i = 0; i < 50; ++i) train_adapter_step(m, TokenSeq{static_cast<Token>(i % 50)}, i % 7, 1.0);
  EXPECT_EQ(serialize_frozen(m), before);
}

// --- checkpoints -------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  auto m = QFunctionModel::create(small_spec(), 16, 1e-2);
  for (int i = 0; i < 5; ++i) train_adapter_step(m, TokenSeq{1}, 2, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "seqopt_checkpoint_test.bin";
  save_checkpoint(m, path);
  auto loaded = load_checkpoint(path);
  const TokenSeq p = {4, 4, 9};
  EXPECT_EQ(q_values(loaded, p), q_values(m, p));
  EXPECT_EQ(serialize_frozen(loaded), serialize_frozen(m));
  EXPECT_EQ(loaded.optimizer().step_count, m.optimizer().step_count);
  // Continued training stays in lockstep.
  train_adapter_step(m, p, 3, 0.5);
  train_adapter_step(loaded, p, 3, 0.5);
  EXPECT_EQ(q_values(loaded, p), q_values(m, p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "seqopt_checkpoint_garbage.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), InputError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), InputError);
}
