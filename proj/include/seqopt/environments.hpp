#pragma once

// Reward oracles: opaque maps from a complete token sequence to a scalar.
// Also the exact backward-induction solver over tabular environments that the
// learned action values are checked against.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqopt/episode.hpp"
#include "seqopt/frozen_lm.hpp"
#include "seqopt/sparse_math.hpp"

namespace seqopt {

class RewardOracle {
 public:
  virtual ~RewardOracle() = default;
  /// Identical sequences must always produce identical, finite rewards.
  virtual double evaluate(std::span<const Token> tokens) = 0;
  virtual Index vocab_size() const = 0;
  virtual Index prompt_length() const = 0;
  virtual std::string name() const = 0;

 protected:
  void check_sequence(std::span<const Token> tokens) const;
};

/// Cosine similarity; 0 when either vector has norm below 1e-12.
double cosine_similarity(const DenseVector& a, const DenseVector& b);

// ---------------------------------------------------------------------------

/// Rewards a sequence by the cosine between its encoding under a private text
/// encoder and a hidden target embedding.
class HiddenEmbeddingEnv final : public RewardOracle {
 public:
  /// Planted target: the hidden embedding is the encoding of `target`, which
  /// therefore attains reward 1.
  HiddenEmbeddingEnv(FrozenEncoder text_encoder, TokenSeq target);
  HiddenEmbeddingEnv(FrozenEncoder text_encoder, DenseVector target_embedding, Index prompt_length);

  double evaluate(std::span<const Token> tokens) override;
  Index vocab_size() const override { return encoder_.vocab_size(); }
  Index prompt_length() const override { return length_; }
  std::string name() const override { return "hidden_embedding"; }

  DenseVector embed(std::span<const Token> tokens) const;
  const DenseVector& target_embedding() const { return target_; }
  const std::optional<TokenSeq>& target_tokens() const { return planted_; }

 private:
  FrozenEncoder encoder_;
  DenseVector target_;
  std::optional<TokenSeq> planted_;
  Index length_;
};

double cosine_reward(const HiddenEmbeddingEnv& env, std::span<const Token> tokens);

/// A "fluent" sequence under the policy model: each token drawn uniformly from
/// the top-k base logits of its prefix.
TokenSeq plant_fluent_sequence(const QFunctionModel& policy, Index length, Index top_k, std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class RewardAggregate { mean, sum };

struct ClassifierSpec {
  Index classes = 2;
  Index examples_per_class = 16;
  Index example_dim = 16;
  Index text_dim = 16;
  double logit_scale = 2.0;
  double lambda1 = 180.0;  // multiplier for incorrect predictions
  double lambda2 = 200.0;  // multiplier for correct predictions
  RewardAggregate aggregate = RewardAggregate::mean;
  std::uint64_t seed = 7;
};

/// P(c | z, x) = softmax_c(scale * g(z)^T B_c x / sqrt(example_dim)). Example
/// labels are the predictions under a planted sequence, so that sequence
/// classifies every example correctly.
class SyntheticClassifierEnv final : public RewardOracle {
 public:
  SyntheticClassifierEnv(Index vocab_size, const ClassifierSpec& spec, TokenSeq planted);

  double evaluate(std::span<const Token> tokens) override;
  Index vocab_size() const override { return encoder_.vocab_size(); }
  Index prompt_length() const override { return static_cast<Index>(planted_.size()); }
  std::string name() const override { return "classifier"; }

  /// One row of class probabilities per few-shot example.
  DenseMatrix class_probabilities(std::span<const Token> tokens) const;
  const std::vector<int>& labels() const { return labels_; }
  const ClassifierSpec& spec() const { return spec_; }
  const TokenSeq& planted() const { return planted_; }

 private:
  ClassifierSpec spec_;
  FrozenEncoder encoder_;
  std::vector<DenseMatrix> bilinear_;  // per class, text_dim x example_dim
  DenseMatrix examples_;               // one example per row
  std::vector<int> labels_;
  TokenSeq planted_;
};

/// P(c) - max_{c' != c} P(c').
double classification_gap(const DenseVector& probs, int label);

/// Aggregate over examples of lambda1^(1 - correct) * lambda2^correct * gap,
/// with correct = [gap > 0].
double classification_reward_from_probs(const DenseMatrix& probs, std::span<const int> labels, double lambda1,
                                        double lambda2, RewardAggregate aggregate = RewardAggregate::mean);

double classification_reward(const SyntheticClassifierEnv& env, std::span<const Token> tokens);

// ---------------------------------------------------------------------------

/// Explicit reward table over V^L, for tiny V and L (V^L <= 1e5).
class TabularEnv final : public RewardOracle {
 public:
  static constexpr Index kMaxEntries = 100000;

  TabularEnv(Index vocab_size, Index prompt_length);

  static TabularEnv random(Index vocab_size, Index prompt_length, std::uint64_t seed);
  /// Reward = number of positions holding `target_token`.
  static TabularEnv planted_count(Index vocab_size, Index prompt_length, Token target_token);
  /// Lines `<token ... token> <reward>`; blank lines and `#` comments skipped.
  /// Vocabulary size defaults to max token + 1.
  static TabularEnv load(const std::filesystem::path& path, std::optional<Index> vocab_size = std::nullopt);
  void save(const std::filesystem::path& path) const;

  void set(std::span<const Token> tokens, double reward);
  bool contains(std::span<const Token> tokens) const;
  bool complete() const;
  double reward(std::span<const Token> tokens) const;

  double evaluate(std::span<const Token> tokens) override { return reward(tokens); }
  Index vocab_size() const override { return vocab_; }
  Index prompt_length() const override { return length_; }
  std::string name() const override { return "tabular"; }

  Index entry_count() const { return static_cast<Index>(rewards_.size()); }
  TokenSeq sequence_at(Index flat) const;
  double max_reward() const;

 private:
  Index flat_index(std::span<const Token> tokens) const;

  Index vocab_;
  Index length_;
  std::vector<double> rewards_;
  std::vector<bool> present_;
};

double tabular_reward(const TabularEnv& env, std::span<const Token> tokens);

/// Every sequence of a complete table paired with its reward.
std::vector<Episode> enumerate_episodes(const TabularEnv& env);

/// Exact action values over every prefix, layer t holding V^t rows of V
/// values. Filtered entries hold the sentinel.
class QTable {
 public:
  QTable(Index vocab_size, Index prompt_length);

  Index vocab_size() const { return vocab_; }
  Index prompt_length() const { return length_; }
  DenseMatrix& layer(Index t) { return layers_[static_cast<std::size_t>(t)]; }
  const DenseMatrix& layer(Index t) const { return layers_[static_cast<std::size_t>(t)]; }

  DenseVector q(std::span<const Token> prefix) const;
  static Index prefix_row(std::span<const Token> prefix, Index vocab_size);
  TokenSeq prefix_at(Index t, Index row) const;

  Token root_optimal_action() const;
  /// Per-step argmax decoding from the empty prefix.
  TokenSeq greedy_sequence() const;

 private:
  Index vocab_;
  Index length_;
  std::vector<DenseMatrix> layers_;
};

using FilterMaskFn = std::function<Mask(std::span<const Token> prefix)>;

/// Backward induction: Q(z_{0:L-2}, z) = R(z_{0:L-2} z) on the last layer and
/// Q(p, z) = gamma * soft_backup(Q(p z, .)) above it.
QTable dp_optimal_q(const TabularEnv& env, double alpha, double gamma, Backup backup,
                    const FilterMaskFn& filter = nullptr);

// ---------------------------------------------------------------------------

struct BridgeSpec {
  std::vector<std::string> command;
  std::chrono::milliseconds timeout{10000};
  Index vocab_size = 0;
  Index prompt_length = 0;
};

/// Child-process reward oracle speaking newline-delimited JSON over stdio:
///   request  {"id":<uint>,"tokens":[<uint>,...]}
///   response {"id":<uint>,"reward":<float>}
/// Calls are synchronous. After any protocol error the bridge is unusable.
class BridgeEnv final : public RewardOracle {
 public:
  explicit BridgeEnv(BridgeSpec spec);
  ~BridgeEnv() override;
  BridgeEnv(const BridgeEnv&) = delete;
  BridgeEnv& operator=(const BridgeEnv&) = delete;

  double evaluate(std::span<const Token> tokens) override;
  Index vocab_size() const override { return spec_.vocab_size; }
  Index prompt_length() const override { return spec_.prompt_length; }
  std::string name() const override { return "bridge"; }

  std::uint64_t requests_sent() const { return next_id_; }

  static std::string format_request(std::uint64_t id, std::span<const Token> tokens);
  /// Validates a response line against the expected id; returns the reward.
  static double parse_response(const std::string& line, std::uint64_t expected_id);

 private:
  [[noreturn]] void fail(const std::string& what);
  void write_all(const std::string& data);
  std::string read_line();
  void shutdown();

  BridgeSpec spec_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::uint64_t next_id_ = 0;
  std::string pending_;
  bool broken_ = false;
};

double bridge_evaluate(BridgeEnv& env, std::span<const Token> tokens);

}  // namespace seqopt
