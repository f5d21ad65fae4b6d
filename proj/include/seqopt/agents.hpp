#pragma once

// Entropy-regularized Q-learning over fixed-length token sequences. One code
// path covers the sparse Tsallis learner with token filtering and its soft-Q
// baselines; the variants differ only in AgentConfig flags.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqopt/environments.hpp"
#include "seqopt/episode.hpp"
#include "seqopt/frozen_lm.hpp"
#include "seqopt/sparse_math.hpp"

namespace seqopt {

struct AgentConfig {
  double alpha = 1.0;             // regularization coefficient; reward scale is 1 / alpha
  double gamma = 1.0;             // discount, in (0, 1]
  Index prompt_length = 8;        // L
  Index top_k = 800;              // retention rank of the token filter
  Index buffer_capacity = 10000;
  Index batch_episodes = 256;
  double polyak_rho = 0.99;       // target <- rho * target + (1 - rho) * online
  Backup backup = Backup::sparsemax;
  bool use_filter = true;
  bool use_replay = true;
  /// Restricts data collection to the top-ranked tokens by estimated Q
  /// (0 disables). Targets and greedy decoding ignore it.
  Index sample_top_k = 0;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;

  double reward_scale() const { return 1.0 / alpha; }
  void validate(Index vocab_size) const;
};

/// Names accepted by make_variant.
const std::vector<std::string>& variant_names();

/// Sets backup kind and the filter/replay flags for a named variant:
///   pin                  sparsemax, filter, replay
///   pin_no_fluency       sparsemax, replay
///   rlprompt             logsumexp, on-policy, Q-ranked top-256 sampling
///   rlprompt_fluency     logsumexp, filter, on-policy
///   rlprompt_rb          logsumexp, replay
///   rlprompt_rb_fluency  logsumexp, filter, replay
AgentConfig make_variant(std::string_view name, AgentConfig base);

/// FIFO store of episodes with uniform sampling with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(Index capacity);

  void add(Episode episode);
  std::vector<Episode> sample(std::mt19937_64& rng, Index count) const;

  Index size() const { return static_cast<Index>(items_.size()); }
  Index capacity() const { return capacity_; }
  std::uint64_t insertions() const { return insertions_; }
  const std::deque<Episode>& contents() const { return items_; }

 private:
  Index capacity_;
  std::deque<Episode> items_;
  std::uint64_t insertions_ = 0;
};

struct AgentState {
  AgentState(QFunctionModel model, AgentConfig config);

  AgentConfig config;
  QFunctionModel online;
  QFunctionModel target;  // shares encoder and head with `online`
  ReplayBuffer buffer;
  std::mt19937_64 rng;
  Index iteration = 0;
};

/// Policy at `prefix` from the online network, after the filter when enabled.
ActionDistribution<double> policy_distribution(const AgentState& state, std::span<const Token> prefix);

/// Same, from a precomputed encoding. `for_sampling` additionally applies the
/// Q-ranked sample_top_k restriction.
ActionDistribution<double> policy_from_encoding(const AgentState& state, const DenseVector& encoding,
                                                bool for_sampling);

/// Inverse-CDF draw over the support, in ascending token order.
Token sample_token(const ActionDistribution<double>& dist, std::mt19937_64& rng);

struct SampledEpisode {
  Episode episode;
  double mean_support_size = 0.0;
};

SampledEpisode sample_episode_with_stats(AgentState& state, RewardOracle& oracle);
Episode sample_episode(AgentState& state, RewardOracle& oracle);

/// Bootstrapped regression target for step t of `episode`: the stored reward
/// at t = L - 1, otherwise gamma * soft_backup of the target network's
/// (filtered) action values at z_{0:t}.
double compute_target(const AgentState& state, const Episode& episode, Index t);

/// Regresses Q(z_{0:t-1}, z_t) onto its target for every step of every
/// episode, averages the gradients over all B * L terms, takes one optimizer
/// step, and returns the mean squared residual.
double update_from_batch(AgentState& state, std::span<const Episode> episodes);

void polyak_update(AgentState& state);

/// Per-step argmax of the online (filtered) action values.
TokenSeq greedy_sequence(const AgentState& state);

struct CurveRecord {
  Index iteration = 0;
  double episode_reward = 0.0;
  double greedy_reward = 0.0;
  double mean_loss = 0.0;
  double mean_support_size = 0.0;
  Index buffer_size = 0;
};

using LearningCurve = std::vector<CurveRecord>;

struct TrainHooks {
  std::function<void(Index iteration, const Episode& episode)> on_episode;
};

/// Outer loop: collect one episode, update from a batch (replay) or from the
/// new episode alone (on-policy), move the target network, then decode and
/// score the greedy sequence.
LearningCurve train(AgentState& state, RewardOracle& oracle, Index iterations, const TrainHooks& hooks = {});

/// Same updates without collection: each iteration samples batch_episodes
/// uniformly from a fixed dataset, or uses the whole dataset when
/// batch_episodes is at least its size. Used for exhaustive-coverage checks on
/// tabular environments.
LearningCurve fit_offline(AgentState& state, std::span<const Episode> dataset, Index iterations,
                          RewardOracle* greedy_oracle = nullptr);

}  // namespace seqopt
