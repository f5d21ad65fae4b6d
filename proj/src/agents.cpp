#include "seqopt/agents.hpp"

#include <cmath>

namespace seqopt {

void AgentConfig::validate(Index vocab_size) const {
  if (!(alpha > 0) || !std::isfinite(alpha)) throw ConfigError("agent.alpha must be positive");
  if (!(gamma > 0) || gamma > 1) throw ConfigError("agent.gamma must lie in (0, 1]");
  if (prompt_length < 1) throw ConfigError("agent.prompt_length must be >= 1");
  if (top_k < 1 || top_k > vocab_size) throw ConfigError("agent.top_k must lie in [1, |V|]");
  if (sample_top_k < 0 || sample_top_k > vocab_size) throw ConfigError("agent.sample_top_k must lie in [0, |V|]");
  if (buffer_capacity < 1) throw ConfigError("agent.buffer_capacity must be >= 1");
  if (batch_episodes < 1) throw ConfigError("agent.batch_episodes must be >= 1");
  if (!(polyak_rho >= 0) || polyak_rho > 1) throw ConfigError("agent.polyak_rho must lie in [0, 1]");
  if (!(learning_rate > 0)) throw ConfigError("agent.learning_rate must be positive");
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"pin",         "pin_no_fluency", "rlprompt", "rlprompt_fluency",
                                                 "rlprompt_rb", "rlprompt_rb_fluency"};
  return names;
}

AgentConfig make_variant(std::string_view name, AgentConfig base) {
  auto set = [&base](Backup b, bool filter, bool replay) {
    base.backup = b;
    base.use_filter = filter;
    base.use_replay = replay;
  };
  if (name == "pin") {
    set(Backup::sparsemax, true, true);
  } else if (name == "pin_no_fluency") {
    set(Backup::sparsemax, false, true);
  } else if (name == "rlprompt") {
    set(Backup::logsumexp, false, false);
    base.sample_top_k = 256;
  } else if (name == "rlprompt_fluency") {
    set(Backup::logsumexp, true, false);
  } else if (name == "rlprompt_rb") {
    set(Backup::logsumexp, false, true);
  } else if (name == "rlprompt_rb_fluency") {
    set(Backup::logsumexp, true, true);
  } else {
    throw ConfigError("unknown variant '" + std::string(name) + "'");
  }
  return base;
}

// --- replay buffer ----------------------------------------------------------

ReplayBuffer::ReplayBuffer(Index capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("replay buffer capacity must be >= 1");
}

void ReplayBuffer::add(Episode episode) {
  if (size() == capacity_) items_.pop_front();
  items_.push_back(std::move(episode));
  ++insertions_;
}

std::vector<Episode> ReplayBuffer::sample(std::mt19937_64& rng, Index count) const {
  if (items_.empty()) throw DomainError("replay buffer: cannot sample from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

// --- agent ------------------------------------------------------------------

AgentState::AgentState(QFunctionModel model, AgentConfig cfg)
    : config(cfg), online(std::move(model)), target(online), buffer(cfg.buffer_capacity), rng(cfg.seed) {
  config.validate(online.vocab_size());
  online.optimizer().learning_rate = config.learning_rate;
  target.optimizer() = online.optimizer();
}

namespace {

/// Online or target action values at an encoding, filtered when enabled.
DenseVector filtered_q(const AgentState& state, const QFunctionModel& net, const DenseVector& encoding) {
  DenseVector q = q_from_encoding(net, encoding);
  if (state.config.use_filter) {
    q = apply_filter(q, ignorable_set_from_encoding(net, encoding, state.config.top_k).ignored).values;
  }
  return q;
}

double target_from_encodings(const AgentState& state, const Episode& ep, const std::vector<DenseVector>& encodings,
                             Index t) {
  const Index L = state.config.prompt_length;
  if (t == L - 1) return ep.reward;
  const DenseVector next = filtered_q(state, state.target, encodings[static_cast<std::size_t>(t + 1)]);
  return state.config.gamma * soft_backup(next, state.config.alpha, state.config.backup);
}

void check_episode(const AgentState& state, const Episode& ep) {
  if (static_cast<Index>(ep.tokens.size()) != state.config.prompt_length) {
    throw InputError("episode length " + std::to_string(ep.tokens.size()) + " != prompt length " +
                     std::to_string(state.config.prompt_length));
  }
  if (!std::isfinite(ep.reward)) throw NumericError("episode reward is not finite");
}

}  // namespace

ActionDistribution<double> policy_from_encoding(const AgentState& state, const DenseVector& encoding,
                                                bool for_sampling) {
  DenseVector q = filtered_q(state, state.online, encoding);
  if (for_sampling && state.config.sample_top_k > 0) {
    // Rank the surviving values; filtered sentinels sort last.
    const Mask below = below_kth_largest(q, state.config.sample_top_k);
    for (Index i = 0; i < q.size(); ++i) {
      if (below(i)) q(i) = filtered_sentinel<double>();
    }
  }
  return state.config.backup == Backup::sparsemax ? sparsemax_dist(q, state.config.alpha)
                                                  : softmax_dist(q, state.config.alpha);
}

ActionDistribution<double> policy_distribution(const AgentState& state, std::span<const Token> prefix) {
  if (static_cast<Index>(prefix.size()) >= state.config.prompt_length) {
    throw InputError("policy_distribution: prefix must be shorter than the prompt length");
  }
  return policy_from_encoding(state, encode_prefix(state.online.encoder(), prefix), false);
}

Token sample_token(const ActionDistribution<double>& dist, std::mt19937_64& rng) {
  if (dist.support.empty()) throw DomainError("sample_token: empty support");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  double cumulative = 0.0;
  for (Index i : dist.support) {
    cumulative += dist.probabilities(i);
    if (u < cumulative) return static_cast<Token>(i);
  }
  return static_cast<Token>(dist.support.back());
}

SampledEpisode sample_episode_with_stats(AgentState& state, RewardOracle& oracle) {
  const Index L = state.config.prompt_length;
  SampledEpisode out;
  out.episode.tokens.reserve(static_cast<std::size_t>(L));
  DenseVector e = state.online.encoder().initial_state();
  double support_total = 0.0;
  for (Index t = 0; t < L; ++t) {
    const auto dist = policy_from_encoding(state, e, true);
    support_total += double(dist.support_size());
    const Token tok = sample_token(dist, state.rng);
    out.episode.tokens.push_back(tok);
    if (t + 1 < L) e = state.online.encoder().step(e, tok);
  }
  out.episode.reward = oracle.evaluate(out.episode.tokens);
  if (!std::isfinite(out.episode.reward)) throw EnvironmentError("oracle returned a non-finite reward");
  out.mean_support_size = support_total / double(L);
  return out;
}

Episode sample_episode(AgentState& state, RewardOracle& oracle) {
  return sample_episode_with_stats(state, oracle).episode;
}

double compute_target(const AgentState& state, const Episode& episode, Index t) {
  check_episode(state, episode);
  if (t < 0 || t >= state.config.prompt_length) throw InputError("compute_target: step outside [0, L)");
  if (t == state.config.prompt_length - 1) return episode.reward;
  const auto encodings = encode_all_prefixes(state.online.encoder(),
                                             std::span<const Token>(episode.tokens).first(static_cast<std::size_t>(t + 1)));
  return target_from_encodings(state, episode, encodings, t);
}

double update_from_batch(AgentState& state, std::span<const Episode> episodes) {
  if (episodes.empty()) throw DomainError("update_from_batch: empty batch");
  const AgentConfig& cfg = state.config;
  const Index L = cfg.prompt_length;
  const Index dim = state.online.dim();
  const Index n = static_cast<Index>(episodes.size()) * L;
  const Index n_next = static_cast<Index>(episodes.size()) * (L - 1);

  // Column j of `current` is e_t for sample j; `next` holds e_{t+1} for the
  // non-terminal samples in the same order.
  DenseMatrix current(dim, n);
  DenseMatrix next(dim, n_next);
  std::vector<Token> actions(static_cast<std::size_t>(n));
  std::vector<double> targets(static_cast<std::size_t>(n));
  Index j = 0, m = 0;
  for (const Episode& ep : episodes) {
    check_episode(state, ep);
    const auto encodings = encode_all_prefixes(state.online.encoder(), ep.tokens);
    for (Index t = 0; t < L; ++t, ++j) {
      current.col(j) = encodings[static_cast<std::size_t>(t)];
      actions[static_cast<std::size_t>(j)] = ep.tokens[static_cast<std::size_t>(t)];
      if (t < L - 1) {
        next.col(m++) = encodings[static_cast<std::size_t>(t + 1)];
      } else {
        targets[static_cast<std::size_t>(j)] = ep.reward;
      }
    }
  }

  if (n_next > 0) {
    const DenseMatrix q_next = q_from_encodings(state.target, next);
    DenseMatrix base;
    if (cfg.use_filter) base = base_logits_batch(state.target, next);
    m = 0;
    for (j = 0; j < n; ++j) {
      if ((j + 1) % L == 0) continue;
      DenseVector q = q_next.col(m);
      if (cfg.use_filter) q = apply_filter(q, below_kth_largest(base.col(m), cfg.top_k)).values;
      targets[static_cast<std::size_t>(j)] = cfg.gamma * soft_backup(q, cfg.alpha, cfg.backup);
      ++m;
    }
  }

  auto grads = MlpParams<double>::zeros(dim, state.online.adapter().hidden(), state.online.adapter().activation);
  const double loss = accumulate_td_gradient_batch(state.online, current, actions, targets, grads);
  const double scale = 1.0 / double(n);
  for_each_tensor([scale](auto& g) { g *= scale; }, grads);
  apply_adapter_gradients(state.online, grads);
  return loss * scale;
}

void polyak_update(AgentState& state) {
  const double rho = state.config.polyak_rho;
  for_each_tensor([rho](auto& tgt, const auto& src) { tgt = rho * tgt + (1.0 - rho) * src; },
                  state.target.adapter(), state.online.adapter());
}

TokenSeq greedy_sequence(const AgentState& state) {
  const Index L = state.config.prompt_length;
  TokenSeq seq;
  DenseVector e = state.online.encoder().initial_state();
  for (Index t = 0; t < L; ++t) {
    const Token tok = static_cast<Token>(argmax_live(filtered_q(state, state.online, e)));
    seq.push_back(tok);
    if (t + 1 < L) e = state.online.encoder().step(e, tok);
  }
  return seq;
}

LearningCurve train(AgentState& state, RewardOracle& oracle, Index iterations, const TrainHooks& hooks) {
  if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
  if (oracle.prompt_length() != state.config.prompt_length) {
    throw ConfigError("train: oracle prompt length differs from agent.prompt_length");
  }
  if (oracle.vocab_size() != state.online.vocab_size()) {
    throw ConfigError("train: oracle vocabulary differs from the model's");
  }
  LearningCurve curve;
  curve.reserve(static_cast<std::size_t>(iterations));
  for (Index it = 0; it < iterations; ++it) {
    SampledEpisode sampled = sample_episode_with_stats(state, oracle);
    if (hooks.on_episode) hooks.on_episode(state.iteration, sampled.episode);

    CurveRecord rec;
    rec.iteration = state.iteration;
    rec.episode_reward = sampled.episode.reward;
    rec.mean_support_size = sampled.mean_support_size;
    if (state.config.use_replay) {
      state.buffer.add(sampled.episode);
      const auto batch = state.buffer.sample(state.rng, state.config.batch_episodes);
      rec.mean_loss = update_from_batch(state, batch);
    } else {
      rec.mean_loss = update_from_batch(state, std::span<const Episode>(&sampled.episode, 1));
    }
    polyak_update(state);
    rec.greedy_reward = oracle.evaluate(greedy_sequence(state));
    rec.buffer_size = state.config.use_replay ? state.buffer.size() : 0;
    curve.push_back(rec);
    ++state.iteration;
  }
  return curve;
}

LearningCurve fit_offline(AgentState& state, std::span<const Episode> dataset, Index iterations,
                          RewardOracle* greedy_oracle) {
  if (dataset.empty()) throw DomainError("fit_offline: empty dataset");
  if (iterations < 1) throw ConfigError("fit_offline: iterations must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  LearningCurve curve;
  curve.reserve(static_cast<std::size_t>(iterations));
  const bool full_batch = state.config.batch_episodes >= static_cast<Index>(dataset.size());
  std::vector<Episode> batch(full_batch ? 0 : static_cast<std::size_t>(state.config.batch_episodes));
  for (Index it = 0; it < iterations; ++it) {
    for (auto& ep : batch) ep = dataset[pick(state.rng)];
    CurveRecord rec;
    rec.iteration = state.iteration;
    rec.mean_loss = full_batch ? update_from_batch(state, dataset) : update_from_batch(state, batch);
    polyak_update(state);
    if (greedy_oracle) rec.greedy_reward = greedy_oracle->evaluate(greedy_sequence(state));
    rec.buffer_size = static_cast<Index>(dataset.size());
    curve.push_back(rec);
    ++state.iteration;
  }
  return curve;
}

}  // namespace seqopt
