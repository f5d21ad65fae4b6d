#include "seqopt/environments.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace seqopt {

void RewardOracle::check_sequence(std::span<const Token> tokens) const {
  if (static_cast<Index>(tokens.size()) != prompt_length()) {
    throw InputError(name() + ": expected a sequence of length " + std::to_string(prompt_length()) + ", got " +
                     std::to_string(tokens.size()));
  }
  for (Token t : tokens) {
    if (t < 0 || t >= vocab_size()) throw InputError(name() + ": token " + std::to_string(t) + " out of range");
  }
}

double cosine_similarity(const DenseVector& a, const DenseVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return a.dot(b) / (na * nb);
}

// --- hidden embedding -------------------------------------------------------

HiddenEmbeddingEnv::HiddenEmbeddingEnv(FrozenEncoder text_encoder, TokenSeq target)
    : encoder_(std::move(text_encoder)), length_(static_cast<Index>(target.size())) {
  if (target.empty()) throw ConfigError("hidden_embedding: empty target sequence");
  target_ = encode_prefix(encoder_, target);
  planted_ = std::move(target);
}

HiddenEmbeddingEnv::HiddenEmbeddingEnv(FrozenEncoder text_encoder, DenseVector target_embedding, Index prompt_length)
    : encoder_(std::move(text_encoder)), target_(std::move(target_embedding)), length_(prompt_length) {
  if (prompt_length < 1) throw ConfigError("hidden_embedding: prompt length must be >= 1");
  if (target_.size() != encoder_.dim()) throw ConfigError("hidden_embedding: target embedding has wrong length");
}

DenseVector HiddenEmbeddingEnv::embed(std::span<const Token> tokens) const {
  return encode_prefix(encoder_, tokens);
}

double HiddenEmbeddingEnv::evaluate(std::span<const Token> tokens) {
  return cosine_reward(*this, tokens);
}

double cosine_reward(const HiddenEmbeddingEnv& env, std::span<const Token> tokens) {
  if (static_cast<Index>(tokens.size()) != env.prompt_length()) {
    throw InputError("hidden_embedding: sequence length mismatch");
  }
  return cosine_similarity(env.embed(tokens), env.target_embedding());
}

TokenSeq plant_fluent_sequence(const QFunctionModel& policy, Index length, Index top_k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TokenSeq seq;
  DenseVector state = policy.encoder().initial_state();
  for (Index t = 0; t < length; ++t) {
    const Mask ignored = ignorable_set_from_encoding(policy, state, top_k).ignored;
    std::vector<Token> kept;
    for (Index i = 0; i < ignored.size(); ++i) {
      if (!ignored(i)) kept.push_back(static_cast<Token>(i));
    }
    std::uniform_int_distribution<std::size_t> pick(0, kept.size() - 1);
    const Token tok = kept[pick(rng)];
    seq.push_back(tok);
    state = policy.encoder().step(state, tok);
  }
  return seq;
}

// --- synthetic classifier ---------------------------------------------------

SyntheticClassifierEnv::SyntheticClassifierEnv(Index vocab_size, const ClassifierSpec& spec, TokenSeq planted)
    : spec_(spec), encoder_(vocab_size, spec.text_dim, spec.text_dim, spec.seed), planted_(std::move(planted)) {
  if (spec.classes < 2) throw ConfigError("classifier.classes must be >= 2");
  if (spec.examples_per_class < 1) throw ConfigError("classifier.examples_per_class must be >= 1");
  if (spec.example_dim < 1 || spec.text_dim < 1) throw ConfigError("classifier dimensions must be positive");
  if (planted_.empty()) throw ConfigError("classifier: planted sequence must be non-empty");
  for (Token t : planted_) encoder_.check_token(t);

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  bilinear_.resize(static_cast<std::size_t>(spec.classes));
  for (auto& b : bilinear_) {
    b.resize(spec.text_dim, spec.example_dim);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
  }

  // Rejection-sample examples until every class holds examples_per_class
  // examples labelled by the planted sequence's prediction.
  const Index total = spec.classes * spec.examples_per_class;
  examples_.resize(total, spec.example_dim);
  std::vector<Index> counts(static_cast<std::size_t>(spec.classes), 0);
  const DenseVector g = encode_prefix(encoder_, planted_);
  Index filled = 0;
  const Index max_attempts = 2000 * total;
  for (Index attempt = 0; filled < total && attempt < max_attempts; ++attempt) {
    DenseVector x(spec.example_dim);
    for (Index i = 0; i < x.size(); ++i) x(i) = normal(rng);
    DenseVector scores(spec.classes);
    for (Index c = 0; c < spec.classes; ++c) scores(c) = g.dot(bilinear_[static_cast<std::size_t>(c)] * x);
    Index label = 0;
    scores.maxCoeff(&label);
    auto& n = counts[static_cast<std::size_t>(label)];
    if (n >= spec.examples_per_class) continue;
    ++n;
    examples_.row(filled++) = x.transpose();
    labels_.push_back(static_cast<int>(label));
  }
  if (filled < total) throw ConfigError("classifier: could not balance classes under the planted sequence");
}

DenseMatrix SyntheticClassifierEnv::class_probabilities(std::span<const Token> tokens) const {
  const DenseVector g = encode_prefix(encoder_, tokens);
  DenseMatrix proj(spec_.example_dim, spec_.classes);
  for (Index c = 0; c < spec_.classes; ++c) {
    proj.col(c) = bilinear_[static_cast<std::size_t>(c)].transpose() * g;
  }
  DenseMatrix scores = (spec_.logit_scale / std::sqrt(double(spec_.example_dim))) * (examples_ * proj);
  for (Index r = 0; r < scores.rows(); ++r) {
    const double top = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - top).exp().matrix();
    scores.row(r) /= scores.row(r).sum();
  }
  return scores;
}

double SyntheticClassifierEnv::evaluate(std::span<const Token> tokens) {
  check_sequence(tokens);
  return classification_reward(*this, tokens);
}

double classification_gap(const DenseVector& probs, int label) {
  if (label < 0 || label >= probs.size()) throw InputError("classification_gap: label out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < probs.size(); ++c) {
    if (c != label) other = std::max(other, probs(c));
  }
  return probs(label) - other;
}

double classification_reward_from_probs(const DenseMatrix& probs, std::span<const int> labels, double lambda1,
                                        double lambda2, RewardAggregate aggregate) {
  if (static_cast<Index>(labels.size()) != probs.rows() || labels.empty()) {
    throw InputError("classification_reward: need one label per probability row");
  }
  double total = 0.0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const double gap = classification_gap(probs.row(r).transpose(), labels[static_cast<std::size_t>(r)]);
    const bool correct = gap > 0.0;
    total += (correct ? lambda2 : lambda1) * gap;
  }
  return aggregate == RewardAggregate::mean ? total / double(probs.rows()) : total;
}

double classification_reward(const SyntheticClassifierEnv& env, std::span<const Token> tokens) {
  return classification_reward_from_probs(env.class_probabilities(tokens), env.labels(), env.spec().lambda1,
                                          env.spec().lambda2, env.spec().aggregate);
}

// --- tabular ----------------------------------------------------------------

namespace {

Index checked_power(Index base, Index exp) {
  Index r = 1;
  for (Index i = 0; i < exp; ++i) {
    if (r > TabularEnv::kMaxEntries / base) {
      throw ConfigError("tabular: |V|^L exceeds " + std::to_string(TabularEnv::kMaxEntries));
    }
    r *= base;
  }
  return r;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

TabularEnv::TabularEnv(Index vocab_size, Index prompt_length) : vocab_(vocab_size), length_(prompt_length) {
  if (vocab_size < 2) throw ConfigError("tabular: vocabulary size must be >= 2");
  if (prompt_length < 1) throw ConfigError("tabular: prompt length must be >= 1");
  const Index n = checked_power(vocab_size, prompt_length);
  rewards_.assign(static_cast<std::size_t>(n), 0.0);
  present_.assign(static_cast<std::size_t>(n), false);
}

TabularEnv TabularEnv::random(Index vocab_size, Index prompt_length, std::uint64_t seed) {
  TabularEnv env(vocab_size, prompt_length);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < env.rewards_.size(); ++i) {
    env.rewards_[i] = u(rng);
    env.present_[i] = true;
  }
  return env;
}

TabularEnv TabularEnv::planted_count(Index vocab_size, Index prompt_length, Token target_token) {
  TabularEnv env(vocab_size, prompt_length);
  if (target_token < 0 || target_token >= vocab_size) throw ConfigError("tabular: planted token out of range");
  for (Index i = 0; i < env.entry_count(); ++i) {
    const TokenSeq seq = env.sequence_at(i);
    env.rewards_[static_cast<std::size_t>(i)] = double(std::count(seq.begin(), seq.end(), target_token));
    env.present_[static_cast<std::size_t>(i)] = true;
  }
  return env;
}

TabularEnv TabularEnv::load(const std::filesystem::path& path, std::optional<Index> vocab_size) {
  std::ifstream in(path);
  if (!in) throw ConfigError("tabular: cannot open " + path.string());
  std::vector<std::pair<TokenSeq, double>> entries;
  std::string line;
  Index length = -1;
  Token max_token = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (parts.size() < 2) throw ConfigError("tabular: line " + std::to_string(line_no) + " needs tokens and a reward");
    TokenSeq seq;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      Token t = 0;
      auto [p, ec] = std::from_chars(parts[i].data(), parts[i].data() + parts[i].size(), t);
      if (ec != std::errc() || p != parts[i].data() + parts[i].size() || t < 0) {
        throw ConfigError("tabular: bad token '" + parts[i] + "' on line " + std::to_string(line_no));
      }
      max_token = std::max(max_token, t);
      seq.push_back(t);
    }
    double r = 0;
    const std::string& rs = parts.back();
    auto [p, ec] = std::from_chars(rs.data(), rs.data() + rs.size(), r);
    if (ec != std::errc() || p != rs.data() + rs.size() || !std::isfinite(r)) {
      throw ConfigError("tabular: bad reward '" + rs + "' on line " + std::to_string(line_no));
    }
    if (length >= 0 && length != static_cast<Index>(seq.size())) {
      throw ConfigError("tabular: inconsistent sequence length on line " + std::to_string(line_no));
    }
    length = static_cast<Index>(seq.size());
    entries.emplace_back(std::move(seq), r);
  }
  if (entries.empty()) throw ConfigError("tabular: no entries in " + path.string());
  TabularEnv env(vocab_size.value_or(std::max<Index>(2, Index(max_token) + 1)), length);
  for (const auto& [seq, r] : entries) env.set(seq, r);
  return env;
}

void TabularEnv::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("tabular: cannot write " + path.string());
  for (Index i = 0; i < entry_count(); ++i) {
    if (!present_[static_cast<std::size_t>(i)]) continue;
    for (Token t : sequence_at(i)) out << t << ' ';
    out << format_double(rewards_[static_cast<std::size_t>(i)]) << '\n';
  }
}

Index TabularEnv::flat_index(std::span<const Token> tokens) const {
  if (static_cast<Index>(tokens.size()) != length_) throw InputError("tabular: sequence length mismatch");
  Index flat = 0;
  for (Token t : tokens) {
    if (t < 0 || t >= vocab_) throw InputError("tabular: token out of range");
    flat = flat * vocab_ + t;
  }
  return flat;
}

TokenSeq TabularEnv::sequence_at(Index flat) const {
  TokenSeq seq(static_cast<std::size_t>(length_));
  for (Index i = length_ - 1; i >= 0; --i) {
    seq[static_cast<std::size_t>(i)] = static_cast<Token>(flat % vocab_);
    flat /= vocab_;
  }
  return seq;
}

void TabularEnv::set(std::span<const Token> tokens, double reward) {
  if (!std::isfinite(reward)) throw ConfigError("tabular: reward must be finite");
  const auto i = static_cast<std::size_t>(flat_index(tokens));
  rewards_[i] = reward;
  present_[i] = true;
}

bool TabularEnv::contains(std::span<const Token> tokens) const {
  return present_[static_cast<std::size_t>(flat_index(tokens))];
}

bool TabularEnv::complete() const {
  return std::all_of(present_.begin(), present_.end(), [](bool b) { return b; });
}

double TabularEnv::reward(std::span<const Token> tokens) const {
  const auto i = static_cast<std::size_t>(flat_index(tokens));
  if (!present_[i]) throw ConfigError("tabular: no reward entry for the requested sequence");
  return rewards_[i];
}

double TabularEnv::max_reward() const {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rewards_.size(); ++i) {
    if (present_[i]) best = std::max(best, rewards_[i]);
  }
  return best;
}

double tabular_reward(const TabularEnv& env, std::span<const Token> tokens) { return env.reward(tokens); }

std::vector<Episode> enumerate_episodes(const TabularEnv& env) {
  if (!env.complete()) throw ConfigError("enumerate_episodes: table is incomplete");
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(env.entry_count()));
  for (Index i = 0; i < env.entry_count(); ++i) {
    TokenSeq seq = env.sequence_at(i);
    const double r = env.reward(seq);
    out.push_back(Episode{std::move(seq), r});
  }
  return out;
}

// --- exact dynamic programming ----------------------------------------------

QTable::QTable(Index vocab_size, Index prompt_length) : vocab_(vocab_size), length_(prompt_length) {
  Index rows = 1;
  for (Index t = 0; t < prompt_length; ++t) {
    layers_.emplace_back(DenseMatrix::Zero(rows, vocab_size));
    rows *= vocab_size;
  }
}

Index QTable::prefix_row(std::span<const Token> prefix, Index vocab_size) {
  Index row = 0;
  for (Token t : prefix) row = row * vocab_size + t;
  return row;
}

TokenSeq QTable::prefix_at(Index t, Index row) const {
  TokenSeq p(static_cast<std::size_t>(t));
  for (Index i = t - 1; i >= 0; --i) {
    p[static_cast<std::size_t>(i)] = static_cast<Token>(row % vocab_);
    row /= vocab_;
  }
  return p;
}

DenseVector QTable::q(std::span<const Token> prefix) const {
  const auto t = static_cast<Index>(prefix.size());
  if (t >= length_) throw InputError("QTable: prefix must be shorter than the prompt length");
  return layer(t).row(prefix_row(prefix, vocab_)).transpose();
}

Token QTable::root_optimal_action() const { return static_cast<Token>(argmax_live(layer(0).row(0).transpose())); }

TokenSeq QTable::greedy_sequence() const {
  TokenSeq seq;
  for (Index t = 0; t < length_; ++t) seq.push_back(static_cast<Token>(argmax_live(q(seq))));
  return seq;
}

QTable dp_optimal_q(const TabularEnv& env, double alpha, double gamma, Backup backup, const FilterMaskFn& filter) {
  if (!(alpha > 0)) throw ConfigError("dp_optimal_q: alpha must be positive");
  if (!(gamma > 0) || gamma > 1) throw ConfigError("dp_optimal_q: gamma must lie in (0, 1]");
  const Index V = env.vocab_size(), L = env.prompt_length();
  QTable table(V, L);
  for (Index t = L - 1; t >= 0; --t) {
    DenseMatrix& layer = table.layer(t);
    for (Index r = 0; r < layer.rows(); ++r) {
      TokenSeq seq = table.prefix_at(t, r);
      seq.push_back(0);
      for (Index z = 0; z < V; ++z) {
        seq.back() = static_cast<Token>(z);
        if (t == L - 1) {
          layer(r, z) = env.reward(seq);
        } else {
          const auto next = table.layer(t + 1).row(r * V + z).transpose();
          layer(r, z) = gamma * soft_backup(next, alpha, backup);
        }
      }
      if (filter) {
        const TokenSeq prefix = table.prefix_at(t, r);
        const DenseVector row = layer.row(r).transpose();
        layer.row(r) = apply_filter(row, filter(prefix)).values.transpose();
      }
    }
  }
  return table;
}

}  // namespace seqopt
