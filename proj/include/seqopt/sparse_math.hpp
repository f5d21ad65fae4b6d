#pragma once

// Entropy-regularized policy and value operators over a vector of action
// values: sparsemax (sparse Tsallis, entropic index 2) and softmax (Shannon,
// index 1), plus the token filter that removes actions from both.
//
// Filtered actions carry a reserved sentinel, the most negative finite value
// of the scalar type. Scaling never touches sentinel entries, so no operator
// ever produces inf or NaN from them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seqopt/errors.hpp"
#include "seqopt/numkit.hpp"

namespace seqopt {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

template <typename Scalar>
constexpr Scalar filtered_sentinel() {
  return std::numeric_limits<Scalar>::lowest();
}

template <typename Scalar>
constexpr bool is_filtered(Scalar v) {
  return v == filtered_sentinel<Scalar>() || v == -std::numeric_limits<Scalar>::infinity();
}

template <typename Scalar>
struct ActionDistribution {
  Vector<Scalar> probabilities;
  /// Indices with strictly positive probability, ascending.
  std::vector<Index> support;
  /// tau(q / alpha) for sparsemax; -inf for softmax.
  Scalar threshold = -std::numeric_limits<Scalar>::infinity();

  Index size() const { return probabilities.size(); }
  Index support_size() const { return static_cast<Index>(support.size()); }
};

template <typename Scalar>
struct FilteredLogits {
  Vector<Scalar> values;
  Mask ignored;
};

namespace detail {

template <typename Derived>
void check_logits(const Eigen::MatrixBase<Derived>& q, const char* op) {
  using Scalar = typename Derived::Scalar;
  bool any_live = false;
  for (Index i = 0; i < q.size(); ++i) {
    const Scalar v = q(i);
    if (is_filtered(v)) continue;
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite action value");
    any_live = true;
  }
  if (!any_live) throw DomainError(std::string(op) + ": every action is filtered");
}

inline void check_alpha(double alpha, const char* op) {
  if (!(alpha > 0) || !std::isfinite(alpha)) {
    throw ConfigError(std::string(op) + ": alpha must be positive and finite");
  }
}

/// q / alpha on live entries; sentinels stay sentinels.
template <typename Derived>
Vector<typename Derived::Scalar> scale_live(const Eigen::MatrixBase<Derived>& q, double alpha) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> s(q.size());
  for (Index i = 0; i < q.size(); ++i) {
    s(i) = is_filtered(q(i)) ? filtered_sentinel<Scalar>() : q(i) / Scalar(alpha);
  }
  return s;
}

template <typename Scalar>
struct SupportSolution {
  std::vector<Index> support;  // ascending index
  Scalar threshold;
};

/// Walks the live entries in decreasing order (ties by ascending index) and
/// keeps z_(n) while 1 + n z_(n) > sum_{m <= n} z_(m). The condition at n + 1
/// implies it at n, so the first failure ends the support. Entries are ranked
/// lazily in doubling chunks since supports are usually far smaller than |V|.
template <typename Derived>
SupportSolution<typename Derived::Scalar> solve_support(const Eigen::MatrixBase<Derived>& scaled) {
  using Scalar = typename Derived::Scalar;
  std::vector<Index> live;
  live.reserve(static_cast<std::size_t>(scaled.size()));
  for (Index i = 0; i < scaled.size(); ++i) {
    if (!is_filtered(scaled(i))) live.push_back(i);
  }
  const auto before = [&scaled](Index a, Index b) {
    return scaled(a) > scaled(b) || (scaled(a) == scaled(b) && a < b);
  };
  Scalar cumulative = 0;
  std::size_t size = 0;
  std::size_t ranked = 0;
  std::size_t chunk = std::min<std::size_t>(live.size(), 32);
  bool stopped = false;
  while (!stopped && ranked < live.size()) {
    const auto mid = live.begin() + static_cast<std::ptrdiff_t>(chunk);
    std::partial_sort(live.begin() + static_cast<std::ptrdiff_t>(ranked), mid, live.end(), before);
    for (; ranked < chunk; ++ranked) {
      const Scalar z = scaled(live[ranked]);
      if (Scalar(1) + Scalar(ranked + 1) * z > cumulative + z) {
        cumulative += z;
        size = ranked + 1;
      } else {
        stopped = true;
        break;
      }
    }
    chunk = std::min(live.size(), 2 * chunk);
  }
  live.resize(size);
  std::sort(live.begin(), live.end());
  return {std::move(live), (cumulative - Scalar(1)) / Scalar(size)};
}

}  // namespace detail

/// Supporting set of already-scaled action values: the top-ranked prefix
/// satisfying the strict prefix inequality, returned in ascending index order.
/// Never empty.
template <typename Derived>
std::vector<Index> supporting_set(const Eigen::MatrixBase<Derived>& scaled_q) {
  detail::check_logits(scaled_q, "supporting_set");
  return detail::solve_support(scaled_q).support;
}

/// Sparsemax threshold of already-scaled action values.
template <typename Derived>
typename Derived::Scalar tau(const Eigen::MatrixBase<Derived>& scaled_q) {
  detail::check_logits(scaled_q, "tau");
  return detail::solve_support(scaled_q).threshold;
}

/// max(q / alpha - tau(q / alpha), 0): the Euclidean projection of q / alpha
/// onto the probability simplex.
template <typename Derived>
ActionDistribution<typename Derived::Scalar> sparsemax_dist(const Eigen::MatrixBase<Derived>& q, double alpha) {
  using Scalar = typename Derived::Scalar;
  detail::check_alpha(alpha, "sparsemax_dist");
  detail::check_logits(q, "sparsemax_dist");
  const Vector<Scalar> scaled = detail::scale_live(q, alpha);
  auto sol = detail::solve_support(scaled);

  ActionDistribution<Scalar> d;
  d.probabilities = Vector<Scalar>::Zero(q.size());
  d.threshold = sol.threshold;
  d.support.reserve(sol.support.size());
  for (Index i : sol.support) {
    const Scalar p = scaled(i) - sol.threshold;
    if (p > 0) {
      d.probabilities(i) = p;
      d.support.push_back(i);
    }
  }
  return d;
}

/// spmax(q / alpha) = (1 + sum_{S} (z^2 - tau^2)) / 2 over the scaled values z.
/// Note the result is not multiplied back by alpha.
template <typename Derived>
typename Derived::Scalar sparsemax_value(const Eigen::MatrixBase<Derived>& q, double alpha) {
  using Scalar = typename Derived::Scalar;
  detail::check_alpha(alpha, "sparsemax_value");
  detail::check_logits(q, "sparsemax_value");
  const Vector<Scalar> scaled = detail::scale_live(q, alpha);
  const auto sol = detail::solve_support(scaled);
  Scalar acc = 0;
  for (Index i : sol.support) acc += (scaled(i) - sol.threshold) * (scaled(i) + sol.threshold);
  return (Scalar(1) + acc) / Scalar(2);
}

template <typename Derived>
ActionDistribution<typename Derived::Scalar> softmax_dist(const Eigen::MatrixBase<Derived>& q, double alpha) {
  using Scalar = typename Derived::Scalar;
  detail::check_alpha(alpha, "softmax_dist");
  detail::check_logits(q, "softmax_dist");
  Scalar top = -std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < q.size(); ++i) {
    if (!is_filtered(q(i))) top = std::max(top, q(i));
  }
  ActionDistribution<Scalar> d;
  d.probabilities = Vector<Scalar>::Zero(q.size());
  Scalar total = 0;
  for (Index i = 0; i < q.size(); ++i) {
    if (is_filtered(q(i))) continue;
    d.probabilities(i) = std::exp((q(i) - top) / Scalar(alpha));
    total += d.probabilities(i);
  }
  d.probabilities /= total;
  for (Index i = 0; i < q.size(); ++i) {
    if (d.probabilities(i) > 0) d.support.push_back(i);
  }
  return d;
}

/// log sum_{live z} exp(q_z / alpha), evaluated around the maximum.
template <typename Derived>
typename Derived::Scalar logsumexp_value(const Eigen::MatrixBase<Derived>& q, double alpha) {
  using Scalar = typename Derived::Scalar;
  detail::check_alpha(alpha, "logsumexp_value");
  detail::check_logits(q, "logsumexp_value");
  const Vector<Scalar> scaled = detail::scale_live(q, alpha);
  Scalar top = -std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < scaled.size(); ++i) {
    if (!is_filtered(scaled(i))) top = std::max(top, scaled(i));
  }
  Scalar acc = 0;
  for (Index i = 0; i < scaled.size(); ++i) {
    if (!is_filtered(scaled(i))) acc += std::exp(scaled(i) - top);
  }
  return top + std::log(acc);
}

/// Tsallis entropy normalized so that S_2(pi) = k E_pi[(1 - pi) / 2]:
/// S_q(pi) = k (1 - sum pi^q) / (q (q - 1)). Index 1 is the Shannon limit
/// -k sum pi ln pi. With k = 1, alpha * spmax(q / alpha) = E_pi[q] + alpha S_2(pi).
template <typename Scalar>
Scalar tsallis_entropy(const ActionDistribution<Scalar>& dist, double entropic_index, double scalar_k = 1.0) {
  if (!(scalar_k > 0)) throw ConfigError("tsallis_entropy: scalar k must be positive");
  const auto& p = dist.probabilities;
  if (entropic_index == 1.0) {
    Scalar h = 0;
    for (Index i = 0; i < p.size(); ++i) {
      if (p(i) > 0) h -= p(i) * std::log(p(i));
    }
    return Scalar(scalar_k) * h;
  }
  Scalar power_sum = 0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0) power_sum += std::pow(p(i), Scalar(entropic_index));
  }
  return Scalar(scalar_k) * (Scalar(1) - power_sum) / Scalar(entropic_index * (entropic_index - 1.0));
}

template <typename Derived>
FilteredLogits<typename Derived::Scalar> apply_filter(const Eigen::MatrixBase<Derived>& q, const Mask& ignored) {
  using Scalar = typename Derived::Scalar;
  if (ignored.size() != q.size()) throw ConfigError("apply_filter: mask length differs from action count");
  if (ignored.all()) throw DomainError("apply_filter: every action is ignored");
  FilteredLogits<Scalar> f{q, ignored};
  for (Index i = 0; i < q.size(); ++i) {
    if (ignored(i)) f.values(i) = filtered_sentinel<Scalar>();
  }
  return f;
}

template <typename Scalar>
ActionDistribution<Scalar> sparsemax_dist(const FilteredLogits<Scalar>& f, double alpha) {
  return sparsemax_dist(f.values, alpha);
}
template <typename Scalar>
ActionDistribution<Scalar> softmax_dist(const FilteredLogits<Scalar>& f, double alpha) {
  return softmax_dist(f.values, alpha);
}
template <typename Scalar>
Scalar sparsemax_value(const FilteredLogits<Scalar>& f, double alpha) {
  return sparsemax_value(f.values, alpha);
}
template <typename Scalar>
Scalar logsumexp_value(const FilteredLogits<Scalar>& f, double alpha) {
  return logsumexp_value(f.values, alpha);
}

/// Mask of entries strictly below the k-th largest value. Entries tying the
/// k-th largest are kept, so at least k entries survive.
template <typename Derived>
Mask below_kth_largest(const Eigen::MatrixBase<Derived>& values, Index k) {
  using Scalar = typename Derived::Scalar;
  const Index n = values.size();
  if (k < 1 || k > n) {
    throw ConfigError("rank filter: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<Scalar> tmp(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) tmp[static_cast<std::size_t>(i)] = values(i);
  auto kth = tmp.begin() + (k - 1);
  std::nth_element(tmp.begin(), kth, tmp.end(), std::greater<Scalar>());
  const Scalar cut = *kth;
  return (values.array() < cut);
}

enum class Backup { sparsemax, logsumexp };

inline std::string to_string(Backup b) { return b == Backup::sparsemax ? "sparsemax" : "logsumexp"; }

/// alpha * spmax(q / alpha) or alpha * log sum exp(q / alpha): the soft
/// maximum used to bootstrap action values.
template <typename Derived>
typename Derived::Scalar soft_backup(const Eigen::MatrixBase<Derived>& q, double alpha, Backup kind) {
  using Scalar = typename Derived::Scalar;
  return Scalar(alpha) * (kind == Backup::sparsemax ? sparsemax_value(q, alpha) : logsumexp_value(q, alpha));
}

/// Index of the largest live entry, lowest index on ties.
template <typename Derived>
Index argmax_live(const Eigen::MatrixBase<Derived>& q) {
  Index best = -1;
  for (Index i = 0; i < q.size(); ++i) {
    if (is_filtered(q(i))) continue;
    if (best < 0 || q(i) > q(best)) best = i;
  }
  if (best < 0) throw DomainError("argmax: every action is filtered");
  return best;
}

}  // namespace seqopt
