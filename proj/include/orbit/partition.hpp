#pragma once

// Exact sampling from independent Bernoulli activations conditioned on
// "at most K successes", via a suffix partition table:
//   Z_i(b) = Z_{i+1}(b) + w_i Z_{i+1}(b-1),   Z_{N}(b) = 1 for b >= 0.
// Items are 0-indexed here; row N is the empty suffix.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "orbit/nn.hpp"
#include "orbit/rng.hpp"

namespace orbit {

inline constexpr double kLogitClamp = 30.0;
inline constexpr std::size_t kDirectModeMaxItems = 40;

inline double clamp_logit(double a) { return std::clamp(a, -kLogitClamp, kLogitClamp); }

namespace detail {
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}
}  // namespace detail

class PartitionTable {
 public:
  // Logits are clamped to |a| <= 30 before conversion to odds w = exp(a).
  static PartitionTable build(std::span<const double> logits, int budget) {
    PartitionTable t;
    t.n_ = logits.size();
    t.k_ = std::max(0, std::min<int>(budget, static_cast<int>(logits.size())));
    double log_total = 0.0;
    for (double a : logits) {
      const double c = clamp_logit(a);
      t.log_odds_.push_back(c);
      log_total += std::max(c, 0.0) + std::log1p(std::exp(-std::abs(c)));
    }
    // Direct products are exact enough and cheap, but Z can reach prod(1 + w_i).
    t.log_space_ = t.n_ > kDirectModeMaxItems || log_total > 600.0;
    const std::size_t cols = static_cast<std::size_t>(t.k_) + 1;
    t.table_.assign((t.n_ + 1) * cols, t.log_space_ ? 0.0 : 1.0);
    for (std::size_t i = t.n_; i-- > 0;) {
      for (int b = 0; b <= t.k_; ++b) {
        const double skip = t.raw(i + 1, b);
        if (t.log_space_) {
          const double take = b > 0 ? t.log_odds_[i] + t.raw(i + 1, b - 1) : detail::kNegInf;
          t.at(i, b) = detail::log_add(skip, take);
        } else {
          const double take = b > 0 ? std::exp(t.log_odds_[i]) * t.raw(i + 1, b - 1) : 0.0;
          t.at(i, b) = skip + take;
        }
      }
    }
    return t;
  }

  std::size_t items() const { return n_; }
  int budget() const { return k_; }
  bool log_space() const { return log_space_; }
  const std::vector<double>& log_odds() const { return log_odds_; }
  double odds(std::size_t i) const { return std::exp(log_odds_[i]); }

  // Z_i(b); zero for b < 0. Overflows to inf in log mode for huge tables.
  double z(std::size_t i, int b) const {
    if (b < 0) return 0.0;
    b = std::min(b, k_);
    return log_space_ ? std::exp(raw(i, b)) : raw(i, b);
  }

  double log_z(std::size_t i, int b) const {
    if (b < 0) return detail::kNegInf;
    b = std::min(b, k_);
    return log_space_ ? raw(i, b) : std::log(raw(i, b));
  }

  // P(y_i = 1 | y_<i, remaining budget r) = w_i Z_{i+1}(r-1) / Z_i(r).
  double accept_probability(std::size_t i, int remaining) const {
    if (remaining <= 0) return 0.0;
    if (log_space_) return std::exp(log_odds_[i] + log_z(i + 1, remaining - 1) - log_z(i, remaining));
    return odds(i) * z(i + 1, remaining - 1) / z(i, remaining);
  }

 private:
  double raw(std::size_t i, int b) const { return table_[i * (static_cast<std::size_t>(k_) + 1) + b]; }
  double& at(std::size_t i, int b) { return table_[i * (static_cast<std::size_t>(k_) + 1) + b]; }

  std::size_t n_ = 0;
  int k_ = 0;
  bool log_space_ = false;
  std::vector<double> log_odds_;
  std::vector<double> table_;
};

struct ActivationDecision {
  std::vector<int> indicator;             // y over candidates, visit order
  std::vector<double> logits;             // clamped
  std::vector<double> accept_probability; // P(y_i = 1 | prefix)
  std::vector<double> chosen_probability; // probability of the realised y_i, in (0, 1]
  std::vector<int> remaining;             // r_i before visiting item i
  int budget = 0;

  int active_count() const {
    int c = 0;
    for (int y : indicator) c += y;
    return c;
  }
};

// Visits candidates in the given order; r decrements on each acceptance.
inline ActivationDecision sample_activation(const PartitionTable& table, Rng& rng) {
  ActivationDecision d;
  d.budget = table.budget();
  d.logits = table.log_odds();
  int r = table.budget();
  for (std::size_t i = 0; i < table.items(); ++i) {
    const double p = table.accept_probability(i, r);
    const bool take = bernoulli(rng, p);
    d.remaining.push_back(r);
    d.accept_probability.push_back(p);
    d.chosen_probability.push_back(take ? p : 1.0 - p);
    d.indicator.push_back(take ? 1 : 0);
    if (take) --r;
  }
  return d;
}

inline ActivationDecision sample_activation(std::span<const double> logits, int budget, Rng& rng) {
  return sample_activation(PartitionTable::build(logits, budget), rng);
}

// log P(y) = sum_i y_i a_i - log Z_0(K); -inf if y violates the budget.
inline double activation_log_probability(const PartitionTable& table, std::span<const int> y) {
  int count = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i]) {
      ++count;
      s += table.log_odds()[i];
    }
  if (count > table.budget()) return detail::kNegInf;
  return s - table.log_z(0, table.budget());
}

// Marginals P(y_j = 1) under the constrained distribution; this is also
// d log Z_0(K) / d a_j.
inline std::vector<double> activation_marginals(const PartitionTable& table) {
  const std::size_t n = table.items();
  const int k = table.budget();
  // prefix[j][c]: log weight of items [0, j) with exactly c selected.
  std::vector<std::vector<double>> prefix(n + 1, std::vector<double>(k + 1, detail::kNegInf));
  prefix[0][0] = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (int c = 0; c <= k; ++c) {
      double v = prefix[j][c];
      if (c > 0) v = detail::log_add(v, table.log_odds()[j] + prefix[j][c - 1]);
      prefix[j + 1][c] = v;
    }
  const double log_total = table.log_z(0, k);
  std::vector<double> marg(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = detail::kNegInf;
    for (int c = 0; c + 1 <= k; ++c) acc = detail::log_add(acc, prefix[j][c] + table.log_z(j + 1, k - 1 - c));
    marg[j] = acc == detail::kNegInf ? 0.0 : std::exp(table.log_odds()[j] + acc - log_total);
  }
  return marg;
}

// Tape node for log P(y | logits, K); the logits var should already be clamped.
inline nn::Var activation_log_probability(nn::Tape& tape, nn::Var logits, std::vector<int> y, int budget) {
  const auto table = PartitionTable::build(tape.value(logits), budget);
  const double lp = activation_log_probability(table, y);
  auto marg = activation_marginals(table);
  return tape.custom({lp}, {logits}, [y = std::move(y), marg = std::move(marg)](const nn::Vec& g, std::vector<nn::Vec*>& gin) {
    for (std::size_t j = 0; j < marg.size(); ++j) (*gin[0])[j] += g[0] * (static_cast<double>(y[j]) - marg[j]);
  });
}

}  // namespace orbit
