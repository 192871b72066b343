#pragma once

// Negative sampling strategies for triplet construction:
//   uniform     - items uniformly over the catalogue, rejecting the user's positives
//   popularity  - items drawn with probability f(j)^beta / sum f^beta (alias method)
//   two_stage   - C candidates drawn by popularity, then n of them selected with
//                 weight 1 / p(v_pos . v_cand) where p is the spherical
//                 dot-product density (weights zero for negative dot products)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/errors.hpp"
#include "cml/geometry.hpp"
#include "cml/rng.hpp"

namespace cml {

/// Vose alias table: O(n) construction, O(1) draws.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(std::vector<double> weights) : weights_(std::move(weights)) {
    const std::size_t n = weights_.size();
    if (n == 0) throw DataError("alias table over an empty support");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("alias weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw DataError("alias weights are all zero");

    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = weights_[i] * static_cast<double>(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers are 1 up to rounding.
    for (auto i : large) prob_[i] = 1.0, alias_[i] = i;
    for (auto i : small) prob_[i] = 1.0, alias_[i] = i;
  }

  std::size_t size() const { return prob_.size(); }
  std::span<const double> prob() const { return prob_; }
  std::span<const std::uint32_t> alias() const { return alias_; }
  std::span<const double> source_weights() const { return weights_; }

  Index draw(Rng& rng) const {
    const auto column = uniform_index(rng, prob_.size());
    return uniform01(rng) < prob_[column] ? static_cast<Index>(column) : alias_[column];
  }

  /// Per-outcome probabilities implied by (prob, alias).
  std::vector<double> reconstructed_probabilities() const {
    const double n = static_cast<double>(prob_.size());
    std::vector<double> p(prob_.size(), 0.0);
    for (std::size_t i = 0; i < prob_.size(); ++i) {
      p[i] += prob_[i] / n;
      p[alias_[i]] += (1.0 - prob_[i]) / n;
    }
    return p;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

/// Alias table over f(j)^beta. Items with f(j) = 0 get weight 0 for every beta.
inline AliasTable build_popularity_table(std::span<const std::uint32_t> freq, double beta) {
  std::vector<double> weights(freq.size(), 0.0);
  for (std::size_t j = 0; j < freq.size(); ++j) {
    if (freq[j] > 0) weights[j] = std::pow(static_cast<double>(freq[j]), beta);
  }
  return AliasTable(std::move(weights));
}

inline Index alias_draw(const AliasTable& table, Rng& rng) { return table.draw(rng); }

enum class Strategy { kUniform, kPopularity, kTwoStage };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kUniform: return "uniform";
    case Strategy::kPopularity: return "popularity";
    case Strategy::kTwoStage: return "two_stage";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view name) {
  if (name == "uniform") return Strategy::kUniform;
  if (name == "popularity") return Strategy::kPopularity;
  if (name == "two_stage") return Strategy::kTwoStage;
  return std::nullopt;
}

struct SamplerConfig {
  Strategy strategy = Strategy::kTwoStage;
  double beta = 1.0;
  std::size_t candidates = 2000;  // C
  std::size_t n_negatives = 1;    // |N_ij|
  double s_clamp = 1.0 - 1e-3;

  void validate() const {
    if (n_negatives < 1) throw ConfigError("n_negatives must be >= 1");
    if (candidates < n_negatives) throw ConfigError("candidate count C must be >= n_negatives");
    if (!(s_clamp > 0.0 && s_clamp < 1.0)) throw ConfigError("s_clamp must lie in (0, 1)");
    if (!std::isfinite(beta)) throw ConfigError("beta must be finite");
  }
};

inline std::vector<Index> uniform_negatives(const UserItemIndex& index, std::size_t user,
                                            std::size_t n, std::size_t num_items, Rng& rng) {
  if (index.degree(user) >= num_items) {
    throw SamplingError(user, "every item is a positive; no uniform negative exists");
  }
  std::vector<Index> out;
  out.reserve(n);
  while (out.size() < n) {
    const auto item = static_cast<Index>(uniform_index(rng, num_items));
    if (!index.contains(user, item)) out.push_back(item);
  }
  return out;
}

/// Popularity draws with rejection of the user's positives. Gives up after
/// `max_attempts` consecutive rejections for one slot.
inline std::vector<Index> popularity_negatives(const AliasTable& table, const UserItemIndex& index,
                                               std::size_t user, std::size_t n, Rng& rng,
                                               std::size_t max_attempts = 100000) {
  std::vector<Index> out;
  out.reserve(n);
  std::size_t misses = 0;
  while (out.size() < n) {
    const auto item = table.draw(rng);
    if (!index.contains(user, item)) {
      out.push_back(item);
      misses = 0;
    } else if (++misses >= max_attempts) {
      throw SamplingError(user, "popularity sampler keeps drawing the user's positives");
    }
  }
  return out;
}

/// First stage: C draws with replacement; duplicates are kept.
struct CandidatePool {
  std::vector<Index> items;
};

inline CandidatePool draw_candidates(const AliasTable& table, std::size_t count, Rng& rng) {
  CandidatePool pool;
  pool.items.resize(count);
  for (auto& item : pool.items) item = table.draw(rng);
  return pool;
}

/// Second-stage weights for each pool position, scaled so the largest is 1.
/// Zero for negative dot products and for the user's positives.
inline std::vector<double> two_stage_weights(std::span<const double> dots, const CandidatePool& pool,
                                             const UserItemIndex& index, std::size_t user,
                                             const SphereDensity& density, double s_clamp) {
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> log_w(pool.items.size(), kNone);
  double max_log = kNone;
  for (std::size_t c = 0; c < pool.items.size(); ++c) {
    if (!(dots[c] >= 0.0) || index.contains(user, pool.items[c])) continue;
    log_w[c] = -density.log_density(std::min(dots[c], s_clamp));
    max_log = std::max(max_log, log_w[c]);
  }
  std::vector<double> w(pool.items.size(), 0.0);
  if (max_log == kNone) return w;
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (log_w[c] != kNone) w[c] = std::exp(log_w[c] - max_log);
  }
  return w;
}

/// Picks `n` pool entries given precomputed dots between the positive item
/// and each candidate. Positions are drawn without replacement while
/// positive-weight ones remain; further slots go uniformly to unused
/// admissible positions, then (once those are exhausted) to any admissible
/// position.
inline std::vector<Index> select_by_inverse_density(std::span<const double> dots,
                                                    const CandidatePool& pool,
                                                    const UserItemIndex& index, std::size_t user,
                                                    std::size_t n, const SphereDensity& density,
                                                    double s_clamp, Rng& rng) {
  auto weights = two_stage_weights(dots, pool, index, user, density, s_clamp);
  std::vector<std::size_t> admissible;
  for (std::size_t c = 0; c < pool.items.size(); ++c) {
    if (!index.contains(user, pool.items[c])) admissible.push_back(c);
  }
  if (admissible.empty()) throw SamplingError(user, "no admissible candidate in the pool");

  std::vector<char> used(pool.items.size(), 0);
  std::vector<Index> out;
  out.reserve(n);
  double total = 0.0;
  for (double w : weights) total += w;
  while (out.size() < n) {
    std::size_t pick = weights.size();
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      std::size_t last_positive = weights.size();
      for (std::size_t c = 0; c < weights.size(); ++c) {
        if (weights[c] <= 0.0) continue;
        last_positive = c;
        target -= weights[c];
        if (target < 0.0) {
          pick = c;
          break;
        }
      }
      if (pick == weights.size()) pick = last_positive;  // rounding at the tail
      total -= weights[pick];
      weights[pick] = 0.0;
      // Recompute rather than trust a running difference near zero.
      if (total < 1e-12) {
        total = 0.0;
        for (double w : weights) total += w;
      }
    } else {
      std::vector<std::size_t> fresh;
      for (auto c : admissible) {
        if (!used[c]) fresh.push_back(c);
      }
      const auto& from = fresh.empty() ? admissible : fresh;
      pick = from[uniform_index(rng, from.size())];
    }
    used[pick] = 1;
    out.push_back(pool.items[pick]);
  }
  return out;
}

/// Second stage with dots computed from unit item vectors. `item_vec(j)` must
/// return a span over the unit-norm vector of item j.
template <typename ItemVec>
std::vector<Index> two_stage_select(std::span<const double> pos_vec, const CandidatePool& pool,
                                    ItemVec&& item_vec, const UserItemIndex& index,
                                    std::size_t user, std::size_t n, const SphereDensity& density,
                                    Rng& rng, double s_clamp = 1.0 - 1e-3) {
  if (pool.items.empty()) throw SamplingError(user, "empty candidate pool");
  std::vector<double> dots(pool.items.size());
  for (std::size_t c = 0; c < dots.size(); ++c) dots[c] = dot(pos_vec, item_vec(pool.items[c]));
  return select_by_inverse_density(dots, pool, index, user, n, density, s_clamp, rng);
}

}  // namespace cml
