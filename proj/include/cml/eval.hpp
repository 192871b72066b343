#pragma once

// Top-K retrieval and ranking metrics: AP@K, NDCG@K and the mean-of-median
// popularity of recommended items (MMR), per fold and aggregated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/errors.hpp"
#include "cml/geometry.hpp"
#include "cml/model.hpp"

namespace cml {

struct RankedList {
  Index user = 0;
  std::vector<Index> items;
  std::vector<double> scores;
};

/// Top-k by score, ties to the lower item index. `exclude` must be sorted.
inline RankedList top_k_by_score(Index user, std::span<const double> scores, std::size_t k,
                                 std::span<const Index> exclude) {
  if (k == 0) throw ConfigError("k must be >= 1");
  std::vector<Index> candidates;
  candidates.reserve(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!std::binary_search(exclude.begin(), exclude.end(), static_cast<Index>(j))) {
      candidates.push_back(static_cast<Index>(j));
    }
  }
  const auto better = [&](Index a, Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), better);
  RankedList out{user, {}, {}};
  out.items.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n));
  for (auto j : out.items) out.scores.push_back(scores[j]);
  return out;
}

/// Brute-force ranking by u.v over unit vectors; same order as by -D^2.
inline RankedList rank_top_k(const Matrix& user_unit, const Matrix& item_unit, Index user,
                             std::size_t k, std::span<const Index> exclude) {
  std::vector<double> scores(item_unit.rows);
  const auto u = user_unit.row(user);
  for (std::size_t j = 0; j < item_unit.rows; ++j) scores[j] = dot(u, item_unit.row(j));
  return top_k_by_score(user, scores, k, exclude);
}

inline RankedList rank_top_k(const ModelParams& params, Index user, std::size_t k,
                             std::span<const Index> exclude) {
  Matrix u(1, params.dim());
  normalize_into(params.user_raw.row(user), u.row(0));
  RankedList r = rank_top_k(u, normalized_rows(params.item_raw), 0, k, exclude);
  r.user = user;
  return r;
}

/// AP@k normalized by min(|truth|, k). `truth` must be sorted and non-empty.
inline double average_precision_at_k(const RankedList& ranked, std::span<const Index> truth,
                                     std::size_t k) {
  if (truth.empty()) throw DataError("average precision needs at least one relevant item");
  double hits = 0.0, sum = 0.0;
  const std::size_t n = std::min(k, ranked.items.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::binary_search(truth.begin(), truth.end(), ranked.items[i])) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(truth.size(), k));
}

inline double ndcg_at_k(const RankedList& ranked, std::span<const Index> truth, std::size_t k) {
  if (truth.empty()) throw DataError("NDCG needs at least one relevant item");
  double dcg = 0.0, idcg = 0.0;
  const std::size_t n = std::min(k, ranked.items.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (std::binary_search(truth.begin(), truth.end(), ranked.items[i])) {
      dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
  }
  for (std::size_t i = 0; i < std::min(truth.size(), k); ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  return dcg / idcg;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Mean over users of the median f(j) among their recommended items.
inline double mmr_stat(std::span<const RankedList> lists, std::span<const std::uint32_t> item_freq) {
  if (lists.empty()) throw DataError("MMR needs at least one ranked list");
  double total = 0.0;
  std::vector<double> pops;
  for (const auto& list : lists) {
    pops.clear();
    for (auto j : list.items) pops.push_back(item_freq[j]);
    total += median(pops);
  }
  return total / static_cast<double>(lists.size());
}

struct FoldMetrics {
  int fold = 0;
  double map = 0.0;
  double ndcg = 0.0;
  double mmr = 0.0;
  std::size_t users_scored = 0;

  bool operator==(const FoldMetrics&) const = default;
};

struct EvalOptions {
  std::size_t k = 50;
  bool exclude_train = true;
};

/// Scores every user with at least one test item in `test_fold`. MMR uses the
/// training-split item counts.
inline FoldMetrics evaluate_fold(const ModelParams& params, const InteractionSet& s,
                                 const FoldAssignment& folds, int test_fold,
                                 const EvalOptions& opts = {}) {
  if (params.num_users() != s.num_users || params.num_items() != s.num_items) {
    throw DataError("embedding shape does not match the dataset");
  }
  const auto train = folds.train_pairs(s.pairs, test_fold);
  const auto test = folds.test_pairs(s.pairs, test_fold);
  const UserItemIndex train_index(s.num_users, train);
  const UserItemIndex test_index(s.num_users, test);
  const auto train_freq = item_frequencies(s.num_items, train);
  const Matrix user_unit = normalized_rows(params.user_raw);
  const Matrix item_unit = normalized_rows(params.item_raw);

  FoldMetrics m;
  m.fold = test_fold;
  std::vector<RankedList> lists;
  for (std::size_t u = 0; u < s.num_users; ++u) {
    const auto truth = test_index.positives(u);
    if (truth.empty()) continue;
    const auto exclude = opts.exclude_train ? train_index.positives(u) : std::span<const Index>{};
    auto ranked = rank_top_k(user_unit, item_unit, static_cast<Index>(u), opts.k, exclude);
    m.map += average_precision_at_k(ranked, truth, opts.k);
    m.ndcg += ndcg_at_k(ranked, truth, opts.k);
    lists.push_back(std::move(ranked));
  }
  if (lists.empty()) throw DataError("no user has test items in fold " + std::to_string(test_fold));
  m.users_scored = lists.size();
  m.map /= static_cast<double>(lists.size());
  m.ndcg /= static_cast<double>(lists.size());
  m.mmr = mmr_stat(lists, train_freq);
  return m;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

struct MetricsReport {
  std::vector<FoldMetrics> folds;

  MeanStd map() const { return field(&FoldMetrics::map); }
  MeanStd ndcg() const { return field(&FoldMetrics::ndcg); }
  MeanStd mmr() const { return field(&FoldMetrics::mmr); }

 private:
  MeanStd field(double FoldMetrics::*member) const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.*member);
    return mean_std(v);
  }
};

}  // namespace cml
