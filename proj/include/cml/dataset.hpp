#pragma once

// Implicit-feedback datasets: parsing raw (user, item, value) logs, binarizing
// and filtering them into a dense-indexed interaction set, per-user k-fold
// assignment, and a CSR index for positive-membership queries.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cml/errors.hpp"
#include "cml/rng.hpp"

namespace cml {

using Index = std::uint32_t;

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  double value = 0.0;

  bool operator==(const RawInteraction&) const = default;
};

struct ParseSchema {
  char separator = '\t';
  bool has_header = false;
  int user_column = 0;
  int item_column = 1;
  int value_column = 2;
};

namespace detail {

inline std::string_view trim_field(std::string_view f) {
  while (!f.empty() && (f.front() == ' ' || f.front() == '\r')) f.remove_prefix(1);
  while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
  if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
  return f;
}

inline std::vector<std::string_view> split_line(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim_field(line.substr(start)));
      break;
    }
    fields.push_back(trim_field(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
  double out = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return out;
}

}  // namespace detail

/// One record per non-blank line, in file order. Extra columns beyond the ones
/// named in `schema` are ignored.
inline std::vector<RawInteraction> parse_interactions(std::istream& in,
                                                      const ParseSchema& schema = {}) {
  const int needed = std::max({schema.user_column, schema.item_column, schema.value_column}) + 1;
  std::vector<RawInteraction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && schema.has_header) continue;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_line(line, schema.separator);
    if (static_cast<int>(fields.size()) < needed) {
      throw ParseError(lineno, "expected " + std::to_string(needed) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    const auto user = fields[schema.user_column];
    const auto item = fields[schema.item_column];
    if (user.empty() || item.empty()) throw ParseError(lineno, "empty user or item key");
    const auto value = detail::parse_double(fields[schema.value_column]);
    if (!value || !std::isfinite(*value)) {
      throw ParseError(lineno, "non-numeric value '" + std::string(fields[schema.value_column]) + "'");
    }
    out.push_back({std::string(user), std::string(item), *value});
  }
  return out;
}

enum class Comparison { kGreaterEqual, kGreater };

inline bool passes(double value, double threshold, Comparison mode) {
  return mode == Comparison::kGreater ? value > threshold : value >= threshold;
}

struct FilterRules {
  double binarize_threshold = 0.0;
  Comparison binarize_mode = Comparison::kGreaterEqual;
  std::size_t min_user_interactions = 0;
  Comparison user_mode = Comparison::kGreaterEqual;
  std::size_t min_item_users = 0;  // 0 disables the item filter
  Comparison item_mode = Comparison::kGreaterEqual;

  void validate() const {
    if (!std::isfinite(binarize_threshold)) throw ConfigError("binarize threshold must be finite");
  }

  /// Ratings strictly above 4; users with at least 20 positives.
  static FilterRules amazon_movies() {
    return {4.0, Comparison::kGreater, 20, Comparison::kGreaterEqual, 0, Comparison::kGreaterEqual};
  }
  /// Ratings of 5 or more; users with more than 10 positives.
  static FilterRules book_crossing() {
    return {5.0, Comparison::kGreaterEqual, 10, Comparison::kGreater, 0, Comparison::kGreaterEqual};
  }
  /// Playcounts of 5 or more; items with at least 5 users, then users with more than 20.
  static FilterRules echonest() {
    return {5.0, Comparison::kGreaterEqual, 20, Comparison::kGreater, 5, Comparison::kGreaterEqual};
  }
};

using Pair = std::pair<Index, Index>;  // (user, item)

/// Binary interaction set S with dense indices. `pairs` is sorted by
/// (user, item) and duplicate-free.
struct InteractionSet {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Pair> pairs;
  std::vector<std::string> user_keys;  // idx -> key
  std::vector<std::string> item_keys;
  std::unordered_map<std::string, Index> user_map;  // key -> idx
  std::unordered_map<std::string, Index> item_map;
  std::vector<std::uint32_t> item_freq;

  double density() const {
    return static_cast<double>(pairs.size()) /
           (static_cast<double>(num_users) * static_cast<double>(num_items));
  }

  std::optional<Index> find_user(const std::string& key) const {
    auto it = user_map.find(key);
    if (it == user_map.end()) return std::nullopt;
    return it->second;
  }
};

inline std::vector<std::uint32_t> item_frequencies(std::size_t num_items,
                                                   std::span<const Pair> pairs) {
  std::vector<std::uint32_t> freq(num_items, 0);
  for (const auto& [u, i] : pairs) ++freq[i];
  return freq;
}

/// Builds an InteractionSet from already-indexed pairs. Keys default to the
/// decimal index. Pairs are sorted and de-duplicated.
inline InteractionSet make_interaction_set(std::size_t num_users, std::size_t num_items,
                                           std::vector<Pair> pairs,
                                           std::vector<std::string> user_keys = {},
                                           std::vector<std::string> item_keys = {}) {
  InteractionSet s;
  s.num_users = num_users;
  s.num_items = num_items;
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  for (const auto& [u, i] : pairs) {
    if (u >= num_users || i >= num_items) throw DataError("pair index out of range");
  }
  s.pairs = std::move(pairs);
  if (user_keys.empty()) {
    for (std::size_t u = 0; u < num_users; ++u) user_keys.push_back(std::to_string(u));
  }
  if (item_keys.empty()) {
    for (std::size_t i = 0; i < num_items; ++i) item_keys.push_back(std::to_string(i));
  }
  if (user_keys.size() != num_users || item_keys.size() != num_items) {
    throw DataError("key table size does not match index range");
  }
  s.user_keys = std::move(user_keys);
  s.item_keys = std::move(item_keys);
  for (std::size_t u = 0; u < num_users; ++u) s.user_map.emplace(s.user_keys[u], static_cast<Index>(u));
  for (std::size_t i = 0; i < num_items; ++i) s.item_map.emplace(s.item_keys[i], static_cast<Index>(i));
  s.item_freq = item_frequencies(num_items, s.pairs);
  return s;
}

/// Binarize, de-duplicate, then one pass of the item filter followed by one
/// pass of the user filter. Survivors are re-indexed densely in order of first
/// appearance in `raw`.
inline InteractionSet binarize_filter(std::span<const RawInteraction> raw,
                                      const FilterRules& rules) {
  rules.validate();
  std::unordered_map<std::string_view, Index> users, items;
  std::vector<std::string_view> user_order, item_order;
  std::vector<Pair> pairs;
  for (const auto& r : raw) {
    if (!passes(r.value, rules.binarize_threshold, rules.binarize_mode)) continue;
    auto [uit, unew] = users.try_emplace(r.user_key, static_cast<Index>(user_order.size()));
    if (unew) user_order.push_back(r.user_key);
    auto [iit, inew] = items.try_emplace(r.item_key, static_cast<Index>(item_order.size()));
    if (inew) item_order.push_back(r.item_key);
    pairs.emplace_back(uit->second, iit->second);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<char> item_alive(item_order.size(), 1);
  if (rules.min_item_users > 0) {
    const auto freq = item_frequencies(item_order.size(), pairs);
    for (std::size_t i = 0; i < freq.size(); ++i) {
      item_alive[i] = passes(freq[i], static_cast<double>(rules.min_item_users), rules.item_mode);
    }
    std::erase_if(pairs, [&](const Pair& p) { return !item_alive[p.second]; });
  }

  std::vector<std::size_t> user_count(user_order.size(), 0);
  for (const auto& [u, i] : pairs) ++user_count[u];
  std::vector<char> user_alive(user_order.size(), 0);
  for (std::size_t u = 0; u < user_count.size(); ++u) {
    user_alive[u] = user_count[u] > 0 &&
                    passes(static_cast<double>(user_count[u]),
                           static_cast<double>(rules.min_user_interactions), rules.user_mode);
  }
  std::erase_if(pairs, [&](const Pair& p) { return !user_alive[p.first]; });

  // Items that lost all their users to the user filter disappear too.
  std::vector<char> item_used(item_order.size(), 0);
  for (const auto& [u, i] : pairs) item_used[i] = 1;

  constexpr Index kDropped = static_cast<Index>(-1);
  std::vector<Index> user_remap(user_order.size(), kDropped), item_remap(item_order.size(), kDropped);
  std::vector<std::string> user_keys, item_keys;
  for (std::size_t u = 0; u < user_order.size(); ++u) {
    if (!user_alive[u]) continue;
    user_remap[u] = static_cast<Index>(user_keys.size());
    user_keys.emplace_back(user_order[u]);
  }
  for (std::size_t i = 0; i < item_order.size(); ++i) {
    if (!item_used[i]) continue;
    item_remap[i] = static_cast<Index>(item_keys.size());
    item_keys.emplace_back(item_order[i]);
  }
  if (user_keys.empty() || item_keys.empty()) {
    throw DataError("dataset is empty after binarization and filtering");
  }
  for (auto& [u, i] : pairs) {
    u = user_remap[u];
    i = item_remap[i];
  }
  const auto n_users = user_keys.size();
  const auto n_items = item_keys.size();
  return make_interaction_set(n_users, n_items, std::move(pairs), std::move(user_keys),
                              std::move(item_keys));
}

/// Fold id per pair, aligned with InteractionSet::pairs.
struct FoldAssignment {
  int k = 0;
  std::vector<std::uint8_t> fold_of;

  std::vector<Pair> train_pairs(std::span<const Pair> pairs, int test_fold) const {
    std::vector<Pair> out;
    for (std::size_t r = 0; r < pairs.size(); ++r) {
      if (fold_of[r] != test_fold) out.push_back(pairs[r]);
    }
    return out;
  }

  std::vector<Pair> test_pairs(std::span<const Pair> pairs, int test_fold) const {
    std::vector<Pair> out;
    for (std::size_t r = 0; r < pairs.size(); ++r) {
      if (fold_of[r] == test_fold) out.push_back(pairs[r]);
    }
    return out;
  }
};

/// Each user's pairs are shuffled independently and dealt round-robin into
/// folds 0, 1, ..., k-1, 0, ...
inline FoldAssignment kfold_split(const InteractionSet& s, int k, std::uint64_t seed) {
  if (k < 2 || k > 255) throw ConfigError("fold count must be in [2, 255]");
  FoldAssignment folds{k, std::vector<std::uint8_t>(s.pairs.size(), 0)};
  Rng rng(seed);
  std::vector<std::size_t> rows;
  std::size_t begin = 0;
  while (begin < s.pairs.size()) {
    std::size_t end = begin;
    while (end < s.pairs.size() && s.pairs[end].first == s.pairs[begin].first) ++end;
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    shuffle_in_place(rows.begin(), rows.end(), rng);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      folds.fold_of[rows[r]] = static_cast<std::uint8_t>(r % k);
    }
    begin = end;
  }
  return folds;
}

/// Per-user sorted positives in CSR layout.
class UserItemIndex {
 public:
  UserItemIndex() = default;

  UserItemIndex(std::size_t num_users, std::span<const Pair> pairs)
      : offsets_(num_users + 1, 0) {
    for (const auto& [u, i] : pairs) {
      if (u >= num_users) throw DataError("user index out of range");
      ++offsets_[u + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    items_.resize(pairs.size());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const auto& [u, i] : pairs) items_[cursor[u]++] = i;
    for (std::size_t u = 0; u < num_users; ++u) {
      auto first = items_.begin() + static_cast<std::ptrdiff_t>(offsets_[u]);
      auto last = items_.begin() + static_cast<std::ptrdiff_t>(offsets_[u + 1]);
      std::sort(first, last);
      if (std::adjacent_find(first, last) != last) throw DataError("duplicate pair in index");
    }
  }

  std::size_t num_users() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t degree(std::size_t user) const { return offsets_[user + 1] - offsets_[user]; }

  std::span<const Index> positives(std::size_t user) const {
    return {items_.data() + offsets_[user], degree(user)};
  }

  bool contains(std::size_t user, Index item) const {
    const auto items = positives(user);
    return std::binary_search(items.begin(), items.end(), item);
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Index> items_;
};

inline UserItemIndex build_user_index(const InteractionSet& s) {
  return UserItemIndex(s.num_users, s.pairs);
}

}  // namespace cml
