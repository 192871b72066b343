#pragma once

// Collaborative metric learning on the unit sphere.
//
// Raw user/item rows are unconstrained; every loss sees their L2-normalized
// views u = x/|x|, v = y/|y|, and gradients flow back through the
// normalization. Per positive pair (i, j) with negatives N_ij:
//
//   l_ij = [ D2(u_i, v_j) - min_k D2(u_i, v_k) + alpha ]_+,   D2(a, b) = 2 - 2 a.b
//
// and over all Q = |B| * |N_ij| (positive, negative) dots s = v_j . v_k:
//
//   L_gor = mean(s)^2 + [ mean(s^2) - 1/d ]_+
//
// The objective of one batch is sum_ij l_ij + lambda_g * L_gor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/errors.hpp"
#include "cml/geometry.hpp"
#include "cml/rng.hpp"
#include "cml/samplers.hpp"

namespace cml {

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

inline Matrix normalized_rows(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) normalize_into(m.row(i), out.row(i));
  return out;
}

struct ModelParams {
  Matrix user_raw;  // N x d
  Matrix item_raw;  // M x d

  std::size_t dim() const { return user_raw.cols; }
  std::size_t num_users() const { return user_raw.rows; }
  std::size_t num_items() const { return item_raw.rows; }

  bool operator==(const ModelParams&) const = default;
};

/// Entries i.i.d. N(0, 1/d), so raw rows have norm close to 1.
inline ModelParams init_embeddings(std::size_t num_users, std::size_t num_items, std::size_t dim,
                                   std::uint64_t seed) {
  if (num_users == 0 || num_items == 0 || dim == 0) throw ConfigError("empty embedding shape");
  ModelParams p{Matrix(num_users, dim), Matrix(num_items, dim)};
  Rng rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : p.user_raw.data) x = sd * standard_normal(rng);
  for (auto& x : p.item_raw.data) x = sd * standard_normal(rng);
  return p;
}

struct Hyper {
  std::size_t dim = 128;
  double alpha = 1.0;
  double lambda_g = 0.01;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  // Held at their disabled values: rank weights w_ij = 1 and no covariance term.
  static constexpr bool kUseRankWeights = false;
  static constexpr bool kUseCovarianceReg = false;

  void validate() const {
    if (dim < 2) throw ConfigError("dimension must be >= 2");
    if (!(alpha > 0.0)) throw ConfigError("margin alpha must be > 0");
    if (!(lambda_g >= 0.0)) throw ConfigError("lambda_g must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  }
};

/// negatives holds size() rows of n_negatives slots each.
struct TripletBatch {
  std::vector<Index> users;
  std::vector<Index> positives;
  std::vector<Index> negatives;
  std::size_t n_negatives = 1;

  std::size_t size() const { return users.size(); }
  std::span<const Index> negatives_of(std::size_t row) const {
    return {negatives.data() + row * n_negatives, n_negatives};
  }
};

namespace detail {

/// Unit-norm copies of the rows a batch touches.
class UnitRows {
 public:
  UnitRows(const Matrix& raw, std::span<const Index> wanted) : dim_(raw.cols) {
    for (auto r : wanted) {
      auto [it, inserted] = slot_.try_emplace(r, slot_.size());
      if (inserted) {
        data_.resize(data_.size() + dim_);
        normalize_into(raw.row(r), {data_.data() + it->second * dim_, dim_});
      }
    }
  }
  std::span<const double> operator[](Index r) const {
    return {data_.data() + slot_.at(r) * dim_, dim_};
  }

 private:
  std::size_t dim_;
  std::map<Index, std::size_t> slot_;
  std::vector<double> data_;
};

struct BatchView {
  UnitRows users;
  UnitRows items;
  BatchView(const ModelParams& p, const TripletBatch& b)
      : users(p.user_raw, b.users), items(p.item_raw, all_items(b)) {}

  static std::vector<Index> all_items(const TripletBatch& b) {
    std::vector<Index> v(b.positives);
    v.insert(v.end(), b.negatives.begin(), b.negatives.end());
    return v;
  }
};

}  // namespace detail

/// D^2 between unit vectors.
inline double squared_distance_unit(std::span<const double> a, std::span<const double> b) {
  return 2.0 - 2.0 * dot(a, b);
}

struct TripletLoss {
  double loss = 0.0;
  std::vector<double> per_row;
  std::vector<char> active;
  std::vector<std::size_t> argmin_slot;  // slot of the closest negative, lowest slot on ties
};

namespace detail {
inline TripletLoss triplet_loss(const BatchView& view, const TripletBatch& batch, double alpha) {
  TripletLoss out;
  out.per_row.resize(batch.size());
  out.active.resize(batch.size());
  out.argmin_slot.resize(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto u = view.users[batch.users[r]];
    const double d_pos = squared_distance_unit(u, view.items[batch.positives[r]]);
    const auto negs = batch.negatives_of(r);
    std::size_t best = 0;
    double d_best = squared_distance_unit(u, view.items[negs[0]]);
    for (std::size_t k = 1; k < negs.size(); ++k) {
      const double d = squared_distance_unit(u, view.items[negs[k]]);
      if (d < d_best) d_best = d, best = k;
    }
    const double l = std::max(0.0, d_pos - d_best + alpha);
    out.per_row[r] = l;
    out.active[r] = l > 0.0;
    out.argmin_slot[r] = best;
    out.loss += l;
  }
  return out;
}

struct GorStats {
  double mean = 0.0;
  double mean_sq = 0.0;
  double loss = 0.0;
  bool hinge_active = false;
};

inline GorStats gor(const BatchView& view, const TripletBatch& batch, std::size_t dim) {
  GorStats g;
  const double q = static_cast<double>(batch.size() * batch.n_negatives);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto vj = view.items[batch.positives[r]];
    for (auto k : batch.negatives_of(r)) {
      const double s = dot(vj, view.items[k]);
      g.mean += s;
      g.mean_sq += s * s;
    }
  }
  g.mean /= q;
  g.mean_sq /= q;
  const double excess = g.mean_sq - 1.0 / static_cast<double>(dim);
  g.hinge_active = excess > 0.0;
  g.loss = g.mean * g.mean + std::max(0.0, excess);
  return g;
}
}  // namespace detail

inline TripletLoss triplet_loss_batch(const ModelParams& params, const TripletBatch& batch,
                                      double alpha) {
  return detail::triplet_loss(detail::BatchView(params, batch), batch, alpha);
}

inline double gor_loss_batch(const ModelParams& params, const TripletBatch& batch) {
  return detail::gor(detail::BatchView(params, batch), batch, params.dim()).loss;
}

inline double total_loss(const ModelParams& params, const TripletBatch& batch, double alpha,
                         double lambda_g) {
  const detail::BatchView view(params, batch);
  double loss = detail::triplet_loss(view, batch, alpha).loss;
  if (lambda_g > 0.0) loss += lambda_g * detail::gor(view, batch, params.dim()).loss;
  return loss;
}

/// Gradient rows keyed by parameter row index.
struct SparseRows {
  std::map<Index, std::vector<double>> rows;

  std::vector<double>& at(Index r, std::size_t dim) {
    auto [it, inserted] = rows.try_emplace(r);
    if (inserted) it->second.assign(dim, 0.0);
    return it->second;
  }
};

struct BatchGradients {
  SparseRows users;
  SparseRows items;
};

namespace detail {
inline void axpy(double a, std::span<const double> x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void pull_back(const Matrix& raw, SparseRows& grads) {
  std::vector<double> tmp;
  for (auto& [r, g] : grads.rows) {
    tmp.resize(g.size());
    normalize_backward_into(raw.row(r), g, tmp);
    g.swap(tmp);
  }
}
}  // namespace detail

/// Exact (sub)gradient of the batch objective w.r.t. the raw embeddings.
/// The hinge contributes nothing when inactive and only the closest negative
/// receives gradient from the min.
inline BatchGradients backward(const ModelParams& params, const TripletBatch& batch, double alpha,
                               double lambda_g) {
  const std::size_t d = params.dim();
  const detail::BatchView view(params, batch);
  const auto trip = detail::triplet_loss(view, batch, alpha);

  // Gradients w.r.t. the unit vectors first.
  BatchGradients g;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    // Every batch row is registered so that all referenced rows appear.
    auto& gu = g.users.at(batch.users[r], d);
    g.items.at(batch.positives[r], d);
    for (auto k : batch.negatives_of(r)) g.items.at(k, d);
    if (!trip.active[r]) continue;
    const auto u = view.users[batch.users[r]];
    const Index j = batch.positives[r];
    const Index k = batch.negatives_of(r)[trip.argmin_slot[r]];
    const auto vj = view.items[j];
    const auto vk = view.items[k];
    // l = 2 u.v_k - 2 u.v_j + alpha
    detail::axpy(2.0, vk, gu);
    detail::axpy(-2.0, vj, gu);
    detail::axpy(-2.0, u, g.items.at(j, d));
    detail::axpy(2.0, u, g.items.at(k, d));
  }

  if (lambda_g > 0.0) {
    const auto stats = detail::gor(view, batch, d);
    const double q = static_cast<double>(batch.size() * batch.n_negatives);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const Index j = batch.positives[r];
      const auto vj = view.items[j];
      for (auto k : batch.negatives_of(r)) {
        const auto vk = view.items[k];
        const double s = dot(vj, vk);
        double ds = 2.0 * stats.mean / q;
        if (stats.hinge_active) ds += 2.0 * s / q;
        ds *= lambda_g;
        detail::axpy(ds, vk, g.items.at(j, d));
        detail::axpy(ds, vj, g.items.at(k, d));
      }
    }
  }

  detail::pull_back(params.user_raw, g.users);
  detail::pull_back(params.item_raw, g.items);
  return g;
}

/// Adam moments for every parameter row. Rows absent from a gradient are left
/// alone (no moment decay); bias correction uses the global step count.
struct AdamState {
  Matrix m_user, v_user, m_item, v_item;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ModelParams& p) {
    return {Matrix(p.num_users(), p.dim()), Matrix(p.num_users(), p.dim()),
            Matrix(p.num_items(), p.dim()), Matrix(p.num_items(), p.dim()), 0};
  }
};

namespace detail {
inline void adam_rows(Matrix& param, Matrix& m, Matrix& v, const SparseRows& grads,
                      const Hyper& h, double bias1, double bias2) {
  for (const auto& [r, g] : grads.rows) {
    auto p = param.row(r);
    auto mr = m.row(r);
    auto vr = v.row(r);
    for (std::size_t c = 0; c < g.size(); ++c) {
      mr[c] = h.adam_beta1 * mr[c] + (1.0 - h.adam_beta1) * g[c];
      vr[c] = h.adam_beta2 * vr[c] + (1.0 - h.adam_beta2) * g[c] * g[c];
      const double m_hat = mr[c] / bias1;
      const double v_hat = vr[c] / bias2;
      p[c] -= h.lr * m_hat / (std::sqrt(v_hat) + h.adam_eps);
    }
  }
}
}  // namespace detail

inline void adam_step(ModelParams& params, const BatchGradients& grads, AdamState& state,
                      const Hyper& h) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(h.adam_beta1, t);
  const double bias2 = 1.0 - std::pow(h.adam_beta2, t);
  detail::adam_rows(params.user_raw, state.m_user, state.v_user, grads.users, h, bias1, bias2);
  detail::adam_rows(params.item_raw, state.m_item, state.v_item, grads.items, h, bias1, bias2);
}

/// Fills batch.negatives for the rows already present in `batch`, using the
/// current parameters for the second stage.
class NegativeSampler {
 public:
  NegativeSampler(SamplerConfig config, const UserItemIndex& train_index, std::size_t num_items,
                  std::span<const std::uint32_t> train_freq, std::size_t dim)
      : config_(config), index_(&train_index), num_items_(num_items), density_(static_cast<int>(dim)) {
    config_.validate();
    if (config_.strategy != Strategy::kUniform) table_ = build_popularity_table(train_freq, config_.beta);
  }

  const SamplerConfig& config() const { return config_; }
  const AliasTable& table() const { return table_; }

  void fill(TripletBatch& batch, const ModelParams& params, Rng& rng) const {
    const std::size_t n = config_.n_negatives;
    batch.n_negatives = n;
    batch.negatives.assign(batch.size() * n, 0);
    auto store = [&](std::size_t r, const std::vector<Index>& negs) {
      std::copy(negs.begin(), negs.end(), batch.negatives.begin() + static_cast<std::ptrdiff_t>(r * n));
    };
    switch (config_.strategy) {
      case Strategy::kUniform:
        for (std::size_t r = 0; r < batch.size(); ++r) {
          store(r, uniform_negatives(*index_, batch.users[r], n, num_items_, rng));
        }
        break;
      case Strategy::kPopularity:
        for (std::size_t r = 0; r < batch.size(); ++r) {
          store(r, popularity_negatives(table_, *index_, batch.users[r], n, rng));
        }
        break;
      case Strategy::kTwoStage:
        fill_two_stage(batch, params, rng, store);
        break;
    }
  }

 private:
  template <typename Store>
  void fill_two_stage(TripletBatch& batch, const ModelParams& params, Rng& rng, Store& store) const {
    const std::size_t d = params.dim();
    // One pool per batch, shared by every row.
    auto pool = draw_candidates(table_, config_.candidates, rng);
    Matrix pool_unit = unit_rows_of(params.item_raw, pool);
    std::vector<double> dots(pool.items.size());
    std::vector<double> pos(d);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      normalize_into(params.item_raw.row(batch.positives[r]), pos);
      for (std::size_t c = 0; c < dots.size(); ++c) dots[c] = dot(pos, pool_unit.row(c));
      const auto user = batch.users[r];
      try {
        store(r, select_by_inverse_density(dots, pool, *index_, user, config_.n_negatives,
                                           density_, config_.s_clamp, rng));
      } catch (const SamplingError&) {
        // Nothing admissible for this user: one fresh pool, then give up.
        auto retry = draw_candidates(table_, config_.candidates, rng);
        Matrix retry_unit = unit_rows_of(params.item_raw, retry);
        std::vector<double> retry_dots(retry.items.size());
        for (std::size_t c = 0; c < retry_dots.size(); ++c) retry_dots[c] = dot(pos, retry_unit.row(c));
        store(r, select_by_inverse_density(retry_dots, retry, *index_, user, config_.n_negatives,
                                           density_, config_.s_clamp, rng));
      }
    }
  }

  static Matrix unit_rows_of(const Matrix& raw, const CandidatePool& pool) {
    Matrix out(pool.items.size(), raw.cols);
    for (std::size_t c = 0; c < pool.items.size(); ++c) normalize_into(raw.row(pool.items[c]), out.row(c));
    return out;
  }

  SamplerConfig config_;
  const UserItemIndex* index_;
  std::size_t num_items_;
  SphereDensity density_;
  AliasTable table_;
};

struct EpochStats {
  double mean_loss = 0.0;        // objective summed over batches / training pairs
  double active_fraction = 0.0;  // share of triplets with a positive hinge
  std::size_t batches = 0;

  bool operator==(const EpochStats&) const = default;
};

inline std::size_t batches_per_epoch(std::size_t num_pairs, std::size_t batch_size) {
  return (num_pairs + batch_size - 1) / batch_size;
}

/// One shuffled pass over `train_pairs`. Negatives exclude positives recorded
/// in the sampler's index.
inline EpochStats train_epoch(ModelParams& params, std::span<const Pair> train_pairs,
                              const NegativeSampler& sampler, const Hyper& hyper,
                              AdamState& state, Rng& rng) {
  if (train_pairs.empty()) throw DataError("no training pairs");
  std::vector<std::size_t> order(train_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order.begin(), order.end(), rng);

  EpochStats stats;
  double objective = 0.0;
  std::size_t active = 0;
  TripletBatch batch;
  for (std::size_t begin = 0; begin < order.size(); begin += hyper.batch_size) {
    const std::size_t end = std::min(order.size(), begin + hyper.batch_size);
    batch.users.clear();
    batch.positives.clear();
    for (std::size_t i = begin; i < end; ++i) {
      batch.users.push_back(train_pairs[order[i]].first);
      batch.positives.push_back(train_pairs[order[i]].second);
    }
    sampler.fill(batch, params, rng);

    const detail::BatchView view(params, batch);
    const auto trip = detail::triplet_loss(view, batch, hyper.alpha);
    objective += trip.loss;
    if (hyper.lambda_g > 0.0) objective += hyper.lambda_g * detail::gor(view, batch, params.dim()).loss;
    for (char a : trip.active) active += a ? 1 : 0;

    const auto grads = backward(params, batch, hyper.alpha, hyper.lambda_g);
    adam_step(params, grads, state, hyper);
    ++stats.batches;
  }
  stats.mean_loss = objective / static_cast<double>(train_pairs.size());
  stats.active_fraction = static_cast<double>(active) / static_cast<double>(train_pairs.size());
  return stats;
}

/// Owns parameters, optimizer state and the sampling generator for a
/// multi-epoch run on one training split.
class Trainer {
 public:
  Trainer(std::size_t num_users, std::size_t num_items, std::vector<Pair> train_pairs,
          SamplerConfig sampler, Hyper hyper)
      : hyper_(hyper),
        train_pairs_(std::move(train_pairs)),
        index_(num_users, train_pairs_),
        freq_(item_frequencies(num_items, train_pairs_)),
        params_(init_embeddings(num_users, num_items, hyper.dim, derive_seed(hyper.seed, 0))),
        state_(AdamState::zeros_like(params_)),
        sampler_(sampler, index_, num_items, freq_, hyper.dim),
        rng_(derive_seed(hyper.seed, 1)) {
    hyper_.validate();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  EpochStats run_epoch() { return train_epoch(params_, train_pairs_, sampler_, hyper_, state_, rng_); }

  std::vector<EpochStats> run(const std::function<void(std::size_t, const EpochStats&)>& on_epoch = {}) {
    std::vector<EpochStats> history;
    for (std::size_t e = 0; e < hyper_.epochs; ++e) {
      history.push_back(run_epoch());
      if (on_epoch) on_epoch(e + 1, history.back());
    }
    return history;
  }

  const ModelParams& params() const { return params_; }
  const UserItemIndex& train_index() const { return index_; }
  std::span<const std::uint32_t> train_freq() const { return freq_; }

 private:
  Hyper hyper_;
  std::vector<Pair> train_pairs_;
  UserItemIndex index_;
  std::vector<std::uint32_t> freq_;
  ModelParams params_;
  AdamState state_;
  NegativeSampler sampler_;
  Rng rng_;
};

}  // namespace cml
