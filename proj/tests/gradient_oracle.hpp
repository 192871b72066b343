#pragma once

// Independent forward pass and central-difference gradient check for the
// batch objective. The forward here uses explicit squared Euclidean distances
// and its own normalization, not the library's loss helpers.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cml/model.hpp"
#include "cml/rng.hpp"

namespace cml::testing {

struct GradientInstance {
  ModelParams params;
  TripletBatch batch;
  double alpha = 1.0;
  double lambda_g = 0.0;
};

/// N = M = `entities` rows of dimension `dim`, `rows` batch rows with
/// `n_negatives` negatives each, raw norms spread over [0.5, 2].
inline GradientInstance random_instance(Rng& rng, std::size_t entities, std::size_t dim, std::size_t rows,
                                        std::size_t n_negatives, double lambda_g) {
  GradientInstance inst;
  inst.params = ModelParams{Matrix(entities, dim), Matrix(entities, dim)};
  for (auto* m : {&inst.params.user_raw, &inst.params.item_raw}) {
    for (std::size_t r = 0; r < entities; ++r) {
      auto row = m->row(r);
      double n2 = 0.0;
      for (auto& x : row) {
        x = standard_normal(rng);
        n2 += x * x;
      }
      const double scale = (0.5 + 1.5 * uniform01(rng)) / std::sqrt(n2);
      for (auto& x : row) x *= scale;
    }
  }
  inst.batch.n_negatives = n_negatives;
  for (std::size_t r = 0; r < rows; ++r) {
    inst.batch.users.push_back(static_cast<Index>(uniform_index(rng, entities)));
    inst.batch.positives.push_back(static_cast<Index>(uniform_index(rng, entities)));
    for (std::size_t k = 0; k < n_negatives; ++k) {
      inst.batch.negatives.push_back(static_cast<Index>(uniform_index(rng, entities)));
    }
  }
  const double margins[] = {0.1, 0.5, 1.0};
  inst.alpha = margins[uniform_index(rng, 3)];
  inst.lambda_g = lambda_g;
  return inst;
}

inline std::vector<double> unit_copy(std::span<const double> x) {
  double n2 = 0.0;
  for (double v : x) n2 += v * v;
  const double n = std::sqrt(n2);
  std::vector<double> out(x.begin(), x.end());
  for (auto& v : out) v /= n;
  return out;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

inline double inner(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

struct ReferenceTerms {
  std::vector<double> hinge_args;  // D2(u, v_j) - min_k D2(u, v_k) + alpha per row
  std::vector<double> min_gaps;    // distance gap to the next distinct negative, per row
  double gor_excess = 0.0;         // mean(s^2) - 1/d
  double loss = 0.0;
};

inline ReferenceTerms reference_terms(const ModelParams& p, const TripletBatch& b, double alpha,
                                      double lambda_g) {
  ReferenceTerms t;
  double triplet = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto u = unit_copy(p.user_raw.row(b.users[r]));
    const auto vj = unit_copy(p.item_raw.row(b.positives[r]));
    std::vector<std::pair<double, Index>> negs;
    for (auto k : b.negatives_of(r)) {
      const auto vk = unit_copy(p.item_raw.row(k));
      negs.emplace_back(sq_dist(u, vk), k);
      const double s = inner(vj, vk);
      s1 += s;
      s2 += s * s;
    }
    std::sort(negs.begin(), negs.end());
    double gap = 1e9;
    for (const auto& [dist, k] : negs) {
      if (k != negs[0].second) {
        gap = dist - negs[0].first;
        break;
      }
    }
    const double arg = sq_dist(u, vj) - negs[0].first + alpha;
    t.hinge_args.push_back(arg);
    t.min_gaps.push_back(gap);
    triplet += std::max(0.0, arg);
  }
  const double q = static_cast<double>(b.size() * b.n_negatives);
  const double mean = s1 / q, mean_sq = s2 / q;
  t.gor_excess = mean_sq - 1.0 / static_cast<double>(p.dim());
  t.loss = triplet + lambda_g * (mean * mean + std::max(0.0, t.gor_excess));
  return t;
}

inline double reference_loss(const GradientInstance& inst) {
  return reference_terms(inst.params, inst.batch, inst.alpha, inst.lambda_g).loss;
}

/// True when no hinge, min or GOR kink lies within `margin` of the instance.
inline bool away_from_kinks(const GradientInstance& inst, double margin = 1e-3) {
  const auto t = reference_terms(inst.params, inst.batch, inst.alpha, inst.lambda_g);
  for (std::size_t r = 0; r < t.hinge_args.size(); ++r) {
    if (std::fabs(t.hinge_args[r]) < margin) return false;
    if (t.hinge_args[r] > 0.0 && t.min_gaps[r] < margin) return false;
  }
  return inst.lambda_g == 0.0 || std::fabs(t.gor_excess) >= margin;
}

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  int active_rows = 0;
  int inactive_rows = 0;
};

/// Compares backward() with central differences of reference_loss over every
/// raw entry. Relative error uses max(|analytic|, |numeric|, floor).
inline GradientReport compare_gradients(const GradientInstance& inst, double h = 1e-5, double floor = 1e-4) {
  GradientReport rep;
  const auto grads = backward(inst.params, inst.batch, inst.alpha, inst.lambda_g);
  for (double a : reference_terms(inst.params, inst.batch, inst.alpha, inst.lambda_g).hinge_args) {
    (a > 0.0 ? rep.active_rows : rep.inactive_rows)++;
  }
  auto check = [&](bool users) {
    const Matrix& m = users ? inst.params.user_raw : inst.params.item_raw;
    const SparseRows& g = users ? grads.users : grads.items;
    for (std::size_t r = 0; r < m.rows; ++r) {
      const auto it = g.rows.find(static_cast<Index>(r));
      for (std::size_t c = 0; c < m.cols; ++c) {
        GradientInstance plus = inst, minus = inst;
        (users ? plus.params.user_raw : plus.params.item_raw).row(r)[c] += h;
        (users ? minus.params.user_raw : minus.params.item_raw).row(r)[c] -= h;
        const double numeric = (reference_loss(plus) - reference_loss(minus)) / (2 * h);
        const double analytic = it == g.rows.end() ? 0.0 : it->second[c];
        const double scale = std::max({std::fabs(numeric), std::fabs(analytic), floor});
        rep.max_rel_error = std::max(rep.max_rel_error, std::fabs(numeric - analytic) / scale);
        ++rep.entries;
      }
    }
  };
  check(true);
  check(false);
  return rep;
}

}  // namespace cml::testing
