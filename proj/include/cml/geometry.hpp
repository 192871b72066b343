#pragma once

// Unit-sphere helpers: the density of the dot product between two independent
// uniform unit vectors, and L2 normalization with its Jacobian-transpose.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace cml {

inline constexpr double kNormEpsilon = 1e-12;
inline constexpr double kBackwardMinNorm = 1e-6;

/// log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b).
inline double log_beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::domain_error("log_beta: arguments must be positive");
  }
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

/// Density of s = p1.p2 for p1, p2 drawn independently and uniformly from the
/// unit sphere in R^d:
///
///   p(s) = (1 - s^2)^((d-1)/2 - 1) / B((d-1)/2, 1/2)   for -1 <= s <= 1
///
/// and 0 elsewhere. The normalizer is cached since the second-stage sampler
/// evaluates this thousands of times per batch.
class SphereDensity {
 public:
  explicit SphereDensity(int dim) : dim_(dim) {
    if (dim < 2) throw std::invalid_argument("SphereDensity: dimension must be >= 2");
    log_norm_ = log_beta(0.5 * (dim - 1), 0.5);
  }

  int dim() const { return dim_; }
  double log_norm() const { return log_norm_; }
  double exponent() const { return 0.5 * (dim_ - 3); }

  /// log p(s) for |s| < 1. Callers clamp s away from +-1.
  double log_density(double s) const {
    return exponent() * std::log1p(-s * s) - log_norm_;
  }

  double operator()(double s) const {
    if (s < -1.0 || s > 1.0) return 0.0;
    if (s == 1.0 || s == -1.0) {
      // (1 - s^2)^e at the endpoints: 1 for d = 3, 0 above, diverges for d = 2.
      if (dim_ == 3) return std::exp(-log_norm_);
      return dim_ > 3 ? 0.0 : HUGE_VAL;
    }
    return std::exp(log_density(s));
  }

 private:
  int dim_;
  double log_norm_;
};

inline double sphere_dot_density(double s, const SphereDensity& params) { return params(s); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

/// out = x / max(|x|, 1e-12). `out` may alias `x`.
inline void normalize_into(std::span<const double> x, std::span<double> out) {
  const double scale = 1.0 / std::max(l2_norm(x), kNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scale;
}

inline std::vector<double> normalize(std::span<const double> x) {
  std::vector<double> out(x.size());
  normalize_into(x, out);
  return out;
}

/// Pulls an upstream gradient `g` (w.r.t. x/|x|) back to x:
///   (g - (xh.g) xh) / |x|,   xh = x/|x|.
/// Returns zeros when |x| < 1e-6.
inline void normalize_backward_into(std::span<const double> x, std::span<const double> g,
                                    std::span<double> out) {
  const double norm = l2_norm(x);
  if (norm < kBackwardMinNorm) {
    for (auto& v : out) v = 0.0;
    return;
  }
  const double inv = 1.0 / norm;
  double radial = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) radial += x[i] * inv * g[i];
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (g[i] - radial * x[i] * inv) * inv;
}

inline std::vector<double> normalize_backward(std::span<const double> x,
                                              std::span<const double> g) {
  std::vector<double> out(x.size());
  normalize_backward_into(x, g, out);
  return out;
}

}  // namespace cml
