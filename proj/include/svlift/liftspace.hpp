#pragma once

// The discrete lift space over a DiscreteMeasure: the three weighted norms,
// μ[·], the forcing map, the semigroup e^{-θt}, its generator, and the ε–M
// interpolation constant.

#include <cmath>
#include <memory>
#include <utility>

#include <Eigen/Dense>

#include "svlift/error.hpp"
#include "svlift/kernels.hpp"

namespace svlift {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Y sampled at the nodes of a measure: row i is Y(θ_i) ∈ ℝⁿ.
class LiftState {
 public:
  LiftState(std::shared_ptr<const DiscreteMeasure> dm, Matrix values) : dm_(std::move(dm)), values_(std::move(values)) {
    detail::require(dm_ != nullptr, "LiftState: measure is null");
    detail::require(static_cast<std::size_t>(values_.rows()) == dm_->size(),
                    "LiftState: row count must equal the number of nodes");
    detail::require(values_.cols() >= 1, "LiftState: dimension n must be >= 1");
    detail::require(values_.allFinite(), "LiftState: entries must be finite");
  }

  static LiftState zero(std::shared_ptr<const DiscreteMeasure> dm, Eigen::Index dim) {
    const auto rows = static_cast<Eigen::Index>(dm->size());
    return LiftState(std::move(dm), Matrix::Zero(rows, dim));
  }

  /// Every node carries the same vector b.
  static LiftState constant(std::shared_ptr<const DiscreteMeasure> dm, const Vector& b) {
    const auto rows = static_cast<Eigen::Index>(dm->size());
    return LiftState(std::move(dm), b.transpose().replicate(rows, 1));
  }

  const DiscreteMeasure& measure() const { return *dm_; }
  const std::shared_ptr<const DiscreteMeasure>& measure_ptr() const { return dm_; }
  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }
  Eigen::Index nodes() const { return values_.rows(); }
  Eigen::Index dim() const { return values_.cols(); }

  bool same_space(const LiftState& o) const {
    return (dm_ == o.dm_ || *dm_ == *o.dm_) && dim() == o.dim();
  }

 private:
  std::shared_ptr<const DiscreteMeasure> dm_;
  Matrix values_;
};

struct NormReport {
  double h_norm;
  double v_norm;
  double vstar_norm;
  double l1_mu;
};

namespace detail {

inline void require_same_space(const LiftState& a, const LiftState& b) {
  if (!a.same_space(b)) throw MeasureMismatch("lift states live on different measures or dimensions");
}

inline Eigen::Map<const Vector> as_vector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace detail

inline NormReport norms(const LiftState& y) {
  const auto& dm = y.measure();
  const auto theta = detail::as_vector(dm.nodes());
  const auto c = detail::as_vector(dm.weights());
  const auto r = detail::as_vector(dm.r_values());
  const Vector sq = y.values().rowwise().squaredNorm();
  const Vector cr = c.cwiseProduct(r);
  const double h2 = cr.dot(sq);
  const double v2 = cr.cwiseProduct((theta.array() + 1.0).matrix()).dot(sq);
  const double vs2 = cr.cwiseQuotient((theta.array() + 1.0).matrix()).dot(sq);
  const double l1 = c.dot(sq.cwiseSqrt());
  return {std::sqrt(h2), std::sqrt(v2), std::sqrt(vs2), l1};
}

inline double h_norm_squared(const LiftState& y) {
  const auto& dm = y.measure();
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.nodes(); ++i) s += dm.weights()[i] * dm.r_values()[i] * y.values().row(i).squaredNorm();
  return s;
}

inline double inner_h(const LiftState& a, const LiftState& b) {
  detail::require_same_space(a, b);
  const auto& dm = a.measure();
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.nodes(); ++i)
    s += dm.weights()[i] * dm.r_values()[i] * a.values().row(i).dot(b.values().row(i));
  return s;
}

/// μ[y] = ∑ c_i y_i
inline Vector mu_integral(const LiftState& y) {
  return y.values().transpose() * detail::as_vector(y.measure().weights());
}

/// (𝒦y)(t) = ∑ c_i e^{-θ_i t} y_i
inline Vector forcing(const LiftState& y, double t) {
  detail::require(t >= 0.0, "forcing: t must be >= 0");
  const auto& dm = y.measure();
  Vector w(y.nodes());
  for (Eigen::Index i = 0; i < y.nodes(); ++i) w[i] = dm.weights()[i] * std::exp(-dm.nodes()[i] * t);
  return y.values().transpose() * w;
}

inline LiftState semigroup_apply(const LiftState& y, double t) {
  detail::require(t >= 0.0, "semigroup_apply: t must be >= 0");
  LiftState out = y;
  const auto& nodes = y.measure().nodes();
  for (Eigen::Index i = 0; i < y.nodes(); ++i) out.values().row(i) *= std::exp(-nodes[i] * t);
  return out;
}

/// (Ay)(θ) = -θ y(θ)
inline LiftState generator_apply(const LiftState& y) {
  LiftState out = y;
  const auto& nodes = y.measure().nodes();
  for (Eigen::Index i = 0; i < y.nodes(); ++i) out.values().row(i) *= -nodes[i];
  return out;
}

struct EpsMConstant {
  double m;
  double M;
};

/// ∑ c_i / ((θ_i + m) r(θ_i)), the quantity bounded by ε in the ε–M search.
inline double eps_M_tail(const DiscreteMeasure& dm, double m) {
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i) s += dm.weights()[i] / ((dm.nodes()[i] + m) * dm.r_values()[i]);
  return s;
}

/// Finds m ≥ 1 with eps_M_tail(m) ≤ ε by doubling then bisection (tolerance
/// 10⁻⁹), and M = ε(m - 1), so that (∑ c_i |y_i|)² ≤ ε‖y‖²_V + M‖y‖²_H.
inline EpsMConstant eps_M_constant(const DiscreteMeasure& dm, double eps) {
  detail::require(std::isfinite(eps) && eps > 0.0, "eps_M_constant: epsilon must be > 0");
  if (eps_M_tail(dm, 1.0) <= eps) return {1.0, 0.0};
  double lo = 1.0, hi = 2.0;
  while (eps_M_tail(dm, hi) > eps) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw NumericalFailure("eps_M_constant: doubling search overflowed");
  }
  while (hi - lo > 1e-9 * hi) {
    const double mid = 0.5 * (lo + hi);
    (eps_M_tail(dm, mid) <= eps ? hi : lo) = mid;
  }
  return {hi, eps * (hi - 1.0)};
}

}  // namespace svlift
