#pragma once

// Gaussian Volterra case (b = 0, σ = 1, n = d = 1): the covariance
// operators Q_t and Q, the trace criterion, stationary and forcing
// variances, invariant sampling and the strong-Feller band witness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "svlift/error.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/rng.hpp"

namespace svlift {

namespace detail {

// (1 - e^{-s t}) / s with the value t at s = 0
inline double ou_integral(double s, double t) { return s == 0.0 ? t : -std::expm1(-s * t) / s; }

inline void require_invariant(const DiscreteMeasure& dm, const char* what) {
  if (dm.has_zero_node())
    throw InvalidArgument(std::string(what) +
                          ": the measure has an atom at 0, so the Gaussian lift has no invariant probability measure");
}

}  // namespace detail

enum class CovarianceFlavor { qt, qinf };

/// Node-indexed kernel G of a covariance operator: (Qy)_i = ∑_j G_ij r_j c_j y_j.
/// G_ij = (1 - e^{-(θ_i+θ_j)t}) / (θ_i+θ_j) for Q_t, 1/(θ_i+θ_j) for Q.
struct CovarianceOperator {
  CovarianceFlavor flavor;
  double t;
  Matrix G;
};

inline CovarianceOperator covariance_operator(const DiscreteMeasure& dm, CovarianceFlavor flavor, double t = 0.0) {
  const auto N = static_cast<Eigen::Index>(dm.size());
  CovarianceOperator op{flavor, t, Matrix(N, N)};
  if (flavor == CovarianceFlavor::qinf) detail::require_invariant(dm, "q_inf");
  else detail::require(t >= 0.0, "qt: t must be >= 0");
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double s = dm.nodes()[i] + dm.nodes()[j];
      op.G(i, j) = op.G(j, i) = flavor == CovarianceFlavor::qt ? detail::ou_integral(s, t) : 1.0 / s;
    }
  return op;
}

inline LiftState apply(const CovarianceOperator& op, const LiftState& y) {
  const auto& dm = y.measure();
  const Vector cr = detail::as_vector(dm.weights()).cwiseProduct(detail::as_vector(dm.r_values()));
  return {y.measure_ptr(), op.G * (cr.asDiagonal() * y.values())};
}

inline LiftState qt_apply(const LiftState& y, double t) {
  return apply(covariance_operator(y.measure(), CovarianceFlavor::qt, t), y);
}

inline LiftState q_inf_apply(const LiftState& y) {
  return apply(covariance_operator(y.measure(), CovarianceFlavor::qinf), y);
}

/// Tr Q_t = t μ({0}) + ∑_{θ>0} c r (1 - e^{-2θt}) / (2θ)
inline double trace_qt(const DiscreteMeasure& dm, double t) {
  detail::require(t >= 0.0, "trace_qt: t must be >= 0");
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i)
    s += dm.weights()[i] * dm.r_values()[i] * detail::ou_integral(2.0 * dm.nodes()[i], t);
  return s;
}

/// ∑ c r / (2θ), the limit of trace_qt without a zero node.
inline double trace_q_inf(const DiscreteMeasure& dm) {
  detail::require_invariant(dm, "trace_q_inf");
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i) s += dm.weights()[i] * dm.r_values()[i] / (2.0 * dm.nodes()[i]);
  return s;
}

/// ∑_{ij} c_i c_j e^{-(θ_i+θ_j)t} / (θ_i+θ_j) = ∫_0^∞ K(t+s)² ds
inline double forcing_variance(const DiscreteMeasure& dm, double t) {
  detail::require_invariant(dm, "forcing_variance");
  detail::require(t >= 0.0, "forcing_variance: t must be >= 0");
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i)
    for (std::size_t j = 0; j < dm.size(); ++j) {
      const double a = dm.nodes()[i] + dm.nodes()[j];
      s += dm.weights()[i] * dm.weights()[j] * std::exp(-a * t) / a;
    }
  return s;
}

/// ∫_0^∞ K(s)² ds = ∑_{ij} c_i c_j / (θ_i+θ_j)
inline double stationary_variance(const DiscreteMeasure& dm) { return forcing_variance(dm, 0.0); }

/// Closed form for Gamma kernels, Γ(2α-1)/(Γ(α)²(2β)^{2α-1}); the atom
/// double sum for exponential sums; quadrature of K² otherwise.
inline double stationary_variance(const Kernel& k) {
  if (!invariant_criterion(k))
    throw InvalidArgument("stationary_variance: kernel '" + k.name() + "' has no invariant probability measure");
  if (const auto* g = std::get_if<GammaKernel>(&k.variant())) {
    const double a = g->alpha;
    return boost::math::tgamma(2.0 * a - 1.0) /
           (std::pow(boost::math::tgamma(a), 2) * std::pow(2.0 * g->beta, 2.0 * a - 1.0));
  }
  const auto m = BernsteinMeasure::of(k);
  if (m.atomic()) return stationary_variance(DiscreteMeasure::from_atoms(m.atoms(), WeightFunction::constant_one()));
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate([&k](double s) {
    if (!(s > 0.0)) return 0.0;
    const double v = eval_kernel(k, s);
    return v * v;
  });
}

/// ∑_{ij} c_i c_j (1 - e^{-(θ_i+θ_j)t}) / (θ_i+θ_j) = Var X_t in the zero-forcing Gaussian case.
inline double ito_variance(const DiscreteMeasure& dm, double t) {
  detail::require(t >= 0.0, "ito_variance: t must be >= 0");
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i)
    for (std::size_t j = 0; j < dm.size(); ++j)
      s += dm.weights()[i] * dm.weights()[j] * detail::ou_integral(dm.nodes()[i] + dm.nodes()[j], t);
  return s;
}

/// Cov(X_s, X_t) = ∫_0^{s∧t} K(s-u)K(t-u) du for zero forcing.
inline double volterra_covariance(const DiscreteMeasure& dm, double s, double t) {
  detail::require(s > 0.0 && t > 0.0, "volterra_covariance: s and t must be > 0");
  const double m = std::min(s, t);
  double acc = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i)
    for (std::size_t j = 0; j < dm.size(); ++j) {
      const double ti = dm.nodes()[i], tj = dm.nodes()[j];
      // e^{-θ_i(s-m) - θ_j(t-m)} ∫_0^m e^{-(θ_i+θ_j)v} dv
      acc += dm.weights()[i] * dm.weights()[j] * std::exp(-ti * (s - m) - tj * (t - m)) *
             detail::ou_integral(ti + tj, m);
    }
  return acc;
}

/// ∑_{j<K} K̄(T - t_j)² dt, the variance of X_T under the exact-ou-euler scheme.
inline double discrete_ito_variance(const DiscreteMeasure& dm, double T, double dt) {
  const auto K = static_cast<std::size_t>(std::llround(T / dt));
  double s = 0.0;
  for (std::size_t m = 1; m <= K; ++m) {
    const double k = dm.kernel(static_cast<double>(m) * dt);
    s += k * k * dt;
  }
  return s;
}

/// Σ_ij = 1/(θ_i+θ_j), the coordinate covariance of the stationary lift.
inline Matrix cauchy_covariance(const DiscreteMeasure& dm) {
  detail::require_invariant(dm, "cauchy_covariance");
  return covariance_operator(dm, CovarianceFlavor::qinf).G;
}

/// Lower factor F with F Fᵀ = Σ + jitter, via Cholesky of the unit-diagonal rescaling.
inline Matrix invariant_factor(const DiscreteMeasure& dm, double jitter = 1e-12) {
  const Matrix S = cauchy_covariance(dm);
  const Vector scale = S.diagonal().cwiseSqrt();
  Matrix U = scale.cwiseInverse().asDiagonal() * S * scale.cwiseInverse().asDiagonal();
  U.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(U);
  if (llt.info() != Eigen::Success)
    throw NumericalFailure(
        "sample_invariant: Cholesky of the Cauchy covariance failed; nodes are too close, merge them or reduce n");
  return scale.asDiagonal() * Matrix(llt.matrixL());
}

/// One draw of the stationary lift (n = 1) from N(0, Σ).
inline LiftState sample_invariant(std::shared_ptr<const DiscreteMeasure> dm, const Matrix& factor,
                                  const PathNormals& g) {
  Vector z(factor.cols());
  g.normals(0, {z.data(), static_cast<std::size_t>(z.size())});
  return {std::move(dm), factor * z};
}

inline LiftState sample_invariant(std::shared_ptr<const DiscreteMeasure> dm, std::uint64_t seed, std::uint64_t path) {
  const Matrix F = invariant_factor(*dm);
  return sample_invariant(std::move(dm), F, PathNormals(seed, path, Stream::initial_state));
}

struct WitnessReport {
  double t = 0.0;
  double epsilon = 0.0;
  std::size_t band_begin = 0;
  /// Inclusive last index of the minimizing band.
  std::size_t band_end = 0;
  double ratio = std::numeric_limits<double>::infinity();
  bool achievable = false;
  /// Sufficient r-mass bound 2Mε²/(e^{2Mt} - 1) with M the band cap.
  double mass_bound = 0.0;
  /// ∫_B r dμ of the minimizing band.
  double band_mass = 0.0;
  double cap = 0.0;
};

/// ratio(B)² = ⟨Q_t 1_B, 1_B⟩_H / ‖e^{-·t} 1_B‖²_H for a node band B.
inline double witness_ratio(const DiscreteMeasure& dm, double t, std::size_t begin, std::size_t end) {
  detail::require(begin <= end && end < dm.size(), "witness_ratio: bad band");
  double num = 0.0, den = 0.0;
  for (std::size_t i = begin; i <= end; ++i) {
    const double wi = dm.weights()[i] * dm.r_values()[i];
    den += wi * std::exp(-2.0 * dm.nodes()[i] * t);
    for (std::size_t j = begin; j <= end; ++j)
      num += wi * dm.weights()[j] * dm.r_values()[j] * detail::ou_integral(dm.nodes()[i] + dm.nodes()[j], t);
  }
  return std::sqrt(num / den);
}

/// Minimizes the band ratio over all contiguous node bands with θ ≤ cap
/// (default: the largest node), O(n²) with running sums.
inline WitnessReport strong_feller_witness(const DiscreteMeasure& dm, double t, double eps,
                                           std::optional<double> cap = std::nullopt) {
  detail::require(t > 0.0, "strong_feller_witness: t must be > 0");
  detail::require(eps > 0.0, "strong_feller_witness: epsilon must be > 0");
  WitnessReport rep;
  rep.t = t;
  rep.epsilon = eps;
  rep.cap = cap.value_or(dm.nodes().back());
  std::size_t n = 0;
  while (n < dm.size() && dm.nodes()[n] <= rep.cap) ++n;
  detail::require(n >= 1, "strong_feller_witness: no node lies below the cap");

  Vector w(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) w[static_cast<Eigen::Index>(i)] = dm.weights()[i] * dm.r_values()[i];
  // g_ij = w_i w_j G_ij; colsum(j, a) = ∑_{i=a}^{j-1} g_ij via column prefix sums
  Matrix prefix(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    prefix(0, jj) = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double g = w[ii] * w[jj] * detail::ou_integral(dm.nodes()[i] + dm.nodes()[j], t);
      prefix(ii + 1, jj) = prefix(ii, jj) + g;
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    double num = 0.0, den = 0.0, mass = 0.0;
    for (std::size_t b = a; b < n; ++b) {
      const auto bb = static_cast<Eigen::Index>(b);
      const double cross = prefix(bb, bb) - prefix(static_cast<Eigen::Index>(a), bb);
      const double diag = prefix(bb + 1, bb) - prefix(bb, bb);
      num += 2.0 * cross + diag;
      den += w[bb] * std::exp(-2.0 * dm.nodes()[b] * t);
      mass += w[bb];
      if (!(den > 0.0)) continue;
      const double ratio2 = num / den;
      if (ratio2 < best) {
        best = ratio2;
        rep.band_begin = a;
        rep.band_end = b;
        rep.band_mass = mass;
      }
    }
  }
  rep.ratio = std::sqrt(std::max(best, 0.0));
  rep.achievable = rep.ratio < eps;
  const double M = rep.cap;
  rep.mass_bound = M > 0.0 ? 2.0 * M * eps * eps / std::expm1(2.0 * M * t) : eps * eps / t;
  return rep;
}

}  // namespace svlift
