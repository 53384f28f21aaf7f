#pragma once

// Drift b: ℝⁿ → ℝⁿ and diffusion σ: ℝⁿ → ℝ^{n×d} of the Volterra equation,
// with the constants the coupling needs.

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "svlift/error.hpp"

namespace svlift {

struct Coefficients {
  Eigen::Index n = 1;
  Eigen::Index d = 1;
  /// b(x) written into a pre-sized n-vector.
  std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& out)> b;
  /// σ(x) written into a pre-sized n×d matrix.
  std::function<void(const Eigen::VectorXd& x, Eigen::MatrixXd& out)> sigma;
  /// Right inverse σ⁻¹(x) (d×n), σσ⁻¹ = I. Optional.
  std::function<void(const Eigen::VectorXd& x, Eigen::MatrixXd& out)> sigma_inv;
  /// Declared Lipschitz constant of b and σ.
  double lipschitz_L = 0.0;
  std::optional<double> sigma_sup;
  std::optional<double> sigma_inv_sup;
  std::string name = "user";

  void validate() const {
    detail::require(n >= 1 && d >= 1, "coefficients: dimensions must be >= 1");
    detail::require(static_cast<bool>(b) && static_cast<bool>(sigma), "coefficients: b and sigma are required");
    detail::require(std::isfinite(lipschitz_L) && lipschitz_L >= 0.0, "coefficients: L must be >= 0");
  }
};

enum class DiffusionShape { affine, tanh };

/// Componentwise family in dimension n = d:
///   b(x)_k = b0 + b1 x_k,
///   σ(x) = diag(s0 + s1 x_k)        (affine)
///   σ(x) = diag(s0 + s1 tanh x_k)   (tanh, bounded and invertible when s0 > |s1|)
/// L = |b1| + |s1|.
struct CoefficientSpec {
  Eigen::Index dim = 1;
  double b0 = 0.0;
  double b1 = 0.0;
  double s0 = 1.0;
  double s1 = 0.0;
  DiffusionShape shape = DiffusionShape::affine;
};

inline Coefficients make_coefficients(const CoefficientSpec& s) {
  detail::require(s.dim >= 1, "coefficients: dim must be >= 1");
  for (double v : {s.b0, s.b1, s.s0, s.s1}) detail::require(std::isfinite(v), "coefficients: parameters must be finite");
  Coefficients c;
  c.n = c.d = s.dim;
  c.lipschitz_L = std::abs(s.b1) + std::abs(s.s1);
  c.b = [b0 = s.b0, b1 = s.b1](const Eigen::VectorXd& x, Eigen::VectorXd& out) { out.array() = b0 + b1 * x.array(); };

  const bool tanh_shape = s.shape == DiffusionShape::tanh;
  auto diag = [s0 = s.s0, s1 = s.s1, tanh_shape](double x) { return s0 + s1 * (tanh_shape ? std::tanh(x) : x); };
  c.sigma = [diag](const Eigen::VectorXd& x, Eigen::MatrixXd& out) {
    out.setZero();
    for (Eigen::Index k = 0; k < x.size(); ++k) out(k, k) = diag(x[k]);
  };
  c.sigma_inv = [diag](const Eigen::VectorXd& x, Eigen::MatrixXd& out) {
    out.setZero();
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double v = diag(x[k]);
      if (v == 0.0) throw NumericalFailure("sigma is singular at the current state");
      out(k, k) = 1.0 / v;
    }
  };

  if (s.s1 == 0.0) {
    c.sigma_sup = std::abs(s.s0);
    if (s.s0 != 0.0) c.sigma_inv_sup = 1.0 / std::abs(s.s0);
    else c.sigma_inv = nullptr;
  } else if (tanh_shape) {
    c.sigma_sup = std::abs(s.s0) + std::abs(s.s1);
    if (std::abs(s.s0) > std::abs(s.s1)) c.sigma_inv_sup = 1.0 / (std::abs(s.s0) - std::abs(s.s1));
  }
  if (s.b0 == 0.0 && s.b1 == 0.0 && s.s1 == 0.0 && s.s0 == 1.0) c.name = "gaussian";
  else c.name = tanh_shape ? "smooth_bounded" : "affine";
  return c;
}

/// b = 0, σ = I.
inline Coefficients gaussian_coefficients(Eigen::Index dim = 1) {
  CoefficientSpec s;
  s.dim = dim;
  return make_coefficients(s);
}

}  // namespace svlift
