#pragma once

// Completely monotone kernels, their Bernstein measures, the weight
// function r, and discretization of the measure into finitely many nodes.
//
// A kernel K(t) = ∫ e^{-θt} μ(dθ) is represented by its closed form (for
// evaluation) together with μ (for lifting). Finite exponential sums are
// their own discretization; density kernels are reduced to a
// DiscreteMeasure by moment matching on a geometric grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "svlift/error.hpp"

namespace svlift {

struct Atom {
  double theta;
  double weight;
};

class Kernel;

struct ExponentialSum {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// K(t) = t^{α-1} / Γ(α), α ∈ (1/2, 1).
struct FractionalKernel {
  double alpha;
};

/// K(t) = e^{-βt} t^{α-1} / Γ(α), α ∈ (1/2, 1), β > 0.
struct GammaKernel {
  double alpha;
  double beta;
};

/// K(t) = base(t + δ).
struct ShiftedKernel {
  std::shared_ptr<const Kernel> base;
  double delta;
};

/// K(t) = e^{-βt} base(t).
struct DampedKernel {
  std::shared_ptr<const Kernel> base;
  double beta;
};

/// Immutable completely monotone kernel. Construct through the named factories,
/// which enforce the parameter ranges.
class Kernel {
 public:
  using Variant = std::variant<ExponentialSum, FractionalKernel, GammaKernel, ShiftedKernel, DampedKernel>;

  /// Nodes θ_i ≥ 0 and weights c_i > 0. Duplicate nodes are merged by
  /// summing their weights; the result is sorted ascending.
  static Kernel exponential_sum(std::vector<double> nodes, std::vector<double> weights) {
    detail::require(!nodes.empty(), "exponential_sum: at least one node required");
    detail::require(nodes.size() == weights.size(), "exponential_sum: nodes and weights differ in length");
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      detail::require(std::isfinite(nodes[i]) && nodes[i] >= 0.0, "exponential_sum: nodes must be finite and >= 0");
      detail::require(std::isfinite(weights[i]) && weights[i] > 0.0, "exponential_sum: weights must be finite and > 0");
      pairs.emplace_back(nodes[i], weights[i]);
    }
    std::sort(pairs.begin(), pairs.end());
    ExponentialSum es;
    for (const auto& [theta, c] : pairs) {
      if (!es.nodes.empty() && es.nodes.back() == theta) {
        es.weights.back() += c;
      } else {
        es.nodes.push_back(theta);
        es.weights.push_back(c);
      }
    }
    return Kernel(std::move(es));
  }

  static Kernel fractional(double alpha) {
    check_alpha(alpha);
    return Kernel(FractionalKernel{alpha});
  }

  static Kernel gamma(double alpha, double beta) {
    check_alpha(alpha);
    detail::require(std::isfinite(beta) && beta > 0.0, "gamma kernel: beta must be > 0");
    return Kernel(GammaKernel{alpha, beta});
  }

  static Kernel shifted(Kernel base, double delta) {
    detail::require(std::isfinite(delta) && delta > 0.0, "shifted kernel: delta must be > 0");
    return Kernel(ShiftedKernel{std::make_shared<const Kernel>(std::move(base)), delta});
  }

  static Kernel damped(Kernel base, double beta) {
    detail::require(std::isfinite(beta) && beta > 0.0, "damped kernel: beta must be > 0");
    return Kernel(DampedKernel{std::make_shared<const Kernel>(std::move(base)), beta});
  }

  const Variant& variant() const { return v_; }

  std::string name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, ExponentialSum>) return "exponential_sum";
          if constexpr (std::is_same_v<T, FractionalKernel>) return "fractional";
          if constexpr (std::is_same_v<T, GammaKernel>) return "gamma";
          if constexpr (std::is_same_v<T, ShiftedKernel>) return "shifted";
          if constexpr (std::is_same_v<T, DampedKernel>) return "damped";
        },
        v_);
  }

 private:
  explicit Kernel(Variant v) : v_(std::move(v)) {}

  static void check_alpha(double alpha) {
    detail::require(std::isfinite(alpha) && alpha > 0.5 && alpha < 1.0, "kernel order alpha must lie in (1/2, 1)");
  }

  Variant v_;
};

namespace detail {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// 1 / (Γ(α) Γ(1-α)) = sin(πα) / π
inline double fractional_density_constant(double alpha) {
  return 1.0 / (boost::math::tgamma(alpha) * boost::math::tgamma(1.0 - alpha));
}

}  // namespace detail

/// K(t) for t > 0.
inline double eval_kernel(const Kernel& k, double t) {
  detail::require(t > 0.0, "eval_kernel: t must be > 0");
  return std::visit(
      detail::overloaded{
          [t](const ExponentialSum& es) {
            double s = 0.0;
            for (std::size_t i = 0; i < es.nodes.size(); ++i) s += es.weights[i] * std::exp(-es.nodes[i] * t);
            return s;
          },
          [t](const FractionalKernel& f) { return std::pow(t, f.alpha - 1.0) / boost::math::tgamma(f.alpha); },
          [t](const GammaKernel& g) {
            return std::exp(-g.beta * t) * std::pow(t, g.alpha - 1.0) / boost::math::tgamma(g.alpha);
          },
          [t](const ShiftedKernel& s) { return eval_kernel(*s.base, t + s.delta); },
          [t](const DampedKernel& d) { return std::exp(-d.beta * t) * eval_kernel(*d.base, t); },
      },
      k.variant());
}

/// The Bernstein measure μ of a kernel: either finitely many atoms, or a
/// density on (lo, ∞) written in the offset variable u = θ - lo.
class BernsteinMeasure {
 public:
  static BernsteinMeasure of(const Kernel& k) {
    return std::visit(
        detail::overloaded{
            [](const ExponentialSum& es) {
              BernsteinMeasure m;
              for (std::size_t i = 0; i < es.nodes.size(); ++i) m.atoms_.push_back({es.nodes[i], es.weights[i]});
              return m;
            },
            [](const FractionalKernel& f) { return power_density(f.alpha, 0.0); },
            [](const GammaKernel& g) { return power_density(g.alpha, g.beta); },
            [](const ShiftedKernel& s) {
              BernsteinMeasure m = of(*s.base);
              const double delta = s.delta;
              if (m.atomic()) {
                for (auto& a : m.atoms_) a.weight *= std::exp(-delta * a.theta);
              } else {
                const double lo = m.lo_;
                m.density_ = [g = m.density_, delta, lo](double u) { return std::exp(-delta * (lo + u)) * g(u); };
              }
              return m;
            },
            [](const DampedKernel& d) {
              BernsteinMeasure m = of(*d.base);
              if (m.atomic()) {
                for (auto& a : m.atoms_) a.theta += d.beta;
              } else {
                m.lo_ += d.beta;
              }
              return m;
            },
        },
        k.variant());
  }

  bool atomic() const { return !density_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  /// Lower end of the support (inf supp μ).
  double support_start() const {
    if (atomic()) return atoms_.front().theta;
    return lo_;
  }
  /// Density at θ; zero at and below the support start. Atomic measures return 0.
  double density(double theta) const {
    if (atomic() || !(theta > lo_)) return 0.0;
    return density_(theta - lo_);
  }
  /// Density at θ = support_start() + u, u > 0.
  double density_offset(double u) const { return u > 0.0 ? density_(u) : 0.0; }

 private:
  static BernsteinMeasure power_density(double alpha, double lo) {
    BernsteinMeasure m;
    m.lo_ = lo;
    const double c = detail::fractional_density_constant(alpha);
    m.density_ = [alpha, c](double u) { return c * std::pow(u, -alpha); };
    return m;
  }

  std::vector<Atom> atoms_;
  double lo_ = 0.0;
  std::function<double(double)> density_;
};

/// Density value at θ for density kernels, or the atom list for atomic ones.
inline std::variant<double, std::vector<Atom>> bernstein_measure_density(const Kernel& k, double theta) {
  detail::require(theta >= 0.0, "bernstein_measure_density: theta must be >= 0");
  const auto m = BernsteinMeasure::of(k);
  if (m.atomic()) return m.atoms();
  return m.density(theta);
}

/// K is regular (bounded at 0) iff μ([1, ∞)) < ∞.
inline bool is_regular(const Kernel& k) {
  return std::visit(detail::overloaded{
                        [](const ExponentialSum&) { return true; },
                        [](const FractionalKernel&) { return false; },
                        [](const GammaKernel&) { return false; },
                        [](const ShiftedKernel&) { return true; },
                        [](const DampedKernel& d) { return is_regular(*d.base); },
                    },
                    k.variant());
}

/// Order α of the t^{α-1} singularity at 0, if the kernel is singular.
inline std::optional<double> singular_order(const Kernel& k) {
  return std::visit(detail::overloaded{
                        [](const ExponentialSum&) -> std::optional<double> { return std::nullopt; },
                        [](const FractionalKernel& f) -> std::optional<double> { return f.alpha; },
                        [](const GammaKernel& g) -> std::optional<double> { return g.alpha; },
                        [](const ShiftedKernel&) -> std::optional<double> { return std::nullopt; },
                        [](const DampedKernel& d) { return singular_order(*d.base); },
                    },
                    k.variant());
}

/// r(θ) = 1 ∧ θ^{-1/p} with p ≥ 2, or r ≡ 1.
class WeightFunction {
 public:
  static WeightFunction constant_one() { return WeightFunction(std::nullopt); }
  static WeightFunction power(double p) {
    detail::require(std::isfinite(p) && p >= 2.0, "weight function exponent p must be >= 2");
    return WeightFunction(p);
  }

  double operator()(double theta) const {
    if (!p_ || theta <= 1.0) return 1.0;
    return std::pow(theta, -1.0 / *p_);
  }

  std::optional<double> exponent() const { return p_; }
  bool is_constant_one() const { return !p_.has_value(); }

  friend bool operator==(const WeightFunction&, const WeightFunction&) = default;

 private:
  explicit WeightFunction(std::optional<double> p) : p_(p) {}
  std::optional<double> p_;
};

/// r ≡ 1 for regular kernels; otherwise p is the midpoint of [2, 1/(1-α)).
inline WeightFunction default_weight(const Kernel& k) {
  if (is_regular(k)) return WeightFunction::constant_one();
  const double alpha = *singular_order(k);
  const double p_max = 1.0 / (1.0 - alpha);
  return WeightFunction::power(std::max(2.0, 0.5 * (2.0 + p_max)));
}

/// Finite Bernstein measure {(θ_i, c_i)} with weight function r: the
/// computational stand-in for μ. Nodes are strictly ascending.
class DiscreteMeasure {
 public:
  DiscreteMeasure(std::vector<double> nodes, std::vector<double> weights, WeightFunction r)
      : nodes_(std::move(nodes)), weights_(std::move(weights)), r_(r) {
    detail::require(!nodes_.empty(), "DiscreteMeasure: at least one node required");
    detail::require(nodes_.size() == weights_.size(), "DiscreteMeasure: nodes and weights differ in length");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      detail::require(std::isfinite(nodes_[i]) && nodes_[i] >= 0.0, "DiscreteMeasure: nodes must be finite and >= 0");
      detail::require(std::isfinite(weights_[i]) && weights_[i] > 0.0,
                      "DiscreteMeasure: weights must be finite and > 0");
      detail::require(i == 0 || nodes_[i] > nodes_[i - 1], "DiscreteMeasure: nodes must be strictly ascending");
    }
    r_values_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      r_values_.push_back(r_(nodes_[i]));
      mass_ += weights_[i];
      mass_r_ += weights_[i] * r_values_.back();
    }
  }

  /// Sorts atoms and merges duplicate nodes by summing weights.
  static DiscreteMeasure from_atoms(std::vector<Atom> atoms, WeightFunction r) {
    detail::require(!atoms.empty(), "DiscreteMeasure: at least one atom required");
    std::vector<double> nodes, weights;
    for (const auto& a : atoms) {
      nodes.push_back(a.theta);
      weights.push_back(a.weight);
    }
    const auto es = std::get<ExponentialSum>(Kernel::exponential_sum(nodes, weights).variant());
    return DiscreteMeasure(es.nodes, es.weights, r);
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  const WeightFunction& weight_function() const { return r_; }
  /// r(θ_i) per node.
  const std::vector<double>& r_values() const { return r_values_; }
  double mass() const { return mass_; }
  /// ∫ r dμ
  double mass_r() const { return mass_r_; }
  /// inf supp μ
  double beta() const { return nodes_.front(); }
  bool has_zero_node() const { return nodes_.front() == 0.0; }

  /// The discretized kernel ∑ c_i e^{-θ_i t}.
  double kernel(double t) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) s += weights_[i] * std::exp(-nodes_[i] * t);
    return s;
  }

  Kernel as_kernel() const { return Kernel::exponential_sum(nodes_, weights_); }

  /// FNV-1a digest of nodes, weights and r; identifies the measure in
  /// serialized lift states.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](double x) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
      }
    };
    for (double x : nodes_) mix(x);
    for (double x : weights_) mix(x);
    mix(r_.exponent().value_or(-1.0));
    return h;
  }

  friend bool operator==(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    return a.nodes_ == b.nodes_ && a.weights_ == b.weights_ && a.r_ == b.r_;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
  WeightFunction r_;
  std::vector<double> r_values_;
  double mass_ = 0.0;
  double mass_r_ = 0.0;
};

enum class DiscretizationScheme { geometric_moment_match, user_nodes };

struct DiscretizationOptions {
  DiscretizationScheme scheme = DiscretizationScheme::geometric_moment_match;
  /// Simulation horizon T the node range is tuned to.
  double horizon = 1.0;
  /// Cell edges in θ (ascending) for the user_nodes scheme.
  std::vector<double> edges;
  /// Overrides default_weight(k).
  std::optional<WeightFunction> weight;
};

/// Offset range [ξ_min, ξ_max] of the geometric grid for n cells on horizon T.
/// ξ_max also covers 1/t_min of the error metric's integration window.
struct GeometricRange {
  double xi_min;
  double xi_max;
};

inline GeometricRange geometric_range(std::size_t n, double horizon) {
  const double nn = static_cast<double>(n);
  return {1.0 / (10.0 * horizon), std::max(nn * nn, 1.0e6) / horizon};
}

namespace detail {

struct CellMoments {
  double mass;
  double first;  // ∫ u dμ in the offset variable
};

inline CellMoments cell_moments(const BernsteinMeasure& m, double a, double b) {
  static thread_local boost::math::quadrature::tanh_sinh<double> integrator(15);
  constexpr double tol = 1e-12;
  auto f0 = [&m](double u) { return m.density_offset(u); };
  auto f1 = [&m](double u) { return u * m.density_offset(u); };
  double mass = integrator.integrate(f0, a, b, tol);
  double first = integrator.integrate(f1, a, b, tol);
  if (!std::isfinite(mass) || !std::isfinite(first)) throw NumericalFailure("discretize: cell quadrature failed");
  return {mass, first};
}

}  // namespace detail

/// Reduces μ to finitely many atoms.
///
/// Exponential sums (and shifted/damped wrappers of them) return their own
/// atoms. Density kernels are split into n cells in the offset variable
/// u = θ - inf supp μ: the first cell is [0, ξ_min), the remaining n-1 cells
/// are geometric on [ξ_min, ξ_max]. Each cell contributes one atom at its
/// barycenter carrying the cell mass; empty cells are dropped.
inline DiscreteMeasure discretize(const Kernel& k, std::size_t n, const DiscretizationOptions& opt = {}) {
  detail::require(n >= 1, "discretize: n must be >= 1");
  detail::require(std::isfinite(opt.horizon) && opt.horizon > 0.0, "discretize: horizon must be > 0");
  const WeightFunction r = opt.weight.value_or(default_weight(k));
  const auto m = BernsteinMeasure::of(k);
  if (m.atomic()) return DiscreteMeasure::from_atoms(m.atoms(), r);

  const double lo = m.support_start();
  std::vector<double> edges;  // offsets
  if (opt.scheme == DiscretizationScheme::user_nodes) {
    detail::require(opt.edges.size() == n + 1, "discretize: user_nodes needs n + 1 cell edges");
    for (std::size_t i = 0; i < opt.edges.size(); ++i) {
      detail::require(opt.edges[i] >= lo, "discretize: user edges must lie in the support");
      detail::require(i == 0 || opt.edges[i] > opt.edges[i - 1], "discretize: user edges must be ascending");
      edges.push_back(opt.edges[i] - lo);
    }
  } else {
    const auto range = geometric_range(n, opt.horizon);
    edges.push_back(0.0);
    if (n == 1) {
      edges.push_back(range.xi_max);
    } else {
      const double ratio = std::log(range.xi_max / range.xi_min) / static_cast<double>(n - 1);
      for (std::size_t j = 0; j < n; ++j) edges.push_back(range.xi_min * std::exp(ratio * static_cast<double>(j)));
      edges.back() = range.xi_max;
    }
  }

  std::vector<Atom> atoms;
  for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
    const auto cm = detail::cell_moments(m, edges[j], edges[j + 1]);
    if (!(cm.mass > 0.0)) continue;
    atoms.push_back({lo + cm.first / cm.mass, cm.mass});
  }
  if (atoms.empty()) throw NumericalFailure("discretize: every cell has zero mass");
  return DiscreteMeasure::from_atoms(std::move(atoms), r);
}

/// Relative L²(t_min, T) distance between K and ∑ c_i e^{-θ_i t},
/// t_min = 10⁻⁶ T, on a geometrically graded mesh.
inline double kernel_l2_error(const Kernel& k, const DiscreteMeasure& dm, double horizon) {
  detail::require(horizon > 0.0, "kernel_l2_error: horizon must be > 0");
  using Quad = boost::math::quadrature::gauss<double, 20>;
  const double t_min = horizon * 1e-6;
  constexpr int panels_per_decade = 16;
  const int panels = 6 * panels_per_decade;
  double num = 0.0, den = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double a = t_min * std::pow(10.0, static_cast<double>(p) / panels_per_decade);
    const double b = p + 1 == panels ? horizon : t_min * std::pow(10.0, static_cast<double>(p + 1) / panels_per_decade);
    num += Quad::integrate(
        [&](double t) {
          const double d = eval_kernel(k, t) - dm.kernel(t);
          return d * d;
        },
        a, b);
    den += Quad::integrate(
        [&](double t) {
          const double v = eval_kernel(k, t);
          return v * v;
        },
        a, b);
  }
  return std::sqrt(num / den);
}

/// β = inf supp μ = smallest node.
inline double exp_decay_rate(const DiscreteMeasure& dm) { return dm.beta(); }

/// Gaussian-lift invariant measure exists iff μ({0}) = 0 and ∫_(0,1] θ⁻¹ dμ < ∞.
/// For a finite measure only the first condition can fail.
inline bool invariant_criterion(const DiscreteMeasure& dm) { return !dm.has_zero_node(); }

inline bool invariant_criterion(const Kernel& k) {
  return std::visit(detail::overloaded{
                        [](const ExponentialSum& es) { return es.nodes.front() > 0.0; },
                        [](const FractionalKernel&) { return false; },
                        [](const GammaKernel&) { return true; },
                        // e^{-δθ} leaves μ near 0 unchanged
                        [](const ShiftedKernel& s) { return invariant_criterion(*s.base); },
                        [](const DampedKernel&) { return true; },
                    },
                    k.variant());
}

}  // namespace svlift
