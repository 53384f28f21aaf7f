#pragma once

// Asymptotic coupling of the lifted equation: Y solves the plain equation
// from y, Ȳ the controlled equation from ȳ with noise dW + v dt, where
//   v = λ σ⁻¹(μ[Y]) ∑ c_i r(m ∨ θ_i)(Y_i - Ȳ_i),
// and R = exp(-∫⟨v, dW⟩ - ½∫|v|²) is the Girsanov weight.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svlift/coefficients.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/error.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/parallel.hpp"
#include "svlift/rng.hpp"

namespace svlift {

/// ∑_{θ_i ≥ m} c_i r(θ_i)
inline double r_tail(const DiscreteMeasure& dm, double m) {
  double s = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i)
    if (dm.nodes()[i] >= m) s += dm.weights()[i] * dm.r_values()[i];
  return s;
}

/// 2L²(1 + ∫r dμ)
inline double coupling_factor(const DiscreteMeasure& dm, double L) { return 2.0 * L * L * (1.0 + dm.mass_r()); }

inline bool m_condition(const DiscreteMeasure& dm, double L, double m) {
  return coupling_factor(dm, L) * r_tail(dm, m) <= 1.0;
}

/// Smallest admissible m over {1} ∪ {next representable value above θ_i : θ_i ≥ 1};
/// the tail is piecewise constant between those points.
inline double compute_m(const DiscreteMeasure& dm, double L) {
  detail::require(std::isfinite(L) && L >= 0.0, "compute_m: L must be >= 0");
  if (m_condition(dm, L, 1.0)) return 1.0;
  for (double theta : dm.nodes()) {
    if (theta < 1.0) continue;
    const double m = std::nextafter(theta, std::numeric_limits<double>::infinity());
    if (m_condition(dm, L, m)) return m;
  }
  throw NumericalFailure("compute_m: no admissible m found");
}

/// λ = 1 + 2L²(1 + ∫r dμ) r(m)^{-2}
inline double compute_lambda(const DiscreteMeasure& dm, double L, double m) {
  detail::require(m >= 1.0, "compute_lambda: m must be >= 1");
  const double rm = dm.weight_function()(m);
  return 1.0 + coupling_factor(dm, L) / (rm * rm);
}

/// Ξ = 2λ - 1 - 2L²(1 + ∫r dμ) r(m)^{-2}
inline double compute_xi(const DiscreteMeasure& dm, double L, double m, double lambda) {
  const double rm = dm.weight_function()(m);
  const double q = coupling_factor(dm, L) / (rm * rm);
  return lambda + ((lambda - 1.0) - q);
}

struct CouplingConfig {
  double L = 0.0;
  double sigma_inv_sup = 1.0;
  double sigma_sup = 1.0;
  double m = 1.0;
  double lambda = 1.0;
  double beta = 0.0;
  double xi = 1.0;
  double r_m = 1.0;
  /// Paths whose H-norm exceeds cap_factor · max(‖y‖, ‖ȳ‖, 1) are flagged.
  double cap_factor = 1e6;

  /// ½‖σ⁻¹‖²λ d²
  double entropy_bound(double distance) const { return 0.5 * sigma_inv_sup * sigma_inv_sup * lambda * distance * distance; }
  /// r(m)^{-1/2} e^{-βt/2} d
  double decay_bound(double t, double distance) const { return std::exp(-0.5 * beta * t) * distance / std::sqrt(r_m); }
};

/// Constants from the measure and the coefficients; m may be overridden by
/// any admissible value.
inline CouplingConfig make_coupling_config(const DiscreteMeasure& dm, const Coefficients& co,
                                           std::optional<double> m_override = std::nullopt) {
  if (!co.sigma_inv || !co.sigma_inv_sup)
    throw InvalidArgument("coupling: coefficients '" + co.name + "' provide no bounded right inverse of sigma");
  CouplingConfig cc;
  cc.L = co.lipschitz_L;
  cc.sigma_inv_sup = *co.sigma_inv_sup;
  cc.sigma_sup = co.sigma_sup.value_or(std::numeric_limits<double>::infinity());
  if (m_override) {
    detail::require(*m_override >= 1.0 && m_condition(dm, cc.L, *m_override), "coupling: m override is not admissible");
    cc.m = *m_override;
  } else {
    cc.m = compute_m(dm, cc.L);
  }
  cc.lambda = compute_lambda(dm, cc.L, cc.m);
  cc.xi = compute_xi(dm, cc.L, cc.m, cc.lambda);
  cc.beta = exp_decay_rate(dm);
  cc.r_m = dm.weight_function()(cc.m);
  return cc;
}

/// c_i r(m ∨ θ_i)
inline Vector control_weights(const DiscreteMeasure& dm, double m) {
  Vector w(static_cast<Eigen::Index>(dm.size()));
  for (std::size_t i = 0; i < dm.size(); ++i)
    w[static_cast<Eigen::Index>(i)] = dm.weights()[i] * dm.weight_function()(std::max(m, dm.nodes()[i]));
  return w;
}

/// v = λ σ⁻¹(μ[Y]) ∑ c_i r(m ∨ θ_i)(Y_i - Ȳ_i)
inline Vector control_drift(const LiftState& Y, const LiftState& Ybar, const CouplingConfig& cc,
                            const Coefficients& co) {
  detail::require_same_space(Y, Ybar);
  if (!co.sigma_inv) throw InvalidArgument("control_drift: coefficients provide no sigma inverse");
  const Vector u = (Y.values() - Ybar.values()).transpose() * control_weights(Y.measure(), cc.m);
  Matrix inv(co.d, co.n);
  co.sigma_inv(mu_integral(Y), inv);
  return cc.lambda * inv * u;
}

/// Largest dt for which the exact-ou-euler control step is monotone:
/// 2 / (λ ∑ c_i r(m ∨ θ_i)) in the scalar Gaussian case.
inline double coupling_stability_dt(const DiscreteMeasure& dm, const CouplingConfig& cc) {
  return 2.0 / (cc.lambda * control_weights(dm, cc.m).sum());
}

/// Under `reference` the noise W drives Y and R reweights; under `shifted`
/// the noise drives Ȳ (so Ȳ has the law of the solution from ȳ) and Y sees
/// dW - v dt.
enum class CouplingMeasure { reference, shifted };

struct CouplingRun {
  std::vector<double> times;
  std::vector<LiftState> Y, Ybar;
  /// steps × d
  Matrix v;
  std::vector<double> logR;
  /// e^{βt}‖Y - Ȳ‖²_H
  std::vector<double> weighted_distance;
  bool flagged = false;
};

/// f ≥ 1 with a known Lipschitz constant of log f in ‖·‖_H.
class TestFunction {
 public:
  using Fn = std::function<double(const LiftState&)>;

  static TestFunction constant_one() { return TestFunction("one", [](const LiftState&) { return 1.0; }, 0.0); }

  /// 1 + min(‖y - z‖_H, c)
  static TestFunction distance(LiftState z, double c) {
    detail::require(c > 0.0, "test function: cap must be > 0");
    return TestFunction(
        "dist", [z = std::move(z), c](const LiftState& y) { return 1.0 + std::min(std::sqrt(h_norm_squared_diff(y, z)), c); },
        1.0);
  }

  /// 1 + exp(clip(⟨a, y⟩_H, -c, c))
  static TestFunction exponential(LiftState a, double c) {
    detail::require(c > 0.0, "test function: clip must be > 0");
    const double lip = norms(a).h_norm;
    return TestFunction(
        "exp", [a = std::move(a), c](const LiftState& y) { return 1.0 + std::exp(std::clamp(inner_h(a, y), -c, c)); },
        lip);
  }

  /// User function; the Lipschitz constant of log f is mandatory.
  static TestFunction custom(std::string id, Fn f, std::optional<double> log_lipschitz) {
    if (!log_lipschitz || !(*log_lipschitz >= 0.0))
      throw InvalidArgument("test function '" + id + "': the Lipschitz constant of log f must be supplied");
    return TestFunction(std::move(id), std::move(f), *log_lipschitz);
  }

  const std::string& id() const { return id_; }
  double log_lipschitz() const { return lip_; }
  double operator()(const LiftState& y) const { return f_(y); }

 private:
  TestFunction(std::string id, Fn f, double lip) : id_(std::move(id)), f_(std::move(f)), lip_(lip) {}

  static double h_norm_squared_diff(const LiftState& a, const LiftState& b) {
    detail::require_same_space(a, b);
    const auto& dm = a.measure();
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.nodes(); ++i)
      s += dm.weights()[i] * dm.r_values()[i] * (a.values().row(i) - b.values().row(i)).squaredNorm();
    return s;
  }

  std::string id_;
  Fn f_;
  double lip_;
};

namespace detail {

struct CoupledStepper {
  const Stepper& st;
  const Coefficients& co;
  const DiscreteMeasure& dm;
  const CouplingConfig& cc;
  CouplingMeasure measure;
  Vector c, wm, wh;
  double cap;

  CoupledStepper(const Stepper& s, const Coefficients& co_, const DiscreteMeasure& dm_, const CouplingConfig& cc_,
                 CouplingMeasure meas, double cap_)
      : st(s), co(co_), dm(dm_), cc(cc_), measure(meas), cap(cap_) {
    c = as_vector(dm.weights());
    wm = control_weights(dm, cc.m);
    wh = c.cwiseProduct(as_vector(dm.r_values()));
  }

  double h2(const Matrix& y) const { return wh.dot(y.rowwise().squaredNorm()); }

  // obs(k, Y, Ybar, logR, v) at k = 0 (v empty) and after each step
  // (v is the control used in that step). Returns false when flagged.
  template <class Obs>
  bool run(Matrix& Y, Matrix& Yb, std::size_t steps, std::uint64_t seed, std::uint64_t path, Obs&& obs) const {
    const PathNormals g(seed, path, Stream::brownian);
    Vector x = Y.transpose() * c, xb = Yb.transpose() * c;
    Vector b(co.n), bb(co.n), s(co.n), v(co.d), u(co.n);
    Matrix sig(co.n, co.d), sigb(co.n, co.d), inv(co.d, co.n);
    StepNoise drawn, other;
    double logR = 0.0;
    obs(std::size_t{0}, Y, Yb, logR, v.setZero());
    const double cap2 = cap * cap;
    for (std::size_t k = 0; k < steps; ++k) {
      co.b(x, b);
      co.sigma(x, sig);
      co.b(xb, bb);
      co.sigma(xb, sigb);
      co.sigma_inv(x, inv);
      u.noalias() = (Y - Yb).transpose() * wm;
      v.noalias() = cc.lambda * (inv * u);
      st.draw(g, k, drawn);
      other = drawn;
      const StepNoise* nY = &drawn;
      const StepNoise* nYb = &other;
      if (measure == CouplingMeasure::reference) {
        st.shift(other, v);
      } else {
        st.shift(other, -v);
        nY = &other;
        nYb = &drawn;
      }
      logR += -v.dot(nY->dW) - 0.5 * v.squaredNorm() * st.dt();
      st.advance(Y, b, sig, *nY, s);
      st.advance(Yb, bb, sigb, *nYb, s);
      if (blown_up(Y) || blown_up(Yb) || !(h2(Y) <= cap2) || !(h2(Yb) <= cap2)) return false;
      x.noalias() = Y.transpose() * c;
      xb.noalias() = Yb.transpose() * c;
      obs(k + 1, Y, Yb, logR, v);
    }
    return true;
  }
};

inline double coupling_cap(const LiftState& y, const LiftState& ybar, const CouplingConfig& cc) {
  return cc.cap_factor * std::max({norms(y).h_norm, norms(ybar).h_norm, 1.0});
}

}  // namespace detail

/// One coupled path with full trajectories.
inline CouplingRun simulate_coupled_path(const Coefficients& co, const LiftState& y, const LiftState& ybar,
                                         const CouplingConfig& cc, const SimConfig& sim, std::uint64_t path = 0,
                                         CouplingMeasure measure = CouplingMeasure::reference) {
  sim.validate();
  detail::check_state(co, y);
  detail::require_same_space(y, ybar);
  if (!co.sigma_inv) throw InvalidArgument("simulate_coupled: coefficients provide no sigma inverse");
  const auto& dm = y.measure();
  const Stepper st(dm, sim.scheme, sim.dt, co.n, co.d);
  const detail::CoupledStepper cs(st, co, dm, cc, measure, detail::coupling_cap(y, ybar, cc));
  CouplingRun run;
  const std::size_t K = sim.steps();
  run.v.setZero(static_cast<Eigen::Index>(K), co.d);
  Matrix Y = y.values(), Yb = ybar.values();
  const bool ok = cs.run(Y, Yb, K, sim.seed, path,
                         [&](std::size_t k, const Matrix& a, const Matrix& b, double logR, const Vector& v) {
                           const double t = static_cast<double>(k) * sim.dt;
                           run.times.push_back(t);
                           run.Y.emplace_back(y.measure_ptr(), a);
                           run.Ybar.emplace_back(y.measure_ptr(), b);
                           run.logR.push_back(logR);
                           run.weighted_distance.push_back(std::exp(cc.beta * t) * cs.h2(a - b));
                           if (k > 0) run.v.row(static_cast<Eigen::Index>(k - 1)) = v.transpose();
                         });
  run.flagged = !ok;
  return run;
}

/// Per-path records of a coupled ensemble at the recorded times.
struct CouplingEnsemble {
  std::vector<double> times;
  CouplingMeasure measure = CouplingMeasure::reference;
  /// paths × times
  Matrix logR;
  Matrix distance;
  /// One paths × times matrix per test function, evaluated at Y and Ȳ.
  std::vector<Matrix> f_y, f_ybar;
  std::vector<std::string> f_ids;
  std::vector<char> flagged;
  double initial_distance = 0.0;
  std::size_t flagged_count = 0;
};

/// Independent coupled paths recorded at `record_times` (grid points).
inline CouplingEnsemble simulate_coupled(const Coefficients& co, const LiftState& y, const LiftState& ybar,
                                         const CouplingConfig& cc, const SimConfig& sim,
                                         const std::vector<double>& record_times,
                                         CouplingMeasure measure = CouplingMeasure::reference,
                                         const std::vector<TestFunction>& fs = {}) {
  sim.validate();
  detail::check_state(co, y);
  detail::require_same_space(y, ybar);
  if (!co.sigma_inv) throw InvalidArgument("simulate_coupled: coefficients provide no sigma inverse");
  const auto& dm = y.measure();
  const std::size_t K = sim.steps();
  std::vector<Eigen::Index> slot(K + 1, -1);
  CouplingEnsemble ens;
  ens.measure = measure;
  for (double t : record_times) {
    const double q = t / sim.dt;
    detail::require(t >= 0.0 && std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, q) && std::round(q) <= K,
                    "simulate_coupled: record time " + std::to_string(t) + " is not on the grid");
    slot[static_cast<std::size_t>(std::llround(q))] = static_cast<Eigen::Index>(ens.times.size());
    ens.times.push_back(t);
  }
  const auto P = static_cast<Eigen::Index>(sim.n_paths);
  const auto T = static_cast<Eigen::Index>(ens.times.size());
  ens.logR.setZero(P, T);
  ens.distance.setZero(P, T);
  ens.f_y.assign(fs.size(), Matrix::Zero(P, T));
  ens.f_ybar.assign(fs.size(), Matrix::Zero(P, T));
  for (const auto& f : fs) ens.f_ids.push_back(f.id());
  ens.flagged.assign(sim.n_paths, 0);
  ens.initial_distance = std::sqrt(h_norm_squared(LiftState(y.measure_ptr(), y.values() - ybar.values())));

  const Stepper st(dm, sim.scheme, sim.dt, co.n, co.d);
  const detail::CoupledStepper cs(st, co, dm, cc, measure, detail::coupling_cap(y, ybar, cc));
  parallel_chunks(sim.n_paths, sim.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    Matrix Y, Yb;
    for (std::size_t p = begin; p < end; ++p) {
      Y = y.values();
      Yb = ybar.values();
      const auto pp = static_cast<Eigen::Index>(p);
      const bool ok = cs.run(Y, Yb, K, sim.seed, p,
                             [&](std::size_t k, const Matrix& a, const Matrix& b, double logR, const Vector&) {
                               const Eigen::Index s = slot[k];
                               if (s < 0) return;
                               ens.logR(pp, s) = logR;
                               ens.distance(pp, s) = std::sqrt(cs.h2(a - b));
                               if (fs.empty()) return;
                               const LiftState la(y.measure_ptr(), a), lb(y.measure_ptr(), b);
                               for (std::size_t f = 0; f < fs.size(); ++f) {
                                 ens.f_y[f](pp, s) = fs[f](la);
                                 ens.f_ybar[f](pp, s) = fs[f](lb);
                               }
                             });
      ens.flagged[p] = ok ? 0 : 1;
    }
  });
  for (char f : ens.flagged) ens.flagged_count += f ? 1 : 0;
  return ens;
}

// ---------------------------------------------------------------- estimators

struct CurvePoint {
  double t = 0.0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;
  bool ok = true;
};

struct EntropyReport {
  std::vector<CurvePoint> curve;
  double bound = 0.0;
  /// E_P[R_t] (reference) or E_Q[1/R_t] (shifted); both equal 1.
  std::vector<CurvePoint> martingale;
  double min_ess = 0.0;
  bool degenerate = false;
  bool pass = true;
  bool martingale_pass = true;
};

struct DecayReport {
  std::vector<CurvePoint> curve;
  double slope = 0.0;
  double slope_bound = 0.0;
  bool slope_ok = true;
  bool skipped = false;
  std::string note;
  double min_ess = 0.0;
  bool degenerate = false;
  bool pass = true;
};

namespace detail {

struct MeanSe {
  double mean;
  double se;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  const double N = static_cast<double>(v.size());
  if (v.size() < 2) return {v.empty() ? 0.0 : v[0], std::numeric_limits<double>::infinity()};
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / N;
  double q = 0.0;
  for (double x : v) q += (x - m) * (x - m);
  return {m, std::sqrt(q / (N - 1.0) / N)};
}

// column t over unflagged paths, mapped through fn(path, t)
template <class Fn>
std::vector<double> column(const CouplingEnsemble& e, Eigen::Index t, Fn&& fn) {
  std::vector<double> out;
  for (Eigen::Index p = 0; p < e.logR.rows(); ++p)
    if (!e.flagged[static_cast<std::size_t>(p)]) out.push_back(fn(p, t));
  return out;
}

// Effective sample size of the weights used for expectations under the other measure.
inline double ess(const CouplingEnsemble& e, Eigen::Index t) {
  double s1 = 0.0, s2 = 0.0;
  for (Eigen::Index p = 0; p < e.logR.rows(); ++p) {
    if (e.flagged[static_cast<std::size_t>(p)]) continue;
    const double l = e.measure == CouplingMeasure::reference ? e.logR(p, t) : -e.logR(p, t);
    const double w = std::exp(l);
    s1 += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s1 * s1 / s2 : 0.0;
}

inline constexpr double kMinEss = 100.0;

}  // namespace detail

/// E[R_t log R_t] per recorded time against ½‖σ⁻¹‖²λ‖y - ȳ‖².
/// Reference runs average R log R; shifted runs average log R (same quantity).
inline EntropyReport entropy_estimate(const CouplingEnsemble& e, const CouplingConfig& cc, double sigmas = 3.0) {
  EntropyReport rep;
  rep.bound = cc.entropy_bound(e.initial_distance);
  rep.min_ess = std::numeric_limits<double>::infinity();
  const bool ref = e.measure == CouplingMeasure::reference;
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(e.times.size()); ++t) {
    const auto rlogr = detail::column(e, t, [&](Eigen::Index p, Eigen::Index s) {
      const double l = e.logR(p, s);
      return ref ? std::exp(l) * l : l;
    });
    const auto w = detail::column(e, t, [&](Eigen::Index p, Eigen::Index s) {
      return std::exp(ref ? e.logR(p, s) : -e.logR(p, s));
    });
    const auto a = detail::mean_se(rlogr);
    const auto b = detail::mean_se(w);
    CurvePoint cp{e.times[static_cast<std::size_t>(t)], a.mean, a.se, rep.bound, a.mean <= rep.bound + sigmas * a.se};
    CurvePoint mp{cp.t, b.mean, b.se, 1.0, std::abs(b.mean - 1.0) <= sigmas * b.se + 1e-12};
    rep.curve.push_back(cp);
    rep.martingale.push_back(mp);
    rep.pass = rep.pass && cp.ok;
    rep.martingale_pass = rep.martingale_pass && mp.ok;
    rep.min_ess = std::min(rep.min_ess, detail::ess(e, t));
  }
  if (ref) rep.degenerate = rep.min_ess < detail::kMinEss;
  return rep;
}

/// E_Q‖Y_t - Ȳ_t‖_H per recorded time against r(m)^{-1/2}e^{-βt/2}‖y - ȳ‖,
/// plus the least-squares slope of log E_Q‖Y_t - Ȳ_t‖ over t ∈ [fit_from, fit_to].
inline DecayReport decay_estimate(const CouplingEnsemble& e, const CouplingConfig& cc, double fit_from = 1.0,
                                  double fit_to = std::numeric_limits<double>::infinity(), double sigmas = 3.0) {
  DecayReport rep;
  rep.min_ess = std::numeric_limits<double>::infinity();
  const bool ref = e.measure == CouplingMeasure::reference;
  std::vector<double> ft, fy;
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(e.times.size()); ++t) {
    const double time = e.times[static_cast<std::size_t>(t)];
    const auto vals = detail::column(e, t, [&](Eigen::Index p, Eigen::Index s) {
      return ref ? std::exp(e.logR(p, s)) * e.distance(p, s) : e.distance(p, s);
    });
    const auto a = detail::mean_se(vals);
    const double bound = cc.decay_bound(time, e.initial_distance);
    CurvePoint cp{time, a.mean, a.se, bound, a.mean <= bound + sigmas * a.se};
    rep.curve.push_back(cp);
    if (ref) rep.min_ess = std::min(rep.min_ess, detail::ess(e, t));
    if (time >= fit_from && time <= fit_to && a.mean > 0.0) {
      ft.push_back(time);
      fy.push_back(std::log(a.mean));
    }
  }
  rep.degenerate = ref && rep.min_ess < detail::kMinEss;
  rep.slope_bound = -0.5 * cc.beta + 0.1;
  if (cc.beta == 0.0) {
    rep.skipped = true;
    rep.note = "beta = inf supp mu = 0: no exponential decay is claimed for this case; decay assertion skipped";
  }
  if (ft.size() >= 2) {
    const double n = static_cast<double>(ft.size());
    double mt = 0.0, my = 0.0;
    for (std::size_t i = 0; i < ft.size(); ++i) {
      mt += ft[i] / n;
      my += fy[i] / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ft.size(); ++i) {
      sxy += (ft[i] - mt) * (fy[i] - my);
      sxx += (ft[i] - mt) * (ft[i] - mt);
    }
    rep.slope = sxy / sxx;
    rep.slope_ok = rep.slope <= rep.slope_bound;
  }
  if (!rep.skipped) {
    for (const auto& cp : rep.curve) rep.pass = rep.pass && cp.ok;
    rep.pass = rep.pass && rep.slope_ok;
  }
  return rep;
}

struct HarnackPoint {
  double t = 0.0;
  std::string f_id;
  /// MC estimate of P_t log f(ȳ)
  double lhs = 0.0;
  double lhs_se = 0.0;
  /// log P_t f(y)
  double log_pf = 0.0;
  double log_pf_se = 0.0;
  double entropy_term = 0.0;
  double decay_term = 0.0;
  double rhs = 0.0;
  double rhs_se = 0.0;
  /// (rhs - lhs) / combined standard error
  double margin_sigmas = 0.0;
  bool pass = true;
};

struct HarnackReport {
  std::vector<HarnackPoint> points;
  /// y = ȳ: empirical P_t log f < log P_t f on the same samples, per non-constant f and t.
  bool jensen_checked = false;
  bool jensen_strict = true;
  bool pass = true;
};

/// Checks P_t log f(ȳ) ≤ log P_t f(y) + ½‖σ⁻¹‖²λ‖y-ȳ‖² + r(m)^{-1/2}e^{-βt/2}‖y-ȳ‖ Lip(log f)
/// with plain ensembles from y and from ȳ on independent streams.
inline HarnackReport harnack_check(const std::vector<TestFunction>& fs, const LiftState& y, const LiftState& ybar,
                                   const std::vector<double>& times, const Coefficients& co, const CouplingConfig& cc,
                                   const SimConfig& sim, double sigmas = 3.0) {
  detail::require(!fs.empty(), "harnack_check: no test functions");
  detail::require_same_space(y, ybar);
  const auto F = static_cast<Eigen::Index>(fs.size());
  const auto dmp = y.measure_ptr();
  EnsembleOptions opt;
  opt.record_times = times;
  opt.statistic_dim = 2 * F;
  opt.statistic = [&fs, &dmp, F](const Matrix& yk, const Vector&, Vector& out) {
    const LiftState s(dmp, yk);
    for (Eigen::Index f = 0; f < F; ++f) {
      const double v = fs[static_cast<std::size_t>(f)](s);
      out[f] = v;
      out[F + f] = std::log(v);
    }
  };
  const double dist = std::sqrt(h_norm_squared(LiftState(dmp, y.values() - ybar.values())));
  const bool same = dist == 0.0;
  const auto from_y = simulate_ensemble(co, y, sim, opt);
  opt.stream = same ? Stream::brownian : Stream::brownian_alt;
  const auto from_ybar = same ? from_y : simulate_ensemble(co, ybar, sim, opt);

  HarnackReport rep;
  rep.jensen_checked = same;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const auto t = static_cast<Eigen::Index>(ti);
    for (Eigen::Index f = 0; f < F; ++f) {
      const auto& fn = fs[static_cast<std::size_t>(f)];
      HarnackPoint hp;
      hp.t = times[ti];
      hp.f_id = fn.id();
      hp.lhs = from_ybar.mean(t, F + f);
      hp.lhs_se = from_ybar.stderr_mean(t, F + f);
      const double pf = from_y.mean(t, f);
      hp.log_pf = std::log(pf);
      hp.log_pf_se = from_y.stderr_mean(t, f) / pf;
      hp.entropy_term = cc.entropy_bound(dist);
      hp.decay_term = cc.decay_bound(hp.t, dist) * fn.log_lipschitz();
      hp.rhs = hp.log_pf + hp.entropy_term + hp.decay_term;
      hp.rhs_se = hp.log_pf_se;
      const double se = std::sqrt(hp.lhs_se * hp.lhs_se + hp.rhs_se * hp.rhs_se);
      hp.margin_sigmas = se > 0.0 ? (hp.rhs - hp.lhs) / se : (hp.rhs >= hp.lhs ? std::numeric_limits<double>::infinity()
                                                                                 : -std::numeric_limits<double>::infinity());
      hp.pass = hp.lhs <= hp.rhs + sigmas * se;
      if (same && from_y.var(t, f) > 0.0) rep.jensen_strict = rep.jensen_strict && hp.lhs < hp.log_pf;
      rep.pass = rep.pass && hp.pass;
      rep.points.push_back(hp);
    }
  }
  if (same) rep.pass = rep.pass && rep.jensen_strict;
  return rep;
}

}  // namespace svlift
