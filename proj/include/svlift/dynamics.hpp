#pragma once

// Time stepping of the lifted equation
//   dY(θ) = -θY(θ)dt + b(μ[Y])dt + σ(μ[Y])dW,   X = μ[Y],
// the direct Volterra sum for the same grid and noise, stochastic
// convolutions, Picard iteration and Monte-Carlo ensembles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "svlift/coefficients.hpp"
#include "svlift/error.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/parallel.hpp"
#include "svlift/rng.hpp"

namespace svlift {

/// exact_ou_euler: y ← e^{-θdt}y + φ(θ)b + e^{-θdt}σΔW
/// full_euler:     y ← y + (-θy + b)dt + σΔW
/// exact_ou:       y ← e^{-θdt}y + φ(θ)b + σ∫e^{-θ(dt-s)}dW_s, the noise integral
///                 drawn jointly with ΔW (exact in law for frozen coefficients)
enum class Scheme { exact_ou_euler, full_euler, exact_ou };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::exact_ou_euler: return "exact-ou-euler";
    case Scheme::full_euler: return "full-euler";
    case Scheme::exact_ou: return "exact-ou";
  }
  return "?";
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "exact-ou-euler") return Scheme::exact_ou_euler;
  if (s == "full-euler") return Scheme::full_euler;
  if (s == "exact-ou") return Scheme::exact_ou;
  throw InvalidArgument("unknown scheme '" + s + "' (expected exact-ou-euler, full-euler or exact-ou)");
}

struct SimConfig {
  double T = 1.0;
  double dt = 1e-2;
  std::size_t n_paths = 1;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::exact_ou_euler;
  /// 0 = hardware concurrency
  std::size_t threads = 0;

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

  void validate() const {
    detail::require(std::isfinite(T) && T > 0.0, "SimConfig: T must be > 0");
    detail::require(std::isfinite(dt) && dt > 0.0, "SimConfig: dt must be > 0");
    const double q = T / dt;
    detail::require(std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, q) && std::round(q) >= 1.0,
                    "SimConfig: dt must divide T (T / dt is not an integer)");
    detail::require(n_paths >= 1, "SimConfig: n_paths must be >= 1");
  }
};

/// Noise of one step: ΔW (d) and, for exact_ou, the per-node OU integrals (N×d).
struct StepNoise {
  Vector dW;
  Matrix Z;
  Vector buffer;
};

namespace detail {

inline double drift_factor(double theta, double dt) { return theta == 0.0 ? dt : -std::expm1(-theta * dt) / theta; }

}  // namespace detail

/// Precomputed per-node factors of one scheme on one measure and step size.
class Stepper {
 public:
  Stepper(const DiscreteMeasure& dm, Scheme scheme, double dt, Eigen::Index n, Eigen::Index d)
      : scheme_(scheme), dt_(dt), n_(n), d_(d) {
    detail::require(dt > 0.0, "step: dt must be > 0");
    const auto N = static_cast<Eigen::Index>(dm.size());
    decay_.resize(N);
    phi_.resize(N);
    theta_.resize(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      theta_[i] = dm.nodes()[i];
      decay_[i] = std::exp(-theta_[i] * dt);
      phi_[i] = detail::drift_factor(theta_[i], dt);
    }
    if (scheme == Scheme::exact_ou) build_ou_factor();
  }

  Scheme scheme() const { return scheme_; }
  double dt() const { return dt_; }
  Eigen::Index nodes() const { return decay_.size(); }
  const Vector& decay() const { return decay_; }
  const Vector& drift_factor() const { return phi_; }

  /// Draws the noise of step `step` from a path's generator.
  void draw(const PathNormals& g, std::uint64_t step, StepNoise& out) const {
    out.dW.resize(d_);
    if (scheme_ != Scheme::exact_ou) {
      out.buffer.resize(d_);
      g.normals(step, {out.buffer.data(), static_cast<std::size_t>(d_)});
      out.dW = out.buffer * std::sqrt(dt_);
      return;
    }
    const Eigen::Index m = ou_factor_.rows();
    out.buffer.resize(m * d_);
    out.Z.resize(nodes(), d_);
    g.normals(step, {out.buffer.data(), static_cast<std::size_t>(m * d_)});
    for (Eigen::Index l = 0; l < d_; ++l) {
      const Vector joint = ou_factor_ * out.buffer.segment(l * m, m);
      out.dW[l] = joint[0];
      out.Z.col(l) = joint.tail(nodes());
    }
  }

  /// Noise seen by a copy driven by dW + v dt.
  void shift(StepNoise& noise, const Vector& v) const {
    noise.dW += v * dt_;
    if (scheme_ == Scheme::exact_ou) noise.Z += phi_ * v.transpose();
  }

  /// One step of the scheme with frozen b and σ. `s` is an n-vector scratch.
  void advance(Matrix& y, const Vector& b, const Matrix& sigma, const StepNoise& noise, Vector& s) const {
    switch (scheme_) {
      case Scheme::exact_ou_euler:
        s.noalias() = sigma * noise.dW;
        for (Eigen::Index l = 0; l < n_; ++l)
          y.col(l) = decay_.cwiseProduct(y.col(l) + Vector::Constant(nodes(), s[l])) + phi_ * b[l];
        break;
      case Scheme::full_euler:
        s.noalias() = sigma * noise.dW;
        for (Eigen::Index l = 0; l < n_; ++l)
          y.col(l) += (-theta_.cwiseProduct(y.col(l)) + Vector::Constant(nodes(), b[l])) * dt_ +
                      Vector::Constant(nodes(), s[l]);
        break;
      case Scheme::exact_ou:
        for (Eigen::Index l = 0; l < n_; ++l) y.col(l) = decay_.cwiseProduct(y.col(l)) + phi_ * b[l];
        y.noalias() += noise.Z * sigma.transpose();
        break;
    }
  }

 private:
  // Covariance of (ΔW, ∫e^{-θ_i(dt-s)}dW_s) for one Brownian component,
  // factored as F Fᵀ through a symmetric eigendecomposition of the
  // unit-diagonal rescaling.
  void build_ou_factor() {
    const Eigen::Index N = nodes();
    Matrix C(N + 1, N + 1);
    C(0, 0) = dt_;
    for (Eigen::Index i = 0; i < N; ++i) {
      C(0, i + 1) = C(i + 1, 0) = phi_[i];
      for (Eigen::Index j = 0; j <= i; ++j)
        C(i + 1, j + 1) = C(j + 1, i + 1) = detail::drift_factor(theta_[i] + theta_[j], dt_);
    }
    const Vector scale = C.diagonal().cwiseSqrt();
    const Matrix unit = scale.cwiseInverse().asDiagonal() * C * scale.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> es(unit);
    if (es.info() != Eigen::Success) throw NumericalFailure("exact-ou: noise covariance factorization failed");
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    ou_factor_ = scale.asDiagonal() * es.eigenvectors() * root.asDiagonal();
  }

  Scheme scheme_;
  double dt_;
  Eigen::Index n_, d_;
  Vector theta_, decay_, phi_;
  Matrix ou_factor_;
};

/// One step of exact_ou_euler or full_euler with given b, σ and ΔW.
inline LiftState step_lift(const LiftState& y, const Vector& b_val, const Matrix& sigma_val, const Vector& dW, double dt,
                           Scheme scheme = Scheme::exact_ou_euler) {
  detail::require(scheme != Scheme::exact_ou, "step_lift: exact-ou needs the joint OU noise; use Stepper");
  detail::require(b_val.size() == y.dim() && sigma_val.rows() == y.dim() && sigma_val.cols() == dW.size(),
                  "step_lift: dimension mismatch");
  Stepper st(y.measure(), scheme, dt, y.dim(), dW.size());
  StepNoise noise{dW, {}, {}};
  Matrix v = y.values();
  Vector s(y.dim());
  st.advance(v, b_val, sigma_val, noise, s);
  return {y.measure_ptr(), std::move(v)};
}

inline constexpr double kBlowUp = 1e300;

struct SimPath {
  std::vector<double> times;
  /// Y at every stored step (empty unless requested).
  std::vector<LiftState> lift;
  /// (steps+1) × n, row k = μ[Y_k].
  Matrix x;
  /// steps × d, row k = ΔW_k.
  Matrix dW;
  bool aborted = false;
  std::string diagnostic;
};

namespace detail {

inline bool blown_up(const Matrix& y) { return !(y.cwiseAbs().maxCoeff() <= kBlowUp); }

/// Runs one path; obs(k, y, x) is called at k = 0 and after every step,
/// noise_obs(k, noise) after every draw. Returns false on blow-up.
template <class Obs, class NoiseObs>
bool run_path(const Stepper& st, const Coefficients& co, const DiscreteMeasure& dm, Matrix& y, std::size_t steps,
              std::uint64_t seed, std::uint64_t path, Obs&& obs, NoiseObs&& noise_obs,
              Stream stream = Stream::brownian) {
  const PathNormals g(seed, path, stream);
  const auto c = as_vector(dm.weights());
  Vector x = y.transpose() * c;
  Vector b(co.n), s(co.n);
  Matrix sig(co.n, co.d);
  StepNoise noise;
  obs(std::size_t{0}, y, x);
  for (std::size_t k = 0; k < steps; ++k) {
    co.b(x, b);
    co.sigma(x, sig);
    st.draw(g, k, noise);
    noise_obs(k, noise);
    st.advance(y, b, sig, noise, s);
    if (blown_up(y)) return false;
    x.noalias() = y.transpose() * c;
    obs(k + 1, y, x);
  }
  return true;
}

inline void check_state(const Coefficients& co, const LiftState& y0) {
  co.validate();
  detail::require(y0.dim() == co.n, "initial state dimension differs from the coefficients' n");
}

}  // namespace detail

/// One path of the lifted equation, left-point coefficients, reproducible
/// from (cfg.seed, path).
inline SimPath simulate_lift(const Coefficients& co, const LiftState& y0, const SimConfig& cfg, std::uint64_t path = 0,
                             bool store_lift = true) {
  cfg.validate();
  detail::check_state(co, y0);
  const auto& dm = y0.measure();
  const std::size_t K = cfg.steps();
  const Stepper st(dm, cfg.scheme, cfg.dt, co.n, co.d);
  SimPath out;
  out.times.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) out.times[k] = static_cast<double>(k) * cfg.dt;
  out.x.setZero(static_cast<Eigen::Index>(K + 1), co.n);
  out.dW.setZero(static_cast<Eigen::Index>(K), co.d);
  Matrix y = y0.values();
  std::size_t last = 0;
  const bool ok = detail::run_path(
      st, co, dm, y, K, cfg.seed, path,
      [&](std::size_t k, const Matrix& yk, const Vector& xk) {
        out.x.row(static_cast<Eigen::Index>(k)) = xk.transpose();
        if (store_lift) out.lift.emplace_back(y0.measure_ptr(), yk);
        last = k;
      },
      [&](std::size_t k, const StepNoise& nz) { out.dW.row(static_cast<Eigen::Index>(k)) = nz.dW.transpose(); });
  if (!ok) {
    out.aborted = true;
    out.diagnostic = "state exceeded 1e300 in magnitude after step " + std::to_string(last + 1) + " (t = " +
                     std::to_string(static_cast<double>(last + 1) * cfg.dt) + ")";
    const auto kept = static_cast<Eigen::Index>(last + 1);
    out.times.resize(last + 1);
    out.x.conservativeResize(kept, Eigen::NoChange);
    out.dW.conservativeResize(std::min(kept, out.dW.rows()), Eigen::NoChange);
  }
  return out;
}

/// Power sums of a per-path statistic at recorded times, mergeable by addition.
struct PowerSums {
  double count = 0.0;
  Matrix s1, s2, s3, s4;

  void resize(Eigen::Index times, Eigen::Index dim) {
    s1.setZero(times, dim);
    s2.setZero(times, dim);
    s3.setZero(times, dim);
    s4.setZero(times, dim);
  }
  void add_row(Eigen::Index t, const Vector& v) {
    const Eigen::ArrayXd a = v.array();
    s1.row(t).array() += a.transpose();
    s2.row(t).array() += (a * a).transpose();
    s3.row(t).array() += (a * a * a).transpose();
    s4.row(t).array() += (a * a * a * a).transpose();
  }
  void merge(const PowerSums& o) {
    count += o.count;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
  }
};

struct EnsembleStats {
  std::vector<double> t;
  Matrix mean;
  /// Unbiased sample variance.
  Matrix var;
  /// Standard error of the mean.
  Matrix stderr_mean;
  /// Large-sample standard error of the variance estimate.
  Matrix stderr_var;
  std::size_t n_paths = 0;
  std::size_t aborted = 0;

  Eigen::Index index_of(double time) const {
    for (std::size_t i = 0; i < t.size(); ++i)
      if (std::abs(t[i] - time) <= 1e-9 * std::max(1.0, time)) return static_cast<Eigen::Index>(i);
    throw InvalidArgument("time " + std::to_string(time) + " is not on the recorded grid");
  }
};

inline EnsembleStats finalize(const PowerSums& ps, const std::vector<double>& times, std::size_t aborted) {
  EnsembleStats e;
  e.t = times;
  const double N = ps.count;
  e.n_paths = static_cast<std::size_t>(N);
  e.aborted = aborted;
  detail::require(N >= 2.0, "ensemble: at least two finished paths are needed for statistics");
  const Eigen::ArrayXXd m = ps.s1.array() / N;
  const Eigen::ArrayXXd e2 = ps.s2.array() / N, e3 = ps.s3.array() / N, e4 = ps.s4.array() / N;
  const Eigen::ArrayXXd mu2 = (e2 - m * m).max(0.0);
  const Eigen::ArrayXXd mu4 = (e4 - 4.0 * m * e3 + 6.0 * m * m * e2 - 3.0 * m * m * m * m).max(0.0);
  e.mean = m.matrix();
  e.var = (mu2 * (N / (N - 1.0))).matrix();
  e.stderr_mean = (e.var.array() / N).sqrt().matrix();
  e.stderr_var = ((mu4 - mu2 * mu2).max(0.0) / N).sqrt().matrix();
  return e;
}

using InitialSampler = std::function<void(std::uint64_t path, Matrix& y0)>;
using PathStatistic = std::function<void(const Matrix& y, const Vector& x, Vector& out)>;

struct EnsembleOptions {
  /// Record every `stride` steps (the final step is always recorded).
  std::size_t stride = 1;
  /// Per-path quantity to average; defaults to X = μ[Y].
  PathStatistic statistic;
  Eigen::Index statistic_dim = 0;
  /// When non-empty, record exactly at these grid times instead of by stride.
  std::vector<double> record_times;
  Stream stream = Stream::brownian;
};

/// Monte-Carlo moments over cfg.n_paths paths. Paths are processed in fixed
/// chunks whose sums are merged in chunk order, so results do not depend on
/// the thread count. Blown-up paths are excluded and counted.
inline EnsembleStats simulate_ensemble(const Coefficients& co, std::shared_ptr<const DiscreteMeasure> dm,
                                       const InitialSampler& init, const SimConfig& cfg,
                                       const EnsembleOptions& opt = {}) {
  cfg.validate();
  co.validate();
  detail::require(opt.stride >= 1, "ensemble: stride must be >= 1");
  const std::size_t K = cfg.steps();
  const Stepper st(*dm, cfg.scheme, cfg.dt, co.n, co.d);
  std::vector<double> times;
  std::vector<Eigen::Index> slot(K + 1, -1);
  if (opt.record_times.empty()) {
    for (std::size_t k = 0; k <= K; ++k)
      if (k % opt.stride == 0 || k == K) {
        slot[k] = static_cast<Eigen::Index>(times.size());
        times.push_back(static_cast<double>(k) * cfg.dt);
      }
  } else {
    for (double t : opt.record_times) {
      const double q = t / cfg.dt;
      detail::require(t >= 0.0 && std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, q) && std::round(q) <= K,
                      "ensemble: record time " + std::to_string(t) + " is not on the grid");
      const auto k = static_cast<std::size_t>(std::llround(q));
      detail::require(slot[k] < 0, "ensemble: record times must be distinct");
      slot[k] = static_cast<Eigen::Index>(times.size());
      times.push_back(t);
    }
  }
  const Eigen::Index dim = opt.statistic ? opt.statistic_dim : co.n;
  detail::require(dim >= 1, "ensemble: statistic dimension must be >= 1");

  const std::size_t chunks = chunk_count(cfg.n_paths);
  std::vector<PowerSums> partial(chunks);
  std::vector<std::size_t> aborted(chunks, 0);
  parallel_chunks(cfg.n_paths, cfg.threads, [&](std::size_t ch, std::size_t begin, std::size_t end) {
    PowerSums local, path_sums;
    local.resize(static_cast<Eigen::Index>(times.size()), dim);
    path_sums.resize(static_cast<Eigen::Index>(times.size()), dim);
    Matrix y(static_cast<Eigen::Index>(dm->size()), co.n);
    Vector stat(dim);
    for (std::size_t p = begin; p < end; ++p) {
      init(p, y);
      path_sums.resize(static_cast<Eigen::Index>(times.size()), dim);
      const bool ok = detail::run_path(
          st, co, *dm, y, K, cfg.seed, p,
          [&](std::size_t k, const Matrix& yk, const Vector& xk) {
            if (slot[k] < 0) return;
            if (opt.statistic) opt.statistic(yk, xk, stat);
            else stat = xk;
            path_sums.add_row(slot[k], stat);
          },
          [](std::size_t, const StepNoise&) {}, opt.stream);
      if (!ok) {
        ++aborted[ch];
        continue;
      }
      path_sums.count = 1.0;
      local.merge(path_sums);
    }
    partial[ch] = std::move(local);
  });
  PowerSums total;
  total.resize(static_cast<Eigen::Index>(times.size()), dim);
  std::size_t n_aborted = 0;
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    total.merge(partial[ch]);
    n_aborted += aborted[ch];
  }
  return finalize(total, times, n_aborted);
}

inline EnsembleStats simulate_ensemble(const Coefficients& co, const LiftState& y0, const SimConfig& cfg,
                                       const EnsembleOptions& opt = {}) {
  detail::check_state(co, y0);
  const Matrix v = y0.values();
  return simulate_ensemble(co, y0.measure_ptr(), [&v](std::uint64_t, Matrix& y) { y = v; }, cfg, opt);
}

/// Endpoint rules of the direct Volterra sum. exponential and euler are
/// algebraically matched to exact_ou_euler and full_euler; left_point uses
/// K̄(t_k - t_j)(b dt + σΔW) and agrees with exponential when b = 0.
enum class VolterraRule { exponential, euler, left_point };

inline VolterraRule matched_rule(Scheme s) {
  if (s == Scheme::exact_ou_euler) return VolterraRule::exponential;
  if (s == Scheme::full_euler) return VolterraRule::euler;
  throw InvalidArgument("exact-ou has no matched direct Volterra rule for a given dW path");
}

namespace detail {

struct VolterraWeights {
  Matrix forcing;  // (K+1) × N per-node forcing factor
  Vector drift;    // index m = k - j ≥ 1
  Vector noise;
};

inline VolterraWeights volterra_weights(const DiscreteMeasure& dm, std::size_t K, double dt, VolterraRule rule) {
  const auto N = static_cast<Eigen::Index>(dm.size());
  VolterraWeights w;
  w.forcing.resize(static_cast<Eigen::Index>(K + 1), N);
  w.drift.setZero(static_cast<Eigen::Index>(K + 1));
  w.noise.setZero(static_cast<Eigen::Index>(K + 1));
  for (Eigen::Index i = 0; i < N; ++i) {
    const double th = dm.nodes()[i], c = dm.weights()[i];
    const double a = rule == VolterraRule::euler ? 1.0 - th * dt : std::exp(-th * dt);
    const double phi = rule == VolterraRule::exponential ? drift_factor(th, dt) : dt;
    double pw = 1.0, prev = 0.0;  // a^k, a^{k-1}
    for (std::size_t k = 0; k <= K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      w.forcing(kk, i) = pw;
      if (k >= 1) {
        w.drift[kk] += c * (rule == VolterraRule::left_point ? pw : prev) * phi;
        w.noise[kk] += c * (rule == VolterraRule::euler ? prev : pw);
      }
      prev = pw;
      pw *= a;
    }
  }
  return w;
}

}  // namespace detail

/// Discretized kernel sequences of a rule: drift weight and noise weight for
/// lag m = 1..K (index 0 unused).
inline std::pair<Vector, Vector> volterra_kernel_weights(const DiscreteMeasure& dm, std::size_t K, double dt,
                                                         VolterraRule rule) {
  auto w = detail::volterra_weights(dm, K, dt, rule);
  return {w.drift, w.noise};
}

/// X_k = x_k + ∑_{j<k} Kb(k-j) b(X_j) + Kσ(k-j) σ(X_j)ΔW_j with the
/// discretized kernel of `rule` and the forcing of y0 under the same rule.
/// dW has one row per step.
inline Matrix simulate_svie_direct(const Coefficients& co, const LiftState& y0, const Matrix& dW, double dt,
                                   VolterraRule rule = VolterraRule::exponential) {
  detail::check_state(co, y0);
  detail::require(dt > 0.0, "simulate_svie_direct: dt must be > 0");
  detail::require(dW.cols() == co.d, "simulate_svie_direct: dW has the wrong number of columns");
  const auto& dm = y0.measure();
  const auto K = static_cast<std::size_t>(dW.rows());
  const auto w = detail::volterra_weights(dm, K, dt, rule);
  const auto c = detail::as_vector(dm.weights());
  const Matrix cy = c.asDiagonal() * y0.values();  // N × n
  Matrix X(static_cast<Eigen::Index>(K + 1), co.n);
  Matrix B(static_cast<Eigen::Index>(K), co.n), S(static_cast<Eigen::Index>(K), co.n);
  Vector bv(co.n), xk(co.n);
  Matrix sig(co.n, co.d);
  for (std::size_t k = 0; k <= K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    xk = (w.forcing.row(kk) * cy).transpose();
    for (std::size_t j = 0; j < k; ++j) {
      const auto m = static_cast<Eigen::Index>(k - j);
      const auto jj = static_cast<Eigen::Index>(j);
      xk += w.drift[m] * B.row(jj).transpose() + w.noise[m] * S.row(jj).transpose();
    }
    X.row(kk) = xk.transpose();
    if (k == K) break;
    co.b(xk, bv);
    co.sigma(xk, sig);
    B.row(kk) = bv.transpose();
    S.row(kk) = (sig * dW.row(kk).transpose()).transpose();
  }
  return X;
}

/// Rejects kernels that are not finite exponential sums.
inline Matrix simulate_svie_direct(const Kernel& k, const LiftState& y0, const Coefficients& co, const Matrix& dW,
                                   double dt, VolterraRule rule = VolterraRule::exponential) {
  if (!BernsteinMeasure::of(k).atomic())
    throw InvalidArgument("simulate_svie_direct: kernel '" + k.name() +
                          "' has a density Bernstein measure; discretize it first");
  const auto dm = std::make_shared<const DiscreteMeasure>(
      DiscreteMeasure::from_atoms(BernsteinMeasure::of(k).atoms(), y0.measure().weight_function()));
  detail::require(*dm == y0.measure(), "simulate_svie_direct: y0 does not live on the kernel's measure");
  return simulate_svie_direct(co, y0, dW, dt, rule);
}

struct EquivalenceGap {
  double sup_gap;
  double l2_gap;
};

inline EquivalenceGap equivalence_gap(const Matrix& lift_x, const Matrix& direct_x, double dt) {
  if (lift_x.rows() != direct_x.rows() || lift_x.cols() != direct_x.cols())
    throw InvalidArgument("equivalence_gap: grids differ");
  const Matrix d = lift_x - direct_x;
  return {d.cwiseAbs().maxCoeff(), std::sqrt(d.squaredNorm() * dt)};
}

inline EquivalenceGap equivalence_gap(const SimPath& lift, const Matrix& direct_x) {
  detail::require(lift.times.size() >= 2, "equivalence_gap: path too short");
  return equivalence_gap(lift.x, direct_x, lift.times[1] - lift.times[0]);
}

/// I_{k+1} = e^{-θdt}(I_k + σ_kΔW_k), I_0 = 0, returned for k = 0..K.
/// sigma[k] is n×d, dW has one row per step.
inline std::vector<LiftState> stochastic_convolution(std::shared_ptr<const DiscreteMeasure> dm,
                                                     const std::vector<Matrix>& sigma, const Matrix& dW, double dt) {
  detail::require(sigma.size() == static_cast<std::size_t>(dW.rows()), "stochastic_convolution: grid mismatch");
  detail::require(dt > 0.0, "stochastic_convolution: dt must be > 0");
  const auto N = static_cast<Eigen::Index>(dm->size());
  const Eigen::Index n = sigma.empty() ? 1 : sigma.front().rows();
  Vector e(N);
  for (Eigen::Index i = 0; i < N; ++i) e[i] = std::exp(-dm->nodes()[i] * dt);
  std::vector<LiftState> out;
  out.reserve(sigma.size() + 1);
  Matrix I = Matrix::Zero(N, n);
  out.emplace_back(dm, I);
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    const Vector s = sigma[k] * dW.row(static_cast<Eigen::Index>(k)).transpose();
    for (Eigen::Index l = 0; l < n; ++l) I.col(l) = e.cwiseProduct(I.col(l) + Vector::Constant(N, s[l]));
    out.emplace_back(dm, I);
  }
  return out;
}

/// ∑_{j<k} K̄(t_k - t_j) σ_j ΔW_j with K̄ = ∑ c e^{-θ·}, for k = 0..K.
inline Matrix volterra_noise_sum(const DiscreteMeasure& dm, const std::vector<Matrix>& sigma, const Matrix& dW,
                                 double dt) {
  const std::size_t K = sigma.size();
  const Eigen::Index n = sigma.empty() ? 1 : sigma.front().rows();
  Matrix X = Matrix::Zero(static_cast<Eigen::Index>(K + 1), n);
  for (std::size_t k = 1; k <= K; ++k)
    for (std::size_t j = 0; j < k; ++j) {
      const double kbar = dm.kernel(static_cast<double>(k - j) * dt);
      X.row(static_cast<Eigen::Index>(k)) +=
          kbar * (sigma[j] * dW.row(static_cast<Eigen::Index>(j)).transpose()).transpose();
    }
  return X;
}

// ---------------------------------------------------------------- Picard

struct PicardReport {
  /// Gaps in the λ-weighted norm; e^{-λt} underflows beyond the first steps
  /// when λ is large, so these mostly see the start of the path.
  std::vector<double> iterate_gaps;
  /// Gaps in the same norm with λ = κ = 0; used for stopping.
  std::vector<double> plain_gaps;
  std::vector<double> contraction_ratios;
  double lambda = 0.0;
  double kappa = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct PicardResult {
  SimPath path;
  PicardReport report;
};

/// Weighted-norm constants: κ = 2L²(M+1)(5 + 8c²)∫r dμ with c = 2 and M from
/// the ε–M inequality at ε = 1/(2L²·37·∫r dμ); λ = 3 + 2κ.
inline std::pair<double, double> picard_constants(const DiscreteMeasure& dm, double L) {
  constexpr double c_bdg = 2.0;
  const double k0 = 5.0 + 8.0 * c_bdg * c_bdg;
  if (L == 0.0) return {3.0, 0.0};
  const double eps = 1.0 / (2.0 * L * L * k0 * dm.mass_r());
  const double M = eps_M_constant(dm, eps).M;
  const double kappa = 2.0 * L * L * (M + 1.0) * k0 * dm.mass_r();
  return {3.0 + 2.0 * kappa, kappa};
}

/// sup_k e^{-λt_k}‖D_k‖²_H + ∑_k e^{-λt_k}(κ‖D_k‖²_H + ‖D_k‖²_V)dt, square-rooted.
inline double picard_norm(const DiscreteMeasure& dm, const std::vector<Matrix>& D, double dt, double lambda,
                          double kappa) {
  const Vector wh = detail::as_vector(dm.weights()).cwiseProduct(detail::as_vector(dm.r_values()));
  const Vector wv = wh.cwiseProduct((detail::as_vector(dm.nodes()).array() + 1.0).matrix());
  double sup = 0.0, integral = 0.0;
  for (std::size_t k = 0; k < D.size(); ++k) {
    const Vector sq = D[k].rowwise().squaredNorm();
    const double h2 = wh.dot(sq);
    const double w = std::exp(-lambda * static_cast<double>(k) * dt);
    sup = std::max(sup, w * h2);
    if (k + 1 < D.size()) integral += w * (kappa * h2 + wv.dot(sq)) * dt;
  }
  return std::sqrt(sup + integral);
}

namespace detail {

inline std::vector<StepNoise> draw_path_noise(const Stepper& st, std::size_t K, std::uint64_t seed,
                                              std::uint64_t path) {
  const PathNormals g(seed, path);
  std::vector<StepNoise> out(K);
  for (std::size_t k = 0; k < K; ++k) st.draw(g, k, out[k]);
  return out;
}

// Φ(Y): the mild formula with coefficients read along the previous iterate.
inline std::vector<Matrix> picard_map(const Stepper& st, const Coefficients& co, const DiscreteMeasure& dm,
                                      const Matrix& y0, const std::vector<Matrix>& prev,
                                      const std::vector<StepNoise>& noise) {
  const auto c = as_vector(dm.weights());
  std::vector<Matrix> out;
  out.reserve(prev.size());
  Matrix y = y0;
  out.push_back(y);
  Vector b(co.n), s(co.n), x(co.n);
  Matrix sig(co.n, co.d);
  for (std::size_t k = 0; k + 1 < prev.size(); ++k) {
    x.noalias() = prev[k].transpose() * c;
    co.b(x, b);
    co.sigma(x, sig);
    st.advance(y, b, sig, noise[k], s);
    out.push_back(y);
  }
  return out;
}

inline std::vector<Matrix> difference(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  std::vector<Matrix> d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - b[k];
  return d;
}

}  // namespace detail

/// Picard iteration Y⁰ ≡ 0, Yᵏ = Φ(Yᵏ⁻¹) on one fixed Brownian path.
/// Stops once the plain gap drops below tol·max(1, first plain gap); not converging within
/// n_iter iterations is reported, not thrown.
inline PicardResult picard_solve(const Coefficients& co, const LiftState& y0, const SimConfig& cfg, std::size_t n_iter,
                                 std::uint64_t path = 0, double tol = 1e-13) {
  cfg.validate();
  detail::check_state(co, y0);
  detail::require(n_iter >= 2, "picard_solve: n_iter must be >= 2");
  const auto& dm = y0.measure();
  const std::size_t K = cfg.steps();
  const Stepper st(dm, cfg.scheme, cfg.dt, co.n, co.d);
  const auto noise = detail::draw_path_noise(st, K, cfg.seed, path);
  PicardResult res;
  auto& rep = res.report;
  std::tie(rep.lambda, rep.kappa) = picard_constants(dm, co.lipschitz_L);

  std::vector<Matrix> cur(K + 1, Matrix::Zero(y0.nodes(), co.n));
  double scale = 0.0;
  for (std::size_t it = 1; it <= n_iter; ++it) {
    auto next = detail::picard_map(st, co, dm, y0.values(), cur, noise);
    const auto diff = detail::difference(next, cur);
    const double gap = picard_norm(dm, diff, cfg.dt, rep.lambda, rep.kappa);
    const double plain = picard_norm(dm, diff, cfg.dt, 0.0, 0.0);
    for (const auto& m : next)
      if (detail::blown_up(m)) throw NumericalFailure("picard_solve: iterate exceeded 1e300");
    if (it == 1) scale = std::max(1.0, plain);
    if (!rep.plain_gaps.empty() && rep.plain_gaps.back() > 0.0)
      rep.contraction_ratios.push_back(plain / rep.plain_gaps.back());
    rep.iterate_gaps.push_back(gap);
    rep.plain_gaps.push_back(plain);
    cur = std::move(next);
    rep.iterations = it;
    if (plain <= tol * scale) {
      rep.converged = true;
      break;
    }
  }
  const auto again = detail::picard_map(st, co, dm, y0.values(), cur, noise);
  rep.residual = picard_norm(dm, detail::difference(again, cur), cfg.dt, rep.lambda, rep.kappa);

  auto& p = res.path;
  const auto c = detail::as_vector(dm.weights());
  p.times.resize(K + 1);
  p.x.resize(static_cast<Eigen::Index>(K + 1), co.n);
  p.dW.resize(static_cast<Eigen::Index>(K), co.d);
  for (std::size_t k = 0; k <= K; ++k) {
    p.times[k] = static_cast<double>(k) * cfg.dt;
    p.x.row(static_cast<Eigen::Index>(k)) = (cur[k].transpose() * c).transpose();
    p.lift.emplace_back(y0.measure_ptr(), cur[k]);
    if (k < K) p.dW.row(static_cast<Eigen::Index>(k)) = noise[k].dW.transpose();
  }
  return res;
}

/// ‖Φ(Y) - Y‖ in the Picard norm for a stored lift path (same seed/path).
inline double picard_residual(const Coefficients& co, const SimPath& path, const SimConfig& cfg,
                              std::uint64_t path_index = 0) {
  detail::require(!path.lift.empty(), "picard_residual: path has no stored lift states");
  const auto& dm = path.lift.front().measure();
  const std::size_t K = path.lift.size() - 1;
  const Stepper st(dm, cfg.scheme, cfg.dt, co.n, co.d);
  const auto noise = detail::draw_path_noise(st, K, cfg.seed, path_index);
  std::vector<Matrix> cur;
  for (const auto& s : path.lift) cur.push_back(s.values());
  const auto again = detail::picard_map(st, co, dm, cur.front(), cur, noise);
  const auto [lambda, kappa] = picard_constants(dm, co.lipschitz_L);
  return picard_norm(dm, detail::difference(again, cur), cfg.dt, lambda, kappa);
}

// ---------------------------------------------------------------- a priori bound

struct AprioriReport {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::size_t n_paths = 0;
  std::size_t aborted = 0;
};

/// sup_k ‖Y_k‖²_H + ∑_{k<K} ‖Y_k‖²_V dt along one path.
inline double apriori_functional(const std::vector<LiftState>& lift, double dt) {
  double sup = 0.0, integral = 0.0;
  for (std::size_t k = 0; k < lift.size(); ++k) {
    const auto nr = norms(lift[k]);
    sup = std::max(sup, nr.h_norm * nr.h_norm);
    if (k + 1 < lift.size()) integral += nr.v_norm * nr.v_norm * dt;
  }
  return sup + integral;
}

/// Monte-Carlo mean of apriori_functional over cfg.n_paths paths.
inline AprioriReport apriori_bound_check(const Coefficients& co, const LiftState& y0, const SimConfig& cfg) {
  cfg.validate();
  detail::check_state(co, y0);
  const auto& dm = y0.measure();
  const std::size_t K = cfg.steps();
  const Stepper st(dm, cfg.scheme, cfg.dt, co.n, co.d);
  const auto c = detail::as_vector(dm.weights());
  const auto r = detail::as_vector(dm.r_values());
  const Vector wh = c.cwiseProduct(r);
  const Vector wv = wh.cwiseProduct((detail::as_vector(dm.nodes()).array() + 1.0).matrix());
  const std::size_t chunks = chunk_count(cfg.n_paths);
  std::vector<std::array<double, 3>> partial(chunks, {0.0, 0.0, 0.0});
  parallel_chunks(cfg.n_paths, cfg.threads, [&](std::size_t ch, std::size_t begin, std::size_t end) {
    Matrix y;
    for (std::size_t p = begin; p < end; ++p) {
      y = y0.values();
      double sup = 0.0, integral = 0.0;
      const bool ok = detail::run_path(
          st, co, dm, y, K, cfg.seed, p,
          [&](std::size_t k, const Matrix& yk, const Vector&) {
            const Vector sq = yk.rowwise().squaredNorm();
            sup = std::max(sup, wh.dot(sq));
            if (k < K) integral += wv.dot(sq) * cfg.dt;
          },
          [](std::size_t, const StepNoise&) {});
      if (!ok) {
        partial[ch][2] += 1.0;
        continue;
      }
      const double f = sup + integral;
      partial[ch][0] += f;
      partial[ch][1] += f * f;
    }
  });
  double s1 = 0.0, s2 = 0.0, ab = 0.0;
  for (const auto& p : partial) {
    s1 += p[0];
    s2 += p[1];
    ab += p[2];
  }
  AprioriReport rep;
  rep.aborted = static_cast<std::size_t>(ab);
  rep.n_paths = cfg.n_paths - rep.aborted;
  detail::require(rep.n_paths >= 2, "apriori_bound_check: fewer than two finished paths");
  const double N = static_cast<double>(rep.n_paths);
  rep.estimate = s1 / N;
  const double var = std::max(0.0, (s2 - s1 * s1 / N) / (N - 1.0));
  rep.stderr_ = std::sqrt(var / N);
  return rep;
}

/// (1 + 1/2 + T)‖y0‖²_H · max((θ+1)r) / min r: deterministic envelope for b = 0, σ = 0.
inline double apriori_envelope(const LiftState& y0, double T) {
  const auto& dm = y0.measure();
  double mx = 0.0, mn = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dm.size(); ++i) {
    mx = std::max(mx, (dm.nodes()[i] + 1.0) * dm.r_values()[i]);
    mn = std::min(mn, dm.r_values()[i]);
  }
  const double h = norms(y0).h_norm;
  return (1.5 + T) * h * h * mx / mn;
}

struct AprioriRefinement {
  std::vector<double> dt;
  std::vector<AprioriReport> reports;
  /// Every consecutive estimate ratio lies in [1/2, 2].
  bool bounded = true;
};

/// apriori_bound_check over dt, dt/2, ..., dt/2^(levels-1).
inline AprioriRefinement apriori_refinement(const Coefficients& co, const LiftState& y0, SimConfig cfg,
                                            std::size_t levels) {
  AprioriRefinement out;
  for (std::size_t l = 0; l < levels; ++l) {
    out.dt.push_back(cfg.dt);
    out.reports.push_back(apriori_bound_check(co, y0, cfg));
    if (l > 0) {
      const double q = out.reports[l].estimate / out.reports[l - 1].estimate;
      if (!(q <= 2.0 && q >= 0.5)) out.bounded = false;
    }
    cfg.dt *= 0.5;
  }
  return out;
}

}  // namespace svlift
