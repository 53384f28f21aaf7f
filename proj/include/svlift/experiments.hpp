#pragma once

// Experiment drivers behind the command-line tool. Each returns a JSON
// report, a CSV table and a status (0 pass, 2 statistical or check failure).

#include <cmath>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svlift/coefficients.hpp"
#include "svlift/config.hpp"
#include "svlift/coupling.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/gauss.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/serialize.hpp"

namespace svlift {

inline constexpr const char* kToolVersion = "0.3.0";

struct ExperimentOutput {
  json report;
  std::string csv;
  int status = 0;
  std::vector<std::string> warnings;
};

inline json measure_summary(const DiscreteMeasure& dm) {
  const auto p = dm.weight_function().exponent();
  return {{"n_nodes", dm.size()},
          {"beta", dm.beta()},
          {"mass", dm.mass()},
          {"mass_r", dm.mass_r()},
          {"weight_p", p ? json(*p) : json(nullptr)},
          {"fingerprint", hex64(dm.fingerprint())}};
}

inline ExperimentOutput run_simulate(const RunConfig& c) {
  const auto dm = config_measure(c);
  const auto co = make_coefficients(c.coefficients);
  const auto y0 = build_initial(c.initial, dm, co.n);
  ExperimentOutput out;
  const auto path = simulate_lift(co, y0, c.sim, 0, false);
  EnsembleOptions opt;
  opt.stride = c.record_every;
  const auto ens = simulate_ensemble(co, y0, c.sim, opt);
  std::ostringstream csv;
  write_csv(csv, path);
  out.csv = csv.str();
  out.report = {{"experiment", "simulate"},
                {"scheme", to_string(c.sim.scheme)},
                {"measure", measure_summary(*dm)},
                {"coefficients", co.name},
                {"stats", to_json(ens)},
                {"path0_aborted", path.aborted}};
  if (path.aborted) out.warnings.push_back("path 0: " + path.diagnostic);
  if (ens.aborted > 0) {
    out.warnings.push_back(std::to_string(ens.aborted) + " paths blew up and were excluded");
    out.status = 2;
  }
  return out;
}

inline ExperimentOutput run_equivalence(const RunConfig& c) {
  const Kernel k = config_kernel(c);
  if (!BernsteinMeasure::of(k).atomic() && !c.source.contains("discretization"))
    throw InvalidArgument("equivalence: kernel '" + k.name() +
                          "' is not a finite exponential sum; give an explicit 'discretization' block");
  const auto dm = config_measure(c);
  const auto co = make_coefficients(c.coefficients);
  const auto y0 = build_initial(c.initial, dm, co.n);
  const auto rule = matched_rule(c.sim.scheme);
  const auto path = simulate_lift(co, y0, c.sim, 0, false);
  if (path.aborted) throw NumericalFailure("equivalence: " + path.diagnostic);
  const auto direct = simulate_svie_direct(co, y0, path.dW, c.sim.dt, rule);
  const auto gap = equivalence_gap(path, direct);
  ExperimentOutput out;
  const bool pass = gap.sup_gap < c.threshold;
  out.report = {{"experiment", "equivalence"},
                {"scheme", to_string(c.sim.scheme)},
                {"measure", measure_summary(*dm)},
                {"sup_gap", gap.sup_gap},
                {"l2_gap", gap.l2_gap},
                {"threshold", c.threshold},
                {"pass", pass}};
  std::ostringstream csv;
  csv << "dt,sup_gap,l2_gap\n";
  // left-point Volterra sum against exact-ou-euler on halved steps
  if (c.coefficients.b0 != 0.0 || c.coefficients.b1 != 0.0) {
    json table = json::array();
    SimConfig s = c.sim;
    s.scheme = Scheme::exact_ou_euler;
    bool decreasing = true;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < c.refinement_levels; ++l) {
      const auto p = simulate_lift(co, y0, s, 0, false);
      if (p.aborted) throw NumericalFailure("equivalence refinement: " + p.diagnostic);
      const auto d = simulate_svie_direct(co, y0, p.dW, s.dt, VolterraRule::left_point);
      const auto g = equivalence_gap(p, d);
      table.push_back({{"dt", s.dt}, {"sup_gap", g.sup_gap}, {"l2_gap", g.l2_gap}});
      csv << detail::fmt(s.dt) << "," << detail::fmt(g.sup_gap) << "," << detail::fmt(g.l2_gap) << "\n";
      decreasing = decreasing && g.l2_gap < prev;
      prev = g.l2_gap;
      s.dt *= 0.5;
    }
    out.report["refinement"] = table;
    out.report["refinement_decreasing"] = decreasing;
  } else {
    csv << detail::fmt(c.sim.dt) << "," << detail::fmt(gap.sup_gap) << "," << detail::fmt(gap.l2_gap) << "\n";
  }
  out.csv = csv.str();
  out.status = pass ? 0 : 2;
  return out;
}

inline ExperimentOutput run_gauss(const RunConfig& c) {
  if (c.coefficients.dim != 1) throw InvalidArgument("gauss: the Gaussian analytics require n = d = 1");
  const Kernel k = config_kernel(c);
  const auto dm = config_measure(c);
  ExperimentOutput out;
  const bool kernel_inv = invariant_criterion(k);
  const bool dm_inv = invariant_criterion(*dm);
  json rep = {{"experiment", "gauss"},
              {"kernel", k.name()},
              {"measure", measure_summary(*dm)},
              {"invariant_measure_kernel", kernel_inv},
              {"invariant_measure_discrete", dm_inv}};
  std::ostringstream csv;
  csv << "t,trace\n";
  json trace = json::array();
  for (double t : c.trace_times) {
    const double tr = trace_qt(*dm, t);
    trace.push_back({{"t", t}, {"trace", tr}});
    csv << detail::fmt(t) << "," << detail::fmt(tr) << "\n";
  }
  rep["trace_curve"] = trace;
  if (dm_inv) {
    rep["stationary_variance"] = stationary_variance(*dm);
    rep["trace_limit"] = trace_q_inf(*dm);
    if (kernel_inv) rep["stationary_variance_kernel"] = stationary_variance(k);
  } else {
    rep["note"] =
        "no invariant probability measure: mu has an atom at 0 or the kernel is not integrable at infinity; "
        "invariant analytics skipped";
  }
  if (dm->has_zero_node()) rep["trace_slope"] = dm->weights().front() * dm->r_values().front();
  rep["witness"] = to_json(strong_feller_witness(*dm, c.witness_t, c.epsilon));
  out.report = rep;
  out.csv = csv.str();
  return out;
}

namespace detail {

inline std::vector<double> default_record_times(const SimConfig& s) {
  std::vector<double> t;
  const double step = std::max(s.dt, std::round(0.5 / s.dt) * s.dt);
  for (double x = 0.0; x <= s.T + 1e-12; x += step) t.push_back(std::min(x, s.T));
  if (t.back() < s.T) t.push_back(s.T);
  // snap to the grid
  for (auto& x : t) x = std::round(x / s.dt) * s.dt;
  return t;
}

inline std::vector<TestFunction> build_functions(const std::vector<TestFunctionSpec>& specs,
                                                 std::shared_ptr<const DiscreteMeasure> dm, Eigen::Index n) {
  std::vector<TestFunction> fs;
  for (const auto& s : specs) {
    switch (s.kind) {
      case TestFunctionSpec::Kind::one: fs.push_back(TestFunction::constant_one()); break;
      case TestFunctionSpec::Kind::distance: fs.push_back(TestFunction::distance(LiftState::zero(dm, n), s.c)); break;
      case TestFunctionSpec::Kind::exponential: {
        const Vector unit = Vector::Constant(n, 1.0 / std::sqrt(dm->mass_r() * static_cast<double>(n)));
        fs.push_back(TestFunction::exponential(LiftState::constant(dm, unit), s.c));
        break;
      }
    }
  }
  return fs;
}

}  // namespace detail

inline ExperimentOutput run_couple(const RunConfig& c) {
  const auto dm = config_measure(c);
  const auto co = make_coefficients(c.coefficients);
  const auto cc = make_coupling_config(*dm, co, c.m_override);
  const auto y = build_initial(c.initial, dm, co.n);
  const auto ybar = build_initial(c.ybar, dm, co.n);
  const auto times = c.record_times.empty() ? detail::default_record_times(c.sim) : c.record_times;
  const auto meas = c.measure == "shifted" ? CouplingMeasure::shifted : CouplingMeasure::reference;
  const auto ens = simulate_coupled(co, y, ybar, cc, c.sim, times, meas);
  const auto ent = entropy_estimate(ens, cc);
  const auto dec = decay_estimate(ens, cc, c.fit_from);
  ExperimentOutput out;
  out.report = {{"experiment", "couple"},
                {"measure", measure_summary(*dm)},
                {"coupling_measure", c.measure},
                {"constants",
                 {{"L", cc.L},
                  {"m", cc.m},
                  {"lambda", cc.lambda},
                  {"xi", cc.xi},
                  {"beta", cc.beta},
                  {"r_m", cc.r_m},
                  {"sigma_inv_sup", cc.sigma_inv_sup}}},
                {"stability_dt", coupling_stability_dt(*dm, cc)},
                {"initial_distance", ens.initial_distance},
                {"flagged_paths", ens.flagged_count},
                {"entropy", {{"bound", ent.bound}, {"curve", to_json(ent.curve)}, {"pass", ent.pass}}},
                {"martingale", {{"curve", to_json(ent.martingale)}, {"pass", ent.martingale_pass}}},
                {"decay",
                 {{"curve", to_json(dec.curve)},
                  {"slope", dec.slope},
                  {"slope_bound", dec.slope_bound},
                  {"pass", dec.pass},
                  {"skipped", dec.skipped}}},
                {"min_ess", ent.min_ess},
                {"degenerate_weights", ent.degenerate}};
  if (dec.skipped) out.warnings.push_back(dec.note);
  if (ent.degenerate) out.warnings.push_back("effective sample size below 100: importance weights are degenerate");
  if (ens.flagged_count > 0) out.warnings.push_back(std::to_string(ens.flagged_count) + " paths hit the truncation cap");
  if (c.sim.scheme != Scheme::exact_ou && c.sim.dt > coupling_stability_dt(*dm, cc))
    out.warnings.push_back("dt exceeds the coupling stability threshold " + detail::fmt(coupling_stability_dt(*dm, cc)));
  const bool pass = ent.pass && ent.martingale_pass && dec.pass && !ent.degenerate && ens.flagged_count == 0;
  out.report["pass"] = pass;
  out.status = pass ? 0 : 2;
  std::ostringstream csv;
  csv << "t,entropy,entropy_se,entropy_bound,distance,distance_se,distance_bound,weight_mean,weight_se\n";
  for (std::size_t i = 0; i < ent.curve.size(); ++i)
    csv << detail::fmt(ent.curve[i].t) << "," << detail::fmt(ent.curve[i].estimate) << ","
        << detail::fmt(ent.curve[i].stderr_) << "," << detail::fmt(ent.curve[i].bound) << ","
        << detail::fmt(dec.curve[i].estimate) << "," << detail::fmt(dec.curve[i].stderr_) << ","
        << detail::fmt(dec.curve[i].bound) << "," << detail::fmt(ent.martingale[i].estimate) << ","
        << detail::fmt(ent.martingale[i].stderr_) << "\n";
  out.csv = csv.str();
  return out;
}

inline ExperimentOutput run_harnack(const RunConfig& c) {
  const auto dm = config_measure(c);
  const auto co = make_coefficients(c.coefficients);
  const auto cc = make_coupling_config(*dm, co, c.m_override);
  const auto y = build_initial(c.initial, dm, co.n);
  const auto ybar = build_initial(c.ybar, dm, co.n);
  auto specs = c.functions;
  if (specs.empty()) specs = {{TestFunctionSpec::Kind::one, 1.0}, {TestFunctionSpec::Kind::distance, 1.0}};
  const auto fs = detail::build_functions(specs, dm, co.n);
  const auto times = c.record_times.empty() ? std::vector<double>{1.0, 2.0, 4.0} : c.record_times;
  const auto rep = harnack_check(fs, y, ybar, times, co, cc, c.sim);
  ExperimentOutput out;
  json pts = json::array();
  std::ostringstream csv;
  csv << "t,f_id,lhs,lhs_se,rhs,rhs_se,margin_sigmas\n";
  for (const auto& p : rep.points) {
    pts.push_back(to_json(p));
    csv << detail::fmt(p.t) << "," << p.f_id << "," << detail::fmt(p.lhs) << "," << detail::fmt(p.lhs_se) << ","
        << detail::fmt(p.rhs) << "," << detail::fmt(p.rhs_se) << "," << detail::fmt(p.margin_sigmas) << "\n";
  }
  out.report = {{"experiment", "harnack"},
                {"measure", measure_summary(*dm)},
                {"constants", {{"m", cc.m}, {"lambda", cc.lambda}, {"beta", cc.beta}, {"r_m", cc.r_m}}},
                {"points", pts},
                {"jensen_checked", rep.jensen_checked},
                {"jensen_strict", rep.jensen_strict},
                {"pass", rep.pass}};
  if (cc.beta == 0.0) out.warnings.push_back("beta = 0: the remainder term does not decay in t");
  out.csv = csv.str();
  out.status = rep.pass ? 0 : 2;
  return out;
}

// ---------------------------------------------------------------- validation suite

namespace detail {

struct InvariantTally {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_residual = 0.0;

  void record(double residual, bool ok) {
    ++trials;
    if (!ok) ++failures;
    if (std::isfinite(residual)) max_residual = std::max(max_residual, residual);
    else max_residual = residual;
  }
  json to_json() const {
    return {{"name", name}, {"trials", trials}, {"failures", failures}, {"max_residual", max_residual},
            {"pass", failures == 0}};
  }
};

inline LiftState random_state(std::shared_ptr<const DiscreteMeasure> dm, Eigen::Index n, std::uint64_t seed,
                              std::uint64_t trial) {
  const auto N = static_cast<Eigen::Index>(dm->size());
  Vector z(N * n);
  PathNormals(seed, trial, Stream::initial_state).normals(0, {z.data(), static_cast<std::size_t>(z.size())});
  return {std::move(dm), Eigen::Map<Matrix>(z.data(), N, n)};
}

}  // namespace detail

/// Liftspace identities, convolution identity, Picard residual and Q_t
/// symmetry on built-in measures. perturb_norm_weight scales the V-norm
/// weight by 1.01 inside the duality check (negative control).
inline json validation_suite(std::size_t trials, bool perturb_norm_weight, std::uint64_t seed = 7) {
  using detail::InvariantTally;
  std::vector<std::shared_ptr<const DiscreteMeasure>> measures = {
      std::make_shared<const DiscreteMeasure>(discretize(Kernel::gamma(0.7, 1.0), 50)),
      std::make_shared<const DiscreteMeasure>(discretize(Kernel::fractional(0.75), 30)),
      std::make_shared<const DiscreteMeasure>(
          DiscreteMeasure({0.0, 1.0, 5.0}, {1.0, 0.5, 2.0}, WeightFunction::constant_one()))};
  InvariantTally duality{"duality"}, ordering{"norm_ordering"}, mubound{"mu_integral_bound"},
      semigroup{"semigroup_law"}, contraction{"semigroup_contraction"}, epsm{"eps_M_inequality"},
      conv{"convolution_identity"}, picard{"picard_residual"}, qsym{"qt_symmetry"}, qpsd{"qt_psd"},
      totvar{"total_variance_identity"};
  std::uint64_t tr = 0;
  for (const auto& dm : measures) {
    const auto mp = eps_M_constant(*dm, 0.1);
    for (std::size_t t = 0; t < trials; ++t, ++tr) {
      const auto y = detail::random_state(dm, 2, seed, tr);
      const auto nr = norms(y);
      // ⟨Ay, y⟩ = -‖y‖²_V + ‖y‖²_H
      double v2 = nr.v_norm * nr.v_norm;
      if (perturb_norm_weight) v2 *= 1.01;
      const double lhs = inner_h(generator_apply(y), y);
      const double rhs = -v2 + nr.h_norm * nr.h_norm;
      const double res = std::abs(lhs - rhs) / std::max(v2, 1e-300);
      duality.record(res, res < 1e-12);
      ordering.record(0.0, nr.vstar_norm <= nr.h_norm && nr.h_norm <= nr.v_norm);
      const double mu = mu_integral(y).norm();
      const double mb = std::sqrt(dm->mass_r()) * nr.v_norm;
      mubound.record(std::max(0.0, mu - mb) / mb, mu <= mb * (1.0 + 1e-12));
      const auto a = semigroup_apply(semigroup_apply(y, 0.3), 0.7);
      const auto b = semigroup_apply(y, 1.0);
      const double sres = (a.values() - b.values()).norm() / std::max(y.values().norm(), 1e-300);
      semigroup.record(sres, sres < 1e-12);
      contraction.record(0.0, norms(b).h_norm <= nr.h_norm * (1.0 + 1e-15));
      const double l1 = [&] {
        double s = 0.0;
        for (Eigen::Index i = 0; i < y.nodes(); ++i) s += dm->weights()[i] * std::abs(y.values()(i, 0));
        return s;
      }();
      const auto y0 = LiftState(dm, y.values().col(0));
      const auto n0 = norms(y0);
      const double ebound = 0.1 * n0.v_norm * n0.v_norm + mp.M * n0.h_norm * n0.h_norm;
      epsm.record(std::max(0.0, l1 * l1 - ebound) / ebound, l1 * l1 <= ebound * (1.0 + 1e-12));
      const auto z = detail::random_state(dm, 1, seed + 1, tr);
      const double q12 = inner_h(qt_apply(y0, 0.8), z), q21 = inner_h(y0, qt_apply(z, 0.8));
      const double qs = std::abs(q12 - q21) / std::max({std::abs(q12), std::abs(q21), 1e-300});
      qsym.record(qs, qs < 1e-12);
      const double qq = inner_h(qt_apply(y0, 0.8), y0);
      qpsd.record(std::max(0.0, -qq), qq >= -1e-12 * n0.h_norm * n0.h_norm);
    }
    // stochastic convolution vs the direct sum
    for (std::size_t t = 0; t < std::max<std::size_t>(1, trials / 10); ++t, ++tr) {
      const std::size_t K = 100;
      const double dt = 0.01;
      std::vector<Matrix> sig(K, Matrix(1, 1));
      Matrix dW(K, 1);
      Vector z(2 * K);
      PathNormals(seed, tr, Stream::brownian).normals(0, {z.data(), static_cast<std::size_t>(z.size())});
      for (std::size_t k = 0; k < K; ++k) {
        sig[k](0, 0) = 1.0 + 0.5 * std::sin(z[static_cast<Eigen::Index>(k)]);
        dW(static_cast<Eigen::Index>(k), 0) = std::sqrt(dt) * z[static_cast<Eigen::Index>(K + k)];
      }
      const auto I = stochastic_convolution(dm, sig, dW, dt);
      const Matrix direct = volterra_noise_sum(*dm, sig, dW, dt);
      double res = 0.0, scale = 1e-300;
      for (std::size_t k = 0; k <= K; ++k) {
        res = std::max(res, std::abs(mu_integral(I[k])[0] - direct(static_cast<Eigen::Index>(k), 0)));
        scale = std::max(scale, std::abs(direct(static_cast<Eigen::Index>(k), 0)));
      }
      conv.record(res / scale, res <= 1e-12 * scale);
    }
    // Picard residual of a simulated path; total-variance identity
    {
      CoefficientSpec cs;
      cs.b0 = 0.1;
      cs.b1 = -0.3;
      cs.s0 = 1.0;
      cs.s1 = 0.2;
      cs.shape = DiffusionShape::tanh;
      const auto co = make_coefficients(cs);
      SimConfig sim;
      sim.T = 1.0;
      sim.dt = 0.01;
      sim.seed = seed;
      const auto p = simulate_lift(co, LiftState::zero(dm, 1), sim);
      const double res = picard_residual(co, p, sim);
      picard.record(res, res < 1e-10);
      if (!dm->has_zero_node()) {
        for (double t : {0.1, 1.0, 10.0}) {
          const double sv = stationary_variance(*dm);
          const double r = std::abs(forcing_variance(*dm, t) + ito_variance(*dm, t) - sv) / sv;
          totvar.record(r, r < 1e-12);
        }
      }
    }
  }
  json inv = json::array();
  bool pass = true;
  for (const auto* t : {&duality, &ordering, &mubound, &semigroup, &contraction, &epsm, &conv, &picard, &qsym, &qpsd,
                        &totvar}) {
    inv.push_back(t->to_json());
    pass = pass && t->failures == 0;
  }
  return {{"invariants", inv}, {"perturbation", perturb_norm_weight ? "norm_weight" : "none"}, {"pass", pass}};
}

inline ExperimentOutput run_validate(const RunConfig& c) {
  ExperimentOutput out;
  out.report = validation_suite(c.trials, c.perturb == "norm_weight", c.sim.seed + 7);
  out.report["experiment"] = "validate";
  std::ostringstream csv;
  csv << "name,trials,failures,max_residual,pass\n";
  for (const auto& t : out.report["invariants"])
    csv << t["name"].get<std::string>() << "," << t["trials"].get<std::size_t>() << ","
        << t["failures"].get<std::size_t>() << "," << detail::fmt(t["max_residual"].get<double>()) << ","
        << (t["pass"].get<bool>() ? "true" : "false") << "\n";
  out.csv = csv.str();
  out.status = out.report["pass"].get<bool>() ? 0 : 1;
  return out;
}

inline ExperimentOutput run_experiment(const RunConfig& c) {
  switch (c.experiment) {
    case Experiment::simulate: return run_simulate(c);
    case Experiment::equivalence: return run_equivalence(c);
    case Experiment::gauss: return run_gauss(c);
    case Experiment::couple: return run_couple(c);
    case Experiment::harnack: return run_harnack(c);
    case Experiment::validate: return run_validate(c);
  }
  throw InvalidArgument("unknown experiment");
}

}  // namespace svlift
