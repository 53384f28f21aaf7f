#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "svlift/coefficients.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/gauss.hpp"

using namespace svlift;

namespace {

std::shared_ptr<const DiscreteMeasure> shared(std::vector<double> nodes, std::vector<double> weights,
                                              WeightFunction r = WeightFunction::constant_one()) {
  return std::make_shared<const DiscreteMeasure>(std::move(nodes), std::move(weights), r);
}

std::shared_ptr<const DiscreteMeasure> gamma_measure(std::size_t n) {
  return std::make_shared<const DiscreteMeasure>(discretize(Kernel::gamma(0.7, 1.0), n));
}

Coefficients zero_coefficients() {
  CoefficientSpec cs;
  cs.s0 = 0.0;
  return make_coefficients(cs);
}

Coefficients affine(double b0 = 0.2, double b1 = -0.5, double s0 = 1.0, double s1 = 0.3) {
  CoefficientSpec cs;
  cs.b0 = b0;
  cs.b1 = b1;
  cs.s0 = s0;
  cs.s1 = s1;
  return make_coefficients(cs);
}

LiftState random_state(const std::shared_ptr<const DiscreteMeasure>& dm, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix v(static_cast<Eigen::Index>(dm->size()), 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, 0) = nd(rng);
  return {dm, v};
}

}  // namespace

TEST(StepLift, NoCoefficientsIsSemigroup) {
  const auto dm = gamma_measure(20);
  const auto y = random_state(dm, 1);
  const auto s = step_lift(y, Vector::Zero(1), Matrix::Zero(1, 1), Vector::Zero(1), 0.05);
  EXPECT_EQ(s.values(), semigroup_apply(y, 0.05).values());
}

TEST(StepLift, ZeroNodeDriftLimit) {
  const auto dm = shared({0.0}, {1.0});
  const auto s = step_lift(LiftState::zero(dm, 1), Vector::Ones(1), Matrix::Zero(1, 1), Vector::Zero(1), 0.1);
  EXPECT_DOUBLE_EQ(s.values()(0, 0), 0.1);
  const auto f = step_lift(LiftState::zero(dm, 1), Vector::Ones(1), Matrix::Zero(1, 1), Vector::Zero(1), 0.1,
                           Scheme::full_euler);
  EXPECT_DOUBLE_EQ(f.values()(0, 0), 0.1);
}

TEST(StepLift, SingleNodeNoise) {
  const auto dm = shared({1.0}, {1.0});
  const auto s = step_lift(LiftState::zero(dm, 1), Vector::Zero(1), Matrix::Ones(1, 1), Vector::Constant(1, 0.7), 0.2);
  EXPECT_DOUBLE_EQ(s.values()(0, 0), std::exp(-0.2) * 0.7);
  EXPECT_THROW(step_lift(LiftState::zero(dm, 1), Vector::Zero(1), Matrix::Ones(1, 1), Vector::Zero(1), 0.2,
                         Scheme::exact_ou),
               InvalidArgument);
}

TEST(SimulateLift, DeterministicDecayMatchesForcing) {
  const auto dm = gamma_measure(30);
  const auto y0 = random_state(dm, 2);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  for (auto scheme : {Scheme::exact_ou_euler, Scheme::exact_ou}) {
    sim.scheme = scheme;
    const auto p = simulate_lift(zero_coefficients(), y0, sim);
    for (std::size_t k = 0; k < p.times.size(); ++k)
      EXPECT_NEAR(p.x(static_cast<Eigen::Index>(k), 0), forcing(y0, p.times[k])[0], 1e-12);
  }
}

TEST(SimulateLift, XIsMuIntegralOfY) {
  const auto dm = gamma_measure(25);
  SimConfig sim;
  sim.T = 0.5;
  sim.dt = 0.01;
  sim.seed = 5;
  const auto p = simulate_lift(affine(), LiftState::zero(dm, 1), sim);
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    double x = 0.0;
    for (std::size_t i = 0; i < dm->size(); ++i)
      x += dm->weights()[i] * p.lift[k].values()(static_cast<Eigen::Index>(i), 0);
    EXPECT_NEAR(p.x(static_cast<Eigen::Index>(k), 0), x, 1e-13 * (1.0 + std::abs(x)));
  }
}

TEST(SimulateLift, BitIdenticalRepeats) {
  const auto dm = gamma_measure(25);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.005;
  sim.seed = 77;
  for (auto scheme : {Scheme::exact_ou_euler, Scheme::full_euler, Scheme::exact_ou}) {
    sim.scheme = scheme;
    const auto a = simulate_lift(affine(), LiftState::zero(dm, 1), sim, 3);
    const auto b = simulate_lift(affine(), LiftState::zero(dm, 1), sim, 3);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.dW, b.dW);
    const auto c = simulate_lift(affine(), LiftState::zero(dm, 1), sim, 4);
    EXPECT_NE(a.x, c.x);
  }
}

TEST(SimulateLift, SingleNodeOuVariance) {
  const double th = 2.0, T = 1.0;
  const auto dm = shared({th}, {1.0});
  SimConfig sim;
  sim.T = T;
  sim.dt = 0.01;
  sim.n_paths = 10000;
  sim.seed = 9;
  sim.scheme = Scheme::exact_ou;
  const auto e = simulate_ensemble(gaussian_coefficients(1), LiftState::zero(dm, 1), sim);
  const auto k = e.index_of(T);
  const double exact = (1.0 - std::exp(-2.0 * th * T)) / (2.0 * th);
  EXPECT_LE(std::abs(e.var(k, 0) - exact), 3.0 * e.stderr_var(k, 0));
  // exact-ou-euler has its own discrete variance
  sim.scheme = Scheme::exact_ou_euler;
  const auto d = simulate_ensemble(gaussian_coefficients(1), LiftState::zero(dm, 1), sim);
  EXPECT_LE(std::abs(d.var(k, 0) - discrete_ito_variance(*dm, T, sim.dt)), 3.0 * d.stderr_var(k, 0));
}

TEST(SimulateLift, BlowUpAborts) {
  const auto dm = shared({1.0}, {1.0});
  Coefficients co = affine(0.0, 1.0, 0.0, 0.0);
  co.b = [](const Vector& x, Vector& out) { out = x.array().square() * 1e10 + 1.0; };
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  const auto p = simulate_lift(co, LiftState::zero(dm, 1), sim);
  EXPECT_TRUE(p.aborted);
  EXPECT_FALSE(p.diagnostic.empty());
  EXPECT_LT(p.times.size(), 101u);
}

TEST(Ensemble, ThreadCountInvariant) {
  const auto dm = gamma_measure(15);
  SimConfig sim;
  sim.T = 0.5;
  sim.dt = 0.01;
  sim.n_paths = 700;
  sim.seed = 3;
  sim.threads = 1;
  const auto a = simulate_ensemble(affine(), LiftState::zero(dm, 1), sim);
  sim.threads = 3;
  const auto b = simulate_ensemble(affine(), LiftState::zero(dm, 1), sim);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.var, b.var);
}

TEST(Ensemble, ValidatesGrid) {
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.3;
  EXPECT_THROW(sim.validate(), InvalidArgument);
  sim.dt = 0.25;
  EXPECT_NO_THROW(sim.validate());
}

TEST(Direct, DeterministicIsForcing) {
  const auto dm = gamma_measure(20);
  const auto y0 = random_state(dm, 4);
  const Matrix dW = Matrix::Zero(50, 1);
  for (auto rule : {VolterraRule::exponential, VolterraRule::left_point}) {
    const auto X = simulate_svie_direct(zero_coefficients(), y0, dW, 0.02, rule);
    for (Eigen::Index k = 0; k <= 50; ++k) EXPECT_NEAR(X(k, 0), forcing(y0, 0.02 * k)[0], 1e-12);
  }
}

TEST(Direct, OneStepLeftPoint) {
  const auto dm = gamma_measure(10);
  Matrix dW(1, 1);
  dW << 0.3;
  const auto X = simulate_svie_direct(gaussian_coefficients(1), LiftState::zero(dm, 1), dW, 0.1, VolterraRule::left_point);
  EXPECT_NEAR(X(1, 0), dm->kernel(0.1) * 0.3, 1e-15);
}

TEST(Direct, KernelOverloadRejectsDensities) {
  const auto dm = gamma_measure(10);
  const Matrix dW = Matrix::Zero(5, 1);
  EXPECT_THROW(simulate_svie_direct(Kernel::gamma(0.7, 1.0), LiftState::zero(dm, 1), gaussian_coefficients(1), dW, 0.1),
               InvalidArgument);
  const auto k = Kernel::exponential_sum({1.0, 3.0}, {1.0, 2.0});
  const auto m = std::make_shared<const DiscreteMeasure>(discretize(k, 2));
  EXPECT_NO_THROW(simulate_svie_direct(k, LiftState::zero(m, 1), gaussian_coefficients(1), dW, 0.1));
}

TEST(Equivalence, NoNoiseGapIsZero) {
  const auto dm = gamma_measure(20);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  const auto y0 = random_state(dm, 6);
  const auto p = simulate_lift(zero_coefficients(), y0, sim);
  const auto X = simulate_svie_direct(zero_coefficients(), y0, p.dW, sim.dt);
  EXPECT_LT(equivalence_gap(p, X).sup_gap, 1e-13);
}

TEST(Equivalence, MatchedRulesAreExact) {
  const auto k = Kernel::exponential_sum({0.0, 0.5, 3.0, 40.0}, {0.2, 1.0, 0.7, 2.0});
  const auto dm = std::make_shared<const DiscreteMeasure>(discretize(k, 4));
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 1e-3;
  sim.seed = 1;
  for (auto scheme : {Scheme::exact_ou_euler, Scheme::full_euler}) {
    sim.scheme = scheme;
    for (const auto& co : {gaussian_coefficients(1), affine()}) {
      const auto p = simulate_lift(co, LiftState::zero(dm, 1), sim, 0, false);
      const auto X = simulate_svie_direct(co, LiftState::zero(dm, 1), p.dW, sim.dt, matched_rule(scheme));
      EXPECT_LT(equivalence_gap(p, X).sup_gap, 1e-10);
    }
  }
  EXPECT_THROW(matched_rule(Scheme::exact_ou), InvalidArgument);
}

TEST(Equivalence, LeftPointRefinement) {
  const auto dm = gamma_measure(20);
  const auto co = affine();
  std::vector<double> gaps, dts;
  for (int e = 6; e <= 10; ++e) {
    SimConfig sim;
    sim.T = 1.0;
    sim.dt = std::ldexp(1.0, -e);
    sim.seed = 10;
    double g = 0.0;
    for (std::uint64_t path = 0; path < 20; ++path) {
      const auto p = simulate_lift(co, LiftState::zero(dm, 1), sim, path, false);
      const auto X = simulate_svie_direct(co, LiftState::zero(dm, 1), p.dW, sim.dt, VolterraRule::left_point);
      const double l2 = equivalence_gap(p, X).l2_gap;
      g += l2 * l2 / 20.0;
    }
    gaps.push_back(std::sqrt(g));
    dts.push_back(sim.dt);
  }
  for (std::size_t i = 1; i < gaps.size(); ++i) EXPECT_LT(gaps[i], gaps[i - 1]);
  const double order = std::log(gaps.front() / gaps.back()) / std::log(dts.front() / dts.back());
  EXPECT_GE(order, 0.5);
}

TEST(Equivalence, SchemesConverge) {
  const auto dm = shared({0.5, 3.0, 10.0}, {1.0, 0.5, 0.25});
  const auto co = affine();
  double prev = std::numeric_limits<double>::infinity();
  for (double dt : {0.02, 0.01, 0.005, 0.0025}) {
    SimConfig sim;
    sim.T = 1.0;
    sim.dt = dt;
    sim.seed = 2;
    double worst = 0.0;
    for (std::uint64_t path = 0; path < 10; ++path) {
      sim.scheme = Scheme::exact_ou_euler;
      const auto a = simulate_lift(co, LiftState::zero(dm, 1), sim, path, false);
      sim.scheme = Scheme::full_euler;
      const auto b = simulate_lift(co, LiftState::zero(dm, 1), sim, path, false);
      worst = std::max(worst, (a.x - b.x).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, prev);
    prev = worst;
  }
}

TEST(Convolution, ZeroIntegrand) {
  const auto dm = gamma_measure(10);
  const std::vector<Matrix> sig(5, Matrix::Zero(1, 1));
  const Matrix dW = Matrix::Ones(5, 1);
  for (const auto& s : stochastic_convolution(dm, sig, dW, 0.1)) EXPECT_EQ(s.values().norm(), 0.0);
}

TEST(Convolution, OneStep) {
  const auto dm = gamma_measure(10);
  const std::vector<Matrix> sig(1, Matrix::Constant(1, 1, 1.5));
  Matrix dW(1, 1);
  dW << 0.4;
  const auto I = stochastic_convolution(dm, sig, dW, 0.1);
  for (std::size_t i = 0; i < dm->size(); ++i)
    EXPECT_DOUBLE_EQ(I[1].values()(static_cast<Eigen::Index>(i), 0), std::exp(-dm->nodes()[i] * 0.1) * 1.5 * 0.4);
  EXPECT_NEAR(mu_integral(I[1])[0], dm->kernel(0.1) * 1.5 * 0.4, 1e-14);
}

TEST(Convolution, MatchesDirectSum) {
  const auto dm = gamma_measure(40);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  const std::size_t K = 100;
  std::vector<Matrix> sig(K, Matrix(1, 1));
  Matrix dW(K, 1);
  for (std::size_t k = 0; k < K; ++k) {
    sig[k](0, 0) = nd(rng);
    dW(static_cast<Eigen::Index>(k), 0) = 0.1 * nd(rng);
  }
  const auto I = stochastic_convolution(dm, sig, dW, 0.01);
  const Matrix X = volterra_noise_sum(*dm, sig, dW, 0.01);
  const double scale = X.cwiseAbs().maxCoeff();
  for (std::size_t k = 0; k <= K; ++k)
    EXPECT_LE(std::abs(mu_integral(I[k])[0] - X(static_cast<Eigen::Index>(k), 0)), 1e-12 * scale);
}

TEST(Picard, ZeroCoefficientsConvergeImmediately) {
  const auto dm = gamma_measure(10);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  const auto r = picard_solve(zero_coefficients(), random_state(dm, 1), sim, 10);
  EXPECT_TRUE(r.report.converged);
  ASSERT_EQ(r.report.plain_gaps.size(), 2u);
  EXPECT_EQ(r.report.plain_gaps[1], 0.0);
}

TEST(Picard, ContractionTrend) {
  const auto dm = gamma_measure(15);
  SimConfig sim;
  sim.T = 0.5;
  sim.dt = 0.005;
  sim.seed = 4;
  const auto r = picard_solve(affine(0.1, -0.2, 1.0, 0.1), LiftState::zero(dm, 1), sim, 40);
  EXPECT_TRUE(r.report.converged);
  ASSERT_GE(r.report.contraction_ratios.size(), 2u);
  EXPECT_LT(r.report.contraction_ratios.back(), 0.9);
}

TEST(Picard, FixedPointMatchesSimulation) {
  const auto dm = gamma_measure(20);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  sim.seed = 8;
  const auto co = affine();
  const auto p = simulate_lift(co, LiftState::zero(dm, 1), sim, 2);
  EXPECT_LT(picard_residual(co, p, sim, 2), 1e-10);
  const auto r = picard_solve(co, LiftState::zero(dm, 1), sim, 60, 2);
  EXPECT_TRUE(r.report.converged);
  EXPECT_LT((r.path.x - p.x).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Apriori, DeterministicEnvelopeAndHomogeneity) {
  const auto dm = gamma_measure(20);
  const auto y0 = random_state(dm, 3);
  SimConfig sim;
  sim.T = 2.0;
  sim.dt = 0.01;
  sim.n_paths = 2;
  const auto a = apriori_bound_check(zero_coefficients(), y0, sim);
  EXPECT_LE(a.estimate, apriori_envelope(y0, sim.T));
  EXPECT_EQ(a.stderr_, 0.0);
  const auto b = apriori_bound_check(zero_coefficients(), LiftState(dm, 2.0 * y0.values()), sim);
  EXPECT_NEAR(b.estimate, 4.0 * a.estimate, 1e-12 * b.estimate);
}

TEST(Apriori, MonteCarloConsistency) {
  const auto dm = gamma_measure(15);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 0.01;
  sim.seed = 21;
  sim.n_paths = 1000;
  const auto small = apriori_bound_check(affine(), LiftState::zero(dm, 1), sim);
  sim.n_paths = 10000;
  sim.seed = 22;
  const auto large = apriori_bound_check(affine(), LiftState::zero(dm, 1), sim);
  EXPECT_LE(std::abs(small.estimate - large.estimate), 3.0 * std::hypot(small.stderr_, large.stderr_));
  const auto ref = apriori_refinement(affine(), LiftState::zero(dm, 1), SimConfig{1.0, 0.02, 500, 5}, 3);
  EXPECT_TRUE(ref.bounded);
}
