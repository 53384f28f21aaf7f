#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "svlift/kernels.hpp"

using namespace svlift;

TEST(EvalKernel, ConstantKernel) {
  EXPECT_EQ(eval_kernel(Kernel::exponential_sum({0.0}, {1.0}), 3.0), 1.0);
}

TEST(EvalKernel, FractionalAtOne) {
  // Γ(3/4) reference value
  EXPECT_NEAR(eval_kernel(Kernel::fractional(0.75), 1.0), 1.0 / 1.2254167024651776451, 1e-15);
  EXPECT_NEAR(eval_kernel(Kernel::fractional(0.75), 1.0), 1.0 / std::tgamma(0.75), 1e-15);
}

TEST(EvalKernel, Damped) {
  const auto k = Kernel::damped(Kernel::exponential_sum({1.0}, {2.0}), 1.0);
  EXPECT_NEAR(eval_kernel(k, 1.0), 2.0 * std::exp(-2.0), 1e-16);
}

TEST(EvalKernel, ShiftedAndGamma) {
  const auto g = Kernel::gamma(0.7, 2.0);
  EXPECT_NEAR(eval_kernel(g, 0.5), std::exp(-1.0) * std::pow(0.5, -0.3) / std::tgamma(0.7), 1e-15);
  EXPECT_DOUBLE_EQ(eval_kernel(Kernel::shifted(g, 0.25), 0.25), eval_kernel(g, 0.5));
}

TEST(EvalKernel, RejectsNonPositiveTime) {
  EXPECT_THROW(eval_kernel(Kernel::fractional(0.75), 0.0), InvalidArgument);
  EXPECT_THROW(eval_kernel(Kernel::fractional(0.75), -1.0), InvalidArgument);
}

TEST(KernelConstruction, Validates) {
  EXPECT_THROW(Kernel::fractional(0.5), InvalidArgument);
  EXPECT_THROW(Kernel::fractional(1.0), InvalidArgument);
  EXPECT_THROW(Kernel::gamma(0.7, 0.0), InvalidArgument);
  EXPECT_THROW(Kernel::exponential_sum({1.0}, {-1.0}), InvalidArgument);
  EXPECT_THROW(Kernel::exponential_sum({-1.0}, {1.0}), InvalidArgument);
  EXPECT_THROW(Kernel::shifted(Kernel::fractional(0.7), 0.0), InvalidArgument);
  EXPECT_THROW(Kernel::damped(Kernel::fractional(0.7), -1.0), InvalidArgument);
}

TEST(KernelConstruction, MergesAndSortsAtoms) {
  const auto k = Kernel::exponential_sum({3.0, 1.0, 3.0}, {1.0, 2.0, 0.5});
  const auto& es = std::get<ExponentialSum>(k.variant());
  EXPECT_EQ(es.nodes, (std::vector<double>{1.0, 3.0}));
  EXPECT_EQ(es.weights, (std::vector<double>{2.0, 1.5}));
}

TEST(BernsteinDensity, Fractional) {
  const auto d = std::get<double>(bernstein_measure_density(Kernel::fractional(0.75), 1.0));
  EXPECT_NEAR(d, 1.0 / (std::tgamma(0.75) * std::tgamma(0.25)), 1e-15);
  EXPECT_NEAR(d, std::sin(0.75 * std::numbers::pi) / std::numbers::pi, 1e-15);
}

TEST(BernsteinDensity, GammaBelowSupport) {
  EXPECT_EQ(std::get<double>(bernstein_measure_density(Kernel::gamma(0.75, 2.0), 1.0)), 0.0);
  EXPECT_GT(std::get<double>(bernstein_measure_density(Kernel::gamma(0.75, 2.0), 2.5)), 0.0);
}

TEST(BernsteinDensity, ShiftedAtom) {
  const auto atoms = std::get<std::vector<Atom>>(
      bernstein_measure_density(Kernel::shifted(Kernel::exponential_sum({1.0}, {3.0}), 2.0), 0.0));
  ASSERT_EQ(atoms.size(), 1u);
  EXPECT_EQ(atoms[0].theta, 1.0);
  EXPECT_NEAR(atoms[0].weight, 3.0 * std::exp(-2.0), 1e-16);
}

TEST(BernsteinDensity, ShiftedFactorPointwise) {
  for (const auto& base : {Kernel::fractional(0.75), Kernel::gamma(0.6, 1.5)}) {
    const auto sh = Kernel::shifted(base, 0.3);
    for (double th : {0.5, 1.7, 4.0, 100.0}) {
      const double b = std::get<double>(bernstein_measure_density(base, th));
      const double s = std::get<double>(bernstein_measure_density(sh, th));
      EXPECT_NEAR(s, std::exp(-0.3 * th) * b, 1e-15 * b);
    }
  }
}

TEST(BernsteinDensity, ReconstructsKernel) {
  // ∫ e^{-θt} μ(dθ) by independent adaptive quadrature
  const auto k = Kernel::gamma(0.7, 1.0);
  const auto m = BernsteinMeasure::of(k);
  const double t = 0.8;
  auto integrand = [&](double u) { return std::exp(-(1.0 + u) * t) * m.density_offset(u); };
  // substitute u = s^{1/(1-α)} to remove the singularity
  const double a = 0.7;
  auto smooth = [&](double s) {
    const double u = std::pow(s, 1.0 / (1.0 - a));
    return integrand(u) * std::pow(s, a / (1.0 - a)) / (1.0 - a);
  };
  const double head = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(smooth, 0.0, 1.0, 15, 1e-13);
  const double tail = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      integrand, 1.0, std::numeric_limits<double>::infinity(), 15, 1e-13);
  EXPECT_NEAR(head + tail, eval_kernel(k, t), 1e-9);
}

TEST(Regularity, Examples) {
  EXPECT_TRUE(is_regular(Kernel::exponential_sum({0.0, 5.0}, {1.0, 1.0})));
  EXPECT_FALSE(is_regular(Kernel::fractional(0.75)));
  EXPECT_TRUE(is_regular(Kernel::shifted(Kernel::fractional(0.75), 0.1)));
  EXPECT_FALSE(is_regular(Kernel::gamma(0.75, 1.0)));
  EXPECT_FALSE(is_regular(Kernel::damped(Kernel::fractional(0.75), 1.0)));
}

TEST(DefaultWeight, Examples) {
  EXPECT_TRUE(default_weight(Kernel::exponential_sum({1.0}, {1.0})).is_constant_one());
  EXPECT_DOUBLE_EQ(*default_weight(Kernel::fractional(0.8)).exponent(), 3.5);
  // admissible interval [2, 2.5); the midpoint is used
  const double p = *default_weight(Kernel::fractional(0.6)).exponent();
  EXPECT_GE(p, 2.0);
  EXPECT_LT(p, 2.5);
  EXPECT_DOUBLE_EQ(p, 2.25);
  const double q = *default_weight(Kernel::fractional(0.51)).exponent();
  EXPECT_GE(q, 2.0);
  EXPECT_LT(q, 1.0 / 0.49);
}

TEST(WeightFunction, BoundsOnGrid) {
  for (auto r : {WeightFunction::constant_one(), WeightFunction::power(2.0), WeightFunction::power(3.7)}) {
    double prev = 2.0;
    for (double th : {0.0, 1e-6, 0.5, 1.0, 2.0, 1e3, 1e9}) {
      const double v = r(th);
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, std::min(1.0, th == 0.0 ? 1.0 : std::pow(th, -0.5)));
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
  EXPECT_THROW(WeightFunction::power(1.9), InvalidArgument);
}

TEST(Discretize, ExponentialSumIsExact) {
  const auto k = Kernel::exponential_sum({1.0, 2.0}, {3.0, 4.0});
  for (std::size_t n : {1, 5, 100}) {
    const auto dm = discretize(k, n);
    EXPECT_EQ(dm.nodes(), (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(dm.weights(), (std::vector<double>{3.0, 4.0}));
    EXPECT_LT(kernel_l2_error(k, dm, 1.0), 1e-14);
  }
}

TEST(Discretize, GammaSingleCell) {
  const double a = 0.7;
  const auto dm = discretize(Kernel::gamma(a, 1.0), 1);
  ASSERT_EQ(dm.size(), 1u);
  const double X = geometric_range(1, 1.0).xi_max;
  const double C = 1.0 / (std::tgamma(a) * std::tgamma(1.0 - a));
  const double mass = C * std::pow(X, 1.0 - a) / (1.0 - a);
  const double first = C * std::pow(X, 2.0 - a) / (2.0 - a);
  EXPECT_NEAR(dm.weights()[0], mass, 1e-10 * mass);
  EXPECT_NEAR(dm.nodes()[0], 1.0 + first / mass, 1e-9 * dm.nodes()[0]);
}

TEST(Discretize, MassMatchesIndependentQuadrature) {
  const auto k = Kernel::fractional(0.75);
  const auto dm = discretize(k, 20);
  const double X = geometric_range(20, 1.0).xi_max;
  const double C = 1.0 / (std::tgamma(0.75) * std::tgamma(0.25));
  EXPECT_NEAR(dm.mass(), C * std::pow(X, 0.25) / 0.25, 1e-9 * dm.mass());
}

TEST(Discretize, FractionalReconstruction) {
  const auto k = Kernel::fractional(0.75);
  EXPECT_LT(kernel_l2_error(k, discretize(k, 100), 1.0), 1e-2);
}

TEST(Discretize, RefinementMonotone) {
  for (const auto& k : {Kernel::gamma(0.7, 1.0), Kernel::fractional(0.75), Kernel::gamma(0.6, 2.0)}) {
    const double e10 = kernel_l2_error(k, discretize(k, 10), 1.0);
    const double e30 = kernel_l2_error(k, discretize(k, 30), 1.0);
    const double e100 = kernel_l2_error(k, discretize(k, 100), 1.0);
    EXPECT_LE(e30, 1.05 * e10);
    EXPECT_LE(e100, 1.05 * e30);
    EXPECT_LT(e100, e10);
  }
  const auto g = Kernel::gamma(0.7, 1.0);
  EXPECT_LT(kernel_l2_error(g, discretize(g, 100), 1.0), 1e-2);
}

TEST(Discretize, UserNodes) {
  DiscretizationOptions opt;
  opt.scheme = DiscretizationScheme::user_nodes;
  opt.edges = {1.0, 2.0, 10.0, 100.0};
  const auto dm = discretize(Kernel::gamma(0.7, 1.0), 3, opt);
  ASSERT_EQ(dm.size(), 3u);
  EXPECT_GT(dm.nodes()[0], 1.0);
  EXPECT_LT(dm.nodes()[0], 2.0);
  EXPECT_GT(dm.nodes()[2], 10.0);
  EXPECT_LT(dm.nodes()[2], 100.0);
  opt.edges = {0.5, 2.0, 10.0, 100.0};
  EXPECT_THROW(discretize(Kernel::gamma(0.7, 1.0), 3, opt), InvalidArgument);
  opt.edges = {1.0, 2.0};
  EXPECT_THROW(discretize(Kernel::gamma(0.7, 1.0), 3, opt), InvalidArgument);
}

TEST(Discretize, SupportRespected) {
  const auto dm = discretize(Kernel::gamma(0.8, 2.0), 30);
  EXPECT_GE(exp_decay_rate(dm), 2.0);
  const auto dd = discretize(Kernel::damped(Kernel::fractional(0.7), 0.5), 10);
  EXPECT_GE(dd.beta(), 0.5);
}

TEST(ExpDecayRate, Examples) {
  EXPECT_EQ(exp_decay_rate(DiscreteMeasure({0.0, 3.0}, {1.0, 1.0}, WeightFunction::constant_one())), 0.0);
  EXPECT_EQ(exp_decay_rate(DiscreteMeasure({1.5, 4.0, 9.0}, {1.0, 1.0, 1.0}, WeightFunction::constant_one())), 1.5);
}

TEST(InvariantCriterion, Examples) {
  EXPECT_FALSE(invariant_criterion(DiscreteMeasure({0.0, 2.0}, {1.0, 1.0}, WeightFunction::constant_one())));
  EXPECT_TRUE(invariant_criterion(Kernel::gamma(0.7, 1.0)));
  EXPECT_FALSE(invariant_criterion(Kernel::fractional(0.75)));
  EXPECT_FALSE(invariant_criterion(Kernel::exponential_sum({0.0, 1.0}, {1.0, 1.0})));
  EXPECT_TRUE(invariant_criterion(Kernel::exponential_sum({0.5, 1.0}, {1.0, 1.0})));
}

TEST(CompleteMonotonicity, DecreasingOnGrid) {
  for (const auto& k : {Kernel::fractional(0.75), Kernel::gamma(0.7, 1.0), Kernel::shifted(Kernel::gamma(0.6, 1.0), 0.2),
                        Kernel::damped(Kernel::fractional(0.9), 2.0), Kernel::exponential_sum({0.0, 1.0}, {1.0, 2.0})}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double t = 1e-4; t < 50.0; t *= 1.3) {
      const double v = eval_kernel(k, t);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev) << k.name() << " t=" << t;
      prev = v;
    }
  }
}

TEST(DiscreteMeasure, Validation) {
  const auto r = WeightFunction::constant_one();
  EXPECT_THROW(DiscreteMeasure({1.0, 1.0}, {1.0, 1.0}, r), InvalidArgument);
  EXPECT_THROW(DiscreteMeasure({2.0, 1.0}, {1.0, 1.0}, r), InvalidArgument);
  EXPECT_THROW(DiscreteMeasure({1.0}, {0.0}, r), InvalidArgument);
  EXPECT_THROW(DiscreteMeasure({}, {}, r), InvalidArgument);
  const DiscreteMeasure dm({0.0, 4.0}, {1.0, 2.0}, WeightFunction::power(2.0));
  EXPECT_DOUBLE_EQ(dm.mass(), 3.0);
  EXPECT_DOUBLE_EQ(dm.mass_r(), 1.0 + 2.0 * 0.5);
  EXPECT_DOUBLE_EQ(dm.kernel(0.5), 1.0 + 2.0 * std::exp(-2.0));
  EXPECT_NE(dm.fingerprint(), DiscreteMeasure({0.0, 4.0}, {1.0, 2.0}, r).fingerprint());
}
