#include <gtest/gtest.h>

#include <sstream>

#include "svlift/svlift.hpp"

using namespace svlift;

namespace {

json base(const char* experiment) {
  auto j = json::parse(R"({"kernel": {"variant": "exponential_sum", "nodes": [1.0], "weights": [1.0]},
                            "sim": {"T": 1.0, "dt": 0.01, "n_paths": 50, "seed": 3}})");
  j["experiment"] = experiment;
  return j;
}

std::string message_of(const json& j) {
  try {
    parse_config(j);
  } catch (const InvalidArgument& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Parse, Defaults) {
  const auto c = parse_config(json(nullptr));
  EXPECT_EQ(c.experiment, Experiment::simulate);
  EXPECT_EQ(c.n, 50u);
  EXPECT_FALSE(has_kernel(c));
  EXPECT_NO_THROW(parse_config(json::object()));
}

TEST(Parse, UnknownKeysAreNamed) {
  auto j = base("simulate");
  j["bogus"] = 1;
  EXPECT_NE(message_of(j).find("bogus"), std::string::npos);
  j = base("simulate");
  j["sim"]["dtt"] = 0.1;
  const auto msg = message_of(j);
  EXPECT_NE(msg.find("sim"), std::string::npos);
  EXPECT_NE(msg.find("dtt"), std::string::npos);
}

TEST(Parse, DtMustDivideT) {
  auto j = base("simulate");
  j["sim"]["dt"] = 0.3;
  const auto msg = message_of(j);
  EXPECT_NE(msg.find("sim.dt"), std::string::npos);
  EXPECT_NE(msg.find("sim.T"), std::string::npos);
}

TEST(Parse, FieldErrors) {
  auto j = base("simulate");
  j["weight_p"] = 1.5;
  EXPECT_NE(message_of(j).find("weight_p"), std::string::npos);
  j = base("simulate");
  j["experiment"] = "nope";
  EXPECT_NE(message_of(j).find("nope"), std::string::npos);
  j = base("simulate");
  j["kernel"] = {{"variant", "fractional"}, {"alpha", 0.2}};
  EXPECT_THROW(parse_config(j), InvalidArgument);
  j = base("simulate");
  j["sim"]["n_paths"] = -3;
  EXPECT_NE(message_of(j).find("n_paths"), std::string::npos);
  j = base("couple");
  j["couple"] = {{"measure", "sideways"}};
  EXPECT_NE(message_of(j).find("measure"), std::string::npos);
}

TEST(Parse, FullDocument) {
  auto j = base("couple");
  j["kernel"] = {{"variant", "gamma"}, {"alpha", 0.7}, {"beta", 1.0}};
  j["discretization"] = {{"n", 12}, {"horizon", 2.0}};
  j["weight_p"] = 3.0;
  j["coefficients"] = {{"b0", 0.1}, {"b1", -0.3}, {"s0", 1.0}, {"s1", 0.2}, {"shape", "tanh"}};
  j["ybar"] = {{"kind", "node"}, {"node", 0}, {"h_norm", 0.5}};
  j["couple"] = {{"record_times", {0.0, 0.5, 1.0}}, {"fit_from", 0.5}, {"functions", {{{"kind", "distance"}, {"c", 2.0}}}}};
  const auto c = parse_config(j);
  EXPECT_EQ(c.experiment, Experiment::couple);
  EXPECT_EQ(c.n, 12u);
  EXPECT_EQ(*c.weight_p, 3.0);
  EXPECT_EQ(c.coefficients.shape, DiffusionShape::tanh);
  EXPECT_EQ(c.record_times.size(), 3u);
  EXPECT_EQ(c.functions.size(), 1u);
  const auto dm = config_measure(c);
  EXPECT_EQ(dm->size(), 12u);
  EXPECT_EQ(*dm->weight_function().exponent(), 3.0);
  const auto yb = build_initial(c.ybar, dm, 1);
  EXPECT_NEAR(norms(yb).h_norm, 0.5, 1e-14);
}

TEST(Json, KernelRoundTrip) {
  const std::vector<Kernel> ks{Kernel::exponential_sum({0.0, 2.0}, {1.0, 0.5}), Kernel::fractional(0.75),
                               Kernel::gamma(0.7, 1.3), Kernel::shifted(Kernel::fractional(0.6), 0.1),
                               Kernel::damped(Kernel::gamma(0.8, 0.5), 2.0)};
  for (const auto& k : ks) {
    const auto j = to_json(k);
    const auto back = kernel_from_json(json::parse(j.dump()));
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.name(), k.name());
  }
  EXPECT_THROW(kernel_from_json(json{{"variant", "gamma"}, {"alpha", 0.7}}), InvalidArgument);
  EXPECT_THROW(kernel_from_json(json{{"variant", "weird"}}), InvalidArgument);
}

TEST(Json, MeasureRoundTripIsExact) {
  DiscretizationOptions opt;
  opt.weight = WeightFunction::power(8.0 / 3.0);
  const auto dm = discretize(Kernel::gamma(0.7, 1.0), 30, opt);
  const auto back = measure_from_json(json::parse(to_json(dm).dump()));
  EXPECT_EQ(back.nodes(), dm.nodes());
  EXPECT_EQ(back.weights(), dm.weights());
  EXPECT_EQ(back.fingerprint(), dm.fingerprint());
  const DiscreteMeasure plain({1.0}, {2.0}, WeightFunction::constant_one());
  EXPECT_TRUE(to_json(plain)["weight_p"].is_null());
  EXPECT_EQ(measure_from_json(to_json(plain)).fingerprint(), plain.fingerprint());
}

TEST(Json, LiftStateRoundTrip) {
  const auto dm = std::make_shared<const DiscreteMeasure>(discretize(Kernel::gamma(0.7, 1.0), 8));
  Matrix v(8, 2);
  for (Eigen::Index i = 0; i < 8; ++i) v.row(i) << 1.0 / (i + 3.0), -std::sqrt(i + 0.1);
  const LiftState y(dm, v);
  const auto back = lift_state_from_json(json::parse(to_json(y).dump()), dm);
  EXPECT_EQ(back.values(), v);
  const auto other = std::make_shared<const DiscreteMeasure>(discretize(Kernel::gamma(0.7, 1.0), 9));
  EXPECT_THROW(lift_state_from_json(to_json(y), other), MeasureMismatch);
}

TEST(Csv, PathColumns) {
  const auto dm = std::make_shared<const DiscreteMeasure>(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 1.0},
                                                          WeightFunction::constant_one());
  SimConfig sim;
  sim.T = 0.02;
  sim.dt = 0.01;
  const auto p = simulate_lift(gaussian_coefficients(1), LiftState::zero(dm, 1), sim);
  std::ostringstream a, b;
  write_csv(a, p);
  write_csv(b, p, true);
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "t,X_1");
  EXPECT_EQ(b.str().substr(0, b.str().find('\n')), "t,X_1,Y_0_1,Y_1_1");
  const std::string text = a.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_EQ(a.str().substr(a.str().find('\n') + 1, 2), "0,");
}

TEST(Hash, StableAndSensitive) {
  const auto j = base("simulate");
  EXPECT_EQ(config_hash(j), config_hash(json::parse(j.dump())));
  auto k = j;
  k["sim"]["seed"] = 4;
  EXPECT_NE(config_hash(j), config_hash(k));
  EXPECT_EQ(config_hash(j).size(), 16u);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Experiments, SimulateReport) {
  const auto out = run_experiment(parse_config(base("simulate")));
  EXPECT_EQ(out.status, 0);
  EXPECT_EQ(out.csv.substr(0, out.csv.find('\n')), "t,X_1");
  EXPECT_EQ(out.report["stats"]["n_paths"], 50);
  const auto again = run_experiment(parse_config(base("simulate")));
  EXPECT_EQ(again.csv, out.csv);
  EXPECT_EQ(again.report.dump(), out.report.dump());
}

TEST(Experiments, EquivalenceGaussian) {
  auto j = base("equivalence");
  j["kernel"] = {{"variant", "exponential_sum"}, {"nodes", {0.5, 2.0, 30.0}}, {"weights", {1.0, 0.5, 2.0}}};
  const auto out = run_experiment(parse_config(j));
  EXPECT_TRUE(out.report["pass"].get<bool>());
  EXPECT_LT(out.report["sup_gap"].get<double>(), 1e-10);
  EXPECT_EQ(out.status, 0);
}

TEST(Experiments, EquivalenceAffineRefinement) {
  auto j = base("equivalence");
  j["kernel"] = {{"variant", "exponential_sum"}, {"nodes", {0.5, 2.0, 30.0}}, {"weights", {1.0, 0.5, 2.0}}};
  j["coefficients"] = {{"b0", 0.2}, {"b1", -0.5}, {"s0", 1.0}, {"s1", 0.3}};
  j["sim"]["dt"] = 0.02;
  const auto out = run_experiment(parse_config(j));
  EXPECT_EQ(out.report["refinement"].size(), 4u);
  EXPECT_TRUE(out.report["refinement_decreasing"].get<bool>());
}

TEST(Experiments, EquivalenceNeedsDiscretization) {
  auto j = base("equivalence");
  j["kernel"] = {{"variant", "fractional"}, {"alpha", 0.75}};
  EXPECT_THROW(run_experiment(parse_config(j)), InvalidArgument);
  j["discretization"] = {{"n", 20}};
  EXPECT_NO_THROW(run_experiment(parse_config(j)));
}

TEST(Experiments, GaussVerdicts) {
  auto j = base("gauss");
  auto out = run_experiment(parse_config(j));
  EXPECT_EQ(out.report["stationary_variance"].get<double>(), 0.5);
  EXPECT_TRUE(out.report["invariant_measure_kernel"].get<bool>());

  j["kernel"] = {{"variant", "fractional"}, {"alpha", 0.75}};
  j["discretization"] = {{"n", 30}};
  out = run_experiment(parse_config(j));
  EXPECT_FALSE(out.report["invariant_measure_kernel"].get<bool>());
  EXPECT_FALSE(out.report.contains("stationary_variance_kernel"));
  EXPECT_TRUE(out.report.contains("witness"));

  j["kernel"] = {{"variant", "gamma"}, {"alpha", 0.7}, {"beta", 1.0}};
  out = run_experiment(parse_config(j));
  EXPECT_TRUE(out.report.contains("stationary_variance_kernel"));
  EXPECT_TRUE(out.report.contains("trace_limit"));

  j["kernel"] = {{"variant", "exponential_sum"}, {"nodes", {0.0, 1.0}}, {"weights", {0.25, 1.0}}};
  out = run_experiment(parse_config(j));
  EXPECT_TRUE(out.report.contains("note"));
  EXPECT_EQ(out.report["trace_slope"].get<double>(), 0.25);

  j["coefficients"] = {{"dim", 2}};
  EXPECT_THROW(run_experiment(parse_config(j)), InvalidArgument);
}

TEST(Experiments, CoupleSameStartPasses) {
  auto j = base("couple");
  j["kernel"] = {{"variant", "gamma"}, {"alpha", 0.7}, {"beta", 1.0}};
  j["discretization"] = {{"n", 10}};
  j["coefficients"] = {{"b1", -0.3}, {"s0", 1.0}, {"s1", 0.2}, {"shape", "tanh"}};
  j["sim"]["n_paths"] = 200;
  j["sim"]["dt"] = 0.0005;
  const auto out = run_experiment(parse_config(j));
  EXPECT_TRUE(out.warnings.empty());
  EXPECT_EQ(out.status, 0);
  EXPECT_TRUE(out.report["pass"].get<bool>());
}

TEST(Experiments, CoupleWithoutGapSkipsDecay) {
  auto j = base("couple");
  j["kernel"] = {{"variant", "exponential_sum"}, {"nodes", {0.0, 2.0}}, {"weights", {1.0, 1.0}}};
  j["ybar"] = {{"kind", "node"}, {"node", 1}};
  j["sim"]["n_paths"] = 40;
  const auto out = run_experiment(parse_config(j));
  EXPECT_TRUE(out.report["decay"]["skipped"].get<bool>());
}

TEST(Experiments, ValidateDefaultsAndPerturbation) {
  auto out = run_experiment(parse_config(json{{"experiment", "validate"}, {"validate", {{"trials", 10}}}}));
  EXPECT_EQ(out.status, 0);
  EXPECT_TRUE(out.report["pass"].get<bool>());
  out = run_experiment(parse_config(json{{"experiment", "validate"}, {"validate", {{"trials", 10}, {"perturb", "norm_weight"}}}}));
  EXPECT_EQ(out.status, 1);
  bool duality_failed = false;
  for (const auto& t : out.report["invariants"])
    if (t["name"] == "duality") duality_failed = !t["pass"].get<bool>();
  EXPECT_TRUE(duality_failed);
}
