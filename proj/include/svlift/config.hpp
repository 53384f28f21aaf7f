#pragma once

// Run configuration: one JSON document, parsed then validated, with unknown
// keys rejected at every level.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svlift/coefficients.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/error.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/serialize.hpp"

namespace svlift {

enum class Experiment { simulate, equivalence, gauss, couple, harnack, validate };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::simulate: return "simulate";
    case Experiment::equivalence: return "equivalence";
    case Experiment::gauss: return "gauss";
    case Experiment::couple: return "couple";
    case Experiment::harnack: return "harnack";
    case Experiment::validate: return "validate";
  }
  return "?";
}

inline Experiment experiment_from_string(const std::string& s) {
  for (auto e : {Experiment::simulate, Experiment::equivalence, Experiment::gauss, Experiment::couple,
                 Experiment::harnack, Experiment::validate})
    if (to_string(e) == s) return e;
  throw InvalidArgument("experiment: unknown value '" + s + "'");
}

/// How an initial lift state is built.
struct InitialSpec {
  enum class Kind { zero, constant, node, values } kind = Kind::zero;
  std::vector<double> value;  // constant
  std::size_t node = 0;       // node
  double h_norm = 1.0;        // node
  json state;                 // values
};

struct TestFunctionSpec {
  enum class Kind { one, distance, exponential } kind = Kind::one;
  /// distance: cap c; exponential: clip c
  double c = 1.0;
};

struct RunConfig {
  Experiment experiment = Experiment::simulate;
  json kernel;
  std::size_t n = 50;
  DiscretizationScheme disc_scheme = DiscretizationScheme::geometric_moment_match;
  std::vector<double> edges;
  std::optional<double> disc_horizon;
  /// nullopt: default_weight; 0 marks r ≡ 1.
  std::optional<double> weight_p;
  bool weight_given = false;
  CoefficientSpec coefficients;
  SimConfig sim;
  InitialSpec initial;
  InitialSpec ybar;
  std::size_t record_every = 1;
  // equivalence
  double threshold = 1e-10;
  std::size_t refinement_levels = 4;
  // gauss
  double witness_t = 1.0;
  double epsilon = 0.05;
  std::vector<double> trace_times{0.5, 1.0, 2.0, 5.0, 10.0, 50.0};
  // couple / harnack
  std::vector<double> record_times;
  std::string measure = "reference";
  std::optional<double> m_override;
  double fit_from = 1.0;
  std::vector<TestFunctionSpec> functions;
  // validate
  std::string perturb = "none";
  std::size_t trials = 100;

  json source;
};

namespace detail {

inline std::size_t count(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw InvalidArgument(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::string text(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) throw InvalidArgument(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline InitialSpec parse_initial(const json& j, const std::string& where) {
  only_keys(j, {"kind", "value", "node", "h_norm", "state"}, where);
  InitialSpec s;
  const auto kind = text(j, "kind");
  if (kind == "zero") {
    s.kind = InitialSpec::Kind::zero;
  } else if (kind == "constant") {
    s.kind = InitialSpec::Kind::constant;
    s.value = numbers(j, "value");
  } else if (kind == "node") {
    s.kind = InitialSpec::Kind::node;
    s.node = count(j, "node");
    if (j.contains("h_norm")) s.h_norm = number(j, "h_norm");
    require(s.h_norm >= 0.0, where + ".h_norm must be >= 0");
  } else if (kind == "values") {
    s.kind = InitialSpec::Kind::values;
    s.state = field(j, "state");
  } else {
    throw InvalidArgument(where + ".kind: unknown value '" + kind + "'");
  }
  return s;
}

}  // namespace detail

/// Parses and validates a configuration document.
inline RunConfig parse_config(const json& j) {
  using namespace detail;
  RunConfig c;
  c.source = j;
  if (j.is_null()) return c;
  only_keys(j,
            {"experiment", "kernel", "discretization", "weight_p", "coefficients", "sim", "initial", "ybar",
             "record_every", "equivalence", "gauss", "couple", "harnack", "validate"},
            "config");
  if (j.contains("experiment")) c.experiment = experiment_from_string(text(j, "experiment"));
  if (j.contains("kernel")) {
    c.kernel = j.at("kernel");
    (void)kernel_from_json(c.kernel);
  }
  if (j.contains("discretization")) {
    const auto& d = j.at("discretization");
    only_keys(d, {"n", "scheme", "edges", "horizon"}, "discretization");
    if (d.contains("n")) c.n = count(d, "n");
    require(c.n >= 1, "discretization.n must be >= 1");
    if (d.contains("scheme")) {
      const auto s = text(d, "scheme");
      if (s == "geometric-moment-match") c.disc_scheme = DiscretizationScheme::geometric_moment_match;
      else if (s == "user-nodes") c.disc_scheme = DiscretizationScheme::user_nodes;
      else throw InvalidArgument("discretization.scheme: unknown value '" + s + "'");
    }
    if (d.contains("edges")) c.edges = numbers(d, "edges");
    if (d.contains("horizon")) {
      c.disc_horizon = number(d, "horizon");
      require(*c.disc_horizon > 0.0, "discretization.horizon must be > 0");
    }
    if (c.disc_scheme == DiscretizationScheme::user_nodes)
      require(c.edges.size() == c.n + 1, "discretization.edges must hold n + 1 values for user-nodes");
  }
  if (j.contains("weight_p")) {
    c.weight_given = true;
    if (!j.at("weight_p").is_null()) {
      c.weight_p = number(j, "weight_p");
      require(*c.weight_p >= 2.0, "weight_p must be >= 2 (or null for r = 1)");
    }
  }
  if (j.contains("coefficients")) {
    const auto& k = j.at("coefficients");
    only_keys(k, {"dim", "b0", "b1", "s0", "s1", "shape"}, "coefficients");
    if (k.contains("dim")) c.coefficients.dim = static_cast<Eigen::Index>(count(k, "dim"));
    require(c.coefficients.dim >= 1, "coefficients.dim must be >= 1");
    if (k.contains("b0")) c.coefficients.b0 = number(k, "b0");
    if (k.contains("b1")) c.coefficients.b1 = number(k, "b1");
    if (k.contains("s0")) c.coefficients.s0 = number(k, "s0");
    if (k.contains("s1")) c.coefficients.s1 = number(k, "s1");
    if (k.contains("shape")) {
      const auto s = text(k, "shape");
      if (s == "affine") c.coefficients.shape = DiffusionShape::affine;
      else if (s == "tanh") c.coefficients.shape = DiffusionShape::tanh;
      else throw InvalidArgument("coefficients.shape: unknown value '" + s + "'");
    }
  }
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    only_keys(s, {"T", "dt", "n_paths", "seed", "scheme", "threads"}, "sim");
    if (s.contains("T")) c.sim.T = number(s, "T");
    if (s.contains("dt")) c.sim.dt = number(s, "dt");
    if (s.contains("n_paths")) c.sim.n_paths = count(s, "n_paths");
    if (s.contains("seed")) c.sim.seed = count(s, "seed");
    if (s.contains("scheme")) c.sim.scheme = scheme_from_string(text(s, "scheme"));
    if (s.contains("threads")) c.sim.threads = count(s, "threads");
  }
  require(std::isfinite(c.sim.T) && c.sim.T > 0.0, "sim.T must be > 0");
  require(std::isfinite(c.sim.dt) && c.sim.dt > 0.0, "sim.dt must be > 0");
  {
    const double q = c.sim.T / c.sim.dt;
    if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, q) || std::round(q) < 1.0)
      throw InvalidArgument("sim.dt = " + fmt(c.sim.dt) + " does not divide sim.T = " + fmt(c.sim.T));
  }
  require(c.sim.n_paths >= 1, "sim.n_paths must be >= 1");
  if (j.contains("initial")) c.initial = parse_initial(j.at("initial"), "initial");
  if (j.contains("ybar")) c.ybar = parse_initial(j.at("ybar"), "ybar");
  if (j.contains("record_every")) c.record_every = count(j, "record_every");
  require(c.record_every >= 1, "record_every must be >= 1");
  if (j.contains("equivalence")) {
    const auto& e = j.at("equivalence");
    only_keys(e, {"threshold", "refinement_levels"}, "equivalence");
    if (e.contains("threshold")) c.threshold = number(e, "threshold");
    if (e.contains("refinement_levels")) c.refinement_levels = count(e, "refinement_levels");
  }
  if (j.contains("gauss")) {
    const auto& g = j.at("gauss");
    only_keys(g, {"witness_t", "epsilon", "trace_times"}, "gauss");
    if (g.contains("witness_t")) c.witness_t = number(g, "witness_t");
    if (g.contains("epsilon")) c.epsilon = number(g, "epsilon");
    if (g.contains("trace_times")) c.trace_times = numbers(g, "trace_times");
    require(c.witness_t > 0.0, "gauss.witness_t must be > 0");
    require(c.epsilon > 0.0, "gauss.epsilon must be > 0");
  }
  auto parse_functions = [&](const json& arr) {
    require(arr.is_array(), "functions must be an array");
    for (const auto& f : arr) {
      only_keys(f, {"kind", "c"}, "function");
      TestFunctionSpec s;
      const auto kind = text(f, "kind");
      if (kind == "one") s.kind = TestFunctionSpec::Kind::one;
      else if (kind == "distance") s.kind = TestFunctionSpec::Kind::distance;
      else if (kind == "exp") s.kind = TestFunctionSpec::Kind::exponential;
      else throw InvalidArgument("function.kind: unknown value '" + kind + "'");
      if (f.contains("c")) s.c = number(f, "c");
      require(s.c > 0.0, "function.c must be > 0");
      c.functions.push_back(s);
    }
  };
  for (const char* key : {"couple", "harnack"}) {
    if (!j.contains(key)) continue;
    const auto& k = j.at(key);
    only_keys(k, {"record_times", "measure", "m", "fit_from", "functions"}, key);
    if (k.contains("record_times")) c.record_times = numbers(k, "record_times");
    if (k.contains("measure")) c.measure = text(k, "measure");
    require(c.measure == "reference" || c.measure == "shifted", std::string(key) + ".measure must be reference or shifted");
    if (k.contains("m")) c.m_override = number(k, "m");
    if (k.contains("fit_from")) c.fit_from = number(k, "fit_from");
    if (k.contains("functions")) parse_functions(k.at("functions"));
  }
  if (j.contains("validate")) {
    const auto& v = j.at("validate");
    only_keys(v, {"perturb", "trials"}, "validate");
    if (v.contains("perturb")) c.perturb = text(v, "perturb");
    require(c.perturb == "none" || c.perturb == "norm_weight", "validate.perturb must be none or norm_weight");
    if (v.contains("trials")) c.trials = count(v, "trials");
  }
  return c;
}

inline bool has_kernel(const RunConfig& c) { return !c.kernel.is_null(); }

inline Kernel config_kernel(const RunConfig& c) {
  detail::require(has_kernel(c), "config: 'kernel' is required for this experiment");
  return kernel_from_json(c.kernel);
}

inline std::shared_ptr<const DiscreteMeasure> config_measure(const RunConfig& c) {
  const Kernel k = config_kernel(c);
  DiscretizationOptions opt;
  opt.scheme = c.disc_scheme;
  opt.edges = c.edges;
  opt.horizon = c.disc_horizon.value_or(c.sim.T);
  if (c.weight_given) opt.weight = c.weight_p ? WeightFunction::power(*c.weight_p) : WeightFunction::constant_one();
  return std::make_shared<const DiscreteMeasure>(discretize(k, c.n, opt));
}

inline LiftState build_initial(const InitialSpec& s, std::shared_ptr<const DiscreteMeasure> dm, Eigen::Index dim) {
  switch (s.kind) {
    case InitialSpec::Kind::zero: return LiftState::zero(std::move(dm), dim);
    case InitialSpec::Kind::constant: {
      detail::require(static_cast<Eigen::Index>(s.value.size()) == dim, "initial.value must have n entries");
      return LiftState::constant(std::move(dm), Eigen::Map<const Vector>(s.value.data(), dim));
    }
    case InitialSpec::Kind::node: {
      detail::require(s.node < dm->size(), "initial.node is out of range");
      Matrix v = Matrix::Zero(static_cast<Eigen::Index>(dm->size()), dim);
      const double w = dm->weights()[s.node] * dm->r_values()[s.node];
      v(static_cast<Eigen::Index>(s.node), 0) = s.h_norm / std::sqrt(w);
      return {std::move(dm), std::move(v)};
    }
    case InitialSpec::Kind::values: {
      auto y = lift_state_from_json(s.state, std::move(dm));
      detail::require(y.dim() == dim, "initial.state has the wrong dimension");
      return y;
    }
  }
  throw InvalidArgument("initial: bad kind");
}

/// FNV-1a of the canonical (sorted-key) dump.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const json& j) { return hex64(fnv1a(j.dump())); }

}  // namespace svlift
