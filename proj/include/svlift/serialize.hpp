#pragma once

// JSON and CSV forms of kernels, measures, lift states and reports.
// Doubles are written in shortest round-trip form, so JSON round trips are
// value-exact.

#include <cinttypes>
#include <cstdio>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svlift/coupling.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/error.hpp"
#include "svlift/gauss.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"

namespace svlift {

using json = nlohmann::json;

namespace detail {

inline const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline double number(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number()) throw InvalidArgument(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

inline std::vector<double> numbers(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_array()) throw InvalidArgument(std::string("field '") + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw InvalidArgument(std::string("field '") + key + "' must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* allowed : keys) known = known || k == allowed;
    if (!known) throw InvalidArgument(where + ": unknown key '" + k + "'");
  }
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

inline json to_json(const Kernel& k) {
  return std::visit(detail::overloaded{
                        [](const ExponentialSum& e) {
                          return json{{"variant", "exponential_sum"}, {"nodes", e.nodes}, {"weights", e.weights}};
                        },
                        [](const FractionalKernel& f) { return json{{"variant", "fractional"}, {"alpha", f.alpha}}; },
                        [](const GammaKernel& g) {
                          return json{{"variant", "gamma"}, {"alpha", g.alpha}, {"beta", g.beta}};
                        },
                        [](const ShiftedKernel& s) {
                          return json{{"variant", "shifted"}, {"delta", s.delta}, {"base", to_json(*s.base)}};
                        },
                        [](const DampedKernel& d) {
                          return json{{"variant", "damped"}, {"beta", d.beta}, {"base", to_json(*d.base)}};
                        },
                    },
                    k.variant());
}

inline Kernel kernel_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("kernel: expected a JSON object");
  const auto& v = detail::field(j, "variant");
  if (!v.is_string()) throw InvalidArgument("kernel: 'variant' must be a string");
  const auto name = v.get<std::string>();
  if (name == "exponential_sum") {
    detail::only_keys(j, {"variant", "nodes", "weights"}, "kernel");
    return Kernel::exponential_sum(detail::numbers(j, "nodes"), detail::numbers(j, "weights"));
  }
  if (name == "fractional") {
    detail::only_keys(j, {"variant", "alpha"}, "kernel");
    return Kernel::fractional(detail::number(j, "alpha"));
  }
  if (name == "gamma") {
    detail::only_keys(j, {"variant", "alpha", "beta"}, "kernel");
    return Kernel::gamma(detail::number(j, "alpha"), detail::number(j, "beta"));
  }
  if (name == "shifted") {
    detail::only_keys(j, {"variant", "delta", "base"}, "kernel");
    return Kernel::shifted(kernel_from_json(detail::field(j, "base")), detail::number(j, "delta"));
  }
  if (name == "damped") {
    detail::only_keys(j, {"variant", "beta", "base"}, "kernel");
    return Kernel::damped(kernel_from_json(detail::field(j, "base")), detail::number(j, "beta"));
  }
  throw InvalidArgument("kernel: unknown variant '" + name + "'");
}

inline json to_json(const DiscreteMeasure& dm) {
  json j{{"nodes", dm.nodes()}, {"weights", dm.weights()}};
  const auto p = dm.weight_function().exponent();
  j["weight_p"] = p ? json(*p) : json(nullptr);
  return j;
}

inline DiscreteMeasure measure_from_json(const json& j) {
  detail::only_keys(j, {"nodes", "weights", "weight_p"}, "measure");
  WeightFunction r = WeightFunction::constant_one();
  if (j.contains("weight_p") && !j.at("weight_p").is_null()) r = WeightFunction::power(detail::number(j, "weight_p"));
  return {detail::numbers(j, "nodes"), detail::numbers(j, "weights"), r};
}

inline std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline json to_json(const LiftState& y) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < y.nodes(); ++i) {
    json row = json::array();
    for (Eigen::Index l = 0; l < y.dim(); ++l) row.push_back(y.values()(i, l));
    rows.push_back(std::move(row));
  }
  return {{"nodes_ref", hex64(y.measure().fingerprint())}, {"values", std::move(rows)}};
}

/// Rejects states serialized on a different measure.
inline LiftState lift_state_from_json(const json& j, std::shared_ptr<const DiscreteMeasure> dm) {
  detail::only_keys(j, {"nodes_ref", "values"}, "lift state");
  const auto& ref = detail::field(j, "nodes_ref");
  if (!ref.is_string() || ref.get<std::string>() != hex64(dm->fingerprint()))
    throw MeasureMismatch("lift state: nodes_ref does not match the measure");
  const auto& rows = detail::field(j, "values");
  if (!rows.is_array() || rows.size() != dm->size()) throw InvalidArgument("lift state: one row per node required");
  const auto n = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  Matrix v(static_cast<Eigen::Index>(dm->size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || static_cast<Eigen::Index>(rows[i].size()) != n)
      throw InvalidArgument("lift state: ragged values");
    for (Eigen::Index l = 0; l < n; ++l) v(static_cast<Eigen::Index>(i), l) = rows[i][static_cast<std::size_t>(l)].get<double>();
  }
  return {std::move(dm), std::move(v)};
}

/// Columns t, X_1..X_n and, when with_lift, Y_<node>_<component>.
inline void write_csv(std::ostream& os, const SimPath& p, bool with_lift = false) {
  os << "t";
  for (Eigen::Index l = 0; l < p.x.cols(); ++l) os << ",X_" << l + 1;
  const bool lift = with_lift && !p.lift.empty();
  if (lift)
    for (Eigen::Index i = 0; i < p.lift.front().nodes(); ++i)
      for (Eigen::Index l = 0; l < p.lift.front().dim(); ++l) os << ",Y_" << i << "_" << l + 1;
  os << "\n";
  for (std::size_t k = 0; k < p.times.size(); ++k) {
    os << detail::fmt(p.times[k]);
    for (Eigen::Index l = 0; l < p.x.cols(); ++l) os << "," << detail::fmt(p.x(static_cast<Eigen::Index>(k), l));
    if (lift)
      for (Eigen::Index i = 0; i < p.lift[k].nodes(); ++i)
        for (Eigen::Index l = 0; l < p.lift[k].dim(); ++l) os << "," << detail::fmt(p.lift[k].values()(i, l));
    os << "\n";
  }
}

/// Columns t, then mean/var/stderr per statistic component.
inline void write_csv(std::ostream& os, const EnsembleStats& e) {
  os << "t";
  for (Eigen::Index l = 0; l < e.mean.cols(); ++l) os << ",mean_" << l + 1 << ",var_" << l + 1 << ",stderr_" << l + 1;
  os << "\n";
  for (std::size_t k = 0; k < e.t.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    os << detail::fmt(e.t[k]);
    for (Eigen::Index l = 0; l < e.mean.cols(); ++l)
      os << "," << detail::fmt(e.mean(kk, l)) << "," << detail::fmt(e.var(kk, l)) << ","
         << detail::fmt(e.stderr_mean(kk, l));
    os << "\n";
  }
}

/// {"t": [...], "mean": [...], "var": [...], "stderr": [...]}; rows per time when n > 1.
inline json to_json(const EnsembleStats& e) {
  auto col = [&](const Matrix& m) {
    json out = json::array();
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      if (m.cols() == 1) {
        out.push_back(m(k, 0));
      } else {
        json row = json::array();
        for (Eigen::Index l = 0; l < m.cols(); ++l) row.push_back(m(k, l));
        out.push_back(std::move(row));
      }
    }
    return out;
  };
  return {{"t", e.t},           {"mean", col(e.mean)},     {"var", col(e.var)},
          {"stderr", col(e.stderr_mean)}, {"n_paths", e.n_paths}, {"aborted", e.aborted}};
}

/// Dense node-indexed matrix with a header row of node values.
inline void write_matrix_csv(std::ostream& os, const Matrix& m, const std::vector<double>& nodes) {
  os << "theta";
  for (double th : nodes) os << "," << detail::fmt(th);
  os << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << detail::fmt(nodes[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << "," << detail::fmt(m(i, j));
    os << "\n";
  }
}

inline json to_json(const WitnessReport& w) {
  return {{"t", w.t},
          {"epsilon", w.epsilon},
          {"band", {w.band_begin, w.band_end}},
          {"ratio", w.ratio},
          {"achievable", w.achievable},
          {"mass_bound", w.mass_bound},
          {"band_mass", w.band_mass},
          {"cap", w.cap}};
}

inline json to_json(const HarnackPoint& h) {
  return {{"t", h.t},         {"f_id", h.f_id},         {"lhs", h.lhs},
          {"lhs_se", h.lhs_se}, {"rhs", h.rhs},           {"rhs_se", h.rhs_se},
          {"log_pf", h.log_pf}, {"entropy_term", h.entropy_term}, {"decay_term", h.decay_term},
          {"margin_sigmas", h.margin_sigmas}, {"pass", h.pass}};
}

/// Columns t, estimate, stderr, bound.
inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
  os << "t,estimate,stderr,bound\n";
  for (const auto& c : curve)
    os << detail::fmt(c.t) << "," << detail::fmt(c.estimate) << "," << detail::fmt(c.stderr_) << ","
       << detail::fmt(c.bound) << "\n";
}

inline json to_json(const std::vector<CurvePoint>& curve) {
  json out = json::array();
  for (const auto& c : curve)
    out.push_back({{"t", c.t}, {"estimate", c.estimate}, {"stderr", c.stderr_}, {"bound", c.bound}, {"ok", c.ok}});
  return out;
}

}  // namespace svlift
