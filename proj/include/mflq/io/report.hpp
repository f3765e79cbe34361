#pragma once

// JSON renderings of solver and verification results. Output contains no
// timing or host information, so equal inputs give byte-identical reports.

#include "mflq/gre.hpp"
#include "mflq/io/document.hpp"
#include "mflq/sim.hpp"
#include "mflq/synthesis.hpp"
#include "mflq/verify.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mflq::io {

// JSON has no infinity; non-finite numbers become strings.
inline Json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline Json to_json(const ConditionVerdict& c) {
  return Json{{"name", c.name},
              {"passed", c.passed},
              {"worst_node", c.worst_node},
              {"worst_value", number(c.worst_value)},
              {"failing_nodes", c.failing_nodes}};
}

inline Json to_json(const RegularityReport& rep, const TimeGrid& grid) {
  Json conditions = Json::array();
  for (const auto& c : rep.conditions) {
    Json j = to_json(c);
    if (c.worst_node >= 0) j["worst_time"] = grid.node(c.worst_node);
    conditions.push_back(std::move(j));
  }
  auto ranks = [](const std::vector<int>& r) {
    Json out{{"min", 0}, {"max", 0}};
    if (!r.empty()) {
      out["min"] = *std::min_element(r.begin(), r.end());
      out["max"] = *std::max_element(r.begin(), r.end());
    }
    return out;
  };
  return Json{{"regular", rep.regular},
              {"tol", rep.tol},
              {"grid_steps", rep.grid_steps},
              {"conditions", std::move(conditions)},
              {"rank_sigma", ranks(rep.rank_sigma)},
              {"rank_sigma_bar", ranks(rep.rank_sigma_bar)},
              {"near_rank_change_nodes", rep.near_rank_change_nodes}};
}

/// Strategy and Riccati quantities at the requested times.
inline Json solve_json(const ClosedLoopSolution& sol, const std::vector<double>& times) {
  const GreSolution& g = sol.gre;
  const MatrixPath P = node_path(g, &GreSolution::P);
  const MatrixPath Pi = node_path(g, &GreSolution::Pi);
  Json samples = Json::array();
  for (double s : times) {
    samples.push_back(Json{{"time", s},
                           {"P", to_json(P.at(s))},
                           {"Pi", to_json(Pi.at(s))},
                           {"Theta", to_json(sol.strategy.feedback.at(s))},
                           {"Theta_bar", to_json(sol.strategy.mean_feedback.at(s))},
                           {"v_const", to_json(sol.strategy.offset.const_part.at(s))},
                           {"v_noise", to_json(sol.strategy.offset.noise_part.at(s))}});
  }
  return Json{{"solvable", sol.solvable},
              {"regularity", to_json(g.report, g.grid)},
              {"affine_feasible", sol.affine.feasible},
              {"affine_conditions", {to_json(sol.affine.range_phi), to_json(sol.affine.range_phi_bar)}},
              {"samples", std::move(samples)},
              {"strategy", to_json(sol.strategy)}};
}

inline Json value_json(const ValueResult& v) {
  return Json{{"value", number(v.value)},
              {"valid", v.valid},
              {"label", v.valid ? "value" : "weak value candidate (not certified: no regular solution)"}};
}

inline Json to_json(const SimulationReport& r) {
  Json mean_path = Json::array();
  for (int k = 0; k < r.grid.num_nodes(); ++k) {
    mean_path.push_back(Json{{"time", r.grid.node(k)},
                             {"mean", vector_json(r.mean_path[k])},
                             {"mean_control", vector_json(r.mean_control[k])},
                             {"sample_mean", vector_json(r.sample_mean[k])}});
  }
  return Json{{"cost_mean", number(r.cost_mean)},
              {"cost_stderr", number(r.cost_stderr)},
              {"n_paths", r.n_paths},
              {"n_steps", r.n_steps},
              {"seed", r.seed},
              {"horizon", {{"t", r.grid.t0}, {"T", r.grid.tT}}},
              {"terminal_mean", vector_json(r.terminal_mean)},
              {"terminal_cov", to_json(r.terminal_cov)},
              {"empirical_mean_gap", number(r.empirical_mean_gap)},
              {"empirical_mean_zscore", number(r.empirical_mean_zscore)},
              {"mean_path", std::move(mean_path)}};
}

inline Json to_json(const CheckResult& c) {
  Json meta = Json::object();
  for (const auto& [k, v] : c.metadata) meta[k] = number(v);
  return Json{{"name", c.name},
              {"status", c.passed ? "pass" : "fail"},
              {"discrepancy", number(c.discrepancy)},
              {"tolerance", number(c.tolerance)},
              {"metadata", std::move(meta)}};
}

inline Json to_json(const VerificationReport& rep) {
  Json checks = Json::array();
  for (const auto& c : rep.checks) checks.push_back(to_json(c));
  return checks;
}

}  // namespace mflq::io
