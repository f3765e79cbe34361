#pragma once

// Optimal closed-loop strategy u = Theta X + (Gamma - Theta) E[X] + v with
// v = phi_bar + phi1 W, and the value function in closed form for
// xi = m + c W(t) + L G.

#include "mflq/affine.hpp"
#include "mflq/core.hpp"
#include "mflq/gre.hpp"

#include <vector>

namespace mflq {

struct ClosedLoopSolution {
  ControlSpec strategy;
  GreSolution gre;
  AffineSolution affine;
  // Regular GRE solution and feasible affine range conditions.
  bool solvable = false;
};

struct ValueResult {
  double value = 0.0;
  // False when the problem is not closed-loop solvable; the number is then
  // only a weak value candidate (the Pi-based quadratic form).
  bool valid = false;
};

inline ClosedLoopSolution synthesize(const ProblemData& p, int n_steps = kDefaultGreSteps) {
  ClosedLoopSolution out;
  out.gre = integrate_gre(p, n_steps);
  out.affine = solve_affine(p, out.gre);
  out.solvable = out.gre.report.regular && out.affine.feasible;

  const TimeGrid& grid = out.gre.grid;
  std::vector<Mat> mean_gain(grid.num_nodes());
  for (int k = 0; k < grid.num_nodes(); ++k) mean_gain[k] = out.gre.Gamma[k] - out.gre.Theta[k];
  out.strategy.feedback = MatrixPath::sampled(grid, out.gre.Theta);
  out.strategy.mean_feedback = MatrixPath::sampled(grid, std::move(mean_gain));
  out.strategy.offset.const_part = detail::vector_path(grid, out.affine.phi_bar);
  out.strategy.offset.noise_part = detail::vector_path(grid, out.affine.phi1);
  out.strategy.offset.anchor = Anchor::running;
  return out;
}

/// Closed-form value at the initial time of the solution grid. The Brownian
/// motion starts at time 0, so E[W(s)^2] = s also for t > 0.
inline ValueResult value(const ClosedLoopSolution& sol, const InitialLaw& law,
                         const ProblemData& p) {
  law.check(p.n);
  const GreSolution& g = sol.gre;
  const AffineSolution& a = sol.affine;
  const TimeGrid& grid = g.grid;
  const double t = grid.t0;

  const Mat Lambda = law.covariance(t);
  double v = (g.P[0] * Lambda).trace();
  v += 2.0 * t * a.eta1[0].dot(law.brownian_load);
  v += (g.Pi[0] * law.mean + 2.0 * a.eta_bar[0]).dot(law.mean);

  const double h = grid.step();
  const int nodes = grid.num_nodes();
  double integral = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double s = grid.node(k);
    const InhomogeneityAt f = inhomogeneity_at(p, s);
    const Mat& P = g.P[k];
    const Vec& eta1 = a.eta1[k];
    const double integrand =
        (P * f.sigma0).dot(f.sigma0) + s * (P * f.sigma1).dot(f.sigma1) +
        2.0 * s * eta1.dot(f.b1) + 2.0 * eta1.dot(f.sigma0) + 2.0 * a.eta_bar[k].dot(f.b0) -
        s * (g.Sigma[k] * a.phi1[k]).dot(a.phi1[k]) -
        (g.Sigma_bar[k] * a.phi_bar[k]).dot(a.phi_bar[k]);
    const double w = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
    integral += w * integrand;
  }
  return {v + integral, sol.solvable};
}

}  // namespace mflq
