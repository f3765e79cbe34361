#pragma once

// Affine part of the optimal strategy for noise-affine inputs.
//
// With eta = eta0 + eta1 W and zeta = eta1, the linear BSDE
//   d eta = -[(A+B Theta)' eta + (C+D Theta)' zeta + (C+D Theta)' P sigma
//             + Theta' rho + P b + q] ds + zeta dW,   eta(T) = g0 + g1 W(T),
// splits into two backward ODEs by matching the W coefficient. The mean part
// eta_bar solves a deterministic terminal value problem driven by Gamma.

#include "mflq/core.hpp"
#include "mflq/gre.hpp"
#include "mflq/linalg.hpp"
#include "mflq/ode.hpp"

#include <string>
#include <vector>

namespace mflq {

struct EtaPaths {
  std::vector<Vec> eta0;
  std::vector<Vec> eta1;  // also zeta
};

struct Corrections {
  std::vector<Vec> phi1;  // phi(s) = phi1(s) W(s)
  std::vector<Vec> phi_bar;
  bool feasible = true;
  ConditionVerdict range_phi{"range(Sigma) for phi"};
  ConditionVerdict range_phi_bar{"range(Sigma_bar) for phi_bar"};
};

struct AffineSolution {
  TimeGrid grid;
  std::vector<Vec> eta0, eta1, eta_bar;
  std::vector<Vec> phi1, phi_bar;
  bool feasible = true;
  ConditionVerdict range_phi;
  ConditionVerdict range_phi_bar;
};

namespace detail {

inline void check_escape(const Vec& y, const TimeGrid& grid, int k, const char* what) {
  if (!y.allFinite() || y.norm() > kBlowUpNorm) {
    throw FiniteEscapeError(std::string(what) + " escapes at node " + std::to_string(k - 1) +
                                " (s = " + std::to_string(grid.node(k - 1)) +
                                "); last valid node " + std::to_string(k),
                            k - 1, k);
  }
}

inline MatrixPath vector_path(const TimeGrid& grid, const std::vector<Vec>& values) {
  std::vector<Mat> samples(values.begin(), values.end());
  return MatrixPath::sampled(grid, std::move(samples));
}

}  // namespace detail

/// Backward RK4 for (eta0, eta1) on the grid of `sol`.
inline EtaPaths solve_eta(const ProblemData& p, const GreSolution& sol) {
  const TimeGrid& grid = sol.grid;
  const int N = grid.n_steps;
  const int n = p.n;
  const MatrixPath P = node_path(sol, &GreSolution::P);
  const MatrixPath Theta = node_path(sol, &GreSolution::Theta);

  auto rhs = [&](double s, const Vec& y) {
    const CoefficientsAt c = coefficients_at(p, s);
    const InhomogeneityAt f = inhomogeneity_at(p, s);
    const Mat Ps = P.at(s);
    const Mat Th = Theta.at(s);
    const Mat Acl = c.A + c.B * Th;
    const Mat Ccl = c.C + c.D * Th;
    const auto eta0 = y.head(n);
    const auto eta1 = y.tail(n);
    Vec dy(2 * n);
    dy.tail(n) = -(Acl.transpose() * eta1 + Ccl.transpose() * Ps * f.sigma1 +
                   Th.transpose() * f.rho1 + Ps * f.b1 + f.q1);
    dy.head(n) = -(Acl.transpose() * eta0 + Ccl.transpose() * eta1 +
                   Ccl.transpose() * Ps * f.sigma0 + Th.transpose() * f.rho0 + Ps * f.b0 + f.q0);
    return dy;
  };

  EtaPaths out;
  out.eta0.resize(N + 1);
  out.eta1.resize(N + 1);
  Vec y(2 * n);
  y << p.g0, p.g1;
  out.eta0[N] = p.g0;
  out.eta1[N] = p.g1;
  const double h = grid.step();
  for (int k = N; k > 0; --k) {
    y = rk4_step(y, grid.node(k), -h, rhs);
    detail::check_escape(y, grid, k, "eta");
    out.eta0[k - 1] = y.head(n);
    out.eta1[k - 1] = y.tail(n);
  }
  return out;
}

/// Backward RK4 for eta_bar with E[zeta] = eta1, E[sigma] = sigma0,
/// E[rho] = rho0, E[q] = q0, E[b] = b0 and eta_bar(T) = g0 + g_bar.
inline std::vector<Vec> solve_eta_bar(const ProblemData& p, const GreSolution& sol,
                                      const std::vector<Vec>& eta1) {
  const TimeGrid& grid = sol.grid;
  const int N = grid.n_steps;
  const MatrixPath P = node_path(sol, &GreSolution::P);
  const MatrixPath Pi = node_path(sol, &GreSolution::Pi);
  const MatrixPath Gamma = node_path(sol, &GreSolution::Gamma);
  const MatrixPath zeta_mean = detail::vector_path(grid, eta1);

  auto rhs = [&](double s, const Vec& eta_bar) {
    const CoefficientsAt c = coefficients_at(p, s);
    const InhomogeneityAt f = inhomogeneity_at(p, s);
    const Mat Ps = P.at(s);
    const Mat Ga = Gamma.at(s);
    const Vec noise_mean = Ps * f.sigma0 + zeta_mean.at(s);  // P E[sigma] + E[zeta]
    const Mat drift = (c.A + c.A_bar) + (c.B + c.B_bar) * Ga;
    return Vec(-(drift.transpose() * eta_bar +
                 Ga.transpose() * ((c.D + c.D_bar).transpose() * noise_mean + f.rho0 + f.rho_bar) +
                 (c.C + c.C_bar).transpose() * noise_mean + f.q0 + f.q_bar + Pi.at(s) * f.b0));
  };

  std::vector<Vec> out(N + 1);
  Vec y = p.g0 + p.g_bar;
  out[N] = y;
  const double h = grid.step();
  for (int k = N; k > 0; --k) {
    y = rk4_step(y, grid.node(k), -h, rhs);
    detail::check_escape(y, grid, k, "eta_bar");
    out[k - 1] = y;
  }
  return out;
}

/// phi1 = -Sigma^+ (B' eta1 + D' P sigma1 + rho1),
/// phi_bar = -Sigma_bar^+ [(B+Bb)' eta_bar + (D+Db)'(P sigma0 + eta1) + rho0 + rho_bar],
/// with nodewise range checks of both arguments.
inline Corrections compute_corrections(const ProblemData& p, const GreSolution& sol,
                                       const std::vector<Vec>& eta1,
                                       const std::vector<Vec>& eta_bar,
                                       double tol = kRegularityTol) {
  Corrections out;
  const int nodes = sol.grid.num_nodes();
  out.phi1.resize(nodes);
  out.phi_bar.resize(nodes);
  auto track = [](ConditionVerdict& v, const RangeResult& r, int k) {
    if (v.worst_node < 0 || r.residual > v.worst_value) {
      v.worst_value = r.residual;
      v.worst_node = k;
    }
    if (!r.contained) {
      v.passed = false;
      ++v.failing_nodes;
    }
  };
  for (int k = 0; k < nodes; ++k) {
    const double s = sol.grid.node(k);
    const CoefficientsAt c = coefficients_at(p, s);
    const InhomogeneityAt f = inhomogeneity_at(p, s);
    const Mat& P = sol.P[k];
    const Vec fluct = c.B.transpose() * eta1[k] + c.D.transpose() * P * f.sigma1 + f.rho1;
    const Vec mean = (c.B + c.B_bar).transpose() * eta_bar[k] +
                     (c.D + c.D_bar).transpose() * (P * f.sigma0 + eta1[k]) + f.rho0 + f.rho_bar;
    out.phi1[k] = -sol.Sigma_pinv[k].pinv * fluct;
    out.phi_bar[k] = -sol.Sigma_bar_pinv[k].pinv * mean;
    track(out.range_phi, range_contained(fluct, sol.Sigma[k], tol), k);
    track(out.range_phi_bar, range_contained(mean, sol.Sigma_bar[k], tol), k);
  }
  out.feasible = out.range_phi.passed && out.range_phi_bar.passed;
  return out;
}

inline AffineSolution solve_affine(const ProblemData& p, const GreSolution& sol) {
  AffineSolution out;
  out.grid = sol.grid;
  EtaPaths eta = solve_eta(p, sol);
  out.eta_bar = solve_eta_bar(p, sol, eta.eta1);
  Corrections corr = compute_corrections(p, sol, eta.eta1, out.eta_bar);
  out.eta0 = std::move(eta.eta0);
  out.eta1 = std::move(eta.eta1);
  out.phi1 = std::move(corr.phi1);
  out.phi_bar = std::move(corr.phi_bar);
  out.feasible = corr.feasible;
  out.range_phi = std::move(corr.range_phi);
  out.range_phi_bar = std::move(corr.range_phi_bar);
  return out;
}

}  // namespace mflq
