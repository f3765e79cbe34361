#pragma once

// Coupled generalized Riccati equations for (P, Pi):
//
//   P' + PA + A'P + C'PC + Q - (PB + C'PD + S')(R + D'PD)^+ (B'P + D'PC + S) = 0,
//   Pi' + Pi(A+Ab) + (A+Ab)'Pi + Q+Qb + (C+Cb)'P(C+Cb)
//       - [Pi(B+Bb) + (C+Cb)'P(D+Db) + (S+Sb)'] Sb^+ [...]' = 0,
//   P(T) = G, Pi(T) = G + Gb,
//
// integrated backward with RK4, plus the regularity assessment of the result.

#include "mflq/core.hpp"
#include "mflq/linalg.hpp"
#include "mflq/ode.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mflq {

inline constexpr int kDefaultGreSteps = 1000;
inline constexpr double kRegularityTol = 1e-8;
inline constexpr double kBlowUpNorm = 1e12;

struct ConditionVerdict {
  std::string name;
  bool passed = true;
  int worst_node = -1;
  // Most negative eigenvalue for positivity, largest residual for range,
  // trapezoid integral of |gain|^2 for L2.
  double worst_value = 0.0;
  int failing_nodes = 0;
};

struct RegularityReport {
  bool regular = false;
  double tol = kRegularityTol;
  int grid_steps = 0;
  // positive(Sigma), positive(Sigma_bar), range(Sigma), range(Sigma_bar),
  // L2(Sigma), L2(Sigma_bar).
  std::array<ConditionVerdict, 6> conditions;
  std::vector<int> rank_sigma;
  std::vector<int> rank_sigma_bar;
  // Nodes where the smallest kept singular value sits within 10x of the cutoff.
  std::vector<int> near_rank_change_nodes;

  const ConditionVerdict& condition(std::string_view name) const {
    for (const auto& c : conditions) {
      if (c.name == name) return c;
    }
    throw std::out_of_range("unknown regularity condition " + std::string(name));
  }
};

struct GreSolution {
  TimeGrid grid;
  std::vector<Mat> P, Pi;
  std::vector<Mat> Sigma, Sigma_bar;
  // B'P + D'PC + S and (B+Bb)'Pi + (D+Db)'P(C+Cb) + (S+Sb).
  std::vector<Mat> cross, cross_bar;
  std::vector<Mat> Theta, Gamma;
  std::vector<PinvResult> Sigma_pinv, Sigma_bar_pinv;
  RegularityReport report;
};

namespace detail {

struct RiccatiBlock {
  Mat weight;  // R + D'PD
  Mat cross;   // B'X + D'PC + S
  PinvResult weight_pinv;
};

inline RiccatiBlock riccati_block(const Mat& X, const Mat& P, const Mat& B, const Mat& C,
                                  const Mat& D, const Mat& S, const Mat& R) {
  RiccatiBlock blk;
  blk.weight = symmetrize(R + D.transpose() * P * D);
  blk.cross = B.transpose() * X + D.transpose() * P * C + S;
  blk.weight_pinv = pinv(blk.weight);
  return blk;
}

// dX/ds of X' + XA + A'X + C'PC + Q - cross' weight^+ cross = 0.
inline Mat riccati_derivative(const Mat& X, const Mat& P, const Mat& A, const Mat& C,
                              const Mat& Q, const RiccatiBlock& blk) {
  const Mat F = X * A + A.transpose() * X + C.transpose() * P * C + Q -
                blk.cross.transpose() * blk.weight_pinv.pinv * blk.cross;
  return -symmetrize(F);
}

struct MeanFieldSums {
  Mat A, B, C, D, Q, S, R;
};

inline MeanFieldSums sums(const CoefficientsAt& c) {
  return {c.A + c.A_bar, c.B + c.B_bar, c.C + c.C_bar, c.D + c.D_bar,
          c.Q + c.Q_bar, c.S + c.S_bar, c.R + c.R_bar};
}

inline RiccatiBlock p_block(const Mat& P, const CoefficientsAt& c) {
  return riccati_block(P, P, c.B, c.C, c.D, c.S, c.R);
}

inline RiccatiBlock pi_block(const Mat& P, const Mat& Pi, const MeanFieldSums& t) {
  return riccati_block(Pi, P, t.B, t.C, t.D, t.S, t.R);
}

struct GrePair {
  Mat P, Pi;
};

inline GrePair operator+(const GrePair& a, const GrePair& b) { return {a.P + b.P, a.Pi + b.Pi}; }
inline GrePair operator*(double s, const GrePair& a) { return {s * a.P, s * a.Pi}; }

}  // namespace detail

/// Right-hand sides (dP/ds, dPi/ds), symmetrized.
inline std::pair<Mat, Mat> gre_rhs(const Mat& P, const Mat& Pi, double s, const ProblemData& p) {
  const CoefficientsAt c = coefficients_at(p, s);
  const detail::MeanFieldSums t = detail::sums(c);
  const detail::RiccatiBlock pb = detail::p_block(P, c);
  const detail::RiccatiBlock qb = detail::pi_block(P, Pi, t);
  return {detail::riccati_derivative(P, P, c.A, c.C, c.Q, pb),
          detail::riccati_derivative(Pi, P, t.A, t.C, t.Q, qb)};
}

/// Condition checks at every node of an integrated solution.
inline RegularityReport assess_regularity(const GreSolution& sol, const ProblemData& p,
                                          double tol = kRegularityTol) {
  (void)p;
  RegularityReport rep;
  rep.tol = tol;
  rep.grid_steps = sol.grid.n_steps;
  rep.conditions = {ConditionVerdict{"positive(Sigma)"}, ConditionVerdict{"positive(Sigma_bar)"},
                    ConditionVerdict{"range(Sigma)"},    ConditionVerdict{"range(Sigma_bar)"},
                    ConditionVerdict{"L2(Sigma)"},       ConditionVerdict{"L2(Sigma_bar)"}};
  auto& pos = rep.conditions[0];
  auto& pos_bar = rep.conditions[1];
  auto& rng = rep.conditions[2];
  auto& rng_bar = rep.conditions[3];
  auto& l2 = rep.conditions[4];
  auto& l2_bar = rep.conditions[5];
  pos.worst_value = pos_bar.worst_value = std::numeric_limits<double>::infinity();

  const int nodes = sol.grid.num_nodes();
  const double h = sol.grid.step();
  double theta_sq = 0.0;
  double gamma_sq = 0.0;
  double theta_peak = -1.0;
  double gamma_peak = -1.0;

  auto track_psd = [](ConditionVerdict& v, const PsdResult& r, int k) {
    if (r.min_eigenvalue < v.worst_value) {
      v.worst_value = r.min_eigenvalue;
      v.worst_node = k;
    }
    if (!r.psd) {
      v.passed = false;
      ++v.failing_nodes;
    }
  };
  auto track_range = [](ConditionVerdict& v, const RangeResult& r, int k) {
    if (v.worst_node < 0 || r.residual > v.worst_value) {
      v.worst_value = r.residual;
      v.worst_node = k;
    }
    if (!r.contained) {
      v.passed = false;
      ++v.failing_nodes;
    }
  };
  auto track_gain = [&](ConditionVerdict& v, const Mat& gain, int k, double& integral,
                        double& peak) {
    const double w = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
    if (!gain.allFinite()) {
      v.passed = false;
      ++v.failing_nodes;
      if (v.worst_node < 0) v.worst_node = k;
      return;
    }
    const double sq = gain.squaredNorm();
    integral += w * sq;
    if (sq > peak) {
      peak = sq;
      v.worst_node = k;
    }
  };

  for (int k = 0; k < nodes; ++k) {
    track_psd(pos, is_psd(sol.Sigma[k], tol), k);
    track_psd(pos_bar, is_psd(sol.Sigma_bar[k], tol), k);
    track_range(rng, range_contained(sol.cross[k], sol.Sigma[k], tol), k);
    track_range(rng_bar, range_contained(sol.cross_bar[k], sol.Sigma_bar[k], tol), k);
    track_gain(l2, sol.Theta[k], k, theta_sq, theta_peak);
    track_gain(l2_bar, sol.Gamma[k], k, gamma_sq, gamma_peak);

    const auto& sp = sol.Sigma_pinv[k];
    const auto& sbp = sol.Sigma_bar_pinv[k];
    rep.rank_sigma.push_back(sp.rank);
    rep.rank_sigma_bar.push_back(sbp.rank);
    const bool near = (sp.rank > 0 && sp.smallest_retained < 10.0 * sp.tol_used) ||
                      (sbp.rank > 0 && sbp.smallest_retained < 10.0 * sbp.tol_used);
    if (near) rep.near_rank_change_nodes.push_back(k);
  }
  l2.worst_value = theta_sq;
  l2_bar.worst_value = gamma_sq;
  if (!std::isfinite(theta_sq)) l2.passed = false;
  if (!std::isfinite(gamma_sq)) l2_bar.passed = false;

  rep.regular = true;
  for (const auto& c : rep.conditions) rep.regular = rep.regular && c.passed;
  return rep;
}

/// Backward RK4 integration on `n_steps` uniform steps of the horizon.
/// Throws FiniteEscapeError when |P| or |Pi| exceeds 1e12.
inline GreSolution integrate_gre(const ProblemData& p, int n_steps = kDefaultGreSteps) {
  require_valid(p);
  if (n_steps < 1) throw std::invalid_argument("integrate_gre: n_steps must be positive");
  GreSolution sol;
  sol.grid = p.horizon.with_steps(n_steps);
  const int N = n_steps;
  const double h = sol.grid.step();
  sol.P.resize(N + 1);
  sol.Pi.resize(N + 1);
  sol.P[N] = p.G;
  sol.Pi[N] = p.G + p.G_bar;

  auto rhs = [&p](double s, const detail::GrePair& y) {
    auto [dP, dPi] = gre_rhs(y.P, y.Pi, s, p);
    return detail::GrePair{std::move(dP), std::move(dPi)};
  };

  detail::GrePair y{sol.P[N], sol.Pi[N]};
  for (int k = N; k > 0; --k) {
    y = rk4_step(y, sol.grid.node(k), -h, rhs);
    const bool finite = y.P.allFinite() && y.Pi.allFinite();
    if (!finite || y.P.norm() > kBlowUpNorm || y.Pi.norm() > kBlowUpNorm) {
      throw FiniteEscapeError("Riccati solution escapes at node " + std::to_string(k - 1) +
                                  " (s = " + std::to_string(sol.grid.node(k - 1)) +
                                  "); last valid node " + std::to_string(k),
                              k - 1, k);
    }
    sol.P[k - 1] = y.P;
    sol.Pi[k - 1] = y.Pi;
  }

  const int nodes = N + 1;
  sol.Sigma.resize(nodes);
  sol.Sigma_bar.resize(nodes);
  sol.cross.resize(nodes);
  sol.cross_bar.resize(nodes);
  sol.Theta.resize(nodes);
  sol.Gamma.resize(nodes);
  sol.Sigma_pinv.resize(nodes);
  sol.Sigma_bar_pinv.resize(nodes);
  for (int k = 0; k < nodes; ++k) {
    const CoefficientsAt c = coefficients_at(p, sol.grid.node(k));
    const detail::MeanFieldSums t = detail::sums(c);
    detail::RiccatiBlock pb = detail::p_block(sol.P[k], c);
    detail::RiccatiBlock qb = detail::pi_block(sol.P[k], sol.Pi[k], t);
    sol.Theta[k] = -pb.weight_pinv.pinv * pb.cross;
    sol.Gamma[k] = -qb.weight_pinv.pinv * qb.cross;
    sol.Sigma[k] = std::move(pb.weight);
    sol.Sigma_bar[k] = std::move(qb.weight);
    sol.cross[k] = std::move(pb.cross);
    sol.cross_bar[k] = std::move(qb.cross);
    sol.Sigma_pinv[k] = std::move(pb.weight_pinv);
    sol.Sigma_bar_pinv[k] = std::move(qb.weight_pinv);
  }
  sol.report = assess_regularity(sol, p);
  return sol;
}

struct GainPaths {
  MatrixPath theta;
  MatrixPath gamma;
  // |Sigma Theta + cross| and |Sigma_bar Gamma + cross_bar| per node.
  std::vector<double> theta_residual;
  std::vector<double> gamma_residual;
};

inline GainPaths gains(const GreSolution& sol) {
  GainPaths out;
  out.theta = MatrixPath::sampled(sol.grid, sol.Theta);
  out.gamma = MatrixPath::sampled(sol.grid, sol.Gamma);
  for (int k = 0; k < sol.grid.num_nodes(); ++k) {
    out.theta_residual.push_back(op_norm(sol.Sigma[k] * sol.Theta[k] + sol.cross[k]));
    out.gamma_residual.push_back(op_norm(sol.Sigma_bar[k] * sol.Gamma[k] + sol.cross_bar[k]));
  }
  return out;
}

/// Per-node quantities of a solution as interpolating paths.
inline MatrixPath node_path(const GreSolution& sol, const std::vector<Mat> GreSolution::*field) {
  return MatrixPath::sampled(sol.grid, sol.*field);
}

}  // namespace mflq
