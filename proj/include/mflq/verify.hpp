#pragma once

// Independent cross-checks: a brute-force QP over discretized open-loop
// controls, the completion-of-squares identity, a randomized lower-bound
// battery and the no-mean-field degeneration of the Riccati pair.

#include "mflq/core.hpp"
#include "mflq/gre.hpp"
#include "mflq/linalg.hpp"
#include "mflq/sim.hpp"
#include "mflq/synthesis.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mflq {

struct CheckResult {
  std::string name;
  bool passed = false;
  double discrepancy = 0.0;
  double tolerance = 0.0;
  std::map<std::string, double> metadata;
};

inline CheckResult make_check(std::string name, double discrepancy, double tolerance,
                              std::map<std::string, double> metadata = {}) {
  return {std::move(name), discrepancy <= tolerance, discrepancy, tolerance, std::move(metadata)};
}

struct VerificationReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

// ---------------------------------------------------------------------------
// QP oracle

struct QpResult {
  bool bounded = false;
  double cost = 0.0;
  Vec controls;  // stacked u_0, ..., u_{K-1}
  int steps = 0;
  std::string status;  // "solved", "indefinite" or "inconsistent"
};

/// True when the state is deterministic for deterministic controls and x.
inline bool is_noiseless(const ProblemData& p) {
  return p.C.is_zero() && p.C_bar.is_zero() && p.D.is_zero() && p.D_bar.is_zero() &&
         p.sigma.is_zero() && p.b.noise_part.is_zero() && p.q.noise_part.is_zero() &&
         p.rho.noise_part.is_zero() && p.g1.isZero(0.0);
}

/// Forward-Euler discretization with K piecewise-constant controls and
/// left-endpoint running cost. Without noise E[X] = X, so the cost is a
/// quadratic U'HU + 2f'U + c in the stacked controls. H columns and f are
/// assembled with one forward sensitivity pass and one adjoint pass each.
inline QpResult qp_oracle(const ProblemData& p, const Vec& x, int K) {
  require_valid(p);
  if (!is_noiseless(p)) {
    throw std::invalid_argument("qp_oracle: problem must be noiseless (C, C_bar, D, D_bar, sigma "
                                "and all noise parts zero)");
  }
  if (x.size() != p.n) throw std::invalid_argument("qp_oracle: initial state has wrong size");
  if (K < 1) throw std::invalid_argument("qp_oracle: K must be positive");

  const int n = p.n;
  const int m = p.m;
  const TimeGrid grid = p.horizon.with_steps(K);
  const double h = grid.step();
  const Mat I = Mat::Identity(n, n);

  std::vector<Mat> Phi(K), hB(K), Wq(K + 1), hS(K), hR(K);
  std::vector<Vec> hb(K), lq(K + 1), lr(K);
  for (int k = 0; k < K; ++k) {
    const double s = grid.node(k);
    const CoefficientsAt c = coefficients_at(p, s);
    const InhomogeneityAt f = inhomogeneity_at(p, s);
    Phi[k] = I + h * (c.A + c.A_bar);
    hB[k] = h * (c.B + c.B_bar);
    hb[k] = h * f.b0;
    Wq[k] = h * (c.Q + c.Q_bar);
    hS[k] = h * (c.S + c.S_bar);
    hR[k] = h * (c.R + c.R_bar);
    lq[k] = h * (f.q0 + f.q_bar);
    lr[k] = h * (f.rho0 + f.rho_bar);
  }
  Wq[K] = p.G + p.G_bar;
  lq[K] = p.g0 + p.g_bar;

  // Psi' z for a state-space vector z (one n-block per node).
  auto adjoint = [&](const std::vector<Vec>& z) {
    Vec out(m * K);
    Vec lambda = z[K];
    for (int k = K - 1; k >= 0; --k) {
      out.segment(k * m, m) = hB[k].transpose() * lambda;
      lambda = z[k] + Phi[k].transpose() * lambda;
    }
    return out;
  };

  // Uncontrolled trajectory chi.
  std::vector<Vec> chi(K + 1);
  chi[0] = x;
  for (int k = 0; k < K; ++k) chi[k + 1] = Phi[k] * chi[k] + hb[k];

  const int dim = m * K;
  Mat H = Mat::Zero(dim, dim);
  Mat WsPsi = Mat::Zero(dim, dim);
  std::vector<Vec> y(K + 1, Vec::Zero(n)), z(K + 1, Vec::Zero(n));
  for (int j = 0; j < dim; ++j) {
    const int blk = j / m;
    const int comp = j % m;
    for (int k = 0; k <= blk; ++k) y[k].setZero();
    y[blk + 1] = hB[blk].col(comp);
    for (int k = blk + 1; k < K; ++k) y[k + 1] = Phi[k] * y[k];
    for (int k = 0; k <= K; ++k) z[k] = Wq[k] * y[k];
    H.col(j) = adjoint(z);
    for (int i = blk + 1; i < K; ++i) WsPsi.block(i * m, j, m, 1) = hS[i] * y[i];
    H.block(blk * m, j, m, 1) += hR[blk].col(comp);
  }
  H += WsPsi + WsPsi.transpose();
  H = symmetrize(H);

  std::vector<Vec> zf(K + 1);
  for (int k = 0; k <= K; ++k) zf[k] = Wq[k] * chi[k] + lq[k];
  Vec f = adjoint(zf);
  double constant = 0.0;
  for (int k = 0; k <= K; ++k) constant += chi[k].dot(Wq[k] * chi[k]) + 2.0 * lq[k].dot(chi[k]);
  for (int k = 0; k < K; ++k) f.segment(k * m, m) += hS[k] * chi[k] + lr[k];

  QpResult out;
  out.steps = K;
  Eigen::LLT<Mat> llt(H);
  if (llt.info() == Eigen::Success) {
    out.controls = llt.solve(-f);
  } else {
    Eigen::LDLT<Mat> ldlt(H);
    const Vec d = ldlt.vectorD();
    const double scale = 1.0 + d.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || d.minCoeff() < -1e-10 * scale) {
      out.status = "indefinite";
      return out;
    }
    out.controls = ldlt.solve(-f);
    if ((H * out.controls + f).norm() > 1e-8 * (1.0 + f.norm())) {
      out.status = "inconsistent";
      return out;
    }
  }
  out.bounded = true;
  out.status = "solved";
  out.cost = constant + f.dot(out.controls);
  return out;
}

/// |J(K) - J(2K)| / |J(2K) - J(4K)|, which is 2 for a first-order scheme.
struct QpConvergence {
  std::vector<int> steps;
  std::vector<double> costs;
  double ratio = 0.0;
  // Both gaps at round-off: the discretization is exact for this problem
  // (e.g. constant optimal control, dX = u ds) and the ratio carries no rate.
  bool exact = false;
};

inline QpConvergence qp_convergence(const ProblemData& p, const Vec& x, int K) {
  QpConvergence out;
  for (int k : {K, 2 * K, 4 * K}) {
    const QpResult r = qp_oracle(p, x, k);
    if (!r.bounded) throw std::runtime_error("qp_convergence: QP " + r.status + " at K = " +
                                             std::to_string(k));
    out.steps.push_back(k);
    out.costs.push_back(r.cost);
  }
  const double d1 = std::abs(out.costs[0] - out.costs[1]);
  const double d2 = std::abs(out.costs[1] - out.costs[2]);
  const double floor = 1e-12 * (1.0 + std::abs(out.costs[2]));
  out.exact = d1 <= floor && d2 <= floor;
  out.ratio = d2 > 0.0 ? d1 / d2 : (d1 > 0.0 ? INFINITY : NAN);
  return out;
}

// ---------------------------------------------------------------------------
// Completion of squares

struct CompletionResult {
  double lhs = 0.0;  // J0(t, 0; u)
  double rhs = 0.0;  // E int <Sigma r, r> + int <Sigma_bar e, e>
  double gap = 0.0;  // |lhs - rhs| / max(|lhs|, |rhs|)
  double lhs_stderr = 0.0;
  double diff_stderr = 0.0;  // stderr of the pathwise difference
  int n_paths = 0;
  int n_steps = 0;
};

/// Simulates `spec` from xi = 0 and evaluates both sides of
///   J0(t,0;u) = E int <Sigma (u - E[u] - Theta (X - E[X])), .> ds
///             + int <Sigma_bar (E[u] - Gamma E[X]), .> ds
/// on the same paths.
inline CompletionResult completion_check(const ProblemData& p0, const GreSolution& sol,
                                         const ControlSpec& spec, int n_paths, std::uint64_t seed,
                                         int n_steps = 200, int threads = 0) {
  if (!is_homogeneous(p0)) {
    throw std::invalid_argument("completion_check: problem must be homogeneous");
  }
  if (!sol.report.regular) {
    throw std::invalid_argument("completion_check: Riccati solution is not regular");
  }
  const InitialLaw zero = InitialLaw::deterministic(Vec::Zero(p0.n));
  const PathSimulator sim(p0, spec, zero, n_steps);
  const CostEvaluator eval(p0, sim.mean());
  const MeanPath& mean = sim.mean();
  const TimeGrid& grid = sim.grid();
  const int nodes = grid.num_nodes();
  const double h = grid.step();

  const MatrixPath Sigma = node_path(sol, &GreSolution::Sigma);
  const MatrixPath Sigma_bar = node_path(sol, &GreSolution::Sigma_bar);
  const MatrixPath Theta = node_path(sol, &GreSolution::Theta);
  const MatrixPath Gamma = node_path(sol, &GreSolution::Gamma);
  std::vector<Mat> sig(nodes), th(nodes);
  std::vector<double> weight(nodes);
  double mean_term = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double s = grid.node(k);
    sig[k] = Sigma.at(s);
    th[k] = Theta.at(s);
    weight[k] = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
    const Vec e = mean.eu[k] - Gamma.at(s) * mean.ex[k];
    mean_term += weight[k] * detail::bilinear(e, Sigma_bar.at(s), e);
  }

  std::vector<double> lhs(n_paths), rhs(n_paths), diff(n_paths);
  for_each_path(
      sim, n_paths, seed,
      [&](int, int path, const Trajectory& tr) {
        double r_int = 0.0;
        Vec r(p0.m);
        for (int k = 0; k < nodes; ++k) {
          r.noalias() = th[k] * (tr.x[k] - mean.ex[k]);
          r = (tr.u[k] - mean.eu[k]) - r;
          r_int += weight[k] * detail::bilinear(r, sig[k], r);
        }
        lhs[path] = eval.pathwise(tr);
        rhs[path] = r_int;
        diff[path] = lhs[path] - rhs[path];
      },
      threads);

  CompletionResult out;
  const CostEstimate l = mean_and_stderr(lhs);
  const CostEstimate r = mean_and_stderr(rhs);
  out.lhs = l.mean + eval.mean_field_part();
  out.rhs = r.mean + mean_term;
  out.lhs_stderr = l.std_error;
  out.diff_stderr = mean_and_stderr(diff).std_error;
  const double scale = std::max(std::abs(out.lhs), std::abs(out.rhs));
  out.gap = scale > 0.0 ? std::abs(out.lhs - out.rhs) / scale : 0.0;
  out.n_paths = n_paths;
  out.n_steps = n_steps;
  return out;
}

/// Constant gains and offsets with entries uniform in [-1, 1].
inline ControlSpec random_control(int n, int m, std::uint64_t seed) {
  std::mt19937_64 eng(splitmix64(seed ^ 0x2545f4914f6cdd1dULL));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto draw = [&](int rows, int cols) {
    Mat M(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) M(i, j) = unif(eng);
    }
    return MatrixPath::constant(std::move(M));
  };
  ControlSpec spec;
  spec.feedback = draw(m, n);
  spec.mean_feedback = draw(m, n);
  spec.offset.const_part = draw(m, 1);
  spec.offset.noise_part = draw(m, 1);
  return spec;
}

// ---------------------------------------------------------------------------
// Lower-bound battery

struct BatteryOptions {
  int n_steps = 100;
  int threads = 0;
  // Extra absolute slack for the time-discretization bias of deterministic
  // paths, where the standard error is zero.
  double abs_tol = 0.0;
  // Replaces the synthesized value, e.g. to check that the harness fails.
  std::optional<double> value_override;
};

/// Random constant perturbations of the optimal strategy: gain entries
/// uniform in [-2, 2], offset entries (const and noise part) uniform in
/// [-1, 1]. Every control is simulated with the same path seed.
inline std::vector<ControlSpec> battery_controls(const ControlSpec& optimal, int n, int m,
                                                 int n_controls, std::uint64_t seed) {
  std::mt19937_64 eng(splitmix64(seed ^ 0x5bd1e995ULL));
  std::uniform_real_distribution<double> gain(-2.0, 2.0);
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  auto draw = [&](int rows, int cols, auto& dist) {
    Mat M(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) M(i, j) = dist(eng);
    }
    return M;
  };
  std::vector<ControlSpec> out;
  for (int i = 0; i < n_controls; ++i) {
    ControlSpec spec = optimal;
    spec.feedback = optimal.feedback.plus(draw(m, n, gain));
    spec.mean_feedback = optimal.mean_feedback.plus(draw(m, n, gain));
    spec.offset.const_part = optimal.offset.const_part.plus(draw(m, 1, offset));
    spec.offset.noise_part = optimal.offset.noise_part.plus(draw(m, 1, offset));
    out.push_back(std::move(spec));
  }
  return out;
}

inline VerificationReport lower_bound_battery(const ProblemData& p, const ClosedLoopSolution& sol,
                                              const InitialLaw& law, int n_controls, int n_paths,
                                              std::uint64_t seed,
                                              const BatteryOptions& opt = {}) {
  const double V = opt.value_override ? *opt.value_override : value(sol, law, p).value;
  const SimOptions sim{n_paths, opt.n_steps, seed, opt.threads};

  // Round-off floor, so deterministic paths (stderr 0) are not failed on ulps.
  const double slack = opt.abs_tol + 1e-12 * (1.0 + std::abs(V));

  const SimulationReport best = simulate(p, sol.strategy, law, sim);
  VerificationReport rep;
  rep.checks.push_back(make_check("battery.optimal_within_3se", std::abs(best.cost_mean - V),
                                  3.0 * best.cost_stderr + slack,
                                  {{"value", V},
                                   {"cost_mean", best.cost_mean},
                                   {"cost_stderr", best.cost_stderr},
                                   {"n_paths", n_paths},
                                   {"n_steps", opt.n_steps},
                                   {"seed", static_cast<double>(seed)}}));

  // Largest V - 3 se_i - J_i over the sampled controls; <= slack means no
  // control beat the value.
  double worst = -INFINITY;
  double min_cost = INFINITY;
  int violations = 0;
  for (const ControlSpec& spec : battery_controls(sol.strategy, p.n, p.m, n_controls, seed)) {
    const SimulationReport r = simulate(p, spec, law, sim);
    const double excess = V - 3.0 * r.cost_stderr - r.cost_mean;
    worst = std::max(worst, excess);
    min_cost = std::min(min_cost, r.cost_mean);
    if (excess > slack) ++violations;
  }
  rep.checks.push_back(make_check("battery.lower_bound", n_controls > 0 ? worst : -INFINITY,
                                  slack,
                                  {{"value", V},
                                   {"n_controls", n_controls},
                                   {"violations", violations},
                                   {"min_cost", n_controls > 0 ? min_cost : V},
                                   {"n_paths", n_paths},
                                   {"n_steps", opt.n_steps},
                                   {"seed", static_cast<double>(seed)}}));
  return rep;
}

// ---------------------------------------------------------------------------
// Classical degeneration

inline VerificationReport classical_degeneration(const ProblemData& p,
                                                 int n_steps = kDefaultGreSteps) {
  if (!has_no_mean_field_terms(p)) {
    throw std::invalid_argument(
        "classical_degeneration: mean-field coefficients and G_bar must all be zero");
  }
  const GreSolution sol = integrate_gre(p, n_steps);
  double pi_gap = 0.0;
  double gain_gap = 0.0;
  for (int k = 0; k < sol.grid.num_nodes(); ++k) {
    pi_gap = std::max(pi_gap, op_norm(sol.Pi[k] - sol.P[k]));
    gain_gap = std::max(gain_gap, op_norm(sol.Gamma[k] - sol.Theta[k]));
  }
  VerificationReport rep;
  const std::map<std::string, double> meta{{"n_steps", n_steps}};
  rep.checks.push_back(make_check("degeneration.Pi_minus_P", pi_gap, 1e-10, meta));
  rep.checks.push_back(make_check("degeneration.Gamma_minus_Theta", gain_gap, 1e-8, meta));
  return rep;
}

}  // namespace mflq
