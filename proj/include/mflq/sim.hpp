#pragma once

// Euler-Maruyama simulation of the closed-loop mean-field SDE. E[X] and E[u]
// come from the deterministic mean equation, which is exact for
// deterministic coefficients, so paths are independent given their seeds.

#include "mflq/core.hpp"
#include "mflq/gre.hpp"
#include "mflq/ode.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mflq {

inline constexpr int kChunkPaths = 256;

struct MeanPath {
  TimeGrid grid;
  std::vector<Vec> ex;  // E[X] per node
  std::vector<Vec> eu;  // E[u] per node
};

/// dE[X] = [(A+Ab) E[X] + (B+Bb)((Theta+Theta_bar) E[X] + v0) + b0] ds, RK4.
/// E[v] = v0 for either anchor since E[W] = 0.
inline MeanPath mean_ode(const ProblemData& p, const ControlSpec& spec, const Vec& mean0,
                         int n_steps) {
  if (n_steps < 1) throw std::invalid_argument("mean_ode: n_steps must be positive");
  if (mean0.size() != p.n) throw std::invalid_argument("mean_ode: initial mean has wrong size");
  MeanPath out;
  out.grid = p.horizon.with_steps(n_steps);

  auto mean_control = [&](double s, const Vec& ex) -> Vec {
    return (spec.feedback.at(s) + spec.mean_feedback.at(s)) * ex + spec.offset.const_part.at(s);
  };
  auto rhs = [&](double s, const Vec& ex) -> Vec {
    const CoefficientsAt c = coefficients_at(p, s);
    return (c.A + c.A_bar) * ex + (c.B + c.B_bar) * mean_control(s, ex) + p.b.const_part.at(s);
  };

  out.ex.resize(n_steps + 1);
  out.eu.resize(n_steps + 1);
  Vec y = mean0;
  const double h = out.grid.step();
  for (int k = 0; k <= n_steps; ++k) {
    const double s = out.grid.node(k);
    out.ex[k] = y;
    out.eu[k] = mean_control(s, y);
    if (k == n_steps) break;
    y = rk4_step(y, s, h, rhs);
    if (!y.allFinite() || y.norm() > kBlowUpNorm) {
      throw FiniteEscapeError("mean equation escapes at node " + std::to_string(k + 1) +
                                  "; last valid node " + std::to_string(k),
                              k + 1, k);
    }
  }
  return out;
}

/// One sample path on the simulation grid.
struct Trajectory {
  std::vector<Vec> x;     // X(s_k)
  std::vector<Vec> u;     // u(s_k)
  std::vector<double> w;  // W(s_k)
  double w_initial = 0.0;

  void resize(int nodes, int n, int m) {
    x.assign(nodes, Vec::Zero(n));
    u.assign(nodes, Vec::Zero(m));
    w.assign(nodes, 0.0);
  }
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream per (seed, path), independent of scheduling.
inline std::mt19937_64 path_engine(std::uint64_t seed, std::uint64_t path) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(path + 0x632be59bd9b4e019ULL)));
}

namespace detail {

// a' M b without temporaries.
inline double bilinear(const Vec& a, const Mat& M, const Vec& b) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < M.cols(); ++j) row += M(i, j) * b(j);
    out += a(i) * row;
  }
  return out;
}

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

/// Euler-Maruyama path generator with per-node coefficients precomputed.
///
/// With u = Theta X + Theta_bar E[X] + v0 + v1 W_a (W_a = W(s) or W(t)), the
/// step is X += (Kx X + d0 + b1 W + dv W_a) h + (Kd X + e0 + sigma1 W + ev W_a) dW.
class PathSimulator {
 public:
  PathSimulator(const ProblemData& p, const ControlSpec& spec, const InitialLaw& law,
                int n_steps)
      : n_(p.n), m_(p.m), law_(law) {
    require_valid(p);
    const auto violations = validate(spec, p.n, p.m, p.horizon);
    if (!violations.empty()) {
      throw std::invalid_argument("invalid control: " + violations.front().field + ": " +
                                  violations.front().message);
    }
    law_.check(p.n);
    mean_ = mean_ode(p, spec, law.mean, n_steps);
    initial_anchor_ = spec.offset.anchor == Anchor::initial;

    const TimeGrid& g = mean_.grid;
    const int nodes = g.num_nodes();
    theta_.resize(nodes);
    kx_.resize(nodes);
    kd_.resize(nodes);
    d0_.resize(nodes);
    e0_.resize(nodes);
    b1_.resize(nodes);
    s1_.resize(nodes);
    dv_.resize(nodes);
    ev_.resize(nodes);
    u0_.resize(nodes);
    v1_.resize(nodes);
    for (int k = 0; k < nodes; ++k) {
      const double s = g.node(k);
      const CoefficientsAt c = coefficients_at(p, s);
      const InhomogeneityAt f = inhomogeneity_at(p, s);
      theta_[k] = spec.feedback.at(s);
      v1_[k] = spec.offset.noise_part.at(s);
      const Vec& ex = mean_.ex[k];
      const Vec& eu = mean_.eu[k];
      // Deterministic part of u given X: Theta_bar E[X] + v0.
      u0_[k] = spec.mean_feedback.at(s) * ex + spec.offset.const_part.at(s);
      kx_[k] = c.A + c.B * theta_[k];
      kd_[k] = c.C + c.D * theta_[k];
      d0_[k] = c.A_bar * ex + c.B * u0_[k] + c.B_bar * eu + f.b0;
      e0_[k] = c.C_bar * ex + c.D * u0_[k] + c.D_bar * eu + f.sigma0;
      b1_[k] = f.b1;
      s1_[k] = f.sigma1;
      dv_[k] = c.B * v1_[k];
      ev_[k] = c.D * v1_[k];
    }
  }

  const MeanPath& mean() const { return mean_; }
  const TimeGrid& grid() const { return mean_.grid; }
  int n() const { return n_; }
  int m() const { return m_; }

  /// Fills `out` (already sized by Trajectory::resize) with path `path`.
  /// Draw order: W(t0) factor, n initial-law normals, then one per step.
  void run(std::uint64_t seed, std::uint64_t path, Trajectory& out, Vec& work) const {
    std::mt19937_64 eng = path_engine(seed, path);
    std::normal_distribution<double> normal(0.0, 1.0);
    const TimeGrid& g = mean_.grid;
    const double h = g.step();
    const double sqrt_h = std::sqrt(h);

    const double w0 = std::sqrt(std::max(g.t0, 0.0)) * normal(eng);
    Vec& x = out.x[0];
    x = law_.mean + w0 * law_.brownian_load;
    for (int i = 0; i < n_; ++i) {
      const double z = normal(eng);
      x += z * law_.indep_load.col(i);
    }
    out.w_initial = w0;

    double w = w0;
    const int N = g.n_steps;
    for (int k = 0;; ++k) {
      const double wa = initial_anchor_ ? w0 : w;
      const Vec& xk = out.x[k];
      out.u[k].noalias() = theta_[k] * xk;
      out.u[k] += u0_[k] + wa * v1_[k];
      out.w[k] = w;
      if (k == N) break;

      const double dw = sqrt_h * normal(eng);
      Vec& next = out.x[k + 1];
      work.noalias() = kx_[k] * xk;
      next = xk + h * (work + d0_[k] + w * b1_[k] + wa * dv_[k]);
      work.noalias() = kd_[k] * xk;
      next += dw * (work + e0_[k] + w * s1_[k] + wa * ev_[k]);
      w += dw;
    }
  }

 private:
  int n_, m_;
  InitialLaw law_;
  MeanPath mean_;
  bool initial_anchor_ = false;
  std::vector<Mat> theta_, kx_, kd_;
  std::vector<Vec> d0_, e0_, b1_, s1_, dv_, ev_, u0_, v1_;
};

/// Runs paths [0, n_paths) in fixed chunks of kChunkPaths. `visit(chunk,
/// path, trajectory)` may be called concurrently for different chunks; within
/// a chunk paths are visited in order.
template <class Visit>
void for_each_path(const PathSimulator& sim, int n_paths, std::uint64_t seed, Visit&& visit,
                   int threads = 0) {
  const int n_chunks = (n_paths + kChunkPaths - 1) / kChunkPaths;
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::max(1, std::min(threads, n_chunks));

  auto worker = [&](std::atomic<int>& next_chunk) {
    Trajectory tr;
    tr.resize(sim.grid().num_nodes(), sim.n(), sim.m());
    Vec work(sim.n());
    for (int c = next_chunk++; c < n_chunks; c = next_chunk++) {
      const int end = std::min(n_paths, (c + 1) * kChunkPaths);
      for (int i = c * kChunkPaths; i < end; ++i) {
        sim.run(seed, static_cast<std::uint64_t>(i), tr, work);
        visit(c, i, static_cast<const Trajectory&>(tr));
      }
    }
  };

  std::atomic<int> next_chunk{0};
  if (threads == 1) {
    worker(next_chunk);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker, std::ref(next_chunk));
  for (auto& th : pool) th.join();
}

/// Cost functional split into a per-path part and the deterministic
/// mean-field part evaluated on the exact mean. Trapezoid in time.
class CostEvaluator {
 public:
  CostEvaluator(const ProblemData& p, const MeanPath& mean) : grid_(mean.grid) {
    const int nodes = grid_.num_nodes();
    const double h = grid_.step();
    Q_.resize(nodes);
    S_.resize(nodes);
    R_.resize(nodes);
    q0_.resize(nodes);
    q1_.resize(nodes);
    rho0_.resize(nodes);
    rho1_.resize(nodes);
    weights_.resize(nodes);
    double mean_part = 0.0;
    for (int k = 0; k < nodes; ++k) {
      const double s = grid_.node(k);
      const CoefficientsAt c = coefficients_at(p, s);
      const InhomogeneityAt f = inhomogeneity_at(p, s);
      Q_[k] = c.Q;
      S_[k] = c.S;
      R_[k] = c.R;
      q0_[k] = f.q0;
      q1_[k] = f.q1;
      rho0_[k] = f.rho0;
      rho1_[k] = f.rho1;
      weights_[k] = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
      const Vec& ex = mean.ex[k];
      const Vec& eu = mean.eu[k];
      const double l = detail::bilinear(ex, c.Q_bar, ex) + 2.0 * detail::bilinear(eu, c.S_bar, ex) +
                       detail::bilinear(eu, c.R_bar, eu) + 2.0 * f.q_bar.dot(ex) +
                       2.0 * f.rho_bar.dot(eu);
      mean_part += weights_[k] * l;
    }
    const Vec& exT = mean.ex.back();
    mean_part += detail::bilinear(exT, p.G_bar, exT) + 2.0 * p.g_bar.dot(exT);
    mean_part_ = mean_part;
    G_ = p.G;
    g0_ = p.g0;
    g1_ = p.g1;
  }

  double pathwise(const Trajectory& tr) const {
    const int nodes = grid_.num_nodes();
    double running = 0.0;
    for (int k = 0; k < nodes; ++k) {
      const Vec& x = tr.x[k];
      const Vec& u = tr.u[k];
      const double w = tr.w[k];
      double l = detail::bilinear(x, Q_[k], x) + 2.0 * detail::bilinear(u, S_[k], x) +
                 detail::bilinear(u, R_[k], u);
      l += 2.0 * (q0_[k].dot(x) + w * q1_[k].dot(x));
      l += 2.0 * (rho0_[k].dot(u) + w * rho1_[k].dot(u));
      running += weights_[k] * l;
    }
    const Vec& xT = tr.x.back();
    const double wT = tr.w.back();
    return running + detail::bilinear(xT, G_, xT) + 2.0 * (g0_.dot(xT) + wT * g1_.dot(xT));
  }

  double mean_field_part() const { return mean_part_; }
  double operator()(const Trajectory& tr) const { return pathwise(tr) + mean_part_; }

 private:
  TimeGrid grid_;
  std::vector<Mat> Q_, S_, R_;
  std::vector<Vec> q0_, q1_, rho0_, rho1_;
  std::vector<double> weights_;
  Mat G_;
  Vec g0_, g1_;
  double mean_part_ = 0.0;
};

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error (sample std with n-1, over sqrt(n)) of values in
/// index order.
inline CostEstimate mean_and_stderr(std::span<const double> values) {
  CostEstimate out;
  const auto n = values.size();
  if (n == 0) return out;
  detail::CompensatedSum sum;
  for (double v : values) sum.add(v);
  out.mean = sum.value() / static_cast<double>(n);
  if (n < 2) return out;
  detail::CompensatedSum sq;
  for (double v : values) sq.add((v - out.mean) * (v - out.mean));
  out.std_error = std::sqrt(sq.value() / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  return out;
}

inline CostEstimate estimate_cost(std::span<const Trajectory> paths, const ProblemData& p,
                                  const MeanPath& mean) {
  const CostEvaluator eval(p, mean);
  std::vector<double> costs;
  costs.reserve(paths.size());
  for (const auto& tr : paths) costs.push_back(eval(tr));
  return mean_and_stderr(costs);
}

struct SimOptions {
  int n_paths = 10000;
  int n_steps = 200;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: hardware concurrency
};

struct SimulationReport {
  double cost_mean = 0.0;
  double cost_stderr = 0.0;
  int n_paths = 0;
  int n_steps = 0;
  std::uint64_t seed = 0;
  TimeGrid grid;
  std::vector<Vec> mean_path;     // exact E[X]
  std::vector<Vec> mean_control;  // exact E[u]
  std::vector<Vec> sample_mean;   // empirical mean of X per node
  Vec terminal_mean;
  Mat terminal_cov;
  // max over nodes and components of |sample mean - E[X]|, and of that gap
  // in units of sample std / sqrt(n_paths).
  double empirical_mean_gap = 0.0;
  double empirical_mean_zscore = 0.0;
};

inline SimulationReport simulate(const ProblemData& p, const ControlSpec& spec,
                                 const InitialLaw& law, const SimOptions& opt) {
  if (opt.n_paths < 2) throw std::invalid_argument("simulate: n_paths must be at least 2");
  if (opt.n_steps < 1) throw std::invalid_argument("simulate: n_steps must be positive");
  const PathSimulator sim(p, spec, law, opt.n_steps);
  const CostEvaluator eval(p, sim.mean());
  const int nodes = sim.grid().num_nodes();
  const int n = p.n;
  const int n_chunks = (opt.n_paths + kChunkPaths - 1) / kChunkPaths;

  std::vector<double> costs(opt.n_paths);
  Mat terminal(n, opt.n_paths);
  // Per-chunk sums of X and X.^2 per node, n rows by nodes columns.
  std::vector<Mat> chunk_sum(n_chunks, Mat::Zero(n, nodes));
  std::vector<Mat> chunk_sq(n_chunks, Mat::Zero(n, nodes));

  for_each_path(
      sim, opt.n_paths, opt.seed,
      [&](int chunk, int path, const Trajectory& tr) {
        costs[path] = eval.pathwise(tr);
        terminal.col(path) = tr.x.back();
        Mat& sum = chunk_sum[chunk];
        Mat& sq = chunk_sq[chunk];
        for (int k = 0; k < nodes; ++k) {
          sum.col(k) += tr.x[k];
          sq.col(k) += tr.x[k].cwiseAbs2();
        }
      },
      opt.threads);

  SimulationReport rep;
  const CostEstimate est = mean_and_stderr(costs);
  rep.cost_mean = est.mean + eval.mean_field_part();
  rep.cost_stderr = est.std_error;
  rep.n_paths = opt.n_paths;
  rep.n_steps = opt.n_steps;
  rep.seed = opt.seed;
  rep.grid = sim.grid();
  rep.mean_path = sim.mean().ex;
  rep.mean_control = sim.mean().eu;

  Mat sum = Mat::Zero(n, nodes);
  Mat sq = Mat::Zero(n, nodes);
  for (int c = 0; c < n_chunks; ++c) {
    sum += chunk_sum[c];
    sq += chunk_sq[c];
  }
  const double np = static_cast<double>(opt.n_paths);
  rep.sample_mean.resize(nodes);
  for (int k = 0; k < nodes; ++k) {
    rep.sample_mean[k] = sum.col(k) / np;
    for (int i = 0; i < n; ++i) {
      const double mu = rep.sample_mean[k](i);
      const double var = std::max(0.0, (sq(i, k) - np * mu * mu) / (np - 1.0));
      const double gap = std::abs(mu - rep.mean_path[k](i));
      const double se = std::sqrt(var / np);
      rep.empirical_mean_gap = std::max(rep.empirical_mean_gap, gap);
      double z = 0.0;
      if (se > 0.0) {
        z = gap / se;
      } else if (gap > 1e-12 * (1.0 + std::abs(mu))) {
        z = std::numeric_limits<double>::infinity();
      }
      rep.empirical_mean_zscore = std::max(rep.empirical_mean_zscore, z);
    }
  }
  rep.terminal_mean = terminal.rowwise().mean();
  const Mat centered = terminal.colwise() - rep.terminal_mean;
  rep.terminal_cov = centered * centered.transpose() / (np - 1.0);
  return rep;
}

}  // namespace mflq
