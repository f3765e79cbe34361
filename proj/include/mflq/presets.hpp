#pragma once

// Built-in problems: the scalar counterexample without a closed-loop optimum,
// the scalar classical regulator with P(s) = 1/(2 - s), and a seeded family of
// well-posed random problems.

#include "mflq/core.hpp"
#include "mflq/sim.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mflq {

struct Preset {
  ProblemData problem;
  InitialLaw law;
};

inline constexpr int kPresetSteps = 1000;

namespace detail {

inline Mat scalar(double v) { return Mat::Constant(1, 1, v); }

}  // namespace detail

/// n = m = 1 on [t, 1]:
///   dX = (u - E[u]) ds + E[u] dW,  J = E[X(1)^2] + (E[X(1)])^2.
/// Sigma = 0 while B'P = 1, so no regular solution exists.
inline Preset example31(double t = 0.5) {
  Preset out;
  ProblemData& p = out.problem;
  p = ProblemData::zero(1, 1, TimeGrid{t, 1.0, kPresetSteps});
  p.B = MatrixPath::constant(detail::scalar(1.0));
  p.B_bar = MatrixPath::constant(detail::scalar(-1.0));
  p.D_bar = MatrixPath::constant(detail::scalar(1.0));
  p.G = detail::scalar(1.0);
  p.G_bar = detail::scalar(1.0);
  out.law = InitialLaw::deterministic(Vec::Ones(1));
  return out;
}

/// dX = u ds on [0, 1], J = int u^2 + X(1)^2.
inline Preset scalar_classic() {
  Preset out;
  ProblemData& p = out.problem;
  p = ProblemData::zero(1, 1, TimeGrid{0.0, 1.0, kPresetSteps});
  p.B = MatrixPath::constant(detail::scalar(1.0));
  p.R = MatrixPath::constant(detail::scalar(1.0));
  p.G = detail::scalar(1.0);
  out.law = InitialLaw::deterministic(Vec::Ones(1));
  return out;
}

struct RandomSpdOptions {
  std::uint64_t seed = 1;
  int n = 2;
  int m = 2;
  bool inhomogeneous = false;
};

/// Random problem on [0, 1] with R >= I, R_bar >= 0, Q >= I/2, Q_bar >= 0,
/// G >= I/2, G_bar >= 0 and small cross weights, so Sigma and Sigma_bar stay
/// uniformly positive. A varies linearly in time (sampled on 10 steps).
inline Preset random_spd(const RandomSpdOptions& opt = {}) {
  const int n = opt.n;
  const int m = opt.m;
  std::mt19937_64 eng(splitmix64(opt.seed));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto draw = [&](int rows, int cols, double scale) {
    Mat M(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) M(i, j) = scale * unif(eng);
    }
    return M;
  };
  auto gram = [&](int dim, double scale) {
    const Mat M = draw(dim, dim, 1.0);
    return Mat(scale * M * M.transpose());
  };
  auto constant = [](Mat M) { return MatrixPath::constant(std::move(M)); };

  Preset out;
  ProblemData& p = out.problem;
  p = ProblemData::zero(n, m, TimeGrid{0.0, 1.0, kPresetSteps});

  const Mat A0 = draw(n, n, 0.5);
  const Mat A1 = draw(n, n, 0.2);
  const TimeGrid coarse{0.0, 1.0, 10};
  p.A = sample_path(coarse, [&](int k) { return Mat(A0 + coarse.node(k) * A1); });
  p.A_bar = constant(draw(n, n, 0.3));
  p.B = constant(draw(n, m, 1.0));
  p.B_bar = constant(draw(n, m, 0.3));
  p.C = constant(draw(n, n, 0.3));
  p.C_bar = constant(draw(n, n, 0.2));
  p.D = constant(draw(n, m, 0.3));
  p.D_bar = constant(draw(n, m, 0.2));

  const double cross = 0.2 / std::max(n, m);
  p.Q = constant(Mat(0.5 * Mat::Identity(n, n) + gram(n, 0.25)));
  p.Q_bar = constant(gram(n, 0.1));
  p.S = constant(draw(m, n, cross));
  p.S_bar = constant(draw(m, n, cross));
  p.R = constant(Mat(Mat::Identity(m, m) + gram(m, 0.25)));
  p.R_bar = constant(gram(m, 0.1));
  p.G = 0.5 * Mat::Identity(n, n) + gram(n, 0.25);
  p.G_bar = gram(n, 0.1);

  if (opt.inhomogeneous) {
    auto affine = [&](int rows, double c0, double c1) {
      return NoiseAffinePath::constant(draw(rows, 1, c0), draw(rows, 1, c1));
    };
    p.b = affine(n, 0.3, 0.2);
    p.sigma = affine(n, 0.2, 0.1);
    p.q = affine(n, 0.2, 0.1);
    p.rho = affine(m, 0.2, 0.1);
    p.q_bar = constant(draw(n, 1, 0.1));
    p.rho_bar = constant(draw(m, 1, 0.1));
    p.g0 = draw(n, 1, 0.2);
    p.g1 = draw(n, 1, 0.1);
    p.g_bar = draw(n, 1, 0.1);
  }

  Vec mean = draw(n, 1, 1.0);
  if (mean.norm() < 0.5) mean += Vec::Constant(n, 0.5);
  out.law = {mean, Vec::Zero(n), draw(n, n, 0.3)};
  return out;
}

/// Copy with every mean-field coefficient and G_bar set to zero.
inline ProblemData without_mean_field(const ProblemData& p) {
  ProblemData out = p;
  out.A_bar = out.C_bar = MatrixPath::zero(p.n, p.n);
  out.B_bar = out.D_bar = MatrixPath::zero(p.n, p.m);
  out.Q_bar = MatrixPath::zero(p.n, p.n);
  out.S_bar = MatrixPath::zero(p.m, p.n);
  out.R_bar = MatrixPath::zero(p.m, p.m);
  out.G_bar = Mat::Zero(p.n, p.n);
  return out;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"example31", "scalar_classic", "random_spd"};
  return names;
}

}  // namespace mflq
