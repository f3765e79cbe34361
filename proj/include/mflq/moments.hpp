#pragma once

// Second moments X = E[X X'] and Y = E[X] E[X]' of the homogeneous closed-loop
// state under u = Theta X + Theta_bar E[X], and the cost they determine.

#include "mflq/core.hpp"
#include "mflq/gre.hpp"
#include "mflq/linalg.hpp"
#include "mflq/ode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mflq {

struct MomentPath {
  TimeGrid grid;
  std::vector<Mat> X;  // E[X X']
  std::vector<Mat> Y;  // E[X] E[X]'
};

namespace detail {

struct MomentPair {
  Mat X, Y;
};

inline MomentPair operator+(const MomentPair& a, const MomentPair& b) {
  return {a.X + b.X, a.Y + b.Y};
}
inline MomentPair operator*(double s, const MomentPair& a) { return {s * a.X, s * a.Y}; }

inline void require_homogeneous(const ProblemData& p, const char* who) {
  if (!is_homogeneous(p)) {
    throw std::invalid_argument(std::string(who) +
                                ": problem has inhomogeneous terms; strip them first");
  }
}

}  // namespace detail

inline MomentPath propagate_moments(const ProblemData& p, const MatrixPath& Theta,
                                    const MatrixPath& Theta_bar, const Mat& X0, const Mat& Y0,
                                    int n_steps = kDefaultGreSteps) {
  require_valid(p);
  detail::require_homogeneous(p, "propagate_moments");
  if (n_steps < 1) throw std::invalid_argument("propagate_moments: n_steps must be positive");
  if (X0.rows() != p.n || X0.cols() != p.n || Y0.rows() != p.n || Y0.cols() != p.n) {
    throw std::invalid_argument("propagate_moments: initial moments must be n x n");
  }

  auto rhs = [&](double s, const detail::MomentPair& y) {
    const CoefficientsAt c = coefficients_at(p, s);
    const Mat Th = Theta.at(s);
    const Mat Tb = Theta_bar.at(s);
    const Mat Th_sum = Th + Tb;
    const Mat Acl = c.A + c.B * Th;
    const Mat Ccl = c.C + c.D * Th;
    const Mat Am = c.A_bar + c.B * Tb + c.B_bar * Th_sum;
    const Mat Cm = c.C_bar + c.D * Tb + c.D_bar * Th_sum;
    const Mat Amean = c.A + c.A_bar + (c.B + c.B_bar) * Th_sum;

    const Mat AY = Am * y.Y;
    const Mat CY = Ccl * y.Y * Cm.transpose();
    Mat dX = Acl * y.X + Ccl * y.X * Ccl.transpose() + AY + CY + Cm * y.Y * Cm.transpose();
    dX += (Acl * y.X).transpose() + AY.transpose() + CY.transpose();
    const Mat AmY = Amean * y.Y;
    return detail::MomentPair{symmetrize(dX), symmetrize(AmY + AmY.transpose())};
  };

  MomentPath out;
  out.grid = p.horizon.with_steps(n_steps);
  out.X.resize(n_steps + 1);
  out.Y.resize(n_steps + 1);
  detail::MomentPair y{X0, Y0};
  out.X[0] = X0;
  out.Y[0] = Y0;
  const double h = out.grid.step();
  for (int k = 0; k < n_steps; ++k) {
    y = rk4_step(y, out.grid.node(k), h, rhs);
    y.X = symmetrize(y.X);
    y.Y = symmetrize(y.Y);
    if (!y.X.allFinite() || !y.Y.allFinite() || y.X.norm() > kBlowUpNorm ||
        y.Y.norm() > kBlowUpNorm) {
      throw FiniteEscapeError("moment equations escape at node " + std::to_string(k + 1) +
                                  "; last valid node " + std::to_string(k),
                              k + 1, k);
    }
    out.X[k + 1] = y.X;
    out.Y[k + 1] = y.Y;
  }
  return out;
}

/// tr[G X(T) + G_bar Y(T)] + trapezoid integral of tr[M X + N Y].
inline double homogeneous_cost(const ProblemData& p, const MatrixPath& Theta,
                               const MatrixPath& Theta_bar, const MomentPath& mp) {
  const TimeGrid& grid = mp.grid;
  const int nodes = grid.num_nodes();
  const double h = grid.step();
  double running = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const double s = grid.node(k);
    const CoefficientsAt c = coefficients_at(p, s);
    const Mat Th = Theta.at(s);
    const Mat Tb = Theta_bar.at(s);
    const Mat Ts = Th + Tb;
    const Mat St = c.S.transpose();
    const Mat M = c.Q + Th.transpose() * c.S + St * Th + Th.transpose() * c.R * Th;
    const Mat N = c.Q_bar + Ts.transpose() * c.S_bar + c.S_bar.transpose() * Ts +
                  Ts.transpose() * c.R_bar * Ts + Tb.transpose() * c.R * Tb +
                  Tb.transpose() * c.S + St * Tb + Tb.transpose() * c.R * Th +
                  Th.transpose() * c.R * Tb;
    const double w = (k == 0 || k == nodes - 1) ? 0.5 * h : h;
    running += w * ((M * mp.X[k]).trace() + (N * mp.Y[k]).trace());
  }
  return (p.G * mp.X.back()).trace() + (p.G_bar * mp.Y.back()).trace() + running;
}

inline double moment_cost(const ProblemData& p, const MatrixPath& Theta,
                          const MatrixPath& Theta_bar, const Mat& X0, const Mat& Y0,
                          int n_steps = kDefaultGreSteps) {
  return homogeneous_cost(p, Theta, Theta_bar,
                          propagate_moments(p, Theta, Theta_bar, X0, Y0, n_steps));
}

struct StationarityGradient {
  Mat d_theta;      // dJ / dTheta_ij under constant bumps
  Mat d_theta_bar;  // dJ / dTheta_bar_ij
  double residual = 0.0;  // max-abs entry over both
};

/// Central differences of the moment cost for constant-in-time bumps of each
/// gain entry.
inline StationarityGradient stationarity_gradient(const ProblemData& p, const MatrixPath& Theta,
                                                  const MatrixPath& Theta_bar, const Mat& X0,
                                                  const Mat& Y0, double fd_step,
                                                  int n_steps = kDefaultGreSteps) {
  if (!(fd_step > 0.0)) throw std::invalid_argument("stationarity: fd_step must be positive");
  StationarityGradient out;
  out.d_theta = Mat::Zero(p.m, p.n);
  out.d_theta_bar = Mat::Zero(p.m, p.n);
  for (int which = 0; which < 2; ++which) {
    Mat& grad = which == 0 ? out.d_theta : out.d_theta_bar;
    for (int i = 0; i < p.m; ++i) {
      for (int j = 0; j < p.n; ++j) {
        Mat bump = Mat::Zero(p.m, p.n);
        bump(i, j) = fd_step;
        auto cost = [&](const Mat& offset) {
          return which == 0
                     ? moment_cost(p, Theta.plus(offset), Theta_bar, X0, Y0, n_steps)
                     : moment_cost(p, Theta, Theta_bar.plus(offset), X0, Y0, n_steps);
        };
        grad(i, j) = (cost(bump) - cost(-bump)) / (2.0 * fd_step);
      }
    }
  }
  out.residual = std::max(out.d_theta.cwiseAbs().maxCoeff(), out.d_theta_bar.cwiseAbs().maxCoeff());
  return out;
}

inline double stationarity_residual(const ProblemData& p, const MatrixPath& Theta,
                                    const MatrixPath& Theta_bar, const Mat& X0, const Mat& Y0,
                                    double fd_step, int n_steps = kDefaultGreSteps) {
  return stationarity_gradient(p, Theta, Theta_bar, X0, Y0, fd_step, n_steps).residual;
}

}  // namespace mflq
