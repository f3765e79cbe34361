#pragma once

// Problem data model for mean-field stochastic LQ control: time grids,
// deterministic coefficient paths, noise-affine inhomogeneities, initial laws
// and closed-loop strategy triples.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mflq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when an integration leaves the representable range.
class FiniteEscapeError : public std::runtime_error {
 public:
  FiniteEscapeError(const std::string& what, int node, int last_valid_node)
      : std::runtime_error(what), node_(node), last_valid_node_(last_valid_node) {}

  int node() const noexcept { return node_; }
  int last_valid_node() const noexcept { return last_valid_node_; }

 private:
  int node_;
  int last_valid_node_;
};

/// Uniform grid t0 = s_0 < s_1 < ... < s_N = tT.
struct TimeGrid {
  double t0 = 0.0;
  double tT = 1.0;
  int n_steps = 1;

  double step() const { return (tT - t0) / n_steps; }
  int num_nodes() const { return n_steps + 1; }
  double node(int k) const {
    return k == n_steps ? tT : t0 + k * (tT - t0) / n_steps;
  }
  bool valid() const {
    return std::isfinite(t0) && std::isfinite(tT) && t0 < tT && n_steps >= 1;
  }
  bool contains(double s) const {
    const double slack = 1e-12 * (1.0 + std::abs(t0) + std::abs(tT));
    return s >= t0 - slack && s <= tT + slack;
  }
  TimeGrid with_steps(int steps) const { return {t0, tT, steps}; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

inline bool same_matrix(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

/// Deterministic matrix-valued function of time: a constant, or one sample per
/// grid node with linear interpolation in between.
class MatrixPath {
 public:
  MatrixPath() = default;

  static MatrixPath constant(Mat value) {
    MatrixPath path;
    path.rows_ = value.rows();
    path.cols_ = value.cols();
    path.samples_.push_back(std::move(value));
    return path;
  }

  static MatrixPath zero(Eigen::Index rows, Eigen::Index cols) {
    return constant(Mat::Zero(rows, cols));
  }

  static MatrixPath sampled(const TimeGrid& grid, std::vector<Mat> samples) {
    if (!grid.valid()) throw std::invalid_argument("MatrixPath: invalid grid");
    if (static_cast<int>(samples.size()) != grid.num_nodes()) {
      throw std::invalid_argument("MatrixPath: expected " + std::to_string(grid.num_nodes()) +
                                  " samples, got " + std::to_string(samples.size()));
    }
    MatrixPath path;
    path.rows_ = samples.front().rows();
    path.cols_ = samples.front().cols();
    for (std::size_t k = 0; k < samples.size(); ++k) {
      if (samples[k].rows() != path.rows_ || samples[k].cols() != path.cols_) {
        throw std::invalid_argument("MatrixPath: sample " + std::to_string(k) +
                                    " has inconsistent shape");
      }
    }
    path.grid_ = grid;
    path.samples_ = std::move(samples);
    return path;
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  bool is_constant() const { return !grid_.has_value(); }
  const std::optional<TimeGrid>& grid() const { return grid_; }
  const std::vector<Mat>& samples() const { return samples_; }

  /// Value at time s. Sampled paths are range-checked against their own grid.
  Mat at(double s) const {
    if (!grid_) return samples_.empty() ? Mat(Mat::Zero(rows_, cols_)) : samples_.front();
    const TimeGrid& g = *grid_;
    if (!g.contains(s)) {
      throw std::out_of_range("MatrixPath: time " + std::to_string(s) + " outside [" +
                              std::to_string(g.t0) + ", " + std::to_string(g.tT) + "]");
    }
    const double u = (s - g.t0) / (g.tT - g.t0) * g.n_steps;
    int k = static_cast<int>(std::floor(u));
    k = std::clamp(k, 0, g.n_steps - 1);
    const double w = u - k;
    constexpr double kSnap = 1e-9;
    if (w <= kSnap) return samples_[k];
    if (w >= 1.0 - kSnap) return samples_[k + 1];
    return (1.0 - w) * samples_[k] + w * samples_[k + 1];
  }

  MatrixPath plus(const Mat& offset) const {
    MatrixPath out = *this;
    for (auto& sample : out.samples_) sample += offset;
    return out;
  }

  bool is_zero() const {
    for (const auto& sample : samples_) {
      if (!sample.isZero(0.0)) return false;
    }
    return true;
  }

  friend bool operator==(const MatrixPath& a, const MatrixPath& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_ || a.grid_ != b.grid_) return false;
    if (a.samples_.size() != b.samples_.size()) return false;
    for (std::size_t k = 0; k < a.samples_.size(); ++k) {
      if (!same_matrix(a.samples_[k], b.samples_[k])) return false;
    }
    return true;
  }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::optional<TimeGrid> grid_;
  std::vector<Mat> samples_;
};

/// Evaluates a path at s, which must lie in the given horizon.
inline Mat eval_path(const MatrixPath& path, double s, const TimeGrid& horizon) {
  if (!horizon.contains(s)) {
    throw std::out_of_range("eval_path: time " + std::to_string(s) + " outside horizon [" +
                            std::to_string(horizon.t0) + ", " + std::to_string(horizon.tT) + "]");
  }
  return path.at(s);
}

/// Samples a function of the node index into a path on `grid`.
template <class F>
MatrixPath sample_path(const TimeGrid& grid, F&& f) {
  std::vector<Mat> samples;
  samples.reserve(grid.num_nodes());
  for (int k = 0; k < grid.num_nodes(); ++k) samples.push_back(f(k));
  return MatrixPath::sampled(grid, std::move(samples));
}

/// Where the Brownian factor of a noise-affine process is read.
enum class Anchor {
  running,  // f0(s) + f1(s) W(s)
  initial,  // f0(s) + f1(s) W(t0), frozen at the start of the horizon
};

/// Process f0(s) + f1(s) W(.), with column-vector parts.
struct NoiseAffinePath {
  MatrixPath const_part;
  MatrixPath noise_part;
  Anchor anchor = Anchor::running;

  static NoiseAffinePath zero(Eigen::Index rows) {
    return {MatrixPath::zero(rows, 1), MatrixPath::zero(rows, 1), Anchor::running};
  }
  static NoiseAffinePath constant(const Vec& f0, const Vec& f1) {
    return {MatrixPath::constant(f0), MatrixPath::constant(f1), Anchor::running};
  }

  bool is_zero() const { return const_part.is_zero() && noise_part.is_zero(); }

  friend bool operator==(const NoiseAffinePath&, const NoiseAffinePath&) = default;
};

/// Full coefficient and weight set of the controlled mean-field SDE and its
/// quadratic cost. Bars denote the coefficients acting on expectations.
struct ProblemData {
  int n = 1;  // state dimension
  int m = 1;  // control dimension
  TimeGrid horizon;

  MatrixPath A, A_bar, B, B_bar, C, C_bar, D, D_bar;
  MatrixPath Q, Q_bar, S, S_bar, R, R_bar;
  Mat G, G_bar;

  NoiseAffinePath b, sigma, q, rho;
  MatrixPath q_bar, rho_bar;
  Vec g0, g1;  // terminal g = g0 + g1 W(T)
  Vec g_bar;

  /// All-zero problem with consistent shapes.
  static ProblemData zero(int n, int m, TimeGrid horizon) {
    ProblemData p;
    p.n = n;
    p.m = m;
    p.horizon = horizon;
    p.A = p.A_bar = p.C = p.C_bar = MatrixPath::zero(n, n);
    p.B = p.B_bar = p.D = p.D_bar = MatrixPath::zero(n, m);
    p.Q = p.Q_bar = MatrixPath::zero(n, n);
    p.S = p.S_bar = MatrixPath::zero(m, n);
    p.R = p.R_bar = MatrixPath::zero(m, m);
    p.G = p.G_bar = Mat::Zero(n, n);
    p.b = p.sigma = p.q = NoiseAffinePath::zero(n);
    p.rho = NoiseAffinePath::zero(m);
    p.q_bar = MatrixPath::zero(n, 1);
    p.rho_bar = MatrixPath::zero(m, 1);
    p.g0 = p.g1 = p.g_bar = Vec::Zero(n);
    return p;
  }

  friend bool operator==(const ProblemData& a, const ProblemData& b);
};

enum class Dim { n, m, one };

struct CoefficientField {
  const char* name;
  MatrixPath ProblemData::*member;
  Dim rows;
  Dim cols;
  bool symmetric;
};

inline constexpr std::array<CoefficientField, 14> kCoefficientFields{{
    {"A", &ProblemData::A, Dim::n, Dim::n, false},
    {"A_bar", &ProblemData::A_bar, Dim::n, Dim::n, false},
    {"B", &ProblemData::B, Dim::n, Dim::m, false},
    {"B_bar", &ProblemData::B_bar, Dim::n, Dim::m, false},
    {"C", &ProblemData::C, Dim::n, Dim::n, false},
    {"C_bar", &ProblemData::C_bar, Dim::n, Dim::n, false},
    {"D", &ProblemData::D, Dim::n, Dim::m, false},
    {"D_bar", &ProblemData::D_bar, Dim::n, Dim::m, false},
    {"Q", &ProblemData::Q, Dim::n, Dim::n, true},
    {"Q_bar", &ProblemData::Q_bar, Dim::n, Dim::n, true},
    {"S", &ProblemData::S, Dim::m, Dim::n, false},
    {"S_bar", &ProblemData::S_bar, Dim::m, Dim::n, false},
    {"R", &ProblemData::R, Dim::m, Dim::m, true},
    {"R_bar", &ProblemData::R_bar, Dim::m, Dim::m, true},
}};

struct InhomogeneityField {
  const char* name;
  NoiseAffinePath ProblemData::*member;
  Dim rows;
};

inline constexpr std::array<InhomogeneityField, 4> kInhomogeneityFields{{
    {"b", &ProblemData::b, Dim::n},
    {"sigma", &ProblemData::sigma, Dim::n},
    {"q", &ProblemData::q, Dim::n},
    {"rho", &ProblemData::rho, Dim::m},
}};

inline int dim_value(Dim d, int n, int m) {
  switch (d) {
    case Dim::n: return n;
    case Dim::m: return m;
    case Dim::one: return 1;
  }
  return 0;
}

inline bool operator==(const ProblemData& a, const ProblemData& b) {
  if (a.n != b.n || a.m != b.m || a.horizon != b.horizon) return false;
  for (const auto& f : kCoefficientFields) {
    if (!(a.*f.member == b.*f.member)) return false;
  }
  for (const auto& f : kInhomogeneityFields) {
    if (!(a.*f.member == b.*f.member)) return false;
  }
  return a.q_bar == b.q_bar && a.rho_bar == b.rho_bar && same_matrix(a.G, b.G) &&
         same_matrix(a.G_bar, b.G_bar) && same_matrix(a.g0, b.g0) && same_matrix(a.g1, b.g1) &&
         same_matrix(a.g_bar, b.g_bar);
}

/// Initial state xi = mean + brownian_load * W(t) + indep_load * G, with G a
/// standard normal vector independent of W.
struct InitialLaw {
  Vec mean;
  Vec brownian_load;
  Mat indep_load;

  static InitialLaw deterministic(const Vec& x) {
    return {x, Vec::Zero(x.size()), Mat::Zero(x.size(), x.size())};
  }

  /// Throws std::invalid_argument on shape or finiteness problems.
  void check(int n) const {
    if (mean.size() != n || brownian_load.size() != n || indep_load.rows() != n ||
        indep_load.cols() != n) {
      throw std::invalid_argument("InitialLaw: shapes inconsistent with state dimension " +
                                  std::to_string(n));
    }
    if (!mean.allFinite() || !brownian_load.allFinite() || !indep_load.allFinite()) {
      throw std::invalid_argument("InitialLaw: non-finite entries");
    }
  }

  /// Cov(xi) for a start time t (W(t) has variance t).
  Mat covariance(double t) const {
    return std::max(t, 0.0) * brownian_load * brownian_load.transpose() +
           indep_load * indep_load.transpose();
  }
  Mat second_moment(double t) const { return covariance(t) + mean * mean.transpose(); }

  friend bool operator==(const InitialLaw& a, const InitialLaw& b) {
    return same_matrix(a.mean, b.mean) && same_matrix(a.brownian_load, b.brownian_load) &&
           same_matrix(a.indep_load, b.indep_load);
  }
};

/// Closed-loop strategy (Theta, Theta_bar, v): u = Theta X + Theta_bar E[X] + v.
struct ControlSpec {
  MatrixPath feedback;       // m x n
  MatrixPath mean_feedback;  // m x n
  NoiseAffinePath offset;    // m-vector

  static ControlSpec zero(int n, int m) {
    return {MatrixPath::zero(m, n), MatrixPath::zero(m, n), NoiseAffinePath::zero(m)};
  }

  friend bool operator==(const ControlSpec&, const ControlSpec&) = default;
};

struct Violation {
  std::string field;
  int node = -1;  // -1 for constant paths or non-path fields
  std::string message;
};

namespace detail {

inline double symmetric_tolerance(const Mat& M) { return 1e-12 * (1.0 + M.norm()); }

inline void check_path(std::vector<Violation>& out, const std::string& name, const MatrixPath& path,
                       int rows, int cols, bool symmetric, const TimeGrid& horizon) {
  if (path.samples().empty()) {
    out.push_back({name, -1, "missing"});
    return;
  }
  if (path.rows() != rows || path.cols() != cols) {
    out.push_back({name, -1,
                   "shape " + std::to_string(path.rows()) + "x" + std::to_string(path.cols()) +
                       ", expected " + std::to_string(rows) + "x" + std::to_string(cols)});
    return;
  }
  if (path.grid() && (path.grid()->t0 != horizon.t0 || path.grid()->tT != horizon.tT)) {
    out.push_back({name, -1, "sample grid does not span the horizon"});
    return;
  }
  const auto& samples = path.samples();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const int node = path.is_constant() ? -1 : static_cast<int>(k);
    if (!samples[k].allFinite()) {
      out.push_back({name, node, "non-finite entries"});
      continue;
    }
    if (symmetric && (samples[k] - samples[k].transpose()).norm() >
                         symmetric_tolerance(samples[k])) {
      out.push_back({name, node, "not symmetric"});
    }
  }
}

inline void check_fixed(std::vector<Violation>& out, const std::string& name, const Mat& M, int rows,
                        int cols, bool symmetric) {
  if (M.rows() != rows || M.cols() != cols) {
    out.push_back({name, -1,
                   "shape " + std::to_string(M.rows()) + "x" + std::to_string(M.cols()) +
                       ", expected " + std::to_string(rows) + "x" + std::to_string(cols)});
    return;
  }
  if (!M.allFinite()) {
    out.push_back({name, -1, "non-finite entries"});
    return;
  }
  if (symmetric && (M - M.transpose()).norm() > symmetric_tolerance(M)) {
    out.push_back({name, -1, "not symmetric"});
  }
}

}  // namespace detail

/// Shape, symmetry and representation checks. Violations are data.
inline std::vector<Violation> validate(const ProblemData& p) {
  std::vector<Violation> out;
  if (p.n < 1 || p.m < 1) {
    out.push_back({"dims", -1, "n and m must be positive"});
    return out;
  }
  if (!p.horizon.valid()) {
    out.push_back({"horizon", -1, "require t < T and steps >= 1"});
    return out;
  }
  for (const auto& f : kCoefficientFields) {
    detail::check_path(out, f.name, p.*f.member, dim_value(f.rows, p.n, p.m),
                       dim_value(f.cols, p.n, p.m), f.symmetric, p.horizon);
  }
  detail::check_fixed(out, "G", p.G, p.n, p.n, true);
  detail::check_fixed(out, "G_bar", p.G_bar, p.n, p.n, true);
  for (const auto& f : kInhomogeneityFields) {
    const NoiseAffinePath& path = p.*f.member;
    const int rows = dim_value(f.rows, p.n, p.m);
    detail::check_path(out, std::string(f.name) + ".const", path.const_part, rows, 1, false,
                       p.horizon);
    detail::check_path(out, std::string(f.name) + ".noise", path.noise_part, rows, 1, false,
                       p.horizon);
    if (path.anchor != Anchor::running) {
      out.push_back({f.name, -1, "problem inhomogeneities must use the running Brownian anchor"});
    }
  }
  detail::check_path(out, "q_bar", p.q_bar, p.n, 1, false, p.horizon);
  detail::check_path(out, "rho_bar", p.rho_bar, p.m, 1, false, p.horizon);
  detail::check_fixed(out, "g.const", p.g0, p.n, 1, false);
  detail::check_fixed(out, "g.noise", p.g1, p.n, 1, false);
  detail::check_fixed(out, "g_bar", p.g_bar, p.n, 1, false);
  return out;
}

inline std::vector<Violation> validate(const ControlSpec& spec, int n, int m,
                                       const TimeGrid& horizon) {
  std::vector<Violation> out;
  detail::check_path(out, "feedback", spec.feedback, m, n, false, horizon);
  detail::check_path(out, "mean_feedback", spec.mean_feedback, m, n, false, horizon);
  detail::check_path(out, "offset.const", spec.offset.const_part, m, 1, false, horizon);
  detail::check_path(out, "offset.noise", spec.offset.noise_part, m, 1, false, horizon);
  return out;
}

inline void require_valid(const ProblemData& p) {
  const auto violations = validate(p);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw std::invalid_argument("invalid problem: " + v.field +
                                (v.node >= 0 ? " at node " + std::to_string(v.node) : "") + ": " +
                                v.message);
  }
}

/// Copy with every inhomogeneous term (b, sigma, g, g_bar, q, q_bar, rho,
/// rho_bar) set to zero.
inline ProblemData strip_inhomogeneous(const ProblemData& p) {
  ProblemData out = p;
  out.b = out.sigma = out.q = NoiseAffinePath::zero(p.n);
  out.rho = NoiseAffinePath::zero(p.m);
  out.q_bar = MatrixPath::zero(p.n, 1);
  out.rho_bar = MatrixPath::zero(p.m, 1);
  out.g0 = out.g1 = out.g_bar = Vec::Zero(p.n);
  return out;
}

inline bool is_homogeneous(const ProblemData& p) {
  for (const auto& f : kInhomogeneityFields) {
    if (!(p.*f.member).is_zero()) return false;
  }
  return p.q_bar.is_zero() && p.rho_bar.is_zero() && p.g0.isZero(0.0) && p.g1.isZero(0.0) &&
         p.g_bar.isZero(0.0);
}

/// True when every mean-field coefficient and G_bar vanish.
inline bool has_no_mean_field_terms(const ProblemData& p) {
  return p.A_bar.is_zero() && p.B_bar.is_zero() && p.C_bar.is_zero() && p.D_bar.is_zero() &&
         p.Q_bar.is_zero() && p.S_bar.is_zero() && p.R_bar.is_zero() && p.G_bar.isZero(0.0);
}

/// All coefficient and weight matrices evaluated at one time.
struct CoefficientsAt {
  Mat A, A_bar, B, B_bar, C, C_bar, D, D_bar;
  Mat Q, Q_bar, S, S_bar, R, R_bar;
};

inline CoefficientsAt coefficients_at(const ProblemData& p, double s) {
  return {p.A.at(s), p.A_bar.at(s), p.B.at(s), p.B_bar.at(s), p.C.at(s),
          p.C_bar.at(s), p.D.at(s), p.D_bar.at(s), p.Q.at(s), p.Q_bar.at(s),
          p.S.at(s), p.S_bar.at(s), p.R.at(s), p.R_bar.at(s)};
}

/// Constant and W-coefficient parts of the inhomogeneities at one time.
struct InhomogeneityAt {
  Vec b0, b1, sigma0, sigma1, q0, q1, rho0, rho1, q_bar, rho_bar;
};

inline InhomogeneityAt inhomogeneity_at(const ProblemData& p, double s) {
  return {p.b.const_part.at(s),     p.b.noise_part.at(s),   p.sigma.const_part.at(s),
          p.sigma.noise_part.at(s), p.q.const_part.at(s),   p.q.noise_part.at(s),
          p.rho.const_part.at(s),   p.rho.noise_part.at(s), p.q_bar.at(s),
          p.rho_bar.at(s)};
}

}  // namespace mflq
