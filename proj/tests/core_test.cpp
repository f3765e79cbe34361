#include "mflq/core.hpp"
#include "mflq/presets.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace mflq {
namespace {

using testing::scalar;

ProblemData scalar_problem() { return scalar_classic().problem; }

TEST(TimeGrid, NodesAreUniformAndEndExactly) {
  const TimeGrid g{0.5, 1.0, 7};
  EXPECT_DOUBLE_EQ(g.step(), 0.5 / 7);
  EXPECT_EQ(g.num_nodes(), 8);
  EXPECT_EQ(g.node(0), 0.5);
  EXPECT_EQ(g.node(7), 1.0);
  EXPECT_DOUBLE_EQ(g.node(3), 0.5 + 3 * 0.5 / 7);
  EXPECT_FALSE((TimeGrid{1.0, 1.0, 3}).valid());
  EXPECT_FALSE((TimeGrid{0.0, 1.0, 0}).valid());
}

TEST(Validate, WellFormedScalarProblemHasNoViolations) {
  EXPECT_TRUE(validate(scalar_problem()).empty());
  EXPECT_TRUE(validate(example31().problem).empty());
  EXPECT_TRUE(validate(random_spd({.seed = 3, .n = 3, .m = 2, .inhomogeneous = true}).problem).empty());
}

TEST(Validate, NonSymmetricRIsNamed) {
  ProblemData p = ProblemData::zero(1, 2, TimeGrid{0, 1, 10});
  Mat R(2, 2);
  R << 0, 1, 0, 0;
  p.R = MatrixPath::constant(R);
  const auto v = validate(p);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "R");
}

TEST(Validate, WrongShapeOfBIsNamed) {
  ProblemData p = scalar_problem();
  p.B = MatrixPath::constant(Mat::Ones(2, 1));
  const auto v = validate(p);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "B");
}

TEST(Validate, ReportsNodeOfNonSymmetricSample) {
  ProblemData p = ProblemData::zero(2, 1, TimeGrid{0, 1, 4});
  std::vector<Mat> samples(5, Mat::Identity(2, 2));
  samples[3](0, 1) = 0.5;
  p.Q = MatrixPath::sampled(TimeGrid{0, 1, 4}, samples);
  const auto v = validate(p);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "Q");
  EXPECT_EQ(v[0].node, 3);
}

TEST(Validate, SymmetryToleranceIsRelative) {
  ProblemData p = scalar_problem();
  Mat G(2, 2);
  p = ProblemData::zero(2, 1, TimeGrid{0, 1, 1});
  G << 1e6, 1e6 + 1e-7, 1e6, 1e6;
  p.G = G;
  EXPECT_TRUE(validate(p).empty());
  G(0, 1) = 1e6 + 1.0;
  p.G = G;
  EXPECT_EQ(validate(p).size(), 1u);
}

TEST(Validate, RejectsNonFiniteAndFrozenProblemNoise) {
  ProblemData p = scalar_problem();
  p.A = MatrixPath::constant(scalar(std::numeric_limits<double>::quiet_NaN()));
  p.b.anchor = Anchor::initial;
  const auto v = validate(p);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].field, "A");
  EXPECT_EQ(v[1].field, "b");
  EXPECT_THROW(require_valid(p), std::invalid_argument);
}

TEST(EvalPath, ConstantPath) {
  const MatrixPath I = MatrixPath::constant(Mat::Identity(3, 3));
  EXPECT_EQ(eval_path(I, 0.37, TimeGrid{0, 1, 10}), Mat::Identity(3, 3));
}

TEST(EvalPath, LinearInterpolationMidpoint) {
  const MatrixPath path = MatrixPath::sampled(TimeGrid{0, 1, 1}, {scalar(0.0), scalar(2.0)});
  EXPECT_DOUBLE_EQ(eval_path(path, 0.5, TimeGrid{0, 1, 1})(0, 0), 1.0);
}

TEST(EvalPath, OutsideHorizonThrows) {
  const MatrixPath I = MatrixPath::constant(scalar(1.0));
  EXPECT_THROW(eval_path(I, 1.5, TimeGrid{0, 1, 10}), std::out_of_range);
  const MatrixPath path = MatrixPath::sampled(TimeGrid{0, 1, 1}, {scalar(0.0), scalar(2.0)});
  EXPECT_THROW(path.at(-0.1), std::out_of_range);
}

TEST(EvalPath, ExactAtNodesAndAffineBetween) {
  std::mt19937_64 eng(11);
  const TimeGrid g{0.25, 2.0, 13};
  const MatrixPath path = sample_path(g, [&](int) { return testing::random_matrix(eng, 2, 3); });
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int k = 0; k < g.n_steps; ++k) {
    EXPECT_EQ(path.at(g.node(k)), path.samples()[k]);
    // Three points inside one cell are collinear.
    const double a = g.node(k) + 0.1 * g.step();
    const double b = g.node(k) + 0.5 * g.step();
    const double c = g.node(k) + 0.9 * g.step();
    const Mat mid = path.at(a) + (b - a) / (c - a) * (path.at(c) - path.at(a));
    EXPECT_LT((path.at(b) - mid).norm(), 1e-12);
  }
  EXPECT_EQ(path.at(g.tT), path.samples().back());
}

TEST(StripInhomogeneous, ZeroesAffineTermsOnly) {
  ProblemData p = scalar_problem();
  p.b = NoiseAffinePath::constant(Vec::Ones(1), Vec::Zero(1));
  p.g_bar = Vec::Ones(1);
  const ProblemData s = strip_inhomogeneous(p);
  EXPECT_TRUE(s.b.is_zero());
  EXPECT_TRUE(s.g_bar.isZero(0.0));
  EXPECT_TRUE(is_homogeneous(s));
  EXPECT_EQ(s.A, p.A);
  EXPECT_EQ(s.R, p.R);
  EXPECT_EQ(s.G, p.G);
}

TEST(StripInhomogeneous, IdentityOnHomogeneousProblems) {
  const ProblemData ex = example31().problem;
  EXPECT_TRUE(strip_inhomogeneous(ex) == ex);
  const ProblemData p = random_spd({.seed = 5, .inhomogeneous = true}).problem;
  EXPECT_TRUE(strip_inhomogeneous(strip_inhomogeneous(p)) == strip_inhomogeneous(p));
}

TEST(StripInhomogeneous, KeepsCoefficientViolations) {
  ProblemData p = random_spd({.seed = 2, .inhomogeneous = true}).problem;
  p.C = MatrixPath::constant(Mat::Ones(3, 3));
  p.q.const_part = MatrixPath::constant(Mat::Ones(5, 1));
  const auto before = validate(p);
  const auto after = validate(strip_inhomogeneous(p));
  ASSERT_EQ(before.size(), 2u);
  ASSERT_EQ(after.size(), 1u);
  EXPECT_EQ(after[0].field, "C");
}

TEST(InitialLaw, CovarianceUsesBrownianVarianceT) {
  InitialLaw law{Vec::Ones(2), Vec::Constant(2, 2.0), Mat::Identity(2, 2)};
  const Mat cov = law.covariance(0.25);
  EXPECT_DOUBLE_EQ(cov(0, 0), 0.25 * 4 + 1);
  EXPECT_DOUBLE_EQ(cov(0, 1), 0.25 * 4);
  EXPECT_TRUE(law.covariance(0.0).isApprox(Mat::Identity(2, 2)));
  EXPECT_THROW(law.check(3), std::invalid_argument);
}

TEST(ControlSpec, ValidationNamesField) {
  ControlSpec spec = ControlSpec::zero(2, 1);
  EXPECT_TRUE(validate(spec, 2, 1, TimeGrid{0, 1, 5}).empty());
  spec.mean_feedback = MatrixPath::zero(2, 2);
  const auto v = validate(spec, 2, 1, TimeGrid{0, 1, 5});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "mean_feedback");
  // Sampled paths must span the horizon.
  spec = ControlSpec::zero(2, 1);
  spec.feedback = MatrixPath::sampled(TimeGrid{0, 2, 2}, std::vector<Mat>(3, Mat::Zero(1, 2)));
  EXPECT_EQ(validate(spec, 2, 1, TimeGrid{0, 1, 5}).size(), 1u);
}

TEST(CoefficientsAt, EvaluatesEveryField) {
  const ProblemData p = random_spd({.seed = 9}).problem;
  const CoefficientsAt c = coefficients_at(p, 0.3);
  EXPECT_EQ(c.A, p.A.at(0.3));
  EXPECT_EQ(c.R_bar, p.R_bar.at(0.3));
  EXPECT_EQ(c.S.rows(), p.m);
}

}  // namespace
}  // namespace mflq
