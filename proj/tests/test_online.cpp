#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "trtr/loss.hpp"
#include "trtr/online.hpp"

using namespace trtr;

namespace {

OnlineFilter random_filter(std::size_t c_mid, std::size_t hidden, Rng& rng) {
  OnlineFilter f = OnlineFilter::initial(c_mid, rng, hidden);
  f.w2 = uniform_tensor(f.w2.shape(), -0.3, 0.3, rng);
  return f;
}

Tensor forward_oracle(const OnlineFilter& f, const Tensor& feat) {
  Tensor h = oracle::conv2d(feat, f.w1, 1, 0);
  for (double& v : h.data()) v = std::max(0.0, v);
  Tensor full = oracle::conv2d(h, f.w2, 1, 2);
  Tensor out({feat.dim(1), feat.dim(2)});
  for (std::size_t y = 0; y < feat.dim(1); ++y)
    for (std::size_t x = 0; x < feat.dim(2); ++x) out(y, x) = full(0, y, x);
  return out;
}

TrainingMemory random_memory(std::size_t n, std::size_t c_mid, std::size_t h, std::size_t w, Rng& rng) {
  TrainingMemory m;
  for (std::size_t i = 0; i < n; ++i)
    update_memory(m, uniform_tensor({c_mid, h, w}, -1, 1, rng), uniform_tensor({h, w}, 0, 1, rng));
  return m;
}

struct LinearInstance {
  std::vector<std::vector<double>> rows;
  std::vector<double> y, w;
};

LinearInstance random_linear(std::size_t m, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1, 1), pw(0.5, 2.0);
  LinearInstance inst;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> r(n);
    for (double& v : r) v = u(rng);
    inst.rows.push_back(r);
    inst.y.push_back(u(rng));
    inst.w.push_back(pw(rng));
  }
  return inst;
}

}  // namespace

TEST(OnlineForward, ZeroFiltersGiveZeroMap) {
  Rng rng(1);
  Tensor feat = uniform_tensor({6, 5, 7}, -1, 1, rng);
  OnlineFilter zero = OnlineFilter::initial(6, rng, 8);
  zero.w1 = Tensor(zero.w1.shape());
  zero.w2 = uniform_tensor(zero.w2.shape(), -1, 1, rng);
  const Tensor zero_out = online_forward(zero, feat);
  for (double v : zero_out.data()) EXPECT_EQ(v, 0.0);
  OnlineFilter dead = OnlineFilter::initial(6, rng, 8);
  Tensor out = online_forward(dead, feat);
  EXPECT_EQ(out.shape(), (Shape{5, 7}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(OnlineForward, MatchesConvolutionOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    OnlineFilter f = random_filter(4, 6, rng);
    Tensor feat = uniform_tensor({4, 6, 5}, -1, 1, rng);
    Tensor out = online_forward(f, feat), expect = forward_oracle(f, feat);
    ASSERT_EQ(out.shape(), expect.shape());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
  }
  EXPECT_THROW(online_forward(random_filter(4, 6, rng), Tensor({3, 4, 4})), DimensionError);
}

TEST(OnlineForward, DefaultWidthsFollowTheDesign) {
  Rng rng(3);
  OnlineFilter f = OnlineFilter::initial(32, rng);
  EXPECT_EQ(f.w1.shape(), (Shape{64, 32, 1, 1}));
  EXPECT_EQ(f.w2.shape(), (Shape{1, 64, 4, 4}));
  EXPECT_EQ(f.regularization, 1e-2);
}

TEST(Blend, Examples) {
  Rng rng(4);
  Tensor a = uniform_tensor({4, 4}, 0, 1, rng), b = uniform_tensor({4, 4}, -1, 1, rng);
  EXPECT_EQ(blend(a, b, 1.0), a);
  Tensor c = blend(Tensor({3, 3}, 1.0), Tensor({3, 3}), 0.6);
  for (double v : c.data()) EXPECT_EQ(v, 0.6);
  for (double w : {0.0, 0.3, 0.6, 1.0}) {
    Tensor same = blend(a, a, w);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], a[i], 1e-15);
  }
  EXPECT_EQ(kDefaultBlendWeight, 0.6);
  EXPECT_THROW(blend(a, Tensor({3, 4}), 0.5), DimensionError);
  EXPECT_THROW(blend(a, b, 1.2), ParameterError);
}

TEST(Memory, FirstInsertHasUnitWeight) {
  TrainingMemory m;
  update_memory(m, Tensor({2, 3, 3}), Tensor({3, 3}));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_DOUBLE_EQ(m.samples[0].weight, 1.0);
}

TEST(Memory, EvictsOldestBeyondCapacity) {
  TrainingMemory m;
  m.capacity = 2;
  for (double tag : {1.0, 2.0, 3.0}) update_memory(m, Tensor({1, 2, 2}, tag), Tensor({2, 2}));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.samples[0].feature[0], 2.0);
  EXPECT_EQ(m.samples[1].feature[0], 3.0);
  EXPECT_GT(m.samples[1].weight, m.samples[0].weight);
}

TEST(Memory, WeightsSumToOneAndFavorRecent) {
  Rng rng(5);
  TrainingMemory m;
  m.capacity = 7;
  for (int i = 0; i < 30; ++i) {
    update_memory(m, uniform_tensor({2, 2, 2}, -1, 1, rng), Tensor({2, 2}));
    EXPECT_NEAR(m.total_weight(), 1.0, 1e-12);
    for (std::size_t k = 1; k < m.size(); ++k) EXPECT_GE(m.samples[k].weight, m.samples[k - 1].weight);
    for (const auto& s : m.samples) EXPECT_GT(s.weight, 0.0);
  }
  EXPECT_EQ(m.size(), 7u);
  EXPECT_THROW(update_memory(m, Tensor({2, 3, 3}), Tensor({3, 3})), DimensionError);
  EXPECT_THROW(update_memory(m, Tensor({2, 2, 2}), Tensor({3, 2})), DimensionError);
}

TEST(ConjugateGradient, SolvesDenseLeastSquaresExactly) {
  Rng rng(6);
  for (double lambda : {0.0, 1e-2}) {
    LinearInstance inst = random_linear(12, 6, rng);
    LinearLeastSquares problem(inst.rows, inst.y, inst.w, lambda);
    std::vector<double> theta(6, 0.0);
    GaussNewtonReport rep = gauss_newton(problem, theta, {1, 6, 0});
    ASSERT_FALSE(rep.degraded);
    const auto expect = oracle::ridge(inst.rows, inst.y, inst.w, lambda);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(theta[j], expect[j], 1e-6) << "lambda " << lambda;
    EXPECT_LT(rep.inner.back().residual_norms.back(), 1e-8);
    EXPECT_LE(rep.inner.back().iterations, 6u);
  }
}

TEST(ConjugateGradient, IdentityHessianConvergesInOneIteration) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> r(5, 0.0);
    r[i] = 1.0;
    rows.push_back(r);
  }
  const std::vector<double> y{0.3, -1.2, 2.0, 0.0, 5.5};
  LinearLeastSquares problem(rows, y, std::vector<double>(5, 1.0), 0.0);
  std::vector<double> theta(5, 0.0);
  GaussNewtonReport rep = gauss_newton(problem, theta, {1, 1, 0});
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(theta[j], y[j], 1e-15);
  EXPECT_EQ(rep.inner[0].iterations, 1u);
  EXPECT_NEAR(rep.objectives.back(), 0.0, 1e-24);
}

// The residual 2-norm of CG is not monotone in general; the energy (A-norm
// of the error, up to a constant) is, and the residual vanishes within n steps.
TEST(ConjugateGradient, EnergyDecreasesAndResidualVanishes) {
  Rng rng(7);
  for (int run = 0; run < 20; ++run) {
    LinearInstance inst = random_linear(15, 8, rng);
    LinearLeastSquares problem(inst.rows, inst.y, inst.w, 1e-2);
    std::vector<double> theta(8, 0.0);
    problem.linearize(theta);
    std::vector<double> b = problem.gradient();
    for (double& v : b) v = -v;
    CgResult cg = conjugate_gradient([&](std::span<const double> v) { return problem.apply_normal(v); }, b, 8);
    for (std::size_t k = 1; k < cg.energies.size(); ++k) EXPECT_LE(cg.energies[k], cg.energies[k - 1] + 1e-14);
    EXPECT_LE(cg.iterations, 8u);
    EXPECT_LT(cg.residual_norms.back(), 1e-8 * cg.residual_norms.front()) << "run " << run;
  }
}

TEST(OnlineProblem, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  OnlineFilter f = random_filter(3, 4, rng);
  TrainingMemory m = random_memory(3, 3, 4, 5, rng);
  OnlineFilterProblem problem(f, m);
  std::vector<double> theta = f.flatten();
  problem.linearize(theta);
  const std::vector<double> g = problem.gradient();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> tp = theta, tm = theta;
    tp[i] += 1e-6;
    tm[i] -= 1e-6;
    const double numeric = (problem.objective(tp) - problem.objective(tm)) / 2e-6 / 2.0;
    EXPECT_NEAR(g[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << "param " << i;
  }
}

TEST(OnlineProblem, NormalOperatorIsSymmetricPositive) {
  Rng rng(9);
  OnlineFilter f = random_filter(3, 4, rng);
  TrainingMemory m = random_memory(2, 3, 4, 4, rng);
  OnlineFilterProblem problem(f, m);
  problem.linearize(f.flatten());
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(problem.num_params()), b(problem.num_params());
    for (double& v : a) v = u(rng);
    for (double& v : b) v = u(rng);
    const double ab = dot(a, problem.apply_normal(b)), ba = dot(b, problem.apply_normal(a));
    EXPECT_NEAR(ab, ba, 1e-10 * std::max(1.0, std::abs(ab)));
    EXPECT_GT(dot(a, problem.apply_normal(a)), 0.0);
  }
}

TEST(SolveCg, OptimalFilterIsFixedPoint) {
  Rng rng(10);
  OnlineFilter f = random_filter(3, 4, rng);
  f.regularization = 0.0;
  TrainingMemory m;
  Tensor feat = uniform_tensor({3, 5, 5}, -1, 1, rng);
  update_memory(m, feat, online_forward(f, feat));
  OnlineSolveResult res = solve_cg(f, m, {3, 5, 8});
  EXPECT_FALSE(res.report.degraded);
  EXPECT_EQ(res.filter.w1, f.w1);
  EXPECT_EQ(res.filter.w2, f.w2);
}

TEST(SolveCg, ObjectiveNeverIncreases) {
  Rng rng(11);
  for (int run = 0; run < 100; ++run) {
    OnlineFilter f = random_filter(3, 4, rng);
    TrainingMemory m = random_memory(1 + run % 4, 3, 4, 4, rng);
    OnlineSolveResult res = solve_cg(f, m, {3, 4, 8});
    ASSERT_FALSE(res.report.degraded);
    const auto& obj = res.report.objectives;
    ASSERT_EQ(obj.size(), 4u);
    for (std::size_t k = 1; k < obj.size(); ++k) EXPECT_LE(obj[k], obj[k - 1]) << "run " << run;
  }
}

TEST(SolveCg, FitsASingleTargetClosely) {
  Rng rng(12);
  OnlineFilter f = OnlineFilter::initial(4, rng, 8);
  TrainingMemory m;
  Tensor feat = uniform_tensor({4, 6, 6}, -1, 1, rng);
  update_memory(m, feat, gaussian_label({3, 3}, 1.0, 6, 6));
  OnlineSolveResult res = solve_cg(f, m, {10, 10, 8});
  EXPECT_LT(res.report.objectives.back(), 0.5 * res.report.objectives.front());
}

TEST(SolveCg, NonFiniteMemoryDegradesAndKeepsFilter) {
  Rng rng(13);
  OnlineFilter f = random_filter(3, 4, rng);
  TrainingMemory m;
  Tensor label({4, 4});
  label(1, 1) = std::numeric_limits<double>::quiet_NaN();
  update_memory(m, uniform_tensor({3, 4, 4}, -1, 1, rng), label);
  OnlineSolveResult res = solve_cg(f, m, {2, 3, 8});
  EXPECT_TRUE(res.report.degraded);
  EXPECT_EQ(res.filter.w1, f.w1);
  EXPECT_EQ(res.filter.w2, f.w2);
}

TEST(SolveCg, RejectsEmptyMemoryAndZeroIterations) {
  Rng rng(14);
  OnlineFilter f = random_filter(3, 4, rng);
  EXPECT_THROW(solve_cg(f, TrainingMemory{}, {}), ParameterError);
  TrainingMemory m = random_memory(1, 3, 4, 4, rng);
  EXPECT_THROW(solve_cg(f, m, {0, 5, 8}), ParameterError);
  EXPECT_THROW(solve_cg(f, m, {5, 0, 8}), ParameterError);
}
