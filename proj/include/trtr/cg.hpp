#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <vector>

namespace trtr {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct CgResult {
  std::vector<double> x;
  std::vector<double> residual_norms;  // ||b - A x_k||, k = 0..iterations
  std::vector<double> energies;        // 0.5 x_k^T A x_k - b^T x_k
  std::size_t iterations = 0;
};

/// Conjugate gradient for A x = b with A symmetric positive definite, from
/// x0 = 0. `apply` computes A v. Stops after `max_iters` steps or once the
/// residual norm drops below `tolerance`.
template <typename Apply>
CgResult conjugate_gradient(Apply&& apply, std::span<const double> b, std::size_t max_iters,
                            double tolerance = 0.0) {
  const std::size_t n = b.size();
  CgResult res;
  res.x.assign(n, 0.0);
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  double rr = dot(r, r);
  res.residual_norms.push_back(std::sqrt(rr));
  res.energies.push_back(0.0);
  for (std::size_t k = 0; k < max_iters; ++k) {
    if (std::sqrt(rr) <= tolerance || rr == 0.0) break;
    const std::vector<double> ap = apply(std::span<const double>(p));
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;  // numerically lost positive definiteness
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_next = dot(r, r);
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rr = rr_next;
    ++res.iterations;
    res.residual_norms.push_back(std::sqrt(rr));
    // A x = b - r, so 0.5 x^T A x - b^T x = -0.5 x^T (b + r)
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e -= 0.5 * res.x[i] * (b[i] + r[i]);
    res.energies.push_back(e);
  }
  return res;
}

/// A regularized nonlinear least-squares problem
///   E(theta) = sum_i w_i ||f_i(theta) - y_i||^2 + lambda ||theta||^2
/// exposed through its Gauss-Newton linearization.
template <typename P>
concept GaussNewtonProblem = requires(P& p, const P& cp, std::span<const double> v) {
  { cp.num_params() } -> std::convertible_to<std::size_t>;
  { cp.objective(v) } -> std::convertible_to<double>;
  p.linearize(v);
  // J^T W r + lambda theta at the linearization point.
  { cp.gradient() } -> std::same_as<std::vector<double>>;
  // (J^T W J + lambda I) v at the linearization point.
  { cp.apply_normal(v) } -> std::same_as<std::vector<double>>;
};

struct GaussNewtonOptions {
  std::size_t outer_steps = 10;
  std::size_t cg_iterations = 10;
  std::size_t max_backtracks = 8;
};

struct GaussNewtonReport {
  std::vector<double> objectives;  // before the first step, then after each step
  std::vector<CgResult> inner;
  bool degraded = false;
};

/// Gauss-Newton outer loop with a CG inner solve. A step that would raise the
/// objective is halved until it does not; if none qualifies the iterate stays.
/// Non-finite values abort and leave theta at its value on entry.
template <GaussNewtonProblem P>
GaussNewtonReport gauss_newton(P& problem, std::vector<double>& theta, const GaussNewtonOptions& opts) {
  GaussNewtonReport report;
  const std::vector<double> entry = theta;
  double current = problem.objective(theta);
  report.objectives.push_back(current);
  if (!std::isfinite(current)) {
    report.degraded = true;
    return report;
  }
  for (std::size_t step = 0; step < opts.outer_steps; ++step) {
    problem.linearize(theta);
    std::vector<double> g = problem.gradient();
    for (double& v : g) v = -v;
    CgResult cg = conjugate_gradient(
        [&](std::span<const double> v) { return problem.apply_normal(v); }, g, opts.cg_iterations);
    bool finite = true;
    for (double v : cg.x) finite = finite && std::isfinite(v);
    report.inner.push_back(cg);
    if (!finite) {
      theta = entry;
      report.degraded = true;
      return report;
    }
    double step_scale = 1.0;
    std::vector<double> candidate(theta.size());
    for (std::size_t bt = 0; bt <= opts.max_backtracks; ++bt) {
      for (std::size_t i = 0; i < theta.size(); ++i) candidate[i] = theta[i] + step_scale * cg.x[i];
      const double value = problem.objective(candidate);
      if (!std::isfinite(value)) {
        theta = entry;
        report.degraded = true;
        return report;
      }
      if (value <= current) {
        theta = candidate;
        current = value;
        break;
      }
      step_scale *= 0.5;
    }
    report.objectives.push_back(current);
  }
  return report;
}

/// E(theta) = sum_i w_i (a_i . theta - y_i)^2 + lambda ||theta||^2 with rows
/// a_i; its Gauss-Newton model is exact.
class LinearLeastSquares {
 public:
  LinearLeastSquares(std::vector<std::vector<double>> rows, std::vector<double> targets, std::vector<double> weights,
                     double regularization)
      : rows_(std::move(rows)), targets_(std::move(targets)), weights_(std::move(weights)), lambda_(regularization) {}

  std::size_t num_params() const { return rows_.empty() ? 0 : rows_.front().size(); }

  double objective(std::span<const double> theta) const {
    double e = 0.0;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const double r = dot(rows_[i], theta) - targets_[i];
      e += weights_[i] * r * r;
    }
    return e + lambda_ * dot(theta, theta);
  }

  void linearize(std::span<const double> theta) { theta_.assign(theta.begin(), theta.end()); }

  std::vector<double> gradient() const {
    std::vector<double> g(num_params(), 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const double r = weights_[i] * (dot(rows_[i], theta_) - targets_[i]);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += r * rows_[i][j];
    }
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += lambda_ * theta_[j];
    return g;
  }

  std::vector<double> apply_normal(std::span<const double> v) const {
    std::vector<double> out(num_params(), 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const double r = weights_[i] * dot(rows_[i], v);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += r * rows_[i][j];
    }
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += lambda_ * v[j];
    return out;
  }

 private:
  std::vector<std::vector<double>> rows_;
  std::vector<double> targets_, weights_;
  double lambda_;
  std::vector<double> theta_;
};

}  // namespace trtr
