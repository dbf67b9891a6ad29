#pragma once

// Stacked regression weights: regress the observed outcome on the matrix of
// member predictions under w >= 0 with a ridge (or lasso) penalty, no
// intercept, penalty chosen by K-fold cross-validation.

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"
#include "ccwf/forest.hpp"

#include <numeric>
#include <span>

namespace ccwf {

enum class WeightScheme { stack_ridge, stack_lasso, simple_average, sample_size };

inline std::string to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::stack_ridge: return "stack_ridge";
    case WeightScheme::stack_lasso: return "stack_lasso";
    case WeightScheme::simple_average: return "simple";
    case WeightScheme::sample_size: return "sample_size";
  }
  return "?";
}

inline WeightScheme parse_weight_scheme(std::string_view s) {
  if (s == "stack_ridge" || s == "ridge") return WeightScheme::stack_ridge;
  if (s == "stack_lasso" || s == "lasso") return WeightScheme::stack_lasso;
  if (s == "simple" || s == "simple_average") return WeightScheme::simple_average;
  if (s == "sample_size") return WeightScheme::sample_size;
  throw UsageError("unknown weight scheme '" + std::string(s) + "'");
}

enum class Penalty { ridge, lasso };

struct StackMatrix {
  Matrix T;  // n x k, column j = member j's predictions on every training row
  Vector y;  // n

  std::size_t rows() const { return static_cast<std::size_t>(T.rows()); }
  std::size_t members() const { return static_cast<std::size_t>(T.cols()); }
};

struct StackingWeights {
  Vector w;
  double lambda = 0.0;
  WeightScheme scheme = WeightScheme::stack_ridge;
  double intercept = 0.0;  // nonzero only with StackingOptions::intercept
};

struct SolverOptions {
  double tol = 1e-8;            // max coordinate change at convergence
  std::size_t max_sweeps = 10000;
  std::size_t polish_every = 25;  // sweeps between active-set refinement attempts
};

struct SolveInfo {
  std::size_t sweeps = 0;
  bool converged = false;
};

// Column j holds forest j's predictions on every row of d.
inline StackMatrix build_stack_matrix(std::span<const Forest> forests, const Dataset& d) {
  require(!forests.empty(), "stacking needs at least one forest");
  StackMatrix S;
  S.T.resize(d.features.rows(), static_cast<Eigen::Index>(forests.size()));
  for (std::size_t j = 0; j < forests.size(); ++j) S.T.col(static_cast<Eigen::Index>(j)) = predict_forest(forests[j], d.features);
  S.y = d.outcome;
  return S;
}

inline double ridge_objective(const StackMatrix& S, const Vector& w, double lambda) {
  return (S.y - S.T * w).squaredNorm() + lambda * w.squaredNorm();
}

inline double lasso_objective(const StackMatrix& S, const Vector& w, double lambda) {
  return (S.y - S.T * w).squaredNorm() + lambda * w.lpNorm<1>();
}

namespace detail {

// Gram-form problem: minimise y'y - 2 b'w + w'Gw + penalty(w), w >= 0.
struct GramProblem {
  Matrix G;
  Vector b;
};

inline GramProblem gram(const Matrix& T, const Vector& y) {
  return {T.transpose() * T, T.transpose() * y};
}

// One cyclic sweep of clipped coordinate updates; returns the largest change.
inline double cd_sweep(const GramProblem& P, double lambda, Penalty pen, Vector& w, Vector& Gw) {
  double max_change = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    const double gjj = P.G(j, j);
    const double partial = P.b[j] - (Gw[j] - gjj * w[j]);
    double next;
    if (pen == Penalty::ridge) {
      const double denom = gjj + lambda;
      next = denom > 0.0 ? std::max(0.0, partial / denom) : 0.0;
    } else {
      next = gjj > 0.0 ? std::max(0.0, (partial - 0.5 * lambda) / gjj) : 0.0;
    }
    const double delta = next - w[j];
    if (delta != 0.0) {
      Gw += delta * P.G.col(j);
      w[j] = next;
      max_change = std::max(max_change, std::abs(delta));
    }
  }
  return max_change;
}

// Objective without the constant y'y.
inline double gram_objective(const GramProblem& P, double lambda, Penalty pen, const Vector& w) {
  const double pen_value = pen == Penalty::ridge ? lambda * w.squaredNorm() : lambda * w.lpNorm<1>();
  return w.dot(P.G * w) - 2.0 * P.b.dot(w) + pen_value;
}

// Solves the stationarity equations on the current positive set. Accepted
// only if it stays strictly positive; the caller then verifies with a sweep.
inline bool polish(const GramProblem& P, double lambda, Penalty pen, Vector& w) {
  std::vector<Eigen::Index> act;
  for (Eigen::Index j = 0; j < w.size(); ++j)
    if (w[j] > 0.0) act.push_back(j);
  if (act.empty()) return false;
  const auto m = static_cast<Eigen::Index>(act.size());
  Matrix A(m, m);
  Vector rhs(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index c = 0; c < m; ++c) A(a, c) = P.G(act[static_cast<std::size_t>(a)], act[static_cast<std::size_t>(c)]);
    rhs[a] = P.b[act[static_cast<std::size_t>(a)]];
    if (pen == Penalty::ridge) {
      A(a, a) += lambda;
    } else {
      rhs[a] -= 0.5 * lambda;
    }
  }
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  const Vector v = ldlt.solve(rhs);
  if (!v.allFinite() || (A * v - rhs).norm() > 1e-9 * (rhs.norm() + 1.0)) return false;
  for (Eigen::Index a = 0; a < m; ++a)
    if (!(v[a] > 0.0)) return false;
  Vector cand = Vector::Zero(w.size());
  for (Eigen::Index a = 0; a < m; ++a) cand[act[static_cast<std::size_t>(a)]] = v[a];
  w = cand;
  return true;
}

inline Vector solve_gram(const GramProblem& P, double lambda, Penalty pen, const SolverOptions& opt,
                         const Vector* warm, SolveInfo* info) {
  const auto k = P.b.size();
  Vector w = warm ? *warm : Vector::Zero(k);
  Vector Gw = P.G * w;
  SolveInfo si;
  // Exact solve on the current positive set, kept if a verifying sweep
  // barely moves it and the objective does not get worse.
  auto try_polish = [&]() {
    Vector probe = w;
    if (!polish(P, lambda, pen, probe)) return false;
    Vector Gp = P.G * probe;
    if (cd_sweep(P, lambda, pen, probe, Gp) >= opt.tol) return false;
    if (gram_objective(P, lambda, pen, probe) > gram_objective(P, lambda, pen, w)) return false;
    w = probe;
    Gw = Gp;
    return true;
  };
  for (si.sweeps = 1; si.sweeps <= opt.max_sweeps; ++si.sweeps) {
    if (cd_sweep(P, lambda, pen, w, Gw) < opt.tol) {
      try_polish();
      si.converged = true;
      break;
    }
    if (opt.polish_every && si.sweeps % opt.polish_every == 0 && try_polish()) {
      ++si.sweeps;
      si.converged = true;
      break;
    }
  }
  if (si.sweeps > opt.max_sweeps) si.sweeps = opt.max_sweeps;
  if (info) *info = si;
  return w;
}

inline Vector solve_checked(const StackMatrix& S, double lambda, Penalty pen, const SolverOptions& opt) {
  require(lambda >= 0.0, "lambda must be >= 0");
  require(S.T.rows() == S.y.size(), "stack matrix and outcome length differ");
  if (!S.T.allFinite() || !S.y.allFinite()) throw NumericError("stack matrix contains non-finite values");
  const auto P = gram(S.T, S.y);
  SolveInfo info;
  Vector w = solve_gram(P, lambda, pen, opt, nullptr, &info);
  if (!info.converged) {
    // Report how far from stationarity the last iterate is.
    Vector g = 2.0 * (P.G * w - P.b);
    if (pen == Penalty::ridge) g += 2.0 * lambda * w; else g.array() += lambda;
    double gap = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) gap = std::max(gap, w[j] > 0.0 ? std::abs(g[j]) : std::max(0.0, -g[j]));
    throw NumericError("non-negative stacking solver did not converge in " + std::to_string(opt.max_sweeps) +
                       " sweeps (KKT residual " + format_double(gap) + ")");
  }
  return w;
}

}  // namespace detail

// argmin ||y - Tw||^2 + lambda ||w||^2 subject to w >= 0.
inline StackingWeights solve_nnls_ridge(const StackMatrix& S, double lambda, const SolverOptions& opt = {}) {
  return {detail::solve_checked(S, lambda, Penalty::ridge, opt), lambda, WeightScheme::stack_ridge};
}

// argmin ||y - Tw||^2 + lambda ||w||_1 subject to w >= 0.
inline StackingWeights solve_nnls_lasso(const StackMatrix& S, double lambda, const SolverOptions& opt = {}) {
  return {detail::solve_checked(S, lambda, Penalty::lasso, opt), lambda, WeightScheme::stack_lasso};
}

// 50 log-spaced values from 1e-4 * lambda_max up to lambda_max = ||T'y||_inf.
inline std::vector<double> default_lambda_grid(const StackMatrix& S, std::size_t count = 50, double ratio = 1e-4) {
  double lmax = (S.T.transpose() * S.y).cwiseAbs().maxCoeff();
  if (!(lmax > 0.0)) lmax = 1.0;
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    grid[i] = lmax * std::pow(ratio, 1.0 - t);
  }
  return grid;
}

// Grid value with the smallest pooled held-out squared error over `folds`
// seeded folds; ties go to the larger lambda.
inline double cv_select_lambda(const StackMatrix& S, std::size_t folds, std::vector<double> grid, std::uint64_t seed,
                               Penalty pen = Penalty::ridge, const SolverOptions& opt = {}) {
  require(folds >= 2, "cross-validation needs at least 2 folds");
  require(!grid.empty(), "lambda grid is empty");
  for (double l : grid) require(l >= 0.0, "lambda grid values must be >= 0");
  const std::size_t n = S.rows();
  require(folds <= n, "cross-validation with " + std::to_string(folds) + " folds leaves a fold with < 1 row (n=" +
                          std::to_string(n) + ")");
  if (grid.size() == 1) return grid[0];
  std::sort(grid.begin(), grid.end(), std::greater<>());

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  shuffle(perm, rng);
  std::vector<std::vector<Eigen::Index>> fold_rows(folds);
  for (std::size_t i = 0; i < n; ++i) fold_rows[i % folds].push_back(static_cast<Eigen::Index>(perm[i]));

  const auto full = detail::gram(S.T, S.y);
  std::vector<double> sse(grid.size(), 0.0);
  for (const auto& rows : fold_rows) {
    Matrix Tf(static_cast<Eigen::Index>(rows.size()), S.T.cols());
    Vector yf(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tf.row(static_cast<Eigen::Index>(i)) = S.T.row(rows[i]);
      yf[static_cast<Eigen::Index>(i)] = S.y[rows[i]];
    }
    detail::GramProblem train{full.G - Tf.transpose() * Tf, full.b - Tf.transpose() * yf};
    Vector w = Vector::Zero(S.T.cols());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      SolveInfo info;
      w = detail::solve_gram(train, grid[g], pen, opt, &w, &info);
      if (!info.converged) throw NumericError("stacking solver did not converge during cross-validation");
      sse[g] += (yf - Tf * w).squaredNorm();
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (sse[g] < sse[best]) best = g;
  return grid[best];
}

// 1/k each, or n_j / sum(n).
inline StackingWeights baseline_weights(WeightScheme scheme, const std::vector<std::size_t>& sizes) {
  require(!sizes.empty(), "baseline weights need at least one member");
  StackingWeights sw;
  sw.scheme = scheme;
  const auto k = static_cast<Eigen::Index>(sizes.size());
  if (scheme == WeightScheme::simple_average) {
    sw.w = Vector::Constant(k, 1.0 / static_cast<double>(k));
  } else if (scheme == WeightScheme::sample_size) {
    const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    require(total > 0.0, "sample-size weights need a positive total");
    sw.w.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) sw.w[j] = static_cast<double>(sizes[static_cast<std::size_t>(j)]) / total;
  } else {
    throw UsageError("baseline_weights only handles simple_average and sample_size");
  }
  return sw;
}

struct StackingOptions {
  std::size_t folds = 10;
  std::size_t grid_size = 50;
  double grid_ratio = 1e-4;
  SolverOptions solver;
  bool intercept = false;    // unpenalised intercept via centring of T and y
  bool standardize = false;  // penalise weights on unit-variance columns of T
};

// Cross-validated penalty followed by a full-data solve. The optional
// centring and scaling use full-data moments, also inside the folds.
inline StackingWeights fit_stacking_weights(const StackMatrix& S, WeightScheme scheme, std::uint64_t seed,
                                            const StackingOptions& opt = {}) {
  require(scheme == WeightScheme::stack_ridge || scheme == WeightScheme::stack_lasso,
          "fit_stacking_weights needs a stacking scheme");
  const Penalty pen = scheme == WeightScheme::stack_ridge ? Penalty::ridge : Penalty::lasso;
  const std::size_t folds = std::min(opt.folds, S.rows());
  StackMatrix W = S;
  const auto n = static_cast<double>(S.rows());
  Vector col_mean = Vector::Zero(S.T.cols()), scale = Vector::Ones(S.T.cols());
  double y_mean = 0.0;
  if (opt.intercept) {
    col_mean = S.T.colwise().mean().transpose();
    y_mean = S.y.mean();
    W.T.rowwise() -= col_mean.transpose();
    W.y.array() -= y_mean;
  }
  if (opt.standardize) {
    for (Eigen::Index j = 0; j < W.T.cols(); ++j) {
      const double m = W.T.col(j).mean();
      const double sd = std::sqrt((W.T.col(j).array() - m).square().sum() / n);
      if (sd > 0.0) {
        scale[j] = sd;
        W.T.col(j) /= sd;
      }
    }
  }
  const double lambda = cv_select_lambda(W, folds, default_lambda_grid(W, opt.grid_size, opt.grid_ratio), seed, pen,
                                         opt.solver);
  StackingWeights sw = pen == Penalty::ridge ? solve_nnls_ridge(W, lambda, opt.solver) : solve_nnls_lasso(W, lambda, opt.solver);
  sw.w = sw.w.cwiseQuotient(scale);
  if (opt.intercept) sw.intercept = y_mean - col_mean.dot(sw.w);
  return sw;
}

}  // namespace ccwf
