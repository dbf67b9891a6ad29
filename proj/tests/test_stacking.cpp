#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace ccwf;

namespace {

StackMatrix random_instance(Rng& rng, Eigen::Index n, Eigen::Index k) {
  StackMatrix S;
  S.T = test::random_matrix(n, k, rng);
  Vector w(k);
  for (Eigen::Index j = 0; j < k; ++j) w[j] = standard_normal(rng);
  S.y = S.T * w + 0.5 * test::random_matrix(n, 1, rng).col(0);
  return S;
}

}  // namespace

TEST(NnlsRidge, IdentityExactFit) {
  StackMatrix S{Matrix::Identity(2, 2), test::vec({1, 2})};
  const auto sw = solve_nnls_ridge(S, 0.0);
  EXPECT_NEAR(sw.w[0], 1.0, 1e-12);
  EXPECT_NEAR(sw.w[1], 2.0, 1e-12);
  EXPECT_EQ(sw.scheme, WeightScheme::stack_ridge);
}

TEST(NnlsRidge, NonnegativityBinds) {
  StackMatrix S{Matrix::Ones(2, 1), test::vec({-1, -1})};
  EXPECT_EQ(solve_nnls_ridge(S, 0.0).w[0], 0.0);
}

TEST(NnlsRidge, MatchesProjectedGradientOracle) {
  Rng rng = make_rng(1);
  const StackMatrix S = random_instance(rng, 30, 3);
  const auto sw = solve_nnls_ridge(S, 0.5);
  const Vector ref = test::projected_gradient_ridge(S.T, S.y, 0.5);
  const double a = ridge_objective(S, sw.w, 0.5), b = ridge_objective(S, ref, 0.5);
  EXPECT_LE(a, b * (1 + 1e-6));
}

TEST(NnlsRidge, MatchesSupportEnumerationAndKkt) {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<Eigen::Index>(1 + uniform_index(rng, 5));
    const auto n = static_cast<Eigen::Index>(5 + uniform_index(rng, 46));
    StackMatrix S = random_instance(rng, n, k);
    if (trial % 5 == 0) S.T.col(0) = S.T.col(k - 1) * 2.0;  // collinear columns
    const double lambda = std::array<double, 4>{0.0, 0.1, 1.0, 10.0}[static_cast<std::size_t>(trial % 4)];
    const auto sw = solve_nnls_ridge(S, lambda);
    EXPECT_GE(sw.w.minCoeff(), 0.0);
    const Vector ref = test::enumerate_supports_ridge(S.T, S.y, lambda);
    const double a = ridge_objective(S, sw.w, lambda), b = ridge_objective(S, ref, lambda);
    EXPECT_LE(a, b + 1e-6 * std::abs(b)) << "trial " << trial;
    EXPECT_LT(test::kkt_residual_ridge(S.T, S.y, lambda, sw.w), 1e-6) << "trial " << trial;
  }
}

TEST(NnlsRidge, MonotoneShrinkage) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const StackMatrix S = random_instance(rng, 40, 4);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0}) {
      const double norm = solve_nnls_ridge(S, lambda).w.norm();
      EXPECT_LE(norm, prev + 1e-8);
      prev = norm;
    }
  }
}

TEST(NnlsRidge, ScaleConsistency) {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    StackMatrix S = random_instance(rng, 30, 3);
    const Vector w1 = solve_nnls_ridge(S, 0.0).w;
    for (double c : {0.0, 0.5, 3.0}) {
      StackMatrix Sc = S;
      Sc.y *= c;
      const Vector wc = solve_nnls_ridge(Sc, 0.0).w;
      EXPECT_LE((wc - c * w1).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, c * w1.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(NnlsRidge, Rejections) {
  StackMatrix S{Matrix::Ones(2, 1), test::vec({1, 1})};
  EXPECT_THROW(solve_nnls_ridge(S, -1.0), Error);
  S.T(0, 0) = std::nan("");
  EXPECT_THROW(solve_nnls_ridge(S, 0.0), NumericError);
  StackMatrix bad{Matrix::Ones(3, 1), test::vec({1, 1})};
  EXPECT_THROW(solve_nnls_ridge(bad, 0.0), Error);
}

TEST(NnlsRidge, NonConvergenceIsReported) {
  Rng rng = make_rng(5);
  StackMatrix S = random_instance(rng, 30, 4);
  S.T.col(1) = S.T.col(0) + 1e-6 * S.T.col(2);
  SolverOptions opt;
  opt.max_sweeps = 2;
  opt.polish_every = 0;
  opt.tol = 1e-14;
  try {
    solve_nnls_ridge(S, 0.0, opt);
    SUCCEED();  // converged within two sweeps
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("KKT residual"), std::string::npos);
  }
}

TEST(NnlsLasso, LargePenaltyZeroes) {
  Rng rng = make_rng(6);
  const StackMatrix S = random_instance(rng, 30, 5);
  EXPECT_EQ(solve_nnls_lasso(S, 1e9).w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(NnlsLasso, ZeroPenaltyEqualsRidge) {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const StackMatrix S = random_instance(rng, 30, 4);
    EXPECT_LE((solve_nnls_lasso(S, 0.0).w - solve_nnls_ridge(S, 0.0).w).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(NnlsLasso, SparserThanRidge) {
  Rng rng = make_rng(8);
  int lasso_zero = 0, ridge_zero = 0;
  for (int trial = 0; trial < 100; ++trial) {
    StackMatrix S = random_instance(rng, 30, 5);
    S.y = S.T * test::vec({1.0, 0.8, 0.05, 0.02, 0.0}) + 0.5 * test::random_matrix(30, 1, rng).col(0);
    const double lambda = 0.2 * (S.T.transpose() * S.y).cwiseAbs().maxCoeff();
    if ((solve_nnls_lasso(S, lambda).w.array() == 0.0).any()) ++lasso_zero;
    if ((solve_nnls_ridge(S, lambda).w.array() == 0.0).any()) ++ridge_zero;
  }
  EXPECT_GT(lasso_zero, ridge_zero);
}

TEST(CvLambda, SingleValueGrid) {
  Rng rng = make_rng(9);
  EXPECT_EQ(cv_select_lambda(random_instance(rng, 20, 2), 5, {0.7}, 1), 0.7);
}

TEST(CvLambda, NoisePrefersHeavyShrinkage) {
  Rng rng = make_rng(10);
  int heavy = 0;
  const int seeds = 2000;
  for (int s = 0; s < seeds; ++s) {
    StackMatrix S;
    S.T = test::random_matrix(200, 3, rng);
    S.y = test::random_matrix(200, 1, rng).col(0);
    if (cv_select_lambda(S, 10, {1e-3, 1e3}, static_cast<std::uint64_t>(s)) == 1e3) ++heavy;
  }
  EXPECT_GE(heavy, seeds * 9 / 10);
}

TEST(CvLambda, ExactFitPrefersLightShrinkage) {
  Rng rng = make_rng(11);
  for (int s = 0; s < 20; ++s) {
    StackMatrix S;
    S.T = test::random_matrix(50, 3, rng);
    S.y = S.T * Vector::Ones(3);
    EXPECT_EQ(cv_select_lambda(S, 10, {1e-3, 1e3}, static_cast<std::uint64_t>(s)), 1e-3);
  }
}

TEST(CvLambda, Rejections) {
  Rng rng = make_rng(12);
  const StackMatrix S = random_instance(rng, 5, 2);
  EXPECT_THROW(cv_select_lambda(S, 1, {1.0, 2.0}, 1), Error);
  EXPECT_THROW(cv_select_lambda(S, 6, {1.0, 2.0}, 1), Error);
  EXPECT_THROW(cv_select_lambda(S, 2, {}, 1), Error);
}

TEST(CvLambda, DefaultGridShape) {
  StackMatrix S{Matrix::Identity(2, 2), test::vec({3, -4})};
  const auto grid = default_lambda_grid(S);
  ASSERT_EQ(grid.size(), 50u);
  EXPECT_NEAR(grid.back(), 4.0, 1e-12);
  EXPECT_NEAR(grid.front(), 4e-4, 1e-15);
  for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_GT(grid[i], grid[i - 1]);
}

TEST(BaselineWeights, Examples) {
  EXPECT_EQ(baseline_weights(WeightScheme::simple_average, {1, 2, 3, 4}).w, Vector::Constant(4, 0.25));
  EXPECT_EQ(baseline_weights(WeightScheme::sample_size, {100, 300}).w, test::vec({0.25, 0.75}));
  EXPECT_EQ(baseline_weights(WeightScheme::simple_average, {7}).w, Vector::Ones(1));
  EXPECT_THROW(baseline_weights(WeightScheme::simple_average, {}), Error);
}

TEST(StackMatrix, BuiltFromForests) {
  Matrix X(4, 1);
  X << 0, 1, 2, 3;
  Dataset d;
  d.features = X;
  d.outcome = test::vec({1, 2, 3, 4});
  ForestParams fp;
  fp.n_trees = 3;
  fp.min_leaf = 1;
  const Forest constant = fit_forest(X, Vector::Constant(4, 5.0), fp, 1);
  const Forest other = fit_forest(X, d.outcome, fp, 2);
  const std::vector<Forest> fs{constant, other};
  const StackMatrix S = build_stack_matrix(fs, d);
  EXPECT_EQ(S.T.col(0), Vector::Constant(4, 5.0));
  EXPECT_EQ(S.T.col(1), predict_forest(other, X));
  EXPECT_EQ(S.y, d.outcome);
  const std::vector<Forest> single{other};
  EXPECT_EQ(build_stack_matrix(single, d).T.cols(), 1);
}

TEST(FitStackingWeights, NonnegativeAndReproducible) {
  Rng rng = make_rng(13);
  const StackMatrix S = random_instance(rng, 80, 4);
  const auto a = fit_stacking_weights(S, WeightScheme::stack_ridge, 3);
  const auto b = fit_stacking_weights(S, WeightScheme::stack_ridge, 3);
  EXPECT_EQ(a.w, b.w);
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_GE(a.w.minCoeff(), 0.0);
  EXPECT_EQ(a.intercept, 0.0);
  EXPECT_THROW(fit_stacking_weights(S, WeightScheme::simple_average, 3), Error);
}

TEST(FitStackingWeights, InterceptRecoversOffset) {
  Rng rng = make_rng(14);
  StackMatrix S;
  S.T = test::random_matrix(200, 2, rng).cwiseAbs();
  S.y = S.T * test::vec({0.6, 0.3}) + Vector::Constant(200, 4.0);
  StackingOptions opt;
  opt.intercept = true;
  const auto sw = fit_stacking_weights(S, WeightScheme::stack_ridge, 1, opt);
  EXPECT_NEAR(sw.intercept, 4.0, 0.05);
  EXPECT_NEAR(sw.w[0], 0.6, 0.02);
  opt.standardize = true;
  const auto st = fit_stacking_weights(S, WeightScheme::stack_ridge, 1, opt);
  EXPECT_NEAR(st.w[1], 0.3, 0.02);
}

TEST(WeightSchemes, ParseNames) {
  EXPECT_EQ(parse_weight_scheme("simple"), WeightScheme::simple_average);
  EXPECT_EQ(parse_weight_scheme("stack_lasso"), WeightScheme::stack_lasso);
  EXPECT_THROW(parse_weight_scheme("median"), Error);
}
