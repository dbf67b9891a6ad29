#include "ccwf/ccwf.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace ccwf;

namespace {

Tree stump(int feature, double threshold, double left, double right) {
  Tree t;
  t.nodes.resize(3);
  t.nodes[0].feature = feature;
  t.nodes[0].threshold = threshold;
  t.nodes[0].left = 1;
  t.nodes[0].right = 2;
  t.nodes[1].value = left;
  t.nodes[2].value = right;
  return t;
}

Forest forest_of(Tree t, std::size_t p) {
  Forest f;
  f.trees.push_back(std::make_shared<const Tree>(std::move(t)));
  f.params.n_trees = 1;
  f.n_features = p;
  return f;
}

CCWFModel hand_model(std::vector<Forest> forests, Vector w) {
  CCWFModel m;
  m.n_features = forests.front().n_features;
  m.forests = std::move(forests);
  m.weights.w = std::move(w);
  return m;
}

Dataset small_data(std::uint64_t seed, std::size_t clusters = 3, std::size_t size = 60) {
  GenConfig g;
  g.n_true_clusters = clusters;
  g.cluster_size = size;
  g.p = 4;
  g.n_active = 2;
  g.n_test_sets = 0;
  g.seed = seed;
  OutcomeModel om;
  return gen_scenario(g, om).split.train;
}

EnsembleOptions small_opts(VariantKind v, std::optional<std::size_t> k) {
  EnsembleOptions o;
  o.variant = v;
  o.k = k;
  o.forest.n_trees = 10;
  o.stacking.folds = 5;
  o.stacking.grid_size = 10;
  o.kmeans.n_init = 3;
  return o;
}

}  // namespace

TEST(Fit, MergedUsesReferenceBudgetAndUnitWeight) {
  const Dataset d = small_data(1);
  EnsembleOptions o = small_opts(VariantKind::merged, std::nullopt);
  o.forest.n_trees = 100;
  o.k_ref = 5;
  const CCWFModel m = fit(d, o, 3);
  ASSERT_EQ(m.k(), 1u);
  EXPECT_EQ(m.forests[0].size(), 500u);
  EXPECT_EQ(m.total_trees(), 500u);
  EXPECT_EQ(m.weights.w, test::vec({1.0}));
}

TEST(Fit, ConstantOutcomePerBlob) {
  Dataset d = test::blobs({test::vec({0, 0}), test::vec({100, 100})}, 50, 1.0, 4);
  const double c1 = 3.0, c2 = 7.0;
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) d.outcome[i] = (*d.true_labels)[static_cast<std::size_t>(i)] ? c2 : c1;
  EnsembleOptions o = small_opts(VariantKind::cluster, 2);
  o.forest.bootstrap = false;
  const CCWFModel m = fit(d, o, 5);
  ASSERT_EQ(m.k(), 2u);
  // A forest grown on a constant outcome is a single root leaf.
  std::vector<double> constants;
  for (const auto& f : m.forests) {
    const Vector p = predict_forest(f, d.features);
    EXPECT_EQ(p.maxCoeff(), p.minCoeff());
    constants.push_back(p[0]);
  }
  std::sort(constants.begin(), constants.end());
  EXPECT_EQ(constants, (std::vector<double>{c1, c2}));
  // Both columns of T are constant, so the best stacked fit at lambda 0 is the
  // constant mean(y), leaving rmse |c1 - c2| / 2.
  MemberForests mf;
  mf.forests = m.forests;
  const StackMatrix S = build_stack_matrix(mf.forests, d);
  CCWFModel z = m;
  z.weights = solve_nnls_ridge(S, 0.0);
  const Vector yhat = predict(z, d.features);
  EXPECT_NEAR(yhat.maxCoeff() - yhat.minCoeff(), 0.0, 1e-9);
  EXPECT_NEAR(yhat[0], 0.5 * (c1 + c2), 1e-6);
  EXPECT_NEAR(rmse(d.outcome, yhat), 0.5 * (c2 - c1), 1e-6);
}

TEST(Fit, MultiOnOneClusterEqualsMerged) {
  Dataset d = small_data(6);
  d.true_labels = std::vector<int>(d.rows(), 0);
  EnsembleOptions mo = small_opts(VariantKind::multi, std::nullopt);
  mo.k_ref = 4;
  EnsembleOptions go = small_opts(VariantKind::merged, std::nullopt);
  go.k_ref = 4;
  const CCWFModel a = fit(d, mo, 7), b = fit(d, go, 7);
  EXPECT_EQ(a.total_trees(), b.total_trees());
  EXPECT_EQ(predict(a, d.features), predict(b, d.features));
}

TEST(Fit, TreeBudgetParity) {
  const Dataset d = small_data(8);
  std::vector<std::size_t> totals;
  for (auto v : {VariantKind::cluster, VariantKind::random, VariantKind::multi, VariantKind::merged}) {
    EnsembleOptions o = small_opts(v, v == VariantKind::multi ? std::nullopt : std::optional<std::size_t>(6));
    o.k_ref = 6;
    const CCWFModel m = fit(d, o, 9);
    totals.push_back(m.total_trees());
    EXPECT_EQ(m.tree_budget, 60u) << to_string(v);
  }
  for (auto t : totals) EXPECT_EQ(t, 60u);
}

TEST(Fit, BudgetSpreadAsEvenlyAsPossible) {
  const Dataset d = small_data(10);
  EnsembleOptions o = small_opts(VariantKind::random, 4);
  o.k_ref = 3;
  o.forest.n_trees = 5;
  const CCWFModel m = fit(d, o, 11);
  ASSERT_EQ(m.k(), 4u);
  std::vector<std::size_t> sizes;
  for (const auto& f : m.forests) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 4, 3}));
}

TEST(Fit, StackedWeightsNonNegative) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Dataset d = small_data(20 + s);
    const CCWFModel m = fit(d, small_opts(VariantKind::cluster, 5), s);
    EXPECT_GE(m.weights.w.minCoeff(), 0.0);
    EXPECT_EQ(m.weights.scheme, WeightScheme::stack_ridge);
  }
}

TEST(Fit, Deterministic) {
  const Dataset d = small_data(12);
  EnsembleOptions o = small_opts(VariantKind::cluster, 4);
  const CCWFModel a = fit(d, o, 13);
  o.forest.threads = 3;
  o.kmeans.threads = 2;
  const CCWFModel b = fit(d, o, 13);
  EXPECT_EQ(a.weights.w, b.weights.w);
  EXPECT_EQ(predict(a, d.features), predict(b, d.features));
  const CCWFModel c = fit(d, o, 14);
  EXPECT_NE(predict(a, d.features), predict(c, d.features));
}

TEST(Fit, AutoKResolvedBySilhouette) {
  const Dataset d = small_data(15);
  EnsembleOptions o = small_opts(VariantKind::cluster, std::nullopt);
  o.auto_k_max = 8;
  const CCWFModel m = fit(d, o, 16);
  EXPECT_GE(m.requested_k, 2u);
  EXPECT_LE(m.requested_k, 8u);
  EXPECT_TRUE(m.silhouette.has_value());
  EXPECT_EQ(m.partition_source, "kmeans-auto");
}

TEST(Fit, ForcedStudyPartitionReducesClusterToMulti) {
  const Dataset d = small_data(17, 4);
  const EnsembleOptions o = small_opts(VariantKind::multi, std::nullopt);
  const CCWFModel multi = fit(d, o, 18);
  const CCWFModel forced = fit_with_partition(d, partition_by_labels(d), o, 18, VariantKind::cluster, "labels");
  EXPECT_EQ(multi.weights.w, forced.weights.w);
  EXPECT_EQ(predict(multi, d.features), predict(forced, d.features));
}

TEST(Fit, Rejections) {
  Dataset d = small_data(19);
  EXPECT_THROW(fit(d, small_opts(VariantKind::cluster, 1), 1), Error);
  EXPECT_THROW(fit(d, small_opts(VariantKind::random, 1), 1), Error);
  d.true_labels.reset();
  EXPECT_THROW(fit(d, small_opts(VariantKind::multi, std::nullopt), 1), UsageError);
  const CCWFModel m = fit(d, small_opts(VariantKind::merged, std::nullopt), 1);
  EXPECT_THROW(predict(m, Matrix::Zero(2, 3)), Error);
}

TEST(Fit, UndersizedRandomPartitionsRebalanced) {
  const Dataset d = small_data(21, 2, 20);
  EnsembleOptions o = small_opts(VariantKind::random, 8);
  const CCWFModel m = fit(d, o, 2);
  // 40 rows with a floor of 10 allow at most 4 partitions.
  EXPECT_EQ(m.k(), 4u);
  EXPECT_EQ(m.dissolved, 4u);
  EXPECT_EQ(m.requested_k, 8u);
  for (auto s : m.partition_sizes) EXPECT_GE(s, 10u);
}

TEST(Dissolve, MovesRowsToNearestRemainingCentroid) {
  Matrix X(12, 1);
  X << 0, 0.1, 0.2, 0.3, 0.4, 5, 5.1, 5.2, 5.3, 5.4, 4.0, 1.0;
  PartitionAssignment a{{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2}, 3};
  const std::size_t n = dissolve_undersized(a, X, partition_means(X, a), 3);
  EXPECT_EQ(n, 1u);
  EXPECT_EQ(a.k, 2u);
  // Row 10 (4.0) is nearer 5.2, row 11 (1.0) nearer 0.2.
  EXPECT_EQ(a.labels[10], 1);
  EXPECT_EQ(a.labels[11], 0);
  a.validate(12);
}

TEST(Dissolve, NothingBelowFloor) {
  Matrix X = Matrix::Zero(6, 1);
  PartitionAssignment a{{0, 0, 0, 1, 1, 1}, 2};
  EXPECT_EQ(dissolve_undersized(a, X, partition_means(X, a), 3), 0u);
  EXPECT_EQ(a.k, 2u);
}

TEST(Predict, HandStumps) {
  Matrix x(1, 2);
  x << 1.0, 3.0;
  const Forest f0 = forest_of(stump(0, 2.0, 10.0, 20.0), 2);  // x0 = 1 goes left: 10
  const Forest f1 = forest_of(stump(1, 2.5, -4.0, 6.0), 2);   // x1 = 3 goes right: 6
  const CCWFModel m = hand_model({f0, f1}, test::vec({0.3, 0.5}));
  EXPECT_NEAR(predict(m, x)[0], 0.3 * 10.0 + 0.5 * 6.0, 1e-15);
  const CCWFModel first = hand_model({f0, f1}, test::vec({1.0, 0.0}));
  EXPECT_EQ(predict(first, x), predict_forest(f0, x));
}

TEST(Predict, IdenticalForestsScaleBySum) {
  const Dataset d = small_data(22);
  ForestParams fp;
  fp.n_trees = 5;
  const Forest f = fit_forest(d.features, d.outcome, fp, 1);
  const CCWFModel m = hand_model({f, f, f}, test::vec({0.2, 0.7, 0.6}));
  const Vector base = predict_forest(f, d.features);
  EXPECT_LT((predict(m, d.features) - 1.5 * base).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, LinearInWeights) {
  const Dataset d = small_data(23);
  const CCWFModel m = fit(d, small_opts(VariantKind::random, 3), 4);
  Rng rng = make_rng(5);
  Vector w1(3), w2(3);
  for (int j = 0; j < 3; ++j) {
    w1[j] = uniform01(rng);
    w2[j] = uniform01(rng);
  }
  CCWFModel a = m, b = m, ab = m;
  a.weights.w = w1;
  b.weights.w = w2;
  ab.weights.w = w1 + w2;
  const Vector lhs = predict(ab, d.features), rhs = predict(a, d.features) + predict(b, d.features);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, WeightsNotRenormalised) {
  const Dataset d = small_data(24);
  CCWFModel m = fit(d, small_opts(VariantKind::merged, std::nullopt), 1);
  const Vector one = predict(m, d.features);
  m.weights.w[0] = 2.5;
  EXPECT_LT((predict(m, d.features) - 2.5 * one).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rmse, Examples) {
  EXPECT_EQ(rmse(test::vec({1, 2, 3}), test::vec({1, 2, 3})), 0.0);
  EXPECT_EQ(rmse(test::vec({0, 0}), test::vec({1, 1})), 1.0);
  EXPECT_EQ(rmse(test::vec({0, 2}), test::vec({1, 1})), 1.0);
  EXPECT_THROW(rmse(test::vec({0, 2}), test::vec({1})), Error);
  EXPECT_THROW(rmse(Vector(0), Vector(0)), Error);
}

TEST(StackRowsOption, OutOfClusterZeroesOwnRows) {
  const Dataset d = small_data(25);
  const auto a = partition_random(d, 3, 1);
  ForestParams fp;
  fp.n_trees = 5;
  const MemberForests mf = fit_members(d, a, fp, 15, 2);
  const StackMatrix in = member_stack_matrix(mf, d, StackRows::in_sample);
  const StackMatrix out = member_stack_matrix(mf, d, StackRows::out_of_cluster);
  for (Eigen::Index i = 0; i < in.T.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      if (a.labels[static_cast<std::size_t>(i)] == j) {
        EXPECT_EQ(out.T(i, j), 0.0);
      } else {
        EXPECT_EQ(out.T(i, j), in.T(i, j));
      }
    }
  EXPECT_EQ(out.y, in.y);
}

TEST(StackRowsOption, OutOfBagUsesOobPredictions) {
  const Dataset d = small_data(26);
  const auto a = partition_random(d, 2, 1);
  ForestParams fp;
  fp.n_trees = 20;
  const MemberForests mf = fit_members(d, a, fp, 40, 2, true);
  const StackMatrix in = member_stack_matrix(mf, d, StackRows::in_sample);
  const StackMatrix oob = member_stack_matrix(mf, d, StackRows::out_of_bag);
  for (std::size_t j = 0; j < 2; ++j) {
    const Vector ref = predict_forest_oob(mf.forests[j], d.subset(mf.members[j]).features);
    for (std::size_t r = 0; r < mf.members[j].size(); ++r)
      EXPECT_EQ(oob.T(static_cast<Eigen::Index>(mf.members[j][r]), static_cast<Eigen::Index>(j)), ref[static_cast<Eigen::Index>(r)]);
  }
  for (Eigen::Index i = 0; i < in.T.rows(); ++i) {
    const auto own = a.labels[static_cast<std::size_t>(i)];
    EXPECT_EQ(oob.T(i, 1 - own), in.T(i, 1 - own));
  }
}

TEST(StackRowsOption, Parse) {
  for (auto r : {StackRows::in_sample, StackRows::out_of_cluster, StackRows::out_of_bag})
    EXPECT_EQ(parse_stack_rows(to_string(r)), r);
  EXPECT_THROW(parse_stack_rows("oob"), UsageError);
}

TEST(Bundle, RoundTrip) {
  const Dataset d = small_data(27);
  EnsembleOptions o = small_opts(VariantKind::cluster, 3);
  o.stack_rows = StackRows::out_of_cluster;
  const CCWFModel m = fit(d, o, 28);
  test::TempDir dir("bundle");
  write_model(dir.path() / "model", m, {{"seed", "28"}});
  const CCWFModel r = read_model(dir.path() / "model");
  EXPECT_EQ(r.variant, m.variant);
  EXPECT_EQ(r.k(), m.k());
  EXPECT_EQ(r.requested_k, m.requested_k);
  EXPECT_EQ(r.tree_budget, m.tree_budget);
  EXPECT_EQ(r.stack_rows, StackRows::out_of_cluster);
  EXPECT_EQ(r.weights.w, m.weights.w);
  EXPECT_EQ(r.weights.lambda, m.weights.lambda);
  EXPECT_EQ(r.partition_sizes, m.partition_sizes);
  EXPECT_EQ(r.feature_names, m.feature_names);
  EXPECT_EQ(predict(r, d.features), predict(m, d.features));
  EXPECT_EQ(read_key_values(dir.path() / "model" / "manifest.txt").at("seed"), "28");
}

TEST(Bundle, MalformedRejected) {
  test::TempDir dir("bad_bundle");
  EXPECT_THROW(read_model(dir.path()), IoError);
  test::write_text(dir.file("manifest.txt"), "format=other\n");
  EXPECT_THROW(read_model(dir.path()), IoError);
}

TEST(Depth, ShrinksWithPartitionCount) {
  const Dataset d = small_data(29, 5, 200);
  std::vector<double> ks, depth;
  for (std::size_t k : {2, 10, 50}) {
    EnsembleOptions o = small_opts(VariantKind::cluster, k);
    o.forest.min_leaf = 1;
    const CCWFModel m = fit(d, o, 30);
    double s = 0.0;
    for (const auto& f : m.forests) s += mean_tree_depth(f);
    ks.push_back(static_cast<double>(k));
    depth.push_back(s / static_cast<double>(m.k()));
  }
  EXPECT_GT(depth[0], depth[1]);
  EXPECT_GT(depth[1], depth[2]);
  EXPECT_LT(spearman(ks, depth), 0.0);
}
