#include "ccwf/ccwf.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace ccwf;

namespace {

ScenarioSpec tiny_spec(std::initializer_list<const char*> variants) {
  ScenarioSpec s;
  s.name = "tiny";
  s.gen.n_true_clusters = 2;
  s.gen.cluster_size = 50;
  s.gen.p = 4;
  s.gen.n_active = 2;
  s.gen.n_test_sets = 2;
  s.gen.test_clusters = 1;
  s.forest.n_trees = 5;
  s.stacking.folds = 3;
  s.stacking.grid_size = 5;
  s.kmeans.n_init = 2;
  s.auto_k_max = 5;
  s.n_reps = 2;
  s.seed = 7;
  for (const char* v : variants) s.variants.push_back(parse_variant_spec(v));
  return s;
}

std::vector<double> rmses_of(const ScenarioResult& r, std::size_t variant) {
  std::vector<double> out;
  for (const auto& rec : r.records)
    if (rec.variant_index == variant) out.push_back(rec.rmse);
  return out;
}

}  // namespace

TEST(VariantSpecParse, Forms) {
  const auto a = parse_variant_spec("cluster@auto:stack_ridge");
  EXPECT_EQ(a.kind, VariantKind::cluster);
  EXPECT_TRUE(a.auto_k);
  const auto b = parse_variant_spec("random@20:simple");
  EXPECT_EQ(b.kind, VariantKind::random);
  EXPECT_EQ(b.k, 20u);
  EXPECT_EQ(b.scheme, WeightScheme::simple_average);
  const auto c = parse_variant_spec("merged");
  EXPECT_EQ(c.kind, VariantKind::merged);
  EXPECT_FALSE(c.auto_k);
  EXPECT_EQ(c.k, 0u);
  EXPECT_EQ(parse_variant_spec(a.id()).id(), a.id());
  EXPECT_EQ(parse_variant_spec(b.id()).id(), b.id());
  EXPECT_THROW(parse_variant_spec("forest@3"), UsageError);
  EXPECT_THROW(parse_variant_spec("cluster@x"), UsageError);
  EXPECT_THROW(parse_variant_spec("cluster@3:median"), UsageError);
}

TEST(RunScenario, MergedAgainstItself) {
  const auto r = run_scenario(tiny_spec({"merged@2", "merged@2"}));
  ASSERT_EQ(r.summary.size(), 2u);
  for (const auto& row : r.summary) {
    EXPECT_EQ(row.pct_change_vs_merged, 0.0);
    EXPECT_LE(row.pct_ci_low, 0.0);
    EXPECT_GE(row.pct_ci_high, 0.0);
  }
}

TEST(RunScenario, SmokeRecordsPerVariant) {
  const auto spec = tiny_spec({"cluster@3", "random@3", "multi", "merged"});
  const auto r = run_scenario(spec);
  EXPECT_EQ(r.records.size(), 2u * spec.variants.size());
  for (std::size_t v = 0; v < spec.variants.size(); ++v) EXPECT_EQ(rmses_of(r, v).size(), 2u);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(std::isfinite(rec.rmse));
    EXPECT_GT(rec.rmse, 0.0);
  }
}

TEST(RunScenario, SummaryMatchesIntervalFormula) {
  auto spec = tiny_spec({"cluster@3", "merged"});
  spec.n_reps = 4;
  const auto r = run_scenario(spec);
  const auto base = rmses_of(r, 1);
  const double mb = std::accumulate(base.begin(), base.end(), 0.0) / 4.0;
  for (std::size_t v = 0; v < 2; ++v) {
    const auto x = rmses_of(r, v);
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / 4.0;
    double ss = 0.0;
    for (double e : x) ss += (e - m) * (e - m);
    const double se = std::sqrt(ss / 3.0) / 2.0;
    const auto& row = r.summary[v];
    EXPECT_EQ(row.n_reps, 4u);
    EXPECT_NEAR(row.mean_rmse, m, 1e-12);
    EXPECT_NEAR(row.se, se, 1e-12);
    EXPECT_NEAR(row.ci_low, m - 1.96 * se, 1e-12);
    EXPECT_NEAR(row.ci_high, m + 1.96 * se, 1e-12);
    EXPECT_LE(row.ci_low, row.mean_rmse);
    EXPECT_LE(row.mean_rmse, row.ci_high);
    EXPECT_NEAR(row.pct_change_vs_merged, 100.0 * (m - mb) / mb, 1e-9);
    // Paired per-rep percent differences against merged.
    std::vector<double> d;
    for (std::size_t i = 0; i < 4; ++i) d.push_back(100.0 * (x[i] - base[i]) / mb);
    const Interval iv = interval(d);
    EXPECT_NEAR(row.pct_ci_low, iv.lo, 1e-9);
    EXPECT_NEAR(row.pct_ci_high, iv.hi, 1e-9);
  }
  EXPECT_EQ(r.summary[1].pct_change_vs_merged, 0.0);
}

TEST(RunScenario, TreeBudgetParityPerRep) {
  const auto spec = tiny_spec({"cluster@3", "random@3", "multi", "merged@3"});
  const auto r = run_scenario(spec);
  for (const auto& rec : r.records) EXPECT_EQ(rec.total_trees, 15u) << rec.variant;
}

TEST(RunScenario, DeterministicAcrossRunsAndThreads) {
  auto spec = tiny_spec({"cluster@auto", "random@3:simple", "merged"});
  spec.n_reps = 3;
  const auto a = run_scenario(spec);
  const auto b = run_scenario(spec);
  spec.threads = 3;
  const auto c = run_scenario(spec);
  ASSERT_EQ(a.records.size(), c.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].rmse, b.records[i].rmse);
    EXPECT_EQ(a.records[i].rmse, c.records[i].rmse);
    EXPECT_EQ(a.records[i].weights, c.records[i].weights);
  }
}

TEST(RunScenario, Rejections) {
  auto spec = tiny_spec({"cluster@3"});
  EXPECT_THROW(run_scenario(spec), Error);
  spec = tiny_spec({"merged"});
  spec.n_reps = 1;
  EXPECT_THROW(run_scenario(spec), Error);
}

TEST(Sweep, LargerClustersHelpMerged) {
  auto spec = tiny_spec({"merged"});
  spec.n_reps = 6;
  spec.forest.n_trees = 30;
  const auto rs = sweep(spec, SweepParameter::cluster_size, {100, 500});
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_GT(rs[0].summary[0].mean_rmse, rs[1].summary[0].mean_rmse);
}

TEST(Sweep, KSetsVariantsAndReference) {
  const auto spec = tiny_spec({"cluster@2", "random@2:simple", "merged@2"});
  const auto s = with_parameter(spec, SweepParameter::k, 7);
  for (const auto& v : s.variants) EXPECT_EQ(v.k, 7u);
  EXPECT_THROW(with_parameter(spec, SweepParameter::k, 2.5), Error);
}

TEST(Spearman, MatchesRankFormulaWithoutTies) {
  Rng rng = make_rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + uniform_index(rng, 6);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = uniform01(rng);
      y[i] = uniform01(rng);
    }
    auto rank = [&](const std::vector<double>& v) {
      std::vector<double> r(n);
      for (std::size_t i = 0; i < n; ++i)
        r[i] = 1.0 + static_cast<double>(std::count_if(v.begin(), v.end(), [&](double e) { return e < v[i]; }));
      return r;
    };
    const auto rx = rank(x), ry = rank(y);
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(spearman(x, y), 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0)), 1e-12);
  }
  EXPECT_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman({1, 2, 3}, {1, 1, 2}), std::sqrt(0.75), 1e-12);
}

TEST(Spearman, ExactPermutationPValue) {
  EXPECT_NEAR(spearman_trend_pvalue({2, 5, 10, 20}, {1, 2, 3, 4}, +1), 1.0 / 24.0, 1e-15);
  EXPECT_NEAR(spearman_trend_pvalue({2, 5, 10, 20}, {4, 3, 2, 1}, -1), 1.0 / 24.0, 1e-15);
  EXPECT_EQ(spearman_trend_pvalue({2, 5, 10, 20}, {4, 3, 2, 1}, +1), 1.0);
  // Enumeration oracle on 5 points.
  const std::vector<double> x{1, 2, 3, 4, 5}, y{0.3, 0.1, 0.5, 0.9, 0.7};
  const double obs = spearman(x, y);
  std::vector<double> yp = y;
  std::sort(yp.begin(), yp.end());
  int hits = 0, total = 0;
  do {
    ++total;
    if (spearman(x, yp) >= obs - 1e-12) ++hits;
  } while (std::next_permutation(yp.begin(), yp.end()));
  EXPECT_NEAR(spearman_trend_pvalue(x, y, +1), static_cast<double>(hits) / total, 1e-15);
}

TEST(BiasVariance, OraclePredictor) {
  const Vector truth = test::vec({1.0, -2.0, 0.5});
  const auto row = decompose_predictions({truth, truth, truth}, truth);
  EXPECT_EQ(row.bias2, 0.0);
  EXPECT_EQ(row.variance, 0.0);
  EXPECT_EQ(row.mse, 0.0);
  EXPECT_EQ(row.draws, 3u);
}

TEST(BiasVariance, ConstantZeroPredictor) {
  const Vector truth = test::vec({1.0, -2.0, 0.5, 0.5});
  const Vector zero = Vector::Zero(4);
  const auto row = decompose_predictions({zero, zero}, truth);
  EXPECT_EQ(row.variance, 0.0);
  EXPECT_NEAR(row.bias2, truth.squaredNorm() / 4.0, 1e-15);
  EXPECT_NEAR(row.mse, row.bias2, 1e-15);
}

TEST(BiasVariance, TermsAddUp) {
  Rng rng = make_rng(4);
  const Vector truth = test::random_matrix(30, 1, rng).col(0);
  std::vector<Vector> preds;
  for (int r = 0; r < 7; ++r) preds.push_back(truth + 0.3 * test::random_matrix(30, 1, rng).col(0) + Vector::Constant(30, 0.2));
  const auto row = decompose_predictions(preds, truth);
  EXPECT_GE(row.bias2, 0.0);
  EXPECT_GE(row.variance, 0.0);
  EXPECT_NEAR(row.bias2 + row.variance, row.mse, 1e-12);
  EXPECT_THROW(decompose_predictions({truth}, truth), Error);
}

TEST(BiasVariance, ExperimentCells) {
  auto spec = tiny_spec({"merged", "multi"});
  const auto rows = bias_variance_decomposition(spec, 3);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.draws, 3u);
    EXPECT_GE(r.bias2, 0.0);
    EXPECT_GE(r.variance, 0.0);
    EXPECT_NEAR(r.bias2 + r.variance, r.mse, 1e-8);
  }
  EXPECT_THROW(bias_variance_decomposition(spec, 1), Error);
}

TEST(Weights, SingleWeightRecord) {
  const auto r = make_weight_record(1, 0, "cluster", {1.0});
  EXPECT_EQ(r.max_weight, 1.0);
  EXPECT_EQ(r.weights, (std::vector<double>{1.0}));
  const auto s = make_weight_record(3, 0, "random", {0.1, 0.7, 0.4});
  EXPECT_EQ(s.weights, (std::vector<double>{0.7, 0.4, 0.1}));
  EXPECT_EQ(s.max_weight, 0.7);
  EXPECT_NEAR(s.gap, 0.7 - 0.25, 1e-15);
}

TEST(Weights, ExperimentShape) {
  auto spec = tiny_spec({"cluster:stack_ridge", "random:stack_ridge", "multi"});
  const auto w = weight_distribution_experiment(spec, {2, 4});
  EXPECT_EQ(w.records.size(), 2u * 2u * 3u);
  for (const auto& r : w.records) {
    EXPECT_TRUE(std::is_sorted(r.weights.begin(), r.weights.end(), std::greater<>()));
    EXPECT_EQ(r.max_weight, r.weights.front());
    EXPECT_GE(r.weights.back(), 0.0);
  }
}

TEST(Ranges, SingleClusterAndSinglePartitionCoincide) {
  auto spec = tiny_spec({"cluster"});
  spec.gen.n_true_clusters = 1;
  spec.gen.cluster_size = 80;
  const auto r = range_diagnostic(spec, 1);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.truth, rec.random);
    EXPECT_EQ(rec.truth, rec.kmeans);
  }
}

TEST(Ranges, RefinementShrinksClusterRange) {
  auto spec = tiny_spec({"cluster"});
  spec.gen.n_true_clusters = 5;
  spec.gen.cluster_size = 100;
  const auto r5 = range_diagnostic(spec, 5), r20 = range_diagnostic(spec, 20);
  for (std::size_t i = 0; i < r5.records.size(); ++i) EXPECT_LT(r20.records[i].kmeans, r5.records[i].kmeans);
}

TEST(Multistudy, RunsAndKeepsStudyLabels) {
  auto spec = tiny_spec({"cluster@4", "multi", "merged"});
  spec.model.kind = OutcomeKind::multistudy_nonlinear;
  const auto r = multistudy_experiment(3, 2, spec);
  EXPECT_EQ(r.records.size(), 6u);
  for (const auto& rec : r.records) {
    if (rec.variant.starts_with("multi")) {
      EXPECT_EQ(rec.forests, 3u);
    }
  }
}

TEST(Config, RoundTripAndRejections) {
  std::map<std::string, std::string> kv{{"seed", "11"},         {"n_reps", "3"},
                                        {"variants", "cluster@auto,merged"}, {"sweep_parameter", "k"},
                                        {"sweep_values", "2,5"},  {"stack_rows", "out_of_bag"},
                                        {"interaction_pairs", "0:1,2:3"}};
  const BenchConfig c = bench_config_from(kv);
  EXPECT_EQ(c.spec.seed, 11u);
  EXPECT_EQ(c.spec.stack_rows, StackRows::out_of_bag);
  EXPECT_EQ(c.sweep_values, (std::vector<double>{2, 5}));
  const auto again = to_key_values(bench_config_from(to_key_values(c)));
  EXPECT_EQ(again, to_key_values(c));
  EXPECT_THROW(bench_config_from({{"nreps", "3"}}), ConfigError);
  EXPECT_THROW(bench_config_from({{"n_reps", "three"}}), ConfigError);
  EXPECT_THROW(bench_config_from({{"variants", "forest"}}), ConfigError);
  EXPECT_THROW(bench_config_from({{"sweep_parameter", "k"}}), ConfigError);
  EXPECT_THROW(bench_config_from({{"bootstrap", "maybe"}}), ConfigError);
}

TEST(Config, ManifestRerunsTheSameConfig) {
  BenchConfig c = bench_config_from({{"n_reps", "2"}, {"seed", "5"}});
  c.spec = tiny_spec({"cluster@2", "merged"});
  test::TempDir dir("bench_manifest");
  run_bench(c, dir.path(), true);
  const auto rerun = read_bench_config(dir.path() / "manifest.txt");
  EXPECT_EQ(to_key_values(rerun), to_key_values(c));
  for (const char* f : {"records.csv", "summary.csv", "plot.dat", "manifest.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
}

TEST(Config, ThreadsDoNotChangeOutputs) {
  BenchConfig c;
  c.spec = tiny_spec({"cluster@auto", "random@2", "merged"});
  c.spec.n_reps = 3;
  test::TempDir a("bench_t1"), b("bench_t3");
  run_bench(c, a.path(), false);
  c.spec.threads = 3;
  run_bench(c, b.path(), false);
  for (const char* f : {"records.csv", "summary.csv", "manifest.txt"})
    EXPECT_EQ(test::read_text(a.path() / f), test::read_text(b.path() / f)) << f;
}
