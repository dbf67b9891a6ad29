#pragma once

// Replicated simulation experiments comparing the cluster / random / multi /
// merged ensembles: scenario runs with percent change against merged, one-
// parameter sweeps, stacking-weight distributions, covariate-range
// diagnostic, bias-variance decomposition and the multi-study layout.
//
// Reps are independent jobs whose seeds derive from (root seed, rep), so the
// thread count never changes an emitted number.

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"
#include "ccwf/ensemble.hpp"
#include "ccwf/forest.hpp"
#include "ccwf/kmeans.hpp"
#include "ccwf/stacking.hpp"
#include "ccwf/synthgen.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

namespace ccwf {

// "kind[@k|@auto][:scheme]". Without @, k is the scenario's reference k
// (the first cluster or random variant's k, else the true cluster count).
struct VariantSpec {
  VariantKind kind = VariantKind::cluster;
  bool auto_k = false;
  std::size_t k = 0;
  WeightScheme scheme = WeightScheme::stack_ridge;

  std::string id() const {
    std::string s = to_string(kind);
    if (auto_k) s += "@auto";
    else if (k) s += "@" + std::to_string(k);
    if (kind != VariantKind::merged) s += ":" + to_string(scheme);
    return s;
  }
};

inline VariantSpec parse_variant_spec(std::string_view text) {
  VariantSpec v;
  auto t = trim(text);
  std::string_view head = t, scheme;
  if (auto c = t.find(':'); c != std::string_view::npos) {
    head = t.substr(0, c);
    scheme = t.substr(c + 1);
  }
  std::string_view kind = head, k;
  if (auto a = head.find('@'); a != std::string_view::npos) {
    kind = head.substr(0, a);
    k = head.substr(a + 1);
  }
  v.kind = parse_variant(trim(kind));
  if (k == "auto") {
    v.auto_k = true;
  } else if (!k.empty()) {
    if (!parse_int(k, v.k) || v.k < 1) throw UsageError("bad k '" + std::string(k) + "' in variant '" + std::string(t) + "'");
  }
  if (!scheme.empty()) v.scheme = parse_weight_scheme(trim(scheme));
  return v;
}

struct ScenarioSpec {
  std::string name = "scenario";
  GenConfig gen;
  OutcomeModel model;
  std::vector<VariantSpec> variants;
  std::size_t n_reps = 50;
  std::uint64_t seed = 1;
  ForestParams forest;
  StackingOptions stacking;
  StackRows stack_rows = StackRows::in_sample;
  KMeansOptions kmeans;
  std::size_t auto_k_min = 2;
  std::size_t auto_k_max = 0;
  bool standardize = false;
  bool record_ranges = false;  // covariate-range diagnostic on every rep
  std::size_t threads = 1;     // parallel reps

  void validate(bool need_merged = true) const {
    gen.validate();
    require(n_reps >= 2, "n_reps must be >= 2");
    require(!variants.empty(), "scenario has no variants");
    if (need_merged)
      require(std::any_of(variants.begin(), variants.end(), [](const VariantSpec& v) { return v.kind == VariantKind::merged; }),
              "scenario needs a merged variant as the percent-change baseline");
    require(forest.n_trees >= 1, "n_trees must be >= 1");
  }

  EnsembleOptions ensemble_options() const {
    EnsembleOptions eo;
    eo.forest = forest;
    eo.forest.threads = 1;
    eo.stacking = stacking;
    eo.stack_rows = stack_rows;
    eo.kmeans = kmeans;
    eo.kmeans.threads = 1;
    eo.auto_k_min = auto_k_min;
    eo.auto_k_max = auto_k_max;
    eo.standardize = standardize;
    return eo;
  }
};

inline std::uint64_t rep_seed(const ScenarioSpec& s, std::size_t rep) { return derive_seed(s.seed, 0xBE7Cull, rep); }
inline std::uint64_t rep_gen_seed(const ScenarioSpec& s, std::size_t rep) { return derive_seed(rep_seed(s, rep), 0x6E4ull); }
inline std::uint64_t rep_fit_seed(const ScenarioSpec& s, std::size_t rep) { return derive_seed(rep_seed(s, rep), 0xF17ull); }

struct RepRecord {
  std::string scenario, parameter, value, variant;
  std::size_t variant_index = 0;
  std::size_t rep = 0;
  double rmse = 0.0;
  std::size_t k = 0;  // partitions asked for, which also sets the tree budget
  std::size_t forests = 0;
  std::size_t total_trees = 0;
  double max_weight = 0.0;
  std::size_t dissolved = 0;
  double lambda = 0.0;
  std::vector<double> weights;
};

struct RangeRecord {
  std::size_t rep = 0;
  std::size_t k = 0;
  double truth = 0.0, random = 0.0, kmeans = 0.0;
};

// mean +- 1.96 se.
struct Interval {
  double mean = 0.0, se = 0.0, lo = 0.0, hi = 0.0;
};

inline Interval interval(const std::vector<double>& xs) {
  const MeanSe m = mean_se(xs);
  return {m.mean, m.se, m.mean - 1.96 * m.se, m.mean + 1.96 * m.se};
}

struct SummaryRow {
  std::string scenario, parameter, value, variant;
  std::size_t n_reps = 0;
  double mean_rmse = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0;
  double pct_change_vs_merged = 0.0;
  double pct_ci_low = 0.0, pct_ci_high = 0.0;  // from per-rep paired differences against merged
  double mean_k = 0.0, mean_max_weight = 0.0, mean_total_trees = 0.0;
};

struct ScenarioResult {
  std::string scenario, parameter, value;
  std::vector<RepRecord> records;  // rep-major, variants in spec order
  std::vector<SummaryRow> summary;
  std::vector<RangeRecord> ranges;
};

namespace detail {

// Shared per-rep fitting: partitions and member forests are cached by
// (kind, auto, k) and reused across weight schemes; every merged variant is
// a prefix of one forest grown to the largest merged budget.
class RepFitter {
 public:
  struct Outcome {
    std::vector<Vector> predictions;  // one per test set
    std::size_t k = 0, forests = 0, total_trees = 0, dissolved = 0;
    double lambda = 0.0;
    std::vector<double> weights;
  };

  RepFitter(const ScenarioSpec& spec, const Dataset& train, const std::vector<Dataset>& tests, std::uint64_t fit_seed)
      : spec_(spec), train_(train), tests_(tests), seed_(fit_seed), eo_(spec.ensemble_options()) {}

  const SelectKResult& auto_k() {
    if (!sel_) sel_ = auto_select_k(train_, eo_, seed_);
    return *sel_;
  }

  std::size_t resolve_k(const VariantSpec& v) {
    if (v.auto_k) return auto_k().k;
    if (v.k) return v.k;
    return reference_k();
  }

  std::size_t reference_k() {
    for (const auto& v : spec_.variants)
      if ((v.kind == VariantKind::cluster || v.kind == VariantKind::random) && (v.auto_k || v.k)) return resolve_k(v);
    if (train_.true_labels) return train_.label_count();
    return 1;
  }

  const PartitionPlan& plan(VariantKind kind, bool automatic, std::size_t k) {
    const auto key = std::make_tuple(static_cast<int>(kind), automatic, automatic ? 0 : k);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    PartitionPlan p;
    if (kind != VariantKind::multi && !automatic && k == 1) {
      p.assignment = {std::vector<int>(train_.rows(), 0), 1};
      p.requested_k = 1;
      p.source = "none";
    } else {
      EnsembleOptions eo = eo_;
      eo.variant = kind;
      if (!automatic) eo.k = k;
      p = plan_partition(train_, eo, seed_, automatic ? &auto_k() : nullptr);
    }
    return plans_.emplace(key, std::move(p)).first->second;
  }

  Outcome run(const VariantSpec& v) {
    const std::size_t k = resolve_k(v);
    const std::size_t budget = k * spec_.forest.n_trees;
    Outcome out;
    out.k = k;
    if (v.kind == VariantKind::merged) {
      const auto& preds = merged_predictions(budget);
      out.predictions = preds;
      out.forests = 1;
      out.total_trees = budget;
      out.weights = {1.0};
      return out;
    }
    Members& m = members(v.kind, v.auto_k, k, budget);
    const StackingWeights w = member_weights(m.mf, train_, v.scheme, eo_, seed_, stack_matrix(m));
    out.forests = m.mf.forests.size();
    out.total_trees = 0;
    for (const auto& f : m.mf.forests) out.total_trees += f.size();
    out.dissolved = m.dissolved;
    out.lambda = w.lambda;
    out.weights.assign(w.w.data(), w.w.data() + w.w.size());
    for (const auto& P : m.test_preds) out.predictions.push_back((P * w.w).array() + w.intercept);
    return out;
  }

 private:
  struct Members {
    MemberForests mf;
    std::size_t dissolved = 0;
    std::optional<StackMatrix> S;
    std::vector<Matrix> test_preds;
  };

  Members& members(VariantKind kind, bool automatic, std::size_t k, std::size_t budget) {
    const auto key = std::make_tuple(static_cast<int>(kind), automatic, k);
    auto it = members_.find(key);
    if (it != members_.end()) return it->second;
    const PartitionPlan& p = plan(kind, automatic, k);
    Members m;
    m.dissolved = p.dissolved;
    m.mf = fit_members(train_, p.assignment, eo_.forest, budget, seed_, eo_.stack_rows == StackRows::out_of_bag);
    for (const auto& t : tests_) {
      Matrix P(t.features.rows(), static_cast<Eigen::Index>(m.mf.forests.size()));
      for (std::size_t j = 0; j < m.mf.forests.size(); ++j)
        P.col(static_cast<Eigen::Index>(j)) = predict_forest(m.mf.forests[j], t.features);
      m.test_preds.push_back(std::move(P));
    }
    return members_.emplace(key, std::move(m)).first->second;
  }

  const StackMatrix* stack_matrix(Members& m) {
    if (m.mf.forests.size() < 2) return nullptr;
    if (!m.S) m.S = member_stack_matrix(m.mf, train_, eo_.stack_rows);
    return &*m.S;
  }

  const std::vector<Vector>& merged_predictions(std::size_t budget) {
    if (!merged_done_) {
      std::size_t largest = 0;
      std::set<std::size_t> budgets;
      for (const auto& v : spec_.variants)
        if (v.kind == VariantKind::merged) budgets.insert(resolve_k(v) * spec_.forest.n_trees);
      budgets.insert(budget);
      largest = *budgets.rbegin();
      const PartitionAssignment all{std::vector<int>(train_.rows(), 0), 1};
      const MemberForests mf = fit_members(train_, all, eo_.forest, largest, seed_);
      const Forest& f = mf.forests[0];
      for (std::size_t b : budgets)
        for (const auto& t : tests_) merged_[b].push_back(Vector(t.features.rows()));
      std::vector<double> row(static_cast<std::size_t>(train_.cols()));
      for (std::size_t s = 0; s < tests_.size(); ++s)
        for (Eigen::Index i = 0; i < tests_[s].features.rows(); ++i) {
          for (std::size_t m = 0; m < row.size(); ++m) row[m] = tests_[s].features(i, static_cast<Eigen::Index>(m));
          double acc = 0.0;
          for (std::size_t tr = 0; tr < f.size(); ++tr) {
            acc += f.trees[tr]->predict(row);
            if (auto it = merged_.find(tr + 1); it != merged_.end()) it->second[s][i] = acc / static_cast<double>(tr + 1);
          }
        }
      merged_done_ = true;
    }
    auto it = merged_.find(budget);
    require(it != merged_.end(), "merged budget was not prepared");
    return it->second;
  }

  const ScenarioSpec& spec_;
  const Dataset& train_;
  const std::vector<Dataset>& tests_;
  std::uint64_t seed_;
  EnsembleOptions eo_;
  std::optional<SelectKResult> sel_;
  std::map<std::tuple<int, bool, std::size_t>, PartitionPlan> plans_;
  std::map<std::tuple<int, bool, std::size_t>, Members> members_;
  bool merged_done_ = false;
  std::map<std::size_t, std::vector<Vector>> merged_;
};

inline RangeRecord rep_ranges(RepFitter& fitter, const Dataset& train, std::size_t rep, std::optional<std::size_t> k) {
  RangeRecord r;
  r.rep = rep;
  const bool automatic = !k;
  r.k = automatic ? fitter.auto_k().k : *k;
  r.truth = average_covariate_range(train, partition_by_labels(train));
  r.random = average_covariate_range(train, fitter.plan(VariantKind::random, automatic, r.k).assignment);
  r.kmeans = average_covariate_range(train, fitter.plan(VariantKind::cluster, automatic, r.k).assignment);
  return r;
}

inline double mean_rmse_over_tests(const std::vector<Dataset>& tests, const std::vector<Vector>& preds) {
  double s = 0.0;
  for (std::size_t t = 0; t < tests.size(); ++t) s += rmse(tests[t].outcome, preds[t]);
  return s / static_cast<double>(tests.size());
}

}  // namespace detail

// Per variant: mean and se of per-rep RMSE, percent change against the
// first merged variant, and its CI from the per-rep paired differences.
inline std::vector<SummaryRow> summarize(const ScenarioSpec& spec, const std::vector<RepRecord>& records) {
  const std::size_t V = spec.variants.size();
  std::vector<std::vector<const RepRecord*>> by(V);
  for (const auto& r : records) by[r.variant_index].push_back(&r);
  std::size_t base = V;
  for (std::size_t v = 0; v < V; ++v)
    if (spec.variants[v].kind == VariantKind::merged) {
      base = v;
      break;
    }
  std::vector<SummaryRow> rows;
  for (std::size_t v = 0; v < V; ++v) {
    SummaryRow row;
    require(!by[v].empty(), "no records for variant " + spec.variants[v].id());
    row.scenario = by[v][0]->scenario;
    row.parameter = by[v][0]->parameter;
    row.value = by[v][0]->value;
    row.variant = spec.variants[v].id();
    row.n_reps = by[v].size();
    std::vector<double> x, kk, mw, tt;
    for (const auto* r : by[v]) {
      x.push_back(r->rmse);
      kk.push_back(static_cast<double>(r->k));
      mw.push_back(r->max_weight);
      tt.push_back(static_cast<double>(r->total_trees));
    }
    const Interval iv = interval(x);
    row.mean_rmse = iv.mean;
    row.se = iv.se;
    row.ci_low = iv.lo;
    row.ci_high = iv.hi;
    row.mean_k = interval(kk).mean;
    row.mean_max_weight = interval(mw).mean;
    row.mean_total_trees = interval(tt).mean;
    if (base < V) {
      std::vector<double> b, d;
      for (const auto* r : by[base]) b.push_back(r->rmse);
      require(b.size() == x.size(), "merged baseline and variant have different rep counts");
      for (std::size_t i = 0; i < x.size(); ++i) d.push_back(v == base ? 0.0 : x[i] - b[i]);
      const double mb = interval(b).mean;
      const Interval id = interval(d);
      row.pct_change_vs_merged = v == base ? 0.0 : 100.0 * (row.mean_rmse - mb) / mb;
      row.pct_ci_low = 100.0 * id.lo / mb;
      row.pct_ci_high = 100.0 * id.hi / mb;
    }
    rows.push_back(row);
  }
  return rows;
}

using ScenarioGenerator = std::function<Scenario(const ScenarioSpec&, std::uint64_t gen_seed)>;

inline Scenario standard_generator(const ScenarioSpec& spec, std::uint64_t gen_seed) {
  GenConfig g = spec.gen;
  g.seed = gen_seed;
  return gen_scenario(g, spec.model);
}

// Runs every rep of spec with data from gen; a failing rep aborts the run
// and names its seed.
inline ScenarioResult run_replicates(const ScenarioSpec& spec, const ScenarioGenerator& gen, bool need_merged = true) {
  spec.validate(need_merged);
  struct RepOut {
    std::vector<RepRecord> records;
    std::optional<RangeRecord> range;
  };
  std::vector<RepOut> outs(spec.n_reps);
  parallel_for(spec.n_reps, spec.threads, [&](std::size_t rep) {
    try {
      const Scenario sc = gen(spec, rep_gen_seed(spec, rep));
      detail::RepFitter fitter(spec, sc.split.train, sc.split.tests, rep_fit_seed(spec, rep));
      for (std::size_t v = 0; v < spec.variants.size(); ++v) {
        const auto o = fitter.run(spec.variants[v]);
        RepRecord r;
        r.scenario = spec.name;
        r.variant = spec.variants[v].id();
        r.variant_index = v;
        r.rep = rep;
        r.rmse = detail::mean_rmse_over_tests(sc.split.tests, o.predictions);
        r.k = o.k;
        r.forests = o.forests;
        r.total_trees = o.total_trees;
        r.max_weight = *std::max_element(o.weights.begin(), o.weights.end());
        r.dissolved = o.dissolved;
        r.lambda = o.lambda;
        r.weights = o.weights;
        outs[rep].records.push_back(std::move(r));
      }
      if (spec.record_ranges) {
        std::optional<std::size_t> k;
        for (const auto& v : spec.variants)
          if (v.kind == VariantKind::cluster) {
            if (!v.auto_k) k = fitter.resolve_k(v);
            break;
          }
        outs[rep].range = detail::rep_ranges(fitter, sc.split.train, rep, k);
      }
    } catch (const Error& e) {
      const std::string msg = "rep " + std::to_string(rep) + " (seed " + std::to_string(rep_seed(spec, rep)) + "): " + e.what();
      if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
      if (dynamic_cast<const IoError*>(&e)) throw IoError(msg);
      throw UsageError(msg);
    }
  });
  ScenarioResult res;
  res.scenario = spec.name;
  for (auto& o : outs) {
    for (auto& r : o.records) res.records.push_back(std::move(r));
    if (o.range) res.ranges.push_back(*o.range);
  }
  res.summary = summarize(spec, res.records);
  return res;
}

inline ScenarioResult run_scenario(const ScenarioSpec& spec) { return run_replicates(spec, standard_generator); }

enum class SweepParameter { k, coef_norm_scale, n_true_clusters, cluster_size };

inline std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::k: return "k";
    case SweepParameter::coef_norm_scale: return "coef_norm_scale";
    case SweepParameter::n_true_clusters: return "n_true_clusters";
    case SweepParameter::cluster_size: return "cluster_size";
  }
  return "?";
}

inline SweepParameter parse_sweep_parameter(std::string_view s) {
  if (s == "k") return SweepParameter::k;
  if (s == "coef_norm_scale") return SweepParameter::coef_norm_scale;
  if (s == "n_true_clusters") return SweepParameter::n_true_clusters;
  if (s == "cluster_size") return SweepParameter::cluster_size;
  throw UsageError("unknown sweep parameter '" + std::string(s) + "'");
}

inline std::size_t as_count(double v, const char* what) {
  require(v >= 1.0 && v == std::floor(v), std::string(what) + " values must be positive integers");
  return static_cast<std::size_t>(v);
}

// spec with one parameter replaced. For k every variant without @auto takes
// the value, so merged and multi keep budget parity with cluster and random.
inline ScenarioSpec with_parameter(ScenarioSpec spec, SweepParameter p, double value) {
  switch (p) {
    case SweepParameter::k: {
      const std::size_t k = as_count(value, "k");
      for (auto& v : spec.variants)
        if (!v.auto_k) v.k = k;
      break;
    }
    case SweepParameter::coef_norm_scale:
      require(value > 0.0, "coef_norm_scale values must be > 0");
      spec.model.coef_norm_scale = value;
      break;
    case SweepParameter::n_true_clusters: spec.gen.n_true_clusters = as_count(value, "n_true_clusters"); break;
    case SweepParameter::cluster_size: spec.gen.cluster_size = as_count(value, "cluster_size"); break;
  }
  return spec;
}

using ScenarioRunner = std::function<ScenarioResult(const ScenarioSpec&)>;

// run per value with all else fixed (including the root seed, so values
// share their simulated datasets where the parameter allows).
inline std::vector<ScenarioResult> sweep(const ScenarioSpec& spec, SweepParameter p, const std::vector<double>& values,
                                         const ScenarioRunner& runner = run_scenario) {
  require(!values.empty(), "sweep needs at least one value");
  std::vector<ScenarioResult> out;
  for (double value : values) {
    ScenarioResult r = runner(with_parameter(spec, p, value));
    r.parameter = to_string(p);
    r.value = format_double(value);
    for (auto& rec : r.records) {
      rec.parameter = r.parameter;
      rec.value = r.value;
    }
    for (auto& row : r.summary) {
      row.parameter = r.parameter;
      row.value = r.value;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal-length samples of size >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - mx);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - mx) * (ry[i] - mx);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Exact one-sided permutation p-value of spearman(x, y) in the given
// direction (+1 increasing, -1 decreasing). Enumerates all n! orders.
inline double spearman_trend_pvalue(const std::vector<double>& x, const std::vector<double>& y, int direction) {
  require(x.size() <= 9, "exact spearman p-value is limited to 9 points");
  const double obs = direction * spearman(x, y);
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t hits = 0, total = 0;
  std::vector<double> yp(y.size());
  do {
    for (std::size_t i = 0; i < perm.size(); ++i) yp[i] = y[perm[i]];
    if (direction * spearman(x, yp) >= obs - 1e-12) ++hits;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Largest stacking weight per ensemble.
struct WeightRecord {
  std::size_t k = 0, rep = 0;
  std::string variant;
  std::vector<double> weights;  // descending
  double max_weight = 0.0;
  double rest_mean = 0.0;       // mean of the remaining weights (0 with one forest)
  double gap = 0.0;             // max_weight - rest_mean
};

struct WeightSummary {
  std::size_t k = 0;
  std::string variant;
  Interval max_weight, gap;
};

struct WeightResult {
  std::vector<WeightRecord> records;
  std::vector<WeightSummary> summary;
};

inline WeightRecord make_weight_record(std::size_t k, std::size_t rep, std::string variant, std::vector<double> w) {
  WeightRecord r;
  r.k = k;
  r.rep = rep;
  r.variant = std::move(variant);
  std::sort(w.begin(), w.end(), std::greater<>());
  r.weights = w;
  r.max_weight = w.front();
  if (w.size() > 1) r.rest_mean = std::accumulate(w.begin() + 1, w.end(), 0.0) / static_cast<double>(w.size() - 1);
  r.gap = r.max_weight - r.rest_mean;
  return r;
}

// For every rep and k, the weight vector of each (cluster / random / multi,
// stacked) variant in spec.
inline WeightResult weight_distribution_experiment(const ScenarioSpec& spec, const std::vector<std::size_t>& k_values) {
  spec.validate(false);
  require(!k_values.empty(), "weight experiment needs k values");
  for (const auto& v : spec.variants)
    require(v.kind != VariantKind::merged && (v.scheme == WeightScheme::stack_ridge || v.scheme == WeightScheme::stack_lasso),
            "weight experiment variants must be stacked cluster / random / multi");
  std::vector<std::vector<WeightRecord>> per_rep(spec.n_reps);
  parallel_for(spec.n_reps, spec.threads, [&](std::size_t rep) {
    const Scenario sc = standard_generator(spec, rep_gen_seed(spec, rep));
    const std::vector<Dataset> no_tests;
    for (std::size_t k : k_values) {
      ScenarioSpec s = with_parameter(spec, SweepParameter::k, static_cast<double>(k));
      for (auto& v : s.variants) v.auto_k = false, v.k = k;
      detail::RepFitter fitter(s, sc.split.train, no_tests, rep_fit_seed(spec, rep));
      for (const auto& v : s.variants) {
        const auto o = fitter.run(v);
        per_rep[rep].push_back(make_weight_record(k, rep, v.id(), o.weights));
      }
    }
  });
  WeightResult res;
  for (auto& recs : per_rep)
    for (auto& r : recs) res.records.push_back(std::move(r));
  for (std::size_t k : k_values)
    for (const auto& v : spec.variants) {
      VariantSpec vk = v;
      vk.auto_k = false;
      vk.k = k;
      std::vector<double> mx, gp;
      for (const auto& r : res.records)
        if (r.k == k && r.variant == vk.id()) {
          mx.push_back(r.max_weight);
          gp.push_back(r.gap);
        }
      res.summary.push_back({k, vk.id(), interval(mx), interval(gp)});
    }
  return res;
}

struct RangeResult {
  std::vector<RangeRecord> records;
  Interval truth, random, kmeans;
  Interval gap_true_random, gap_random_kmeans;  // paired per-rep differences
};

inline RangeResult summarize_ranges(std::vector<RangeRecord> records) {
  RangeResult r;
  std::vector<double> t, rn, km, g1, g2;
  for (const auto& x : records) {
    t.push_back(x.truth);
    rn.push_back(x.random);
    km.push_back(x.kmeans);
    g1.push_back(x.truth - x.random);
    g2.push_back(x.random - x.kmeans);
  }
  r.truth = interval(t);
  r.random = interval(rn);
  r.kmeans = interval(km);
  r.gap_true_random = interval(g1);
  r.gap_random_kmeans = interval(g2);
  r.records = std::move(records);
  return r;
}

// Average covariate range of the true clusters, of a random partition and
// of the k-means partition per rep; k unset means the silhouette choice.
// Uses the same seeds as run_scenario, so the partitions match its fits.
inline RangeResult range_diagnostic(const ScenarioSpec& spec, std::optional<std::size_t> k) {
  spec.validate(false);
  std::vector<RangeRecord> recs(spec.n_reps);
  parallel_for(spec.n_reps, spec.threads, [&](std::size_t rep) {
    const Scenario sc = standard_generator(spec, rep_gen_seed(spec, rep));
    const std::vector<Dataset> no_tests;
    detail::RepFitter fitter(spec, sc.split.train, no_tests, rep_fit_seed(spec, rep));
    recs[rep] = detail::rep_ranges(fitter, sc.split.train, rep, k);
  });
  return summarize_ranges(std::move(recs));
}

struct BiasVarianceRow {
  std::string variant;
  std::size_t draws = 0;
  double bias2 = 0.0, variance = 0.0, mse = 0.0;
};

// bias^2, variance (1/R) and mse against truth of R prediction vectors of
// one test design, each averaged over the design points.
inline BiasVarianceRow decompose_predictions(const std::vector<Vector>& preds, const Vector& truth) {
  require(preds.size() >= 2, "bias-variance decomposition needs at least 2 training draws");
  const auto R = static_cast<double>(preds.size());
  Vector mean = Vector::Zero(truth.size());
  for (const auto& p : preds) {
    require(p.size() == truth.size(), "prediction length does not match the test design");
    mean += p;
  }
  mean /= R;
  Vector var = Vector::Zero(truth.size()), mse = Vector::Zero(truth.size());
  for (const auto& p : preds) {
    var += (p - mean).array().square().matrix();
    mse += (p - truth).array().square().matrix();
  }
  BiasVarianceRow row;
  row.draws = preds.size();
  row.bias2 = (mean - truth).array().square().mean();
  row.variance = var.mean() / R;
  row.mse = mse.mean() / R;
  return row;
}

// Fixed coefficients, training geometry and test design (the first test set
// of the scenario drawn from spec.seed). Each draw resamples the training
// points and noise. bias^2 and variance are averaged over the test design;
// mse is the mean squared deviation from E[y|x], equal to their sum.
inline std::vector<BiasVarianceRow> bias_variance_decomposition(const ScenarioSpec& spec, std::size_t n_train_draws) {
  require(n_train_draws >= 2, "bias-variance decomposition needs at least 2 training draws");
  require(!spec.variants.empty(), "bias-variance decomposition needs variants");
  spec.gen.validate();
  GenConfig g = spec.gen;
  g.seed = derive_seed(spec.seed, 0xB1A5ull);
  g.n_test_sets = std::max<std::size_t>(1, g.n_test_sets);
  const Scenario base = gen_scenario(g, spec.model);
  const Dataset& design = base.split.tests.at(0);
  const Vector truth = noiseless_outcome(design.features, *design.true_labels,
                                         base.coefficients.unperturbed(g.test_clusters), base.model);
  const std::vector<Dataset> tests{design};
  std::vector<std::vector<Vector>> preds(n_train_draws);
  parallel_for(n_train_draws, spec.threads, [&](std::size_t r) {
    ClusterSample s = sample_geometry(base.train_geometry, g.cluster_size, derive_seed(spec.seed, 0xD2Aull, r, 0x5A3ull));
    Vector y = gen_outcome(s.features, s.labels, base.coefficients, base.model, derive_seed(spec.seed, 0xD2Aull, r, 0x401ull));
    const Dataset train = make_dataset(std::move(s), std::move(y));
    detail::RepFitter fitter(spec, train, tests, derive_seed(spec.seed, 0xD2Aull, r, 0xF17ull));
    for (const auto& v : spec.variants) preds[r].push_back(fitter.run(v).predictions[0]);
  });
  std::vector<BiasVarianceRow> rows;
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    std::vector<Vector> pv;
    for (std::size_t r = 0; r < n_train_draws; ++r) pv.push_back(preds[r][v]);
    BiasVarianceRow row = decompose_predictions(pv, truth);
    row.variant = spec.variants[v].id();
    rows.push_back(row);
  }
  return rows;
}

// Training studies pooled for cluster / random / merged, one forest per
// study for multi; each held-out study is one test set.
inline ScenarioResult multistudy_experiment(std::size_t n_studies_train, std::size_t n_studies_test,
                                            const ScenarioSpec& spec) {
  auto gen = [n_studies_train, n_studies_test](const ScenarioSpec& s, std::uint64_t seed) {
    GenConfig g = s.gen;
    g.seed = seed;
    return gen_multistudy(g, n_studies_train, n_studies_test, s.model);
  };
  return run_replicates(spec, gen);
}

// ---- output ---------------------------------------------------------------

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::string join_doubles(const std::vector<double>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += format_double(v[i]);
  }
  return s;
}

inline void write_records_csv(const std::filesystem::path& path, const std::vector<RepRecord>& records) {
  auto out = open_output(path);
  out << "scenario,parameter,value,variant,rep,rmse,k,forests,total_trees,max_weight,dissolved,lambda,weights\n";
  for (const auto& r : records)
    out << r.scenario << ',' << r.parameter << ',' << r.value << ',' << r.variant << ',' << r.rep << ','
        << format_double(r.rmse) << ',' << r.k << ',' << r.forests << ',' << r.total_trees << ','
        << format_double(r.max_weight) << ',' << r.dissolved << ',' << format_double(r.lambda) << ','
        << join_doubles(r.weights, ';') << '\n';
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  auto out = open_output(path);
  out << "scenario,parameter,value,variant,n_reps,mean_rmse,se,ci_low,ci_high,pct_change_vs_merged,pct_ci_low,"
         "pct_ci_high,mean_k,mean_max_weight,mean_total_trees\n";
  for (const auto& r : rows)
    out << r.scenario << ',' << r.parameter << ',' << r.value << ',' << r.variant << ',' << r.n_reps << ','
        << format_double(r.mean_rmse) << ',' << format_double(r.se) << ',' << format_double(r.ci_low) << ','
        << format_double(r.ci_high) << ',' << format_double(r.pct_change_vs_merged) << ','
        << format_double(r.pct_ci_low) << ',' << format_double(r.pct_ci_high) << ',' << format_double(r.mean_k)
        << ',' << format_double(r.mean_max_weight) << ',' << format_double(r.mean_total_trees) << '\n';
}

// gnuplot data: one index block per variant (value mean ci_low ci_high pct
// pct_ci_low pct_ci_high), blocks separated by two blank lines.
inline void write_gnuplot(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  auto out = open_output(path);
  std::vector<std::string> variants;
  for (const auto& r : rows)
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  for (std::size_t b = 0; b < variants.size(); ++b) {
    if (b) out << "\n\n";
    out << "# " << variants[b] << "\n# value mean_rmse ci_low ci_high pct_change pct_ci_low pct_ci_high\n";
    for (const auto& r : rows)
      if (r.variant == variants[b])
        out << (r.value.empty() ? "0" : r.value) << ' ' << format_double(r.mean_rmse) << ' ' << format_double(r.ci_low)
            << ' ' << format_double(r.ci_high) << ' ' << format_double(r.pct_change_vs_merged) << ' '
            << format_double(r.pct_ci_low) << ' ' << format_double(r.pct_ci_high) << '\n';
  }
}

inline void write_range_csv(const std::filesystem::path& path, const RangeResult& r) {
  auto out = open_output(path);
  out << "rep,k,true_clusters,random,kmeans\n";
  for (const auto& x : r.records)
    out << x.rep << ',' << x.k << ',' << format_double(x.truth) << ',' << format_double(x.random) << ','
        << format_double(x.kmeans) << '\n';
}

inline void write_range_summary_csv(const std::filesystem::path& path, const RangeResult& r) {
  auto out = open_output(path);
  out << "quantity,mean,se,ci_low,ci_high\n";
  auto row = [&](const char* name, const Interval& iv) {
    out << name << ',' << format_double(iv.mean) << ',' << format_double(iv.se) << ',' << format_double(iv.lo) << ','
        << format_double(iv.hi) << '\n';
  };
  row("true_clusters", r.truth);
  row("random", r.random);
  row("kmeans", r.kmeans);
  row("true_minus_random", r.gap_true_random);
  row("random_minus_kmeans", r.gap_random_kmeans);
}

inline void write_weight_csv(const std::filesystem::path& path, const WeightResult& w) {
  auto out = open_output(path);
  out << "k,variant,rep,max_weight,rest_mean,gap,weights\n";
  for (const auto& r : w.records)
    out << r.k << ',' << r.variant << ',' << r.rep << ',' << format_double(r.max_weight) << ','
        << format_double(r.rest_mean) << ',' << format_double(r.gap) << ',' << join_doubles(r.weights, ';') << '\n';
}

inline void write_weight_summary_csv(const std::filesystem::path& path, const WeightResult& w) {
  auto out = open_output(path);
  out << "k,variant,mean_max_weight,se_max_weight,ci_low,ci_high,mean_gap,se_gap\n";
  for (const auto& s : w.summary)
    out << s.k << ',' << s.variant << ',' << format_double(s.max_weight.mean) << ',' << format_double(s.max_weight.se)
        << ',' << format_double(s.max_weight.lo) << ',' << format_double(s.max_weight.hi) << ','
        << format_double(s.gap.mean) << ',' << format_double(s.gap.se) << '\n';
}

inline void write_bias_variance_csv(const std::filesystem::path& path, const std::vector<BiasVarianceRow>& rows) {
  auto out = open_output(path);
  out << "variant,draws,bias2,variance,mse,bias2_share\n";
  for (const auto& r : rows)
    out << r.variant << ',' << r.draws << ',' << format_double(r.bias2) << ',' << format_double(r.variance) << ','
        << format_double(r.mse) << ',' << format_double(r.mse > 0.0 ? r.bias2 / r.mse : 0.0) << '\n';
}

// ---- config ---------------------------------------------------------------

// Everything a bench / sweep / gen run reads from its flat key=value config.
struct BenchConfig {
  ScenarioSpec spec;
  std::string experiment = "scenario";  // scenario | weights | ranges | bias_variance | multistudy
  std::optional<SweepParameter> sweep_parameter;
  std::vector<double> sweep_values;
  std::vector<std::size_t> k_values{20, 80};  // weights
  std::optional<std::size_t> range_k;         // ranges; unset = silhouette choice
  std::size_t n_train_draws = 50;             // bias_variance
  std::size_t n_studies_train = 10, n_studies_test = 5;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"scenario", "weights", "ranges", "bias_variance", "multistudy"};
  return names;
}

// Keys written into manifests that a config may carry but that do not
// change the run.
inline bool is_manifest_key(const std::string& key) {
  return key == "library_version" || key == "command" || key == "format";
}

namespace detail {

template <typename T>
T config_number(const std::string& key, const std::string& value) {
  T out{};
  bool ok;
  if constexpr (std::is_floating_point_v<T>) ok = parse_double(value, out);
  else ok = parse_int(value, out);
  if (!ok) throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  return out;
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

template <typename T>
std::vector<T> config_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (auto part : split(value, ','))
    if (!trim(part).empty()) out.push_back(config_number<T>(key, std::string(trim(part))));
  return out;
}

}  // namespace detail

inline BenchConfig bench_config_from(const std::map<std::string, std::string>& kv) {
  BenchConfig c;
  auto& s = c.spec;
  bool have_variants = false;
  for (const auto& [key, value] : kv) {
    using detail::config_bool;
    using detail::config_number;
    try {
      if (is_manifest_key(key)) continue;
      if (key == "name") s.name = value;
      else if (key == "seed") s.seed = config_number<std::uint64_t>(key, value);
      else if (key == "n_reps") s.n_reps = config_number<std::size_t>(key, value);
      else if (key == "n_true_clusters") s.gen.n_true_clusters = config_number<std::size_t>(key, value);
      else if (key == "cluster_size") s.gen.cluster_size = config_number<std::size_t>(key, value);
      else if (key == "p") s.gen.p = config_number<std::size_t>(key, value);
      else if (key == "n_active") s.gen.n_active = config_number<std::size_t>(key, value);
      else if (key == "generator") s.gen.generator = parse_generator(value);
      else if (key == "separation") s.gen.separation = config_number<double>(key, value);
      else if (key == "n_test_sets") s.gen.n_test_sets = config_number<std::size_t>(key, value);
      else if (key == "test_clusters") s.gen.test_clusters = config_number<std::size_t>(key, value);
      else if (key == "max_perturb") s.gen.max_perturb = config_number<double>(key, value);
      else if (key == "outcome") s.model.kind = parse_outcome_kind(value);
      else if (key == "noise_sd") s.model.noise_sd = config_number<double>(key, value);
      else if (key == "step_cutoff") s.model.step_cutoff = config_number<double>(key, value);
      else if (key == "coef_norm_scale") s.model.coef_norm_scale = config_number<double>(key, value);
      else if (key == "quadratic_indices") s.model.quadratic_indices = detail::config_list<int>(key, value);
      else if (key == "interaction_pairs") {
        s.model.interaction_pairs.clear();
        for (auto part : split(value, ',')) {
          const auto ab = split(trim(part), ':');
          if (ab.size() != 2) throw ConfigError("interaction_pairs entries look like a:b");
          s.model.interaction_pairs.emplace_back(config_number<int>(key, std::string(ab[0])),
                                                 config_number<int>(key, std::string(ab[1])));
        }
      }
      else if (key == "n_trees") s.forest.n_trees = config_number<std::size_t>(key, value);
      else if (key == "mtry") s.forest.mtry = config_number<std::size_t>(key, value);
      else if (key == "min_leaf") s.forest.min_leaf = config_number<std::size_t>(key, value);
      else if (key == "max_depth") s.forest.max_depth = config_number<std::size_t>(key, value);
      else if (key == "bootstrap") s.forest.bootstrap = config_bool(key, value);
      else if (key == "folds") s.stacking.folds = config_number<std::size_t>(key, value);
      else if (key == "grid_size") s.stacking.grid_size = config_number<std::size_t>(key, value);
      else if (key == "grid_ratio") s.stacking.grid_ratio = config_number<double>(key, value);
      else if (key == "stack_intercept") s.stacking.intercept = config_bool(key, value);
      else if (key == "stack_standardize") s.stacking.standardize = config_bool(key, value);
      else if (key == "stack_rows") s.stack_rows = parse_stack_rows(value);
      else if (key == "n_init") s.kmeans.n_init = config_number<std::size_t>(key, value);
      else if (key == "max_iter") s.kmeans.max_iter = config_number<std::size_t>(key, value);
      else if (key == "kmeans_tol") s.kmeans.tol = config_number<double>(key, value);
      else if (key == "auto_k_min") s.auto_k_min = config_number<std::size_t>(key, value);
      else if (key == "auto_k_max") s.auto_k_max = config_number<std::size_t>(key, value);
      else if (key == "standardize") s.standardize = config_bool(key, value);
      else if (key == "record_ranges") s.record_ranges = config_bool(key, value);
      else if (key == "variants") {
        s.variants.clear();
        for (auto part : split(value, ','))
          if (!trim(part).empty()) s.variants.push_back(parse_variant_spec(part));
        have_variants = true;
      }
      else if (key == "experiment") {
        if (std::find(experiment_names().begin(), experiment_names().end(), value) == experiment_names().end())
          throw ConfigError("unknown experiment '" + value + "'");
        c.experiment = value;
      }
      else if (key == "sweep_parameter") c.sweep_parameter = parse_sweep_parameter(value);
      else if (key == "sweep_values") c.sweep_values = detail::config_list<double>(key, value);
      else if (key == "k_values") c.k_values = detail::config_list<std::size_t>(key, value);
      else if (key == "range_k") c.range_k = value == "auto" ? std::nullopt : std::optional(config_number<std::size_t>(key, value));
      else if (key == "n_train_draws") c.n_train_draws = config_number<std::size_t>(key, value);
      else if (key == "n_studies_train") c.n_studies_train = config_number<std::size_t>(key, value);
      else if (key == "n_studies_test") c.n_studies_test = config_number<std::size_t>(key, value);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  if (!have_variants)
    s.variants = {parse_variant_spec("cluster@auto:stack_ridge"), parse_variant_spec("random@auto:stack_ridge"),
                  parse_variant_spec("merged")};
  if (c.sweep_parameter && c.sweep_values.empty()) throw ConfigError("sweep_parameter set without sweep_values");
  return c;
}

inline BenchConfig read_bench_config(const std::filesystem::path& path) {
  std::map<std::string, std::string> kv;
  try {
    kv = read_key_values(path);
  } catch (const IoError& e) {
    if (!std::filesystem::exists(path)) throw;
    throw ConfigError(e.what());
  }
  return bench_config_from(kv);
}

// Inverse of bench_config_from; every key is written.
inline std::map<std::string, std::string> to_key_values(const BenchConfig& c) {
  const auto& s = c.spec;
  std::map<std::string, std::string> kv;
  auto n = [](auto v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv["name"] = s.name;
  kv["seed"] = n(s.seed);
  kv["n_reps"] = n(s.n_reps);
  kv["n_true_clusters"] = n(s.gen.n_true_clusters);
  kv["cluster_size"] = n(s.gen.cluster_size);
  kv["p"] = n(s.gen.p);
  kv["n_active"] = n(s.gen.n_active);
  kv["generator"] = to_string(s.gen.generator);
  kv["separation"] = format_double(s.gen.separation);
  kv["n_test_sets"] = n(s.gen.n_test_sets);
  kv["test_clusters"] = n(s.gen.test_clusters);
  kv["max_perturb"] = format_double(s.gen.max_perturb);
  kv["outcome"] = to_string(s.model.kind);
  kv["noise_sd"] = format_double(s.model.noise_sd);
  if (s.model.step_cutoff) kv["step_cutoff"] = format_double(*s.model.step_cutoff);
  kv["coef_norm_scale"] = format_double(s.model.coef_norm_scale);
  if (!s.model.quadratic_indices.empty()) {
    std::string q;
    for (std::size_t i = 0; i < s.model.quadratic_indices.size(); ++i) q += (i ? "," : "") + n(s.model.quadratic_indices[i]);
    kv["quadratic_indices"] = q;
  }
  if (!s.model.interaction_pairs.empty()) {
    std::string q;
    for (std::size_t i = 0; i < s.model.interaction_pairs.size(); ++i)
      q += (i ? "," : "") + n(s.model.interaction_pairs[i].first) + ":" + n(s.model.interaction_pairs[i].second);
    kv["interaction_pairs"] = q;
  }
  kv["n_trees"] = n(s.forest.n_trees);
  kv["mtry"] = n(s.forest.mtry);
  kv["min_leaf"] = n(s.forest.min_leaf);
  kv["max_depth"] = n(s.forest.max_depth);
  kv["bootstrap"] = b(s.forest.bootstrap);
  kv["folds"] = n(s.stacking.folds);
  kv["grid_size"] = n(s.stacking.grid_size);
  kv["grid_ratio"] = format_double(s.stacking.grid_ratio);
  kv["stack_intercept"] = b(s.stacking.intercept);
  kv["stack_standardize"] = b(s.stacking.standardize);
  kv["stack_rows"] = to_string(s.stack_rows);
  kv["n_init"] = n(s.kmeans.n_init);
  kv["max_iter"] = n(s.kmeans.max_iter);
  kv["kmeans_tol"] = format_double(s.kmeans.tol);
  kv["auto_k_min"] = n(s.auto_k_min);
  kv["auto_k_max"] = n(s.auto_k_max);
  kv["standardize"] = b(s.standardize);
  kv["record_ranges"] = b(s.record_ranges);
  std::string vs;
  for (std::size_t i = 0; i < s.variants.size(); ++i) vs += (i ? "," : "") + s.variants[i].id();
  kv["variants"] = vs;
  kv["experiment"] = c.experiment;
  if (c.sweep_parameter) {
    kv["sweep_parameter"] = to_string(*c.sweep_parameter);
    kv["sweep_values"] = join_doubles(c.sweep_values, ',');
  }
  std::string ks;
  for (std::size_t i = 0; i < c.k_values.size(); ++i) ks += (i ? "," : "") + n(c.k_values[i]);
  kv["k_values"] = ks;
  kv["range_k"] = c.range_k ? n(*c.range_k) : "auto";
  kv["n_train_draws"] = n(c.n_train_draws);
  kv["n_studies_train"] = n(c.n_studies_train);
  kv["n_studies_test"] = n(c.n_studies_test);
  return kv;
}

// The manifest is itself a valid config: rerunning with --config
// manifest.txt repeats the run.
inline void write_manifest(const std::filesystem::path& path, const std::string& command,
                           const std::map<std::string, std::string>& kv) {
  auto out = open_output(path);
  out << "# rerun: ccwf " << command << " --config " << path.filename().string() << " --out <dir>\n";
  out << "command=" << command << '\n';
  out << "library_version=" << kVersion << '\n';
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

// Runs the configured experiment and writes its CSVs (and plot.dat when
// asked) into out_dir.
inline void run_bench(const BenchConfig& c, const std::filesystem::path& out_dir, bool plot,
                      const std::string& command = "bench") {
  const auto& spec = c.spec;
  if (c.experiment == "weights") {
    const auto w = weight_distribution_experiment(spec, c.k_values);
    write_weight_csv(out_dir / "weights.csv", w);
    write_weight_summary_csv(out_dir / "weights_summary.csv", w);
  } else if (c.experiment == "ranges") {
    const auto r = range_diagnostic(spec, c.range_k);
    write_range_csv(out_dir / "ranges.csv", r);
    write_range_summary_csv(out_dir / "ranges_summary.csv", r);
  } else if (c.experiment == "bias_variance") {
    write_bias_variance_csv(out_dir / "bias_variance.csv", bias_variance_decomposition(spec, c.n_train_draws));
  } else {
    ScenarioRunner runner = run_scenario;
    if (c.experiment == "multistudy")
      runner = [&](const ScenarioSpec& s) { return multistudy_experiment(c.n_studies_train, c.n_studies_test, s); };
    std::vector<ScenarioResult> results;
    if (c.sweep_parameter) results = sweep(spec, *c.sweep_parameter, c.sweep_values, runner);
    else results.push_back(runner(spec));
    std::vector<RepRecord> records;
    std::vector<SummaryRow> rows;
    std::vector<RangeRecord> ranges;
    for (auto& r : results) {
      records.insert(records.end(), r.records.begin(), r.records.end());
      rows.insert(rows.end(), r.summary.begin(), r.summary.end());
      ranges.insert(ranges.end(), r.ranges.begin(), r.ranges.end());
    }
    write_records_csv(out_dir / "records.csv", records);
    write_summary_csv(out_dir / "summary.csv", rows);
    if (!ranges.empty()) {
      const auto rr = summarize_ranges(ranges);
      write_range_csv(out_dir / "ranges.csv", rr);
      write_range_summary_csv(out_dir / "ranges_summary.csv", rr);
    }
    if (plot) write_gnuplot(out_dir / "plot.dat", rows);
  }
  write_manifest(out_dir / "manifest.txt", command, to_key_values(c));
}

}  // namespace ccwf
