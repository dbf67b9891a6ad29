#pragma once

// Cross-cluster weighted forest and its baselines.
//
//   cluster  k-means partition of the covariates, one forest per cluster,
//            stacked weights
//   random   k equally sized random partitions, otherwise as cluster
//   multi    one forest per true cluster label, stacked weights
//   merged   one forest on all rows, weight 1
//
// Every variant spends the same tree budget k_ref * n_trees, spread evenly
// over its forests, so comparisons differ only in how rows reach the trees.

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"
#include "ccwf/forest.hpp"
#include "ccwf/kmeans.hpp"
#include "ccwf/stacking.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

namespace ccwf {

enum class VariantKind { cluster, random, multi, merged };

inline std::string to_string(VariantKind v) {
  switch (v) {
    case VariantKind::cluster: return "cluster";
    case VariantKind::random: return "random";
    case VariantKind::multi: return "multi";
    case VariantKind::merged: return "merged";
  }
  return "?";
}

inline VariantKind parse_variant(std::string_view s) {
  if (s == "cluster") return VariantKind::cluster;
  if (s == "random") return VariantKind::random;
  if (s == "multi") return VariantKind::multi;
  if (s == "merged") return VariantKind::merged;
  throw UsageError("unknown variant '" + std::string(s) + "'");
}

// Which predictions fill a forest's own rows of the stack matrix:
//   in_sample       the forest's ordinary predictions
//   out_of_cluster  zero, so each row is explained only by the other forests
//   out_of_bag      the forest's out-of-bag predictions
enum class StackRows { in_sample, out_of_cluster, out_of_bag };

inline std::string to_string(StackRows r) {
  switch (r) {
    case StackRows::in_sample: return "in_sample";
    case StackRows::out_of_cluster: return "out_of_cluster";
    case StackRows::out_of_bag: return "out_of_bag";
  }
  return "?";
}

inline StackRows parse_stack_rows(std::string_view s) {
  if (s == "in_sample") return StackRows::in_sample;
  if (s == "out_of_cluster") return StackRows::out_of_cluster;
  if (s == "out_of_bag") return StackRows::out_of_bag;
  throw UsageError("stack rows must be in_sample, out_of_cluster or out_of_bag, got '" + std::string(s) + "'");
}

struct EnsembleOptions {
  VariantKind variant = VariantKind::cluster;
  std::optional<std::size_t> k;      // unset: choose by silhouette (cluster/random)
  std::optional<std::size_t> k_ref;  // tree budget multiplier; unset: the partition count asked for
  ForestParams forest;
  WeightScheme scheme = WeightScheme::stack_ridge;
  StackingOptions stacking;
  StackRows stack_rows = StackRows::in_sample;
  KMeansOptions kmeans;
  std::size_t auto_k_min = 2;
  std::size_t auto_k_max = 0;  // 0: min(100, n / 10)
  bool standardize = false;    // z-score covariates before k-means only
};

struct CCWFModel {
  VariantKind variant = VariantKind::cluster;
  std::size_t requested_k = 0;  // partitions asked for (after resolving auto)
  std::size_t tree_budget = 0;  // total trees across forests
  std::string partition_source;
  std::vector<Forest> forests;
  StackingWeights weights;
  std::vector<std::size_t> partition_sizes;
  std::size_t dissolved = 0;  // undersized partitions merged away before training
  StackRows stack_rows = StackRows::in_sample;
  std::optional<double> silhouette;
  std::vector<std::string> feature_names;
  std::size_t n_features = 0;

  std::size_t k() const { return forests.size(); }

  std::size_t total_trees() const {
    std::size_t t = 0;
    for (const auto& f : forests) t += f.size();
    return t;
  }
};

inline std::uint64_t forest_seed(std::uint64_t seed, std::size_t j) { return derive_seed(seed, 0xF0Eull, j); }

inline std::size_t default_auto_k_max(std::size_t n) { return std::min<std::size_t>(100, n / 10); }

// Partitions smaller than min_rows are dissolved one at a time (smallest
// first), their rows going to the nearest remaining centroid.
inline std::size_t dissolve_undersized(PartitionAssignment& a, const Matrix& X, Matrix centroids,
                                       std::size_t min_rows) {
  std::size_t dissolved = 0;
  for (;;) {
    const auto sizes = a.sizes();
    std::size_t victim = a.k;
    for (std::size_t j = 0; j < a.k; ++j)
      if (sizes[j] < min_rows && (victim == a.k || sizes[j] < sizes[victim])) victim = j;
    if (victim == a.k || a.k <= 1) break;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (static_cast<std::size_t>(a.labels[i]) != victim) continue;
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t j = 0; j < a.k; ++j) {
        if (j == victim) continue;
        const double d = (X.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(j))).squaredNorm();
        if (d < best) {
          best = d;
          arg = static_cast<int>(j);
        }
      }
      a.labels[i] = arg;
    }
    for (auto& l : a.labels)
      if (l > static_cast<int>(victim)) --l;
    Matrix kept(centroids.rows() - 1, centroids.cols());
    for (Eigen::Index j = 0, r = 0; j < centroids.rows(); ++j)
      if (j != static_cast<Eigen::Index>(victim)) kept.row(r++) = centroids.row(j);
    centroids = std::move(kept);
    --a.k;
    ++dissolved;
  }
  return dissolved;
}

inline Matrix partition_means(const Matrix& X, const PartitionAssignment& a) {
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(a.k), X.cols());
  const auto sizes = a.sizes();
  for (std::size_t i = 0; i < a.size(); ++i) c.row(a.labels[i]) += X.row(static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < a.k; ++j)
    if (sizes[j]) c.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(sizes[j]);
  return c;
}

// Forests trained per partition with the budget spread over them.
struct MemberForests {
  PartitionAssignment assignment;
  std::vector<Forest> forests;
  std::vector<std::size_t> sizes;
  std::vector<std::vector<std::size_t>> members;
};

inline MemberForests fit_members(const Dataset& d, const PartitionAssignment& a, const ForestParams& params,
                                 std::size_t tree_budget, std::uint64_t seed, bool keep_inbag = false) {
  a.validate(d.rows());
  require(tree_budget >= a.k, "tree budget smaller than the number of forests");
  MemberForests mf;
  mf.assignment = a;
  mf.members = a.members();
  mf.sizes = a.sizes();
  mf.forests.resize(a.k);
  for (std::size_t j = 0; j < a.k; ++j) {
    ForestParams fp = params;
    fp.n_trees = tree_budget / a.k + (j < tree_budget % a.k ? 1 : 0);
    fp.keep_inbag = fp.keep_inbag || keep_inbag;
    const Dataset part = d.subset(mf.members[j]);
    mf.forests[j] = fit_forest(part.features, part.outcome, fp, forest_seed(seed, j));
  }
  return mf;
}

// Stack matrix over the training rows, own-row entries per StackRows.
inline StackMatrix member_stack_matrix(const MemberForests& mf, const Dataset& d, StackRows rows) {
  StackMatrix S = build_stack_matrix(mf.forests, d);
  if (rows == StackRows::out_of_cluster) {
    for (std::size_t j = 0; j < mf.forests.size(); ++j)
      for (std::size_t i : mf.members[j]) S.T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.0;
  }
  if (rows == StackRows::out_of_bag) {
    for (std::size_t j = 0; j < mf.forests.size(); ++j) {
      const Dataset part = d.subset(mf.members[j]);
      const Vector oob = predict_forest_oob(mf.forests[j], part.features);
      for (std::size_t i = 0; i < mf.members[j].size(); ++i)
        S.T(static_cast<Eigen::Index>(mf.members[j][i]), static_cast<Eigen::Index>(j)) = oob[static_cast<Eigen::Index>(i)];
    }
  }
  return S;
}

// Weights for already-trained members. A single member always gets weight 1.
inline StackingWeights member_weights(const MemberForests& mf, const Dataset& d, WeightScheme scheme,
                                      const EnsembleOptions& opt, std::uint64_t seed,
                                      const StackMatrix* precomputed = nullptr) {
  if (mf.forests.size() == 1) return {Vector::Ones(1), 0.0, scheme};
  if (scheme == WeightScheme::simple_average || scheme == WeightScheme::sample_size)
    return baseline_weights(scheme, mf.sizes);
  if (precomputed) return fit_stacking_weights(*precomputed, scheme, derive_seed(seed, 0xCF0ull), opt.stacking);
  const StackMatrix S = member_stack_matrix(mf, d, opt.stack_rows);
  return fit_stacking_weights(S, scheme, derive_seed(seed, 0xCF0ull), opt.stacking);
}

inline CCWFModel assemble_model(VariantKind variant, MemberForests mf, StackingWeights w, std::size_t requested_k,
                                std::size_t budget, std::string source, const Dataset& d) {
  CCWFModel m;
  m.variant = variant;
  m.requested_k = requested_k;
  m.tree_budget = budget;
  m.partition_source = std::move(source);
  m.forests = std::move(mf.forests);
  m.weights = std::move(w);
  m.partition_sizes = std::move(mf.sizes);
  m.feature_names = d.names_or_default();
  m.n_features = d.cols();
  return m;
}

// Trains on a caller-supplied partition (e.g. forced study labels).
inline CCWFModel fit_with_partition(const Dataset& d, const PartitionAssignment& a, const EnsembleOptions& opt,
                                    std::uint64_t seed, VariantKind variant, std::string source) {
  d.validate();
  const std::size_t budget = opt.k_ref.value_or(a.k) * opt.forest.n_trees;
  auto mf = fit_members(d, a, opt.forest, budget, seed, opt.stack_rows == StackRows::out_of_bag);
  auto w = member_weights(mf, d, opt.scheme, opt, seed);
  CCWFModel m = assemble_model(variant, std::move(mf), std::move(w), a.k, budget, std::move(source), d);
  m.stack_rows = opt.stack_rows;
  return m;
}

// Resolved partition for the cluster / random / multi variants, after
// undersized partitions have been repaired.
struct PartitionPlan {
  PartitionAssignment assignment;
  std::size_t requested_k = 0;
  std::size_t dissolved = 0;
  std::string source;
  std::optional<double> silhouette;
};

inline SelectKResult auto_select_k(const Dataset& d, const EnsembleOptions& opt, std::uint64_t seed) {
  const std::size_t k_max = opt.auto_k_max ? opt.auto_k_max : default_auto_k_max(d.rows());
  require(k_max >= opt.auto_k_min, "automatic k needs at least " + std::to_string(opt.auto_k_min * 10) + " rows");
  const Matrix X = opt.standardize ? standardize_columns(d.features) : d.features;
  return select_k(X, opt.auto_k_min, k_max, derive_seed(seed, 0x5E1ull), opt.kmeans);
}

inline PartitionPlan plan_partition(const Dataset& d, const EnsembleOptions& opt, std::uint64_t seed,
                                    const SelectKResult* auto_k = nullptr) {
  const std::size_t floor_rows = 2 * opt.forest.min_leaf;
  PartitionPlan plan;
  std::optional<SelectKResult> local;
  auto resolve_auto = [&]() -> const SelectKResult& {
    if (auto_k) return *auto_k;
    local = auto_select_k(d, opt, seed);
    return *local;
  };
  switch (opt.variant) {
    case VariantKind::cluster: {
      const Matrix X = opt.standardize ? standardize_columns(d.features) : d.features;
      KMeansModel km;
      if (opt.k) {
        require(*opt.k >= 2, "the cluster variant needs k >= 2");
        km = fit_kmeans(X, *opt.k, derive_seed(seed, 0xC1Bull), opt.kmeans);
        plan.source = "kmeans";
      } else {
        const auto& sel = resolve_auto();
        km = sel.model;
        plan.silhouette = sel.silhouette;
        plan.source = "kmeans-auto";
      }
      plan.requested_k = km.k();
      plan.assignment = km.assignment;
      plan.dissolved = dissolve_undersized(plan.assignment, X, km.centroids, floor_rows);
      break;
    }
    case VariantKind::random: {
      std::size_t k;
      if (opt.k) {
        k = *opt.k;
        require(k >= 2, "the random variant needs k >= 2");
      } else {
        const auto& sel = resolve_auto();
        k = sel.k;
        plan.silhouette = sel.silhouette;
      }
      plan.requested_k = k;
      std::size_t k_eff = k;
      if (d.rows() / k_eff < floor_rows) k_eff = std::max<std::size_t>(1, d.rows() / floor_rows);
      plan.dissolved = k - k_eff;
      if (k_eff >= 2) {
        plan.assignment = partition_random(d, k_eff, derive_seed(seed, 0x8A4Dull));
      } else {
        plan.assignment = {std::vector<int>(d.rows(), 0), 1};
      }
      plan.source = "random";
      break;
    }
    case VariantKind::multi: {
      if (!d.true_labels) throw UsageError("the multi variant needs true cluster labels");
      plan.assignment = partition_by_labels(d);
      plan.requested_k = plan.assignment.k;
      plan.dissolved = dissolve_undersized(plan.assignment, d.features, partition_means(d.features, plan.assignment),
                                           floor_rows);
      plan.source = "labels";
      break;
    }
    case VariantKind::merged:
      plan.requested_k = opt.k.value_or(1);
      plan.assignment = {std::vector<int>(d.rows(), 0), 1};
      plan.source = "none";
      break;
  }
  return plan;
}

inline CCWFModel fit(const Dataset& d, const EnsembleOptions& opt, std::uint64_t seed) {
  d.validate();
  const PartitionPlan plan = plan_partition(d, opt, seed);
  const std::size_t budget = opt.k_ref.value_or(plan.requested_k) * opt.forest.n_trees;
  auto mf = fit_members(d, plan.assignment, opt.forest, budget, seed, opt.stack_rows == StackRows::out_of_bag);
  auto w = member_weights(mf, d, opt.scheme, opt, seed);
  CCWFModel m = assemble_model(opt.variant, std::move(mf), std::move(w), plan.requested_k, budget, plan.source, d);
  m.dissolved = plan.dissolved;
  m.silhouette = plan.silhouette;
  m.stack_rows = opt.stack_rows;
  return m;
}

// intercept + sum_j w_j * forest_j(x); weights are used as fitted, never
// renormalised. The intercept is zero unless stacking was asked to fit one.
inline Vector predict(const CCWFModel& m, const Matrix& X) {
  require(static_cast<std::size_t>(X.cols()) == m.n_features,
          "prediction matrix has " + std::to_string(X.cols()) + " columns, model expects " + std::to_string(m.n_features));
  require(m.weights.w.size() == static_cast<Eigen::Index>(m.forests.size()), "weight count does not match forests");
  Vector out = Vector::Constant(X.rows(), m.weights.intercept);
  for (std::size_t j = 0; j < m.forests.size(); ++j) {
    const double w = m.weights.w[static_cast<Eigen::Index>(j)];
    if (w == 0.0) continue;
    out += w * predict_forest(m.forests[j], X);
  }
  return out;
}

inline double rmse(const Vector& y, const Vector& yhat) {
  require(y.size() == yhat.size(), "rmse: length mismatch (" + std::to_string(y.size()) + " vs " +
                                       std::to_string(yhat.size()) + ")");
  require(y.size() >= 1, "rmse needs at least one value");
  return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.size()));
}

// Model bundle: manifest.txt (key=value), forests.txt, weights.csv.
inline void write_model(const std::filesystem::path& dir, const CCWFModel& m,
                        const std::map<std::string, std::string>& extra = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
    out << "format=ccwf-model-1\n";
    out << "library_version=" << kVersion << '\n';
    out << "variant=" << to_string(m.variant) << '\n';
    out << "k=" << m.k() << '\n';
    out << "requested_k=" << m.requested_k << '\n';
    out << "tree_budget=" << m.tree_budget << '\n';
    out << "partition_source=" << m.partition_source << '\n';
    out << "dissolved=" << m.dissolved << '\n';
    out << "stack_rows=" << to_string(m.stack_rows) << '\n';
    out << "weight_scheme=" << to_string(m.weights.scheme) << '\n';
    out << "lambda=" << format_double(m.weights.lambda) << '\n';
    out << "intercept=" << format_double(m.weights.intercept) << '\n';
    if (m.silhouette) out << "silhouette=" << format_double(*m.silhouette) << '\n';
    out << "n_features=" << m.n_features << '\n';
    out << "features=";
    for (std::size_t i = 0; i < m.feature_names.size(); ++i) out << (i ? "," : "") << m.feature_names[i];
    out << '\n';
    for (const auto& [key, value] : extra) out << key << '=' << value << '\n';
  }
  {
    std::ofstream out(dir / "forests.txt");
    if (!out) throw IoError("cannot write " + (dir / "forests.txt").string());
    out << "forests " << m.forests.size() << '\n';
    for (const auto& f : m.forests) write_forest(out, f);
  }
  {
    std::ofstream out(dir / "weights.csv");
    if (!out) throw IoError("cannot write " + (dir / "weights.csv").string());
    out << "forest,weight,partition_size\n";
    for (std::size_t j = 0; j < m.forests.size(); ++j)
      out << j << ',' << format_double(m.weights.w[static_cast<Eigen::Index>(j)]) << ','
          << (j < m.partition_sizes.size() ? m.partition_sizes[j] : 0) << '\n';
  }
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw IoError(path.string() + ": expected key=value, got '" + std::string(t) + "'");
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  return kv;
}

inline CCWFModel read_model(const std::filesystem::path& dir) {
  const auto kv = read_key_values(dir / "manifest.txt");
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("model manifest lacks '" + key + "'");
    return it->second;
  };
  if (get("format") != "ccwf-model-1") throw IoError("unsupported model format '" + get("format") + "'");
  CCWFModel m;
  m.variant = parse_variant(get("variant"));
  m.partition_source = get("partition_source");
  m.weights.scheme = parse_weight_scheme(get("weight_scheme"));
  m.stack_rows = parse_stack_rows(get("stack_rows"));
  if (!parse_double(get("lambda"), m.weights.lambda)) throw IoError("bad lambda in manifest");
  if (!parse_double(get("intercept"), m.weights.intercept)) throw IoError("bad intercept in manifest");
  if (!parse_int(get("n_features"), m.n_features)) throw IoError("bad n_features in manifest");
  parse_int(get("requested_k"), m.requested_k);
  parse_int(get("tree_budget"), m.tree_budget);
  parse_int(get("dissolved"), m.dissolved);
  if (auto it = kv.find("silhouette"); it != kv.end()) {
    double s;
    if (parse_double(it->second, s)) m.silhouette = s;
  }
  for (auto name : split(get("features"), ',')) m.feature_names.emplace_back(name);
  {
    std::ifstream in(dir / "forests.txt");
    if (!in) throw IoError("cannot open " + (dir / "forests.txt").string());
    std::string tag;
    std::size_t count = 0;
    if (!(in >> tag >> count) || tag != "forests") throw IoError("malformed forests.txt header");
    for (std::size_t j = 0; j < count; ++j) m.forests.push_back(read_forest(in));
  }
  {
    std::ifstream in(dir / "weights.csv");
    if (!in) throw IoError("cannot open " + (dir / "weights.csv").string());
    std::string line;
    std::getline(in, line);
    std::vector<double> w;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto cells = split(line, ',');
      double v;
      std::size_t sz = 0;
      if (cells.size() != 3 || !parse_double(cells[1], v) || !parse_int(cells[2], sz)) throw IoError("malformed weights.csv line '" + line + "'");
      w.push_back(v);
      m.partition_sizes.push_back(sz);
    }
    m.weights.w = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
  if (m.weights.w.size() != static_cast<Eigen::Index>(m.forests.size()))
    throw IoError("weights.csv has " + std::to_string(m.weights.w.size()) + " weights for " +
                  std::to_string(m.forests.size()) + " forests");
  for (const auto& f : m.forests)
    if (f.n_features != m.n_features) throw IoError("forest feature count disagrees with manifest");
  return m;
}

}  // namespace ccwf
