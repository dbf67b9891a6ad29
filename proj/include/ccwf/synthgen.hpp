#pragma once

// Synthetic clustered covariates and outcome models for simulation studies.
//
// Clusters are Gaussian with covariance Q diag(eigs) Q^T (Q a Haar-random
// rotation, eigs uniform on [0.5, 2]). Centroids are placed in a hypercube
// centred at the origin by sequential rejection sampling and then scaled so
// the minimum pairwise centroid distance equals
//     6 * separation * (average marginal standard deviation).
// The non-Gaussian generator applies a monotone distortion to each
// coordinate of each cluster and restores that coordinate's sample mean and
// standard deviation.

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"

#include <numeric>
#include <optional>
#include <string>
#include <utility>

namespace ccwf {

enum class OutcomeKind { linear, binary_step, quadratic, interaction, multistudy_nonlinear };
enum class ClusterGenerator { gaussian, nongaussian };
enum class Distortion { identity, sinh, cube_root, exp_tilt };

inline std::string to_string(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::linear: return "linear";
    case OutcomeKind::binary_step: return "binary_step";
    case OutcomeKind::quadratic: return "quadratic";
    case OutcomeKind::interaction: return "interaction";
    case OutcomeKind::multistudy_nonlinear: return "multistudy_nonlinear";
  }
  return "?";
}

inline OutcomeKind parse_outcome_kind(std::string_view s) {
  if (s == "linear") return OutcomeKind::linear;
  if (s == "binary_step") return OutcomeKind::binary_step;
  if (s == "quadratic") return OutcomeKind::quadratic;
  if (s == "interaction") return OutcomeKind::interaction;
  if (s == "multistudy_nonlinear") return OutcomeKind::multistudy_nonlinear;
  throw UsageError("unknown outcome model '" + std::string(s) + "'");
}

inline std::string to_string(ClusterGenerator g) { return g == ClusterGenerator::gaussian ? "gaussian" : "nongaussian"; }

inline ClusterGenerator parse_generator(std::string_view s) {
  if (s == "gaussian") return ClusterGenerator::gaussian;
  if (s == "nongaussian") return ClusterGenerator::nongaussian;
  throw UsageError("unknown generator '" + std::string(s) + "'");
}

struct CoefficientSet {
  Vector base;         // p entries, n_active of them nonzero
  Matrix per_cluster;  // C x p, base plus per-cluster perturbation
  Vector quadratic;    // one coefficient per OutcomeModel::quadratic_indices entry
  Vector interaction;  // one coefficient per OutcomeModel::interaction_pairs entry

  std::vector<int> active() const {
    std::vector<int> idx;
    for (Eigen::Index m = 0; m < base.size(); ++m)
      if (base[m] != 0.0) idx.push_back(static_cast<int>(m));
    return idx;
  }

  // Copy whose per-cluster rows all equal the base coefficients.
  CoefficientSet unperturbed(std::size_t clusters) const {
    CoefficientSet c = *this;
    c.per_cluster = base.transpose().replicate(static_cast<Eigen::Index>(clusters), 1);
    return c;
  }
};

struct OutcomeModel {
  OutcomeKind kind = OutcomeKind::linear;
  double noise_sd = 1.0;
  std::optional<double> step_cutoff;  // binary_step; unset means the median training score
  std::vector<int> quadratic_indices;  // empty means the first two active covariates
  std::vector<std::pair<int, int>> interaction_pairs;  // empty means (a0,a1), (a2,a3) of the active covariates
  double coef_norm_scale = 1.0;
};

struct GenConfig {
  std::size_t n_true_clusters = 5;
  std::size_t cluster_size = 500;
  std::size_t p = 20;
  std::size_t n_active = 10;
  ClusterGenerator generator = ClusterGenerator::gaussian;
  double separation = 0.5;
  std::size_t n_test_sets = 5;
  std::size_t test_clusters = 2;
  double max_perturb = 0.25;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_true_clusters >= 1, "n_true_clusters must be >= 1");
    require(cluster_size >= 2, "cluster_size must be >= 2");
    require(p >= 1, "p must be >= 1");
    require(n_active >= 1 && n_active <= p, "n_active must be in [1, p]");
    require(separation >= 0.0 && separation <= 1.0, "separation must be in [0, 1]");
    require(test_clusters >= 1, "test_clusters must be >= 1");
    require(max_perturb >= 0.0, "max_perturb must be >= 0");
  }
};

inline constexpr double kCoefMin = 0.5;
inline constexpr double kCoefMax = 5.0;
inline constexpr double kSeparationScale = 6.0;
inline constexpr double kEigenMin = 0.5;
inline constexpr double kEigenMax = 2.0;

inline double draw_signed_coefficient(Rng& rng) {
  const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  return sign * uniform(rng, kCoefMin, kCoefMax);
}

// n_active coefficients on a uniformly chosen subset of covariates, each
// uniform on [-5,-0.5] U [0.5,5]; the rest exactly zero.
inline CoefficientSet draw_coefficients(std::size_t p, std::size_t n_active, std::uint64_t seed) {
  require(n_active <= p, "n_active (" + std::to_string(n_active) + ") exceeds p (" + std::to_string(p) + ")");
  Rng rng = make_rng(seed);
  std::vector<int> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < n_active; ++i) std::swap(idx[i], idx[i + uniform_index(rng, p - i)]);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_active));
  CoefficientSet cs;
  cs.base = Vector::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n_active; ++i) cs.base[idx[i]] = draw_signed_coefficient(rng);
  cs.per_cluster = cs.base.transpose();
  return cs;
}

// per_cluster[c][m] = base[m] + s * delta, delta ~ U[0, max_perturb],
// s a fair random sign; inactive covariates stay zero.
inline CoefficientSet perturb_coefficients(const CoefficientSet& cs, std::size_t clusters, double max_perturb,
                                           std::uint64_t seed) {
  require(max_perturb >= 0.0, "max_perturb must be >= 0");
  Rng rng = make_rng(seed);
  CoefficientSet out = cs;
  const auto p = cs.base.size();
  out.per_cluster.resize(static_cast<Eigen::Index>(clusters), p);
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(clusters); ++c) {
    for (Eigen::Index m = 0; m < p; ++m) {
      const double delta = uniform(rng, 0.0, max_perturb);
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      out.per_cluster(c, m) = cs.base[m] == 0.0 ? 0.0 : cs.base[m] + sign * delta;
    }
  }
  return out;
}

// Cluster centroids, covariance square roots and (for the non-Gaussian
// generator) per-coordinate distortions. Sampling from a fixed geometry
// gives repeated draws from the same mixture.
struct ClusterGeometry {
  std::vector<Vector> centroids;
  std::vector<Matrix> cov_root;  // Sigma_c = cov_root * cov_root^T
  std::vector<std::vector<Distortion>> distortions;  // empty for Gaussian clusters

  std::size_t clusters() const { return centroids.size(); }

  double average_marginal_sd() const {
    double s = 0.0;
    std::size_t cnt = 0;
    for (const auto& L : cov_root) {
      const Vector var = (L * L.transpose()).diagonal();
      for (Eigen::Index m = 0; m < var.size(); ++m, ++cnt) s += std::sqrt(var[m]);
    }
    return cnt ? s / static_cast<double>(cnt) : 0.0;
  }

  double max_marginal_sd() const {
    double s = 0.0;
    for (const auto& L : cov_root) s = std::max(s, std::sqrt((L * L.transpose()).diagonal().maxCoeff()));
    return s;
  }
};

namespace detail {

inline Matrix random_rotation(std::size_t p, Rng& rng) {
  Matrix G(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < G.cols(); ++j)
    for (Eigen::Index i = 0; i < G.rows(); ++i) G(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < Q.cols(); ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

inline double min_pairwise_distance(const std::vector<Vector>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) best = std::min(best, (pts[a] - pts[b]).norm());
  return best;
}

inline double apply_distortion(Distortion d, double z) {
  switch (d) {
    case Distortion::identity: return z;
    case Distortion::sinh: return std::sinh(z);
    case Distortion::cube_root: return std::cbrt(z);
    case Distortion::exp_tilt: return std::exp(0.75 * z);
  }
  return z;
}

}  // namespace detail

// Draws covariances, then centroids whose minimum pairwise distance is
// exactly 6 * separation * average marginal sd.
inline ClusterGeometry make_geometry(std::size_t clusters, std::size_t p, double separation, ClusterGenerator gen,
                                     std::uint64_t seed) {
  require(clusters >= 1 && p >= 1, "geometry needs at least one cluster and one covariate");
  Rng rng = make_rng(seed);
  ClusterGeometry g;
  for (std::size_t c = 0; c < clusters; ++c) {
    const Matrix Q = detail::random_rotation(p, rng);
    Vector root_eig(static_cast<Eigen::Index>(p));
    for (Eigen::Index m = 0; m < root_eig.size(); ++m) root_eig[m] = std::sqrt(uniform(rng, kEigenMin, kEigenMax));
    g.cov_root.push_back(Q * root_eig.asDiagonal());
  }
  const double target = kSeparationScale * separation * g.average_marginal_sd();
  double side = std::max(target, 1e-9);
  for (std::size_t c = 0; c < clusters; ++c) {
    Vector mu(static_cast<Eigen::Index>(p));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 1000 == 0) side *= 1.5;
      for (Eigen::Index m = 0; m < mu.size(); ++m) mu[m] = uniform(rng, -0.5 * side, 0.5 * side);
      bool ok = true;
      for (const auto& prev : g.centroids) ok = ok && (prev - mu).norm() >= target;
      if (ok) break;
    }
    g.centroids.push_back(mu);
  }
  if (clusters >= 2) {
    const double dmin = detail::min_pairwise_distance(g.centroids);
    const double scale = dmin > 0.0 ? target / dmin : 0.0;
    for (auto& mu : g.centroids) mu *= scale;
  }
  if (gen == ClusterGenerator::nongaussian) {
    static constexpr Distortion kinds[] = {Distortion::identity, Distortion::sinh, Distortion::cube_root,
                                           Distortion::exp_tilt};
    for (std::size_t c = 0; c < clusters; ++c) {
      std::vector<Distortion> row(p);
      for (auto& d : row) d = kinds[uniform_index(rng, 4)];
      g.distortions.push_back(std::move(row));
    }
  }
  return g;
}

struct ClusterSample {
  Matrix features;
  std::vector<int> labels;
};

// cluster_size points per cluster, cluster-major row order.
inline ClusterSample sample_geometry(const ClusterGeometry& g, std::size_t cluster_size, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const auto p = g.centroids.empty() ? 0 : g.centroids[0].size();
  const auto C = g.clusters();
  ClusterSample s;
  s.features.resize(static_cast<Eigen::Index>(C * cluster_size), p);
  s.labels.resize(C * cluster_size);
  Vector z(p);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < cluster_size; ++i) {
      for (Eigen::Index m = 0; m < p; ++m) z[m] = standard_normal(rng);
      const auto row = static_cast<Eigen::Index>(c * cluster_size + i);
      s.features.row(row) = (g.centroids[c] + g.cov_root[c] * z).transpose();
      s.labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
    }
    if (g.distortions.empty()) continue;
    auto block = s.features.middleRows(static_cast<Eigen::Index>(c * cluster_size), static_cast<Eigen::Index>(cluster_size));
    for (Eigen::Index m = 0; m < p; ++m) {
      const Distortion d = g.distortions[c][static_cast<std::size_t>(m)];
      if (d == Distortion::identity) continue;
      auto col = block.col(m);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(cluster_size - 1));
      if (!(sd > 0.0)) continue;
      Vector t(col.size());
      for (Eigen::Index i = 0; i < col.size(); ++i) t[i] = detail::apply_distortion(d, (col[i] - mean) / sd);
      const double tm = t.mean();
      const double tsd = std::sqrt((t.array() - tm).square().sum() / static_cast<double>(cluster_size - 1));
      if (!(tsd > 0.0)) continue;
      for (Eigen::Index i = 0; i < col.size(); ++i) col[i] = mean + sd * (t[i] - tm) / tsd;
    }
  }
  return s;
}

inline ClusterSample gen_gaussian_clusters(const GenConfig& cfg) {
  cfg.validate();
  const auto g = make_geometry(cfg.n_true_clusters, cfg.p, cfg.separation, ClusterGenerator::gaussian,
                               derive_seed(cfg.seed, 0x6E0ull));
  return sample_geometry(g, cfg.cluster_size, derive_seed(cfg.seed, 0x5A3ull));
}

// Same seed streams as gen_gaussian_clusters; the distortions are drawn
// after the Gaussian geometry, so forcing them to identity reproduces the
// Gaussian sample exactly.
inline ClusterSample gen_nongaussian_clusters(const GenConfig& cfg,
                                              std::optional<Distortion> force = std::nullopt) {
  cfg.validate();
  auto g = make_geometry(cfg.n_true_clusters, cfg.p, cfg.separation, ClusterGenerator::nongaussian,
                         derive_seed(cfg.seed, 0x6E0ull));
  if (force)
    for (auto& row : g.distortions) std::fill(row.begin(), row.end(), *force);
  return sample_geometry(g, cfg.cluster_size, derive_seed(cfg.seed, 0x5A3ull));
}

// Fills defaults that depend on the drawn coefficients: quadratic indices
// and interaction pairs over the active covariates.
inline OutcomeModel resolve_terms(OutcomeModel model, const CoefficientSet& cs) {
  const auto act = cs.active();
  if (model.kind == OutcomeKind::quadratic && model.quadratic_indices.empty()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(2, act.size()); ++i) model.quadratic_indices.push_back(act[i]);
  }
  if (model.kind == OutcomeKind::interaction && model.interaction_pairs.empty()) {
    for (std::size_t i = 0; i + 1 < act.size() && i < 4; i += 2) model.interaction_pairs.emplace_back(act[i], act[i + 1]);
  }
  for (int q : model.quadratic_indices)
    require(q >= 0 && q < cs.base.size() && cs.base[q] != 0.0, "quadratic index must reference an active covariate");
  for (auto [a, b] : model.interaction_pairs)
    require(a >= 0 && b >= 0 && a < cs.base.size() && b < cs.base.size() && cs.base[a] != 0.0 && cs.base[b] != 0.0,
            "interaction pair must reference active covariates");
  return model;
}

// Draws the coefficients of the quadratic / interaction terms.
inline void draw_extra_terms(CoefficientSet& cs, const OutcomeModel& model, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  cs.quadratic.resize(static_cast<Eigen::Index>(model.quadratic_indices.size()));
  for (Eigen::Index i = 0; i < cs.quadratic.size(); ++i) cs.quadratic[i] = draw_signed_coefficient(rng);
  cs.interaction.resize(static_cast<Eigen::Index>(model.interaction_pairs.size()));
  for (Eigen::Index i = 0; i < cs.interaction.size(); ++i) cs.interaction[i] = draw_signed_coefficient(rng);
}

// Linear score per_cluster[label] . x, scaled by coef_norm_scale.
inline Vector linear_scores(const Matrix& X, const std::vector<int>& labels, const CoefficientSet& cs,
                            double scale) {
  Vector s(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= cs.per_cluster.rows())
      throw UsageError("label " + std::to_string(c) + " has no coefficient row");
    s[i] = scale * cs.per_cluster.row(c).dot(X.row(i));
  }
  return s;
}

// E[y | x] for every model except binary_step, where it is the 0/1 step.
inline Vector noiseless_outcome(const Matrix& X, const std::vector<int>& labels, const CoefficientSet& cs,
                                const OutcomeModel& model) {
  require(static_cast<std::size_t>(X.rows()) == labels.size(), "labels length does not match rows");
  require(cs.base.size() == X.cols(), "coefficient length does not match covariates");
  const double scale = model.coef_norm_scale;
  Vector y = linear_scores(X, labels, cs, scale);
  switch (model.kind) {
    case OutcomeKind::linear:
      break;
    case OutcomeKind::binary_step: {
      double cut;
      if (model.step_cutoff) {
        cut = *model.step_cutoff;
      } else {
        std::vector<double> v(y.data(), y.data() + y.size());
        std::sort(v.begin(), v.end());
        const std::size_t h = v.size() / 2;
        cut = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
      }
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = y[i] > cut ? 1.0 : 0.0;
      break;
    }
    case OutcomeKind::quadratic:
      require(cs.quadratic.size() == static_cast<Eigen::Index>(model.quadratic_indices.size()),
              "quadratic coefficients missing");
      for (std::size_t q = 0; q < model.quadratic_indices.size(); ++q) {
        const auto m = model.quadratic_indices[q];
        y += (scale * cs.quadratic[static_cast<Eigen::Index>(q)]) * X.col(m).array().square().matrix();
      }
      break;
    case OutcomeKind::interaction:
      require(cs.interaction.size() == static_cast<Eigen::Index>(model.interaction_pairs.size()),
              "interaction coefficients missing");
      for (std::size_t q = 0; q < model.interaction_pairs.size(); ++q) {
        const auto [a, b] = model.interaction_pairs[q];
        y += (scale * cs.interaction[static_cast<Eigen::Index>(q)]) * (X.col(a).array() * X.col(b).array()).matrix();
      }
      break;
    case OutcomeKind::multistudy_nonlinear:
      require(X.cols() >= 2, "the multi-study outcome needs at least two covariates");
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double x1 = X(i, 0), x2 = X(i, 1);
        y[i] += 4.4 * x1 - 1.8 * x2 + 10.0 * std::sin(10.0 * M_PI * x1);
      }
      break;
  }
  return y;
}

// Noiseless outcome plus N(0, noise_sd^2); binary_step has no additive noise.
inline Vector gen_outcome(const Matrix& X, const std::vector<int>& labels, const CoefficientSet& cs,
                          const OutcomeModel& model, std::uint64_t seed) {
  require(model.noise_sd >= 0.0, "noise_sd must be >= 0");
  require(model.coef_norm_scale > 0.0, "coef_norm_scale must be > 0");
  Vector y = noiseless_outcome(X, labels, cs, model);
  if (model.kind == OutcomeKind::binary_step || model.noise_sd == 0.0) return y;
  Rng rng = make_rng(seed);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += model.noise_sd * standard_normal(rng);
  return y;
}

// Everything drawn for one simulated scenario: the datasets plus the truth
// needed to evaluate against the regression function.
struct Scenario {
  TrainTestSplit split;
  CoefficientSet coefficients;  // per_cluster rows belong to the training clusters
  OutcomeModel model;           // with defaults resolved (terms, cutoff)
  ClusterGeometry train_geometry;
  std::vector<ClusterGeometry> test_geometries;
};

inline Dataset make_dataset(ClusterSample s, Vector y) {
  Dataset d;
  d.features = std::move(s.features);
  d.outcome = std::move(y);
  d.true_labels = std::move(s.labels);
  return d;
}

// One training set with n_true_clusters clusters (per-cluster perturbed
// coefficients) and n_test_sets test sets of test_clusters fresh clusters
// each, evaluated with the unperturbed base coefficients.
inline Scenario gen_scenario(const GenConfig& cfg, const OutcomeModel& model_in) {
  cfg.validate();
  require(model_in.noise_sd >= 0.0, "noise_sd must be >= 0");
  require(model_in.coef_norm_scale > 0.0, "coef_norm_scale must be > 0");
  const auto seed = cfg.seed;
  Scenario sc;
  CoefficientSet base = draw_coefficients(cfg.p, cfg.n_active, derive_seed(seed, 0xC0Eull));
  sc.model = resolve_terms(model_in, base);
  draw_extra_terms(base, sc.model, derive_seed(seed, 0xE77ull));
  sc.coefficients = perturb_coefficients(base, cfg.n_true_clusters, cfg.max_perturb, derive_seed(seed, 0x9E7ull));

  sc.train_geometry = make_geometry(cfg.n_true_clusters, cfg.p, cfg.separation, cfg.generator,
                                    derive_seed(seed, 0x6E0ull));
  ClusterSample train = sample_geometry(sc.train_geometry, cfg.cluster_size, derive_seed(seed, 0x5A3ull));
  if (sc.model.kind == OutcomeKind::binary_step && !sc.model.step_cutoff) {
    const Vector s = linear_scores(train.features, train.labels, sc.coefficients, sc.model.coef_norm_scale);
    std::vector<double> v(s.data(), s.data() + s.size());
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    sc.model.step_cutoff = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  }
  Vector y = gen_outcome(train.features, train.labels, sc.coefficients, sc.model, derive_seed(seed, 0x401ull));
  sc.split.train = make_dataset(std::move(train), std::move(y));

  const CoefficientSet test_coef = base.unperturbed(cfg.test_clusters);
  for (std::size_t t = 0; t < cfg.n_test_sets; ++t) {
    sc.test_geometries.push_back(make_geometry(cfg.test_clusters, cfg.p, cfg.separation, cfg.generator,
                                               derive_seed(seed, 0x7E57ull, t, 0x6E0ull)));
    ClusterSample ts = sample_geometry(sc.test_geometries.back(), cfg.cluster_size,
                                       derive_seed(seed, 0x7E57ull, t, 0x5A3ull));
    Vector yt = gen_outcome(ts.features, ts.labels, test_coef, sc.model, derive_seed(seed, 0x7E57ull, t, 0x401ull));
    sc.split.tests.push_back(make_dataset(std::move(ts), std::move(yt)));
  }
  return sc;
}

// Multi-study layout: n_train + n_test studies drawn as clusters of one
// geometry, each with its own perturbed coefficients, then split at random
// into training studies (pooled, labelled 0..n_train-1 in split order) and
// held-out studies (one test set each).
inline Scenario gen_multistudy(const GenConfig& cfg_in, std::size_t n_train, std::size_t n_test,
                               const OutcomeModel& model_in) {
  require(n_train >= 1 && n_test >= 1, "multi-study layout needs at least one training and one test study");
  GenConfig cfg = cfg_in;
  cfg.n_true_clusters = n_train + n_test;
  cfg.validate();
  const auto seed = cfg.seed;
  const std::size_t S = n_train + n_test;
  Scenario sc;
  CoefficientSet base = draw_coefficients(cfg.p, cfg.n_active, derive_seed(seed, 0xC0Eull));
  sc.model = resolve_terms(model_in, base);
  draw_extra_terms(base, sc.model, derive_seed(seed, 0xE77ull));
  sc.coefficients = perturb_coefficients(base, S, cfg.max_perturb, derive_seed(seed, 0x9E7ull));
  sc.train_geometry = make_geometry(S, cfg.p, cfg.separation, cfg.generator, derive_seed(seed, 0x6E0ull));
  ClusterSample all = sample_geometry(sc.train_geometry, cfg.cluster_size, derive_seed(seed, 0x5A3ull));
  const Vector y = gen_outcome(all.features, all.labels, sc.coefficients, sc.model, derive_seed(seed, 0x401ull));

  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(derive_seed(seed, 0x57Dull));
  shuffle(order, rng);
  auto take = [&](std::size_t first, std::size_t count, bool relabel) {
    ClusterSample part;
    part.features.resize(static_cast<Eigen::Index>(count * cfg.cluster_size), all.features.cols());
    part.labels.resize(count * cfg.cluster_size);
    Vector py(static_cast<Eigen::Index>(count * cfg.cluster_size));
    for (std::size_t s = 0; s < count; ++s) {
      const auto study = static_cast<Eigen::Index>(order[first + s] * cfg.cluster_size);
      const auto at = static_cast<Eigen::Index>(s * cfg.cluster_size);
      const auto len = static_cast<Eigen::Index>(cfg.cluster_size);
      part.features.middleRows(at, len) = all.features.middleRows(study, len);
      py.segment(at, len) = y.segment(study, len);
      std::fill_n(part.labels.begin() + at, cfg.cluster_size, relabel ? static_cast<int>(s) : 0);
    }
    return make_dataset(std::move(part), std::move(py));
  };
  sc.split.train = take(0, n_train, true);
  for (std::size_t t = 0; t < n_test; ++t) sc.split.tests.push_back(take(n_train + t, 1, false));
  return sc;
}

}  // namespace ccwf
