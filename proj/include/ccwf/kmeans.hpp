#pragma once

// Lloyd's k-means with k-means++ seeding and restarts, silhouette scoring
// and silhouette-based choice of k.

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"

#include <numeric>

namespace ccwf {

struct KMeansOptions {
  std::size_t n_init = 10;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  std::size_t threads = 1;
};

struct KMeansModel {
  Matrix centroids;  // k x p
  PartitionAssignment assignment;
  double inertia = 0.0;
  std::size_t iterations_run = 0;
  std::vector<double> inertia_trace;  // inertia after every assignment step of the kept restart

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double sq_dist(const double* a, const double* b, Eigen::Index p) {
  double s = 0.0;
  for (Eigen::Index m = 0; m < p; ++m) {
    const double d = a[m] - b[m];
    s += d * d;
  }
  return s;
}

// Nearest-centroid assignment with Elkan bounds. A centroid is skipped only
// when the bounds prove it strictly farther than the current one, so labels
// always equal the exact nearest centroid with ties going to the lowest index.
class Assigner {
 public:
  Assigner(const RowMatrix& X, std::size_t k)
      : X_(X),
        k_(k),
        upper_(static_cast<std::size_t>(X.rows()), std::numeric_limits<double>::infinity()),
        lower_(static_cast<std::size_t>(X.rows()) * k, 0.0) {}

  void invalidate() {
    std::fill(upper_.begin(), upper_.end(), std::numeric_limits<double>::infinity());
    std::fill(lower_.begin(), lower_.end(), 0.0);
  }

  // Call after centroids move from old_c to C; labels must be the last result.
  void shift(const RowMatrix& old_c, const RowMatrix& C, const std::vector<int>& labels) {
    std::vector<double> delta(k_);
    for (std::size_t j = 0; j < k_; ++j)
      delta[j] = std::sqrt(sq_dist(old_c.row(static_cast<Eigen::Index>(j)).data(),
                                   C.row(static_cast<Eigen::Index>(j)).data(), C.cols()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      upper_[i] += delta[static_cast<std::size_t>(labels[i])];
      double* l = &lower_[i * k_];
      for (std::size_t j = 0; j < k_; ++j) l[j] = std::max(0.0, l[j] - delta[j]);
    }
  }

  double run(const RowMatrix& C, std::vector<int>& labels, std::vector<double>& dist) {
    const auto n = static_cast<std::size_t>(X_.rows());
    const auto p = X_.cols();
    const bool fresh = labels.size() != n;
    labels.resize(n, 0);
    dist.resize(n);
    std::vector<double> half(k_ * k_, 0.0), s(k_, std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < k_; ++j)
      for (std::size_t m = j + 1; m < k_; ++m) {
        const double d = 0.5 * std::sqrt(sq_dist(C.row(static_cast<Eigen::Index>(j)).data(),
                                                 C.row(static_cast<Eigen::Index>(m)).data(), p));
        half[j * k_ + m] = half[m * k_ + j] = d;
        s[j] = std::min(s[j], d);
        s[m] = std::min(s[m], d);
      }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = X_.row(static_cast<Eigen::Index>(i)).data();
      double* l = &lower_[i * k_];
      auto a = static_cast<std::size_t>(labels[i]);
      if (fresh) a = 0;
      double best = -1.0;  // exact squared distance to centroid a, once known
      auto exact = [&] {
        if (best < 0.0) {
          best = sq_dist(x, C.row(static_cast<Eigen::Index>(a)).data(), p);
          upper_[i] = std::sqrt(best);
          l[a] = upper_[i];
        }
      };
      if (!safely_below(upper_[i], s[a])) {
        for (std::size_t j = 0; j < k_; ++j) {
          if (j == a) continue;
          if (safely_below(upper_[i], l[j]) || safely_below(upper_[i], half[a * k_ + j])) continue;
          exact();
          if (safely_below(upper_[i], l[j]) || safely_below(upper_[i], half[a * k_ + j])) continue;
          const double d = sq_dist(x, C.row(static_cast<Eigen::Index>(j)).data(), p);
          l[j] = std::sqrt(d);
          if (d < best || (d == best && j < a)) {
            a = j;
            best = d;
            upper_[i] = l[j];
          }
        }
      }
      exact();
      labels[i] = static_cast<int>(a);
      dist[i] = best;
      inertia += best;
    }
    return inertia;
  }

 private:
  static bool safely_below(double u, double bound) { return u + 1e-9 * (u + bound) + 1e-300 < bound; }

  const RowMatrix& X_;
  std::size_t k_;
  std::vector<double> upper_, lower_;
};

inline RowMatrix kmeanspp_init(const RowMatrix& X, std::size_t k, Rng& rng) {
  const auto n = X.rows(), p = X.cols();
  RowMatrix C(static_cast<Eigen::Index>(k), p);
  C.row(0) = X.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(X.row(i).data(), C.row(0).data(), p);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = static_cast<std::size_t>(n) - 1;
      for (std::size_t i = 0; i < d2.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(rng, static_cast<std::size_t>(n));
    }
    C.row(static_cast<Eigen::Index>(c)) = X.row(static_cast<Eigen::Index>(pick));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = sq_dist(X.row(i).data(), C.row(static_cast<Eigen::Index>(c)).data(), p);
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
    }
  }
  return C;
}

// Number of distinct rows, counting stops at cap.
inline std::size_t distinct_rows(const RowMatrix& X, std::size_t cap) {
  const auto p = X.cols();
  std::vector<std::size_t> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto row = [&](std::size_t i) { return X.row(static_cast<Eigen::Index>(i)).data(); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(row(a), row(a) + p, row(b), row(b) + p);
  });
  std::size_t count = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size() && count < cap; ++i)
    if (!std::equal(row(order[i]), row(order[i]) + p, row(order[i - 1]))) ++count;
  return count;
}

struct LloydResult {
  RowMatrix centroids;
  std::vector<int> labels;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;
};

inline LloydResult lloyd(const RowMatrix& X, std::size_t k, std::uint64_t seed, const KMeansOptions& opt) {
  const auto n = X.rows(), p = X.cols();
  Rng rng = make_rng(seed);
  LloydResult res;
  res.centroids = kmeanspp_init(X, k, rng);
  Assigner assigner(X, k);
  std::vector<double> dist;
  std::vector<std::size_t> counts(k);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1;; ++it) {
    double inertia = assigner.run(res.centroids, res.labels, dist);
    // Empty-cluster repair: move the point farthest from its centroid onto
    // the empty cluster, then reassign.
    for (std::size_t guard = 0; guard < k; ++guard) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int l : res.labels) ++counts[static_cast<std::size_t>(l)];
      auto empty = std::find(counts.begin(), counts.end(), std::size_t{0});
      if (empty == counts.end()) break;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < res.labels.size(); ++i) {
        if (counts[static_cast<std::size_t>(res.labels[i])] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      res.centroids.row(empty - counts.begin()) = X.row(static_cast<Eigen::Index>(far));
      assigner.invalidate();
      inertia = assigner.run(res.centroids, res.labels, dist);
      prev = std::numeric_limits<double>::infinity();
    }
    res.trace.push_back(inertia);
    res.inertia = inertia;
    res.iterations = it;
    if (prev - inertia < opt.tol * inertia || it >= opt.max_iter) break;
    prev = inertia;
    RowMatrix sums = RowMatrix::Zero(static_cast<Eigen::Index>(k), p);
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto l = static_cast<std::size_t>(res.labels[static_cast<std::size_t>(i)]);
      sums.row(static_cast<Eigen::Index>(l)) += X.row(i);
      ++counts[l];
    }
    const RowMatrix old = res.centroids;
    for (std::size_t j = 0; j < k; ++j)
      res.centroids.row(static_cast<Eigen::Index>(j)) = sums.row(static_cast<Eigen::Index>(j)) / static_cast<double>(counts[j]);
    assigner.shift(old, res.centroids, res.labels);
  }
  return res;
}

}  // namespace detail

// Best-inertia model over opt.n_init k-means++ restarts. Restart r is seeded
// by (seed, r) and ties go to the lowest restart, so the result does not
// depend on opt.threads.
inline KMeansModel fit_kmeans(const Matrix& X, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(X.rows());
  require(k >= 1, "k-means needs k >= 1");
  require(k <= n, "k-means needs k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  require(opt.n_init >= 1 && opt.max_iter >= 1, "k-means needs n_init >= 1 and max_iter >= 1");
  if (!X.allFinite()) throw NumericError("k-means input contains non-finite values");
  const detail::RowMatrix Xr = X;
  if (detail::distinct_rows(Xr, k) < k)
    throw NumericError("k-means needs at least k=" + std::to_string(k) + " distinct rows");
  std::vector<detail::LloydResult> runs(opt.n_init);
  parallel_for(opt.n_init, opt.threads,
               [&](std::size_t r) { runs[r] = detail::lloyd(Xr, k, derive_seed(seed, 0x4B4Dull, r), opt); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  KMeansModel m;
  m.centroids = runs[best].centroids;
  m.assignment.labels = std::move(runs[best].labels);
  m.assignment.k = k;
  m.inertia = runs[best].inertia;
  m.iterations_run = runs[best].iterations;
  m.inertia_trace = std::move(runs[best].trace);
  return m;
}

// Maps each row to its nearest centroid, lowest index on ties. For new data
// some partitions may receive no rows.
inline PartitionAssignment assign(const KMeansModel& m, const Matrix& X) {
  require(X.cols() == m.centroids.cols(), "assign: matrix has " + std::to_string(X.cols()) +
                                              " columns, model expects " + std::to_string(m.centroids.cols()));
  PartitionAssignment a;
  a.k = m.k();
  a.labels.resize(static_cast<std::size_t>(X.rows()));
  const auto p = X.cols();
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index j = 0; j < m.centroids.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < p; ++c) {
        const double d = X(i, c) - m.centroids(j, c);
        s += d * d;
      }
      if (s < best) {
        best = s;
        arg = static_cast<int>(j);
      }
    }
    a.labels[static_cast<std::size_t>(i)] = arg;
  }
  return a;
}

namespace detail {

// Pairwise Euclidean distances (not squared), symmetric.
inline Matrix pairwise_distances(const Matrix& X) {
  const RowMatrix Xr = X;
  const auto n = Xr.rows(), p = Xr.cols();
  Matrix D(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    D(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = std::sqrt(sq_dist(Xr.row(i).data(), Xr.row(j).data(), p));
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

inline double silhouette_from_distances(const Matrix& D, const std::vector<int>& labels, std::size_t k) {
  const auto n = D.rows();
  std::vector<std::size_t> size(k, 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  std::vector<double> acc(k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    if (size[own] <= 1) continue;  // singletons contribute 0
    std::fill(acc.begin(), acc.end(), 0.0);
    const double* col = D.col(i).data();
    for (Eigen::Index j = 0; j < n; ++j) acc[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += col[j];
    const double a = acc[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && size[c] > 0) b = std::min(b, acc[c] / static_cast<double>(size[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

inline constexpr std::size_t kSilhouetteMaxRows = 5000;

// Row subset used for silhouette scoring: all rows, or a uniform sample of
// kSilhouetteMaxRows when there are more.
inline std::vector<std::size_t> silhouette_rows(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= kSilhouetteMaxRows) return idx;
  Rng rng = make_rng(derive_seed(seed, 0x5117ull));
  shuffle(idx, rng);
  idx.resize(kSilhouetteMaxRows);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Matrix take_rows(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace detail

// Mean silhouette width in [-1, 1]. Rows beyond 5000 are subsampled
// (seeded) for scoring only.
inline double silhouette_score(const Matrix& X, const PartitionAssignment& a, std::uint64_t seed = 0) {
  require(a.k >= 2, "silhouette needs k >= 2");
  a.validate(static_cast<std::size_t>(X.rows()));
  const auto rows = detail::silhouette_rows(static_cast<std::size_t>(X.rows()), seed);
  std::vector<int> labels;
  for (auto r : rows) labels.push_back(a.labels[r]);
  const Matrix D = detail::pairwise_distances(rows.size() == static_cast<std::size_t>(X.rows()) ? X : detail::take_rows(X, rows));
  return detail::silhouette_from_distances(D, labels, a.k);
}

inline double silhouette_score(const Dataset& d, const PartitionAssignment& a, std::uint64_t seed = 0) {
  return silhouette_score(d.features, a, seed);
}

struct SelectKResult {
  std::size_t k = 0;
  double silhouette = 0.0;
  std::vector<double> scores;  // scores[i] is the silhouette at k_min + i
  bool low_clusterability = false;  // best silhouette below 0.3
  KMeansModel model;                // k-means fit at the chosen k
};

inline constexpr double kLowClusterability = 0.3;

// Fits k-means for every k in [k_min, k_max] and keeps the k with the largest
// silhouette; ties go to the smaller k.
inline SelectKResult select_k(const Matrix& X, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                              const KMeansOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(X.rows());
  require(k_min >= 2, "select_k needs k_min >= 2");
  require(k_min <= k_max, "select_k needs k_min <= k_max");
  require(k_max <= n, "select_k needs k_max <= n");
  const auto rows = detail::silhouette_rows(n, seed);
  const Matrix D = detail::pairwise_distances(rows.size() == n ? X : detail::take_rows(X, rows));
  SelectKResult res;
  res.silhouette = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    KMeansModel m = fit_kmeans(X, k, derive_seed(seed, 0x5E1Eull, k), opt);
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (auto r : rows) labels.push_back(m.assignment.labels[r]);
    const double s = detail::silhouette_from_distances(D, labels, k);
    res.scores.push_back(s);
    if (s > res.silhouette) {
      res.silhouette = s;
      res.k = k;
      res.model = std::move(m);
    }
  }
  res.low_clusterability = res.silhouette < kLowClusterability;
  return res;
}

inline SelectKResult select_k(const Dataset& d, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                              const KMeansOptions& opt = {}) {
  return select_k(d.features, k_min, k_max, seed, opt);
}

inline KMeansModel fit_kmeans(const Dataset& d, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  return fit_kmeans(d.features, k, seed, opt);
}

// Column-wise z-scores; constant columns are centred only.
inline Matrix standardize_columns(const Matrix& X) {
  Matrix Z = X;
  for (Eigen::Index m = 0; m < X.cols(); ++m) {
    const double mu = X.col(m).mean();
    const double sd = X.rows() > 1 ? std::sqrt((X.col(m).array() - mu).square().sum() / static_cast<double>(X.rows() - 1)) : 0.0;
    Z.col(m).array() -= mu;
    if (sd > 0.0) Z.col(m) /= sd;
  }
  return Z;
}

}  // namespace ccwf
