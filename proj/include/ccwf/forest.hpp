#pragma once

// CART regression trees grown on bootstrap samples and averaged into a
// random forest.
//
// Trees are grown on distinct in-bag rows carrying their bootstrap
// multiplicity as an integer weight, which is equivalent to growing on the
// bootstrap sample with duplicates. Each feature keeps the in-bag rows in
// sorted order; a node owns the same contiguous range in every sorted
// array, and splitting a node stably partitions that range in each array.
// Split search is then a single linear scan per candidate feature.

#include "ccwf/core.hpp"

#include <istream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>

namespace ccwf {

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t mtry = 0;  // 0 selects max(p/3, 1)
  std::size_t min_leaf = 5;
  std::size_t max_depth = 0;  // 0 means unlimited
  bool bootstrap = true;
  bool keep_inbag = false;  // retain in-bag rows per tree for out-of-bag prediction
  std::size_t threads = 1;  // execution only; never changes results

  std::size_t resolved_mtry(std::size_t p) const {
    const std::size_t m = mtry == 0 ? std::max<std::size_t>(p / 3, 1) : mtry;
    return std::min(m, p);
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;  // weighted mean of training outcomes in the node
  int left = -1;
  int right = -1;
  std::uint32_t count = 0;  // bootstrap sample size reaching the node

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;       // nodes[0] is the root
  std::vector<std::uint32_t> inbag;  // sorted distinct in-bag rows, only when kept

  template <typename Row>
  double predict(const Row& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& nd = nodes[static_cast<std::size_t>(i)];
      i = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  // Maximum root-to-leaf depth, root at depth 0.
  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, dp] = stack.back();
      stack.pop_back();
      const auto& nd = nodes[static_cast<std::size_t>(i)];
      if (nd.is_leaf()) {
        best = std::max(best, dp);
      } else {
        stack.emplace_back(nd.left, dp + 1);
        stack.emplace_back(nd.right, dp + 1);
      }
    }
    return best;
  }
};

struct Forest {
  std::vector<std::shared_ptr<const Tree>> trees;
  ForestParams params;
  std::size_t train_n = 0;
  std::size_t n_features = 0;

  std::size_t size() const { return trees.size(); }

  // The forest made of the first n trees. Tree t is seeded only by
  // (seed, t), so this equals fitting with n_trees = n directly.
  Forest prefix(std::size_t n) const {
    require(n >= 1 && n <= trees.size(), "forest prefix out of range");
    Forest f = *this;
    f.trees.resize(n);
    f.params.n_trees = n;
    return f;
  }
};

namespace detail {

class TreeGrower {
 public:
  TreeGrower(const Matrix& X, const Vector& y, const ForestParams& params,
             const std::vector<std::vector<std::uint32_t>>& order)
      : X_(X), y_(y), params_(params), order_(order), n_(static_cast<std::size_t>(X.rows())),
        p_(static_cast<std::size_t>(X.cols())), mtry_(params.resolved_mtry(p_)) {}

  Tree grow(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    weight_.assign(n_, 0);
    if (params_.bootstrap) {
      for (std::size_t i = 0; i < n_; ++i) ++weight_[uniform_index(rng, n_)];
    } else {
      std::fill(weight_.begin(), weight_.end(), 1u);
    }
    std::size_t distinct = 0;
    for (auto w : weight_) distinct += w > 0 ? 1 : 0;
    sorted_.assign(p_, std::vector<std::uint32_t>());
    for (std::size_t f = 0; f < p_; ++f) {
      auto& s = sorted_[f];
      s.reserve(distinct);
      for (auto r : order_[f])
        if (weight_[r] > 0) s.push_back(r);
    }
    go_left_.assign(n_, 0);
    buffer_.resize(distinct);
    features_.resize(p_);

    Tree tree;
    if (params_.keep_inbag) {
      for (std::uint32_t r = 0; r < n_; ++r)
        if (weight_[r] > 0) tree.inbag.push_back(r);
    }
    struct Pending {
      int node;
      std::size_t begin, end, depth;
    };
    tree.nodes.emplace_back();
    std::vector<Pending> stack{{0, 0, distinct, 0}};
    while (!stack.empty()) {
      const Pending cur = stack.back();
      stack.pop_back();
      const Split sp = process(tree, cur.node, cur.begin, cur.end, cur.depth, rng);
      if (!sp.valid) continue;
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& nd = tree.nodes[static_cast<std::size_t>(cur.node)];
      nd.feature = static_cast<int>(sp.feature);
      nd.threshold = sp.threshold;
      nd.left = left;
      nd.right = left + 1;
      stack.push_back({left + 1, cur.begin + sp.left_rows, cur.end, cur.depth + 1});
      stack.push_back({left, cur.begin, cur.begin + sp.left_rows, cur.depth + 1});
    }
    return tree;
  }

 private:
  struct Split {
    bool valid = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    std::size_t left_rows = 0;
  };

  // Fills in the node's value and, when a split is worth making, partitions
  // the node's range in every sorted array and returns the split.
  Split process(Tree& tree, int node, std::size_t begin, std::size_t end, std::size_t depth, Rng& rng) {
    const auto& rows = sorted_[0];
    double w_total = 0.0, sum = 0.0;
    double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = rows[i];
      const double w = weight_[r];
      const double yr = y_[static_cast<Eigen::Index>(r)];
      w_total += w;
      sum += w * yr;
      y_lo = std::min(y_lo, yr);
      y_hi = std::max(y_hi, yr);
    }
    auto& nd = tree.nodes[static_cast<std::size_t>(node)];
    nd.value = sum / w_total;
    nd.count = static_cast<std::uint32_t>(w_total);

    Split best;
    const double min_leaf = static_cast<double>(params_.min_leaf);
    if (w_total < 2.0 * min_leaf) return best;
    if (y_lo == y_hi) return best;
    if (params_.max_depth != 0 && depth >= params_.max_depth) return best;

    // Candidate features: mtry drawn without replacement, scanned in
    // ascending index order so ties resolve to the lowest feature.
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    for (std::size_t i = 0; i < mtry_; ++i) std::swap(features_[i], features_[i + uniform_index(rng, p_ - i)]);
    std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));

    // Outcomes are centred on the node mean so the gain is not lost to
    // cancellation when the mean is large relative to the spread.
    const double mean = nd.value;
    double sq = 0.0, sum_c = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = rows[i];
      const double d = y_[static_cast<Eigen::Index>(r)] - mean;
      sq += weight_[r] * d * d;
      sum_c += weight_[r] * d;
    }
    const double parent_score = sum_c * sum_c / w_total;
    const double min_gain = 1e-12 * sq;
    double best_score = parent_score;
    for (std::size_t fi = 0; fi < mtry_; ++fi) {
      const std::size_t f = features_[fi];
      const auto& s = sorted_[f];
      const auto col = X_.col(static_cast<Eigen::Index>(f));
      double wl = 0.0, sl = 0.0;
      for (std::size_t i = begin; i + 1 < end; ++i) {
        const auto r = s[i];
        wl += weight_[r];
        sl += weight_[r] * (y_[static_cast<Eigen::Index>(r)] - mean);
        const double xv = col[static_cast<Eigen::Index>(r)];
        const double xn = col[static_cast<Eigen::Index>(s[i + 1])];
        if (!(xv < xn)) continue;
        const double wr = w_total - wl;
        if (wl < min_leaf) continue;
        if (wr < min_leaf) break;
        const double sr = sum_c - sl;
        const double score = sl * sl / wl + sr * sr / wr;
        if (score > best_score && score - parent_score > min_gain) {
          best_score = score;
          best.valid = true;
          best.feature = f;
          double thr = 0.5 * (xv + xn);
          if (!(thr < xn)) thr = xv;
          best.threshold = thr;
        }
      }
    }
    if (!best.valid) return best;

    const auto col = X_.col(static_cast<Eigen::Index>(best.feature));
    std::size_t n_left = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto r = rows[i];
      const bool left = col[static_cast<Eigen::Index>(r)] <= best.threshold;
      go_left_[r] = left ? 1 : 0;
      n_left += left ? 1 : 0;
    }
    for (std::size_t f = 0; f < p_; ++f) {
      auto& s = sorted_[f];
      std::size_t l = begin, rpos = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto r = s[i];
        if (go_left_[r]) {
          s[l++] = r;
        } else {
          buffer_[rpos++] = r;
        }
      }
      std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(rpos),
                s.begin() + static_cast<std::ptrdiff_t>(l));
    }
    best.left_rows = n_left;
    return best;
  }

  const Matrix& X_;
  const Vector& y_;
  const ForestParams& params_;
  const std::vector<std::vector<std::uint32_t>>& order_;
  std::size_t n_, p_, mtry_;
  std::vector<std::uint32_t> weight_;
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<char> go_left_;
  std::vector<std::uint32_t> buffer_;
  std::vector<std::size_t> features_;
};

}  // namespace detail

inline std::uint64_t tree_seed(std::uint64_t forest_seed, std::size_t t) {
  return derive_seed(forest_seed, 0x7EEull, t);
}

// Fits a random forest. Tree t depends only on (X, y, params, seed, t).
inline Forest fit_forest(const Matrix& X, const Vector& y, const ForestParams& params, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  require(p >= 1, "forest needs at least one feature");
  require(static_cast<std::size_t>(y.size()) == n, "outcome length does not match feature rows");
  require(n >= std::max<std::size_t>(2, params.min_leaf),
          "forest needs n >= max(2, min_leaf) rows, got n=" + std::to_string(n));
  require(params.n_trees >= 1, "n_trees must be >= 1");
  require(params.min_leaf >= 1, "min_leaf must be >= 1");
  require(params.mtry <= p, "mtry must be <= p");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("forest training data contains non-finite values");

  std::vector<std::vector<std::uint32_t>> order(p, std::vector<std::uint32_t>(n));
  for (std::size_t f = 0; f < p; ++f) {
    auto& o = order[f];
    std::iota(o.begin(), o.end(), 0u);
    const auto col = X.col(static_cast<Eigen::Index>(f));
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
      return col[static_cast<Eigen::Index>(a)] < col[static_cast<Eigen::Index>(b)];
    });
  }

  Forest forest;
  forest.params = params;
  forest.train_n = n;
  forest.n_features = p;
  forest.trees.resize(params.n_trees);
  const std::size_t workers = std::max<std::size_t>(1, std::min(params.threads, params.n_trees));
  const std::size_t chunk = (params.n_trees + workers - 1) / workers;
  parallel_for(workers, workers, [&](std::size_t w) {
    detail::TreeGrower grower(X, y, params, order);
    for (std::size_t t = w * chunk; t < std::min(params.n_trees, (w + 1) * chunk); ++t)
      forest.trees[t] = std::make_shared<const Tree>(grower.grow(tree_seed(seed, t)));
  });
  return forest;
}

// Per-row mean of the tree predictions.
inline Vector predict_forest(const Forest& f, const Matrix& X) {
  require(static_cast<std::size_t>(X.cols()) == f.n_features,
          "prediction matrix has " + std::to_string(X.cols()) + " columns, forest expects " +
              std::to_string(f.n_features));
  const auto n = X.rows();
  Vector out(n);
  std::vector<double> row(f.n_features);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < f.n_features; ++m) row[m] = X(i, static_cast<Eigen::Index>(m));
    double s = 0.0;
    for (const auto& t : f.trees) s += t->predict(row);
    out[i] = s / static_cast<double>(f.trees.size());
  }
  return out;
}

// Out-of-bag prediction for every row of the training matrix. Rows that are
// in every tree's bag fall back to the full-forest prediction.
inline Vector predict_forest_oob(const Forest& f, const Matrix& X_train) {
  require(static_cast<std::size_t>(X_train.rows()) == f.train_n, "out-of-bag prediction needs the training matrix");
  if (!f.params.bootstrap) return predict_forest(f, X_train);
  require(f.params.keep_inbag, "forest was fit without keep_inbag");
  const auto n = X_train.rows();
  Vector out(n);
  std::vector<double> row(f.n_features);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < f.n_features; ++m) row[m] = X_train(i, static_cast<Eigen::Index>(m));
    double s = 0.0, s_all = 0.0;
    std::size_t cnt = 0;
    for (const auto& t : f.trees) {
      const double v = t->predict(row);
      s_all += v;
      if (!std::binary_search(t->inbag.begin(), t->inbag.end(), static_cast<std::uint32_t>(i))) {
        s += v;
        ++cnt;
      }
    }
    out[i] = cnt > 0 ? s / static_cast<double>(cnt) : s_all / static_cast<double>(f.trees.size());
  }
  return out;
}

inline double mean_tree_depth(const Forest& f) {
  if (f.trees.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : f.trees) s += static_cast<double>(t->depth());
  return s / static_cast<double>(f.trees.size());
}

// Portable text format:
//   forest <n_trees> <n_features> <train_n> <mtry> <min_leaf> <max_depth> <bootstrap>
//   tree <index> <node_count>
//   <node-id> leaf -1 0 <value> -1 -1 <count>
//   <node-id> split <feature> <threshold> <value> <left> <right> <count>
inline void write_forest(std::ostream& out, const Forest& f) {
  out << "forest " << f.trees.size() << ' ' << f.n_features << ' ' << f.train_n << ' ' << f.params.mtry << ' '
      << f.params.min_leaf << ' ' << f.params.max_depth << ' ' << (f.params.bootstrap ? 1 : 0) << '\n';
  for (std::size_t t = 0; t < f.trees.size(); ++t) {
    const auto& nodes = f.trees[t]->nodes;
    out << "tree " << t << ' ' << nodes.size() << '\n';
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& nd = nodes[i];
      if (nd.is_leaf()) {
        out << i << " leaf -1 0 " << format_double(nd.value) << " -1 -1 " << nd.count << '\n';
      } else {
        out << i << " split " << nd.feature << ' ' << format_double(nd.threshold) << ' ' << format_double(nd.value)
            << ' ' << nd.left << ' ' << nd.right << ' ' << nd.count << '\n';
      }
    }
  }
}

inline Forest read_forest(std::istream& in) {
  auto fail = [](const std::string& what) -> Forest { throw IoError("malformed forest: " + what); };
  std::string tag;
  Forest f;
  std::size_t n_trees = 0;
  int bootstrap = 1;
  if (!(in >> tag) || tag != "forest") return fail("expected 'forest' header");
  if (!(in >> n_trees >> f.n_features >> f.train_n >> f.params.mtry >> f.params.min_leaf >> f.params.max_depth >>
        bootstrap))
    return fail("bad header fields");
  f.params.n_trees = n_trees;
  f.params.bootstrap = bootstrap != 0;
  for (std::size_t t = 0; t < n_trees; ++t) {
    std::size_t idx = 0, count = 0;
    if (!(in >> tag >> idx >> count) || tag != "tree" || idx != t) return fail("expected 'tree " + std::to_string(t) + "'");
    auto tree = std::make_shared<Tree>();
    tree->nodes.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t id = 0;
      std::string kind, thr, val;
      TreeNode nd;
      if (!(in >> id >> kind >> nd.feature >> thr >> val >> nd.left >> nd.right >> nd.count) || id != i)
        return fail("bad node line in tree " + std::to_string(t));
      if (!parse_double(thr, nd.threshold) || !parse_double(val, nd.value)) return fail("bad number in tree " + std::to_string(t));
      if (kind == "leaf") {
        nd.feature = -1;
      } else if (kind != "split" || nd.feature < 0 || static_cast<std::size_t>(nd.feature) >= f.n_features ||
                 nd.left <= static_cast<int>(i) || nd.right <= static_cast<int>(i) ||
                 static_cast<std::size_t>(std::max(nd.left, nd.right)) >= count) {
        return fail("bad split node in tree " + std::to_string(t));
      }
      tree->nodes[i] = nd;
    }
    if (count == 0) return fail("empty tree");
    f.trees.push_back(std::move(tree));
  }
  return f;
}

}  // namespace ccwf
