#pragma once

#include "ccwf/ccwf.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

namespace ccwf::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ccwf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Isotropic Gaussian blobs of `size` points around the given centres.
inline Dataset blobs(const std::vector<Vector>& centres, std::size_t size, double sd, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const auto p = centres.at(0).size();
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(centres.size() * size), p);
  d.outcome = Vector::Zero(d.features.rows());
  std::vector<int> labels;
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (std::size_t i = 0; i < size; ++i) {
      const auto r = static_cast<Eigen::Index>(c * size + i);
      for (Eigen::Index m = 0; m < p; ++m) d.features(r, m) = centres[c][m] + sd * standard_normal(rng);
      labels.push_back(static_cast<int>(c));
    }
  d.true_labels = labels;
  return d;
}

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

inline Matrix random_matrix(Eigen::Index n, Eigen::Index p, Rng& rng) {
  Matrix X(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = standard_normal(rng);
  return X;
}

// Rand index between two labelings of the same rows.
inline double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t agree = 0, pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      ++pairs;
      if ((a[i] == a[j]) == (b[i] == b[j])) ++agree;
    }
  return pairs ? static_cast<double>(agree) / static_cast<double>(pairs) : 1.0;
}

}  // namespace ccwf::test
