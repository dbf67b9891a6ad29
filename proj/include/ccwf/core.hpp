#pragma once

// Shared vocabulary for the ccwf library: matrix aliases, the error
// hierarchy used by every module, seed derivation and a deterministic
// parallel loop.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace ccwf {

inline constexpr std::string_view kVersion = "1.0.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Errors carry a category so the CLI can map them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or preconditions violated by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unreadable / unwritable files and malformed file contents.
class IoError : public Error {
 public:
  using Error::Error;
};

// Solver failures and non-finite numbers.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unknown keys or unusable values in a key=value config file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a parent seed and a path of tags.
// Every consumer of randomness gets its own stream, so results never depend
// on the order in which work is scheduled.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) {
  std::uint64_t s = mix64(seed);
  ((s = mix64(s ^ mix64(static_cast<std::uint64_t>(tags) + 0x632be59bd9b4e019ULL))), ...);
  return s;
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

// Uniform integer in [0, n). Avoids std::uniform_int_distribution so the
// stream is identical across standard library implementations.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % bound);
}

// Uniform real in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Marsaglia's polar method.
inline double standard_normal(Rng& rng) {
  double u, v, s;
  do {
    u = 2.0 * uniform01(rng) - 1.0;
    v = 2.0 * uniform01(rng) - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
// its own output slot; the first failing index (lowest i) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (i < err_index) {
              err_index = i;
              err = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (err) std::rethrow_exception(err);
}

// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split(std::string_view s, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == delim) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Mean and standard error of the mean.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  if (xs.empty()) return r;
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return r;
}

}  // namespace ccwf
