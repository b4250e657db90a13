#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace mcausal {

using Eigen::ArrayXd;
using Eigen::ArrayXi;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

inline double expit(double x) {
  // Branch keeps exp() argument nonpositive so large |x| cannot overflow.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

template <typename Derived>
auto expit(const Eigen::ArrayBase<Derived>& x) {
  return x.unaryExpr([](double v) { return expit(v); });
}

template <typename Derived>
auto logit(const Eigen::ArrayBase<Derived>& p) {
  return p.unaryExpr([](double v) { return logit(v); });
}

inline bool is_binary01(double v) { return v == 0.0 || v == 1.0; }

// Linear-interpolation sample quantile (R type 7). `sorted` must be ascending.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t m = sorted.size();
  if (m == 0) return std::numeric_limits<double>::quiet_NaN();
  if (m == 1) return sorted[0];
  const double h = (static_cast<double>(m) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, m - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Seeding and random draws.
//
// All randomized components derive child seeds with splitmix64 so that any
// unit of work (replication, bootstrap resample, imputation) has its own
// stream determined solely by (base seed, indices) — never by thread
// scheduling.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(base ^ 0x51f3c6b28d24a1d5ULL) + splitmix64(stream) +
                    0x1000003ULL * index);
}

// xoshiro256** with explicit algorithms for uniform/normal draws, so results
// are identical across compilers and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x = splitmix64(x);
      s = x;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double bernoulli(double p) { return uniform() < p ? 1.0 : 0.0; }

  // Marsaglia polar method; spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Uniform integer on [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection from the top keeps the draw exactly uniform.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Runs fn(i) for i in [0, count) across up to `threads` workers (0 = one per
// hardware core). Work items must not share mutable state; results should be
// written to per-index slots so the outcome is independent of scheduling.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

int resolve_thread_count(int requested);

}  // namespace mcausal
