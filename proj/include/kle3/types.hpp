#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kle3 {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Precondition broken by the caller (dimension mismatch, bad parameter).
struct ContractViolation : Error {
  using Error::Error;
};

struct NumericOverflow : Error {
  using Error::Error;
};

/// Rollout exceeded the blow-up bound.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, double t) : Error(what), time(t) {}
  double time;
};

struct SynthesisError : Error {
  SynthesisError(const std::string& what, double residual)
      : Error(what), residual_norm(residual) {}
  double residual_norm;
};

struct DegenerateDistribution : Error {
  using Error::Error;
};

struct UnsupportedDimension : Error {
  using Error::Error;
};

struct AdjointDivergence : Error {
  AdjointDivergence(const std::string& what, double t) : Error(what), time(t) {}
  double time;
};

struct FitError : Error {
  using Error::Error;
};

struct TrainingError : Error {
  TrainingError(const std::string& what, std::size_t batch) : Error(what), batch_index(batch) {}
  std::size_t batch_index;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// FNV-1a, used to derive named child streams from a root seed.
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

/// Hierarchical seeding. Each named stream is a pure function of (root, path),
/// so adding or removing one consumer never shifts another.
class SeedTree {
 public:
  explicit SeedTree(std::uint64_t root) : root_(root) {}

  [[nodiscard]] std::uint64_t root() const { return root_; }

  [[nodiscard]] SeedTree child(std::string_view name) const {
    return SeedTree(mix(root_ ^ fnv1a(name)));
  }
  [[nodiscard]] SeedTree child(std::uint64_t index) const {
    return SeedTree(mix(root_ + 0x9e3779b97f4a7c15ull * (index + 1)));
  }
  [[nodiscard]] Rng stream(std::string_view name) const {
    const std::uint64_t s = mix(root_ ^ fnv1a(name) ^ 0xa0761d6478bd642full);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    return Rng(seq);
  }

 private:
  // splitmix64 finalizer
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t root_;
};

inline Vec standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Mat diag(const std::vector<double>& d) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = d[i];
  return m;
}

}  // namespace kle3
