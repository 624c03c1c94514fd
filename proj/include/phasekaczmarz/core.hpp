#ifndef PHASEKACZMARZ_CORE_HPP
#define PHASEKACZMARZ_CORE_HPP

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace pkz {

using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Sign with the convention sigma(0) = +1, so w = sigma(w)*|w| for all finite w.
inline double sigma(double w) { return w >= 0.0 ? 1.0 : -1.0; }

/// min(||u-v||^2, ||u+v||^2). Squared form used in hot loops and traces.
inline double sq_dist_up_to_sign(const Vector& u, const Vector& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("sq_dist_up_to_sign: dimension mismatch");
  const double minus = (u - v).squaredNorm();
  const double plus = (u + v).squaredNorm();
  return minus < plus ? minus : plus;
}

/// Distance up to global sign: min(||u-v||, ||u+v||).
inline double dist_up_to_sign(const Vector& u, const Vector& v) {
  return std::sqrt(sq_dist_up_to_sign(u, v));
}

/// Normalized angle arccos(<x,y>/(||x|| ||y||)) / pi, in [0,1].
/// The cosine is clamped to [-1,1] before arccos. Zero vectors are rejected.
inline double geodesic_frac(const Vector& x, const Vector& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("geodesic_frac: dimension mismatch");
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0)
    throw std::domain_error("geodesic_frac: zero vector");
  double c = x.dot(y) / (nx * ny);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return std::acos(c) / M_PI;
}

namespace detail {

// SplitMix64 finalizer. Used for state expansion and child-seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Deterministic random source. xoshiro256++ with SplitMix64 seeding, so the
/// integer stream depends only on the seed, not on platform or library. All
/// floating-point derivations below use only arithmetic that IEEE-754 pins
/// exactly, plus sqrt/log from libm for the Gaussian path.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result =
        detail::rotl64(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  /// Uniform double in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0,n). Rejection sampling, no modulo bias.
  std::int64_t uniform_index(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t reject_below = (0 - un) % un;  // 2^64 mod n
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x < reject_below);
    return static_cast<std::int64_t>(x % un);
  }

  /// Standard normal via the Marsaglia polar method. One spare is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Independent child stream. A pure function of (seed, i): calling it never
  /// advances this generator, and the same (seed, i) always yields the same
  /// child, which is what makes parallel schedules reproducible.
  SeededRng child(std::uint64_t i) const {
    std::uint64_t sm = seed_ ^ 0xA3EC647659359ACDull;
    std::uint64_t mixed = detail::splitmix64(sm);
    sm = mixed + i;
    return SeededRng(detail::splitmix64(sm));
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Uniform draw from the unit sphere in R^d: d standard normals, normalized.
/// The all-zero draw (probability zero, but possible in principle) is redrawn.
inline Vector sample_unit_sphere(Index d, SeededRng& rng) {
  if (d < 1) throw std::invalid_argument("sample_unit_sphere: d must be >= 1");
  Vector v(d);
  double norm = 0.0;
  do {
    for (Index i = 0; i < d; ++i) v[i] = rng.normal();
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_CORE_HPP
