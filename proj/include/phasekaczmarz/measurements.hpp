#ifndef PHASEKACZMARZ_MEASUREMENTS_HPP
#define PHASEKACZMARZ_MEASUREMENTS_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "phasekaczmarz/core.hpp"
#include "phasekaczmarz/io.hpp"

namespace pkz {

enum class Provenance { kUniformSphere, kGaussianNormalized, kLoaded };

inline std::string provenance_tag(Provenance p) {
  switch (p) {
    case Provenance::kUniformSphere: return "uniform_sphere";
    case Provenance::kGaussianNormalized: return "gaussian_normalized";
    case Provenance::kLoaded: return "loaded";
  }
  throw std::invalid_argument("provenance_tag: unknown provenance");
}

inline Provenance provenance_from_tag(const std::string& tag) {
  if (tag == "uniform_sphere") return Provenance::kUniformSphere;
  if (tag == "gaussian_normalized") return Provenance::kGaussianNormalized;
  if (tag == "loaded") return Provenance::kLoaded;
  throw ParseError("unknown provenance tag '" + tag + "'");
}

/// m unit measurement vectors in R^d, stored as the columns of a d x m
/// matrix so each vector is contiguous in memory.
struct MeasurementSystem {
  Eigen::MatrixXd vectors;
  Provenance provenance = Provenance::kLoaded;
  std::optional<std::uint64_t> seed;

  Index dim() const { return vectors.rows(); }
  Index size() const { return vectors.cols(); }
  auto phi(Index i) const { return vectors.col(i); }
};

// Every vector must be unit length up to this tolerance; enforced when
// loading and assumed by the solvers.
inline constexpr double kUnitNormTol = 1e-10;

inline void validate_system(const MeasurementSystem& system) {
  if (system.dim() < 1 || system.size() < 1)
    throw std::invalid_argument("measurement system must have d >= 1, m >= 1");
  for (Index i = 0; i < system.size(); ++i) {
    const double n = system.phi(i).norm();
    if (!(std::abs(n - 1.0) <= kUnitNormTol))
      throw std::invalid_argument(
          "measurement vector " + std::to_string(i) + " is not unit length");
  }
}

/// Nonnegative magnitudes |<x, phi_i>| bound to the producing system.
struct PhaselessObservation {
  Vector intensities;
  std::uint64_t system_digest = 0;
};

/// Signed measurements <x, phi_i>, used by the linear baseline.
struct SignedMeasurements {
  Vector values;
  std::uint64_t system_digest = 0;
};

/// Digest binding observations to a system: FNV-1a over (d, m, coordinates).
/// Stable across platforms because the bytes hashed are explicit.
inline std::uint64_t system_digest(const MeasurementSystem& system) {
  io::Fnv1a64 h;
  h.feed_u64(static_cast<std::uint64_t>(system.dim()));
  h.feed_u64(static_cast<std::uint64_t>(system.size()));
  for (Index i = 0; i < system.size(); ++i)
    for (Index j = 0; j < system.dim(); ++j) h.feed_double(system.vectors(j, i));
  return h.value();
}

/// Fresh random system. Both distributions draw a standard Gaussian vector
/// and normalize it (the resulting laws coincide); the provenance label
/// records which one was requested.
inline MeasurementSystem generate_system(Index d, Index m, Provenance dist,
                                         SeededRng& rng) {
  if (d < 1 || m < 1)
    throw std::invalid_argument("generate_system: d and m must be >= 1");
  if (dist == Provenance::kLoaded)
    throw std::invalid_argument("generate_system: distribution must be uniform_sphere or gaussian_normalized");
  MeasurementSystem system;
  system.vectors.resize(d, m);
  for (Index i = 0; i < m; ++i) system.vectors.col(i) = sample_unit_sphere(d, rng);
  system.provenance = dist;
  system.seed = rng.seed();
  return system;
}

/// Rescale raw measurement pairs (phi_i, |y_i|) to the unit-vector convention:
/// phi_i/||phi_i|| with intensity |y_i|/||phi_i||. This leaves the underlying
/// linear functional unchanged.
inline std::pair<MeasurementSystem, PhaselessObservation> normalize_observation(
    const std::vector<Vector>& raw_vectors, const std::vector<double>& raw_intensities) {
  if (raw_vectors.empty())
    throw std::invalid_argument("normalize_observation: no measurement vectors");
  if (raw_vectors.size() != raw_intensities.size())
    throw std::invalid_argument("normalize_observation: vector/intensity count mismatch");
  const Index d = raw_vectors.front().size();
  const Index m = static_cast<Index>(raw_vectors.size());
  MeasurementSystem system;
  system.vectors.resize(d, m);
  PhaselessObservation obs;
  obs.intensities.resize(m);
  for (Index i = 0; i < m; ++i) {
    const Vector& phi = raw_vectors[static_cast<std::size_t>(i)];
    if (phi.size() != d)
      throw std::invalid_argument("normalize_observation: inconsistent dimension at index " + std::to_string(i));
    const double norm = phi.norm();
    if (norm == 0.0)
      throw std::invalid_argument("normalize_observation: zero measurement vector at index " + std::to_string(i));
    const double y = raw_intensities[static_cast<std::size_t>(i)];
    if (!(y >= 0.0) || !std::isfinite(y))
      throw std::invalid_argument("normalize_observation: negative or non-finite intensity at index " + std::to_string(i));
    system.vectors.col(i) = phi / norm;
    obs.intensities[i] = y / norm;
  }
  system.provenance = Provenance::kLoaded;
  obs.system_digest = system_digest(system);
  return {std::move(system), std::move(obs)};
}

/// Signed inner products <x, phi_i>. Computed column-by-column with the same
/// dot kernel the solvers use, so magnitudes and solver-side products agree
/// bit for bit.
inline SignedMeasurements observe_signed(const MeasurementSystem& system, const Vector& x) {
  if (x.size() != system.dim())
    throw std::invalid_argument("observe_signed: dimension mismatch");
  SignedMeasurements out;
  out.values.resize(system.size());
  for (Index i = 0; i < system.size(); ++i) out.values[i] = system.phi(i).dot(x);
  out.system_digest = system_digest(system);
  return out;
}

/// Phaseless data |<x, phi_i>|.
inline PhaselessObservation observe(const MeasurementSystem& system, const Vector& x) {
  SignedMeasurements signed_obs = observe_signed(system, x);
  PhaselessObservation out;
  out.intensities = signed_obs.values.cwiseAbs();
  out.system_digest = signed_obs.system_digest;
  return out;
}

// ---------------------------------------------------------------------------
// File formats.
//
// System file: header "d,<d>,m,<m>,provenance,<tag>,seed,<seed-or-NA>",
// then m lines of d comma-separated coordinates at 17 significant digits.
// Observation file: header "m,<m>,digest,<hex>", then m lines of one value.
// ---------------------------------------------------------------------------

inline void save_system(const MeasurementSystem& system, const std::string& path) {
  std::string body;
  body += "d," + std::to_string(system.dim()) + ",m," + std::to_string(system.size()) +
          ",provenance," + provenance_tag(system.provenance) + ",seed," +
          (system.seed ? std::to_string(*system.seed) : std::string("NA")) + "\n";
  for (Index i = 0; i < system.size(); ++i) {
    for (Index j = 0; j < system.dim(); ++j) {
      if (j > 0) body += ',';
      body += io::format_double(system.vectors(j, i));
    }
    body += '\n';
  }
  io::write_file(path, body);
}

inline MeasurementSystem load_system(const std::string& path) {
  const std::vector<std::string> lines = io::read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const auto head = io::split(lines[0], ',');
  if (head.size() != 8 || head[0] != "d" || head[2] != "m" ||
      head[4] != "provenance" || head[6] != "seed")
    throw ParseError(path + ":1: malformed system header");
  const std::uint64_t d = io::parse_u64(head[1], path + ":1");
  const std::uint64_t m = io::parse_u64(head[3], path + ":1");
  if (d < 1 || m < 1) throw ParseError(path + ":1: d and m must be >= 1");
  MeasurementSystem system;
  system.provenance = provenance_from_tag(std::string(head[5]));
  if (head[7] != "NA") system.seed = io::parse_u64(head[7], path + ":1");
  if (lines.size() != m + 1)
    throw ParseError(path + ": expected " + std::to_string(m) + " vector rows, found " +
                     std::to_string(lines.size() - 1));
  system.vectors.resize(static_cast<Index>(d), static_cast<Index>(m));
  for (std::uint64_t i = 0; i < m; ++i) {
    const std::string where = path + ":" + std::to_string(i + 2);
    const auto fields = io::split(lines[i + 1], ',');
    if (fields.size() != d)
      throw ParseError(where + ": expected " + std::to_string(d) + " coordinates, found " +
                       std::to_string(fields.size()));
    for (std::uint64_t j = 0; j < d; ++j)
      system.vectors(static_cast<Index>(j), static_cast<Index>(i)) =
          io::parse_double(fields[j], where);
    const double norm = system.vectors.col(static_cast<Index>(i)).norm();
    if (!(std::abs(norm - 1.0) <= kUnitNormTol))
      throw ParseError(where + ": vector is not unit length (norm " + io::format_double(norm) + ")");
  }
  return system;
}

namespace detail {

inline void save_observation_values(const Vector& values, std::uint64_t digest,
                                    const std::string& path) {
  std::string body;
  body += "m," + std::to_string(values.size()) + ",digest," + io::to_hex16(digest) + "\n";
  for (Index i = 0; i < values.size(); ++i) {
    body += io::format_double(values[i]);
    body += '\n';
  }
  io::write_file(path, body);
}

inline std::pair<Vector, std::uint64_t> load_observation_values(const std::string& path) {
  const std::vector<std::string> lines = io::read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const auto head = io::split(lines[0], ',');
  if (head.size() != 4 || head[0] != "m" || head[2] != "digest")
    throw ParseError(path + ":1: malformed observation header");
  const std::uint64_t m = io::parse_u64(head[1], path + ":1");
  const std::uint64_t digest = io::parse_hex16(head[3], path + ":1");
  if (lines.size() != m + 1)
    throw ParseError(path + ": expected " + std::to_string(m) + " value rows, found " +
                     std::to_string(lines.size() - 1));
  Vector values(static_cast<Index>(m));
  for (std::uint64_t i = 0; i < m; ++i)
    values[static_cast<Index>(i)] =
        io::parse_double(lines[i + 1], path + ":" + std::to_string(i + 2));
  return {std::move(values), digest};
}

}  // namespace detail

inline void save_observation(const PhaselessObservation& obs, const std::string& path) {
  detail::save_observation_values(obs.intensities, obs.system_digest, path);
}

inline void save_observation(const SignedMeasurements& obs, const std::string& path) {
  detail::save_observation_values(obs.values, obs.system_digest, path);
}

inline PhaselessObservation load_phaseless_observation(const std::string& path) {
  auto [values, digest] = detail::load_observation_values(path);
  for (Index i = 0; i < values.size(); ++i)
    if (values[i] < 0.0)
      throw ParseError(path + ":" + std::to_string(i + 2) + ": negative intensity");
  return PhaselessObservation{std::move(values), digest};
}

inline SignedMeasurements load_signed_measurements(const std::string& path) {
  auto [values, digest] = detail::load_observation_values(path);
  return SignedMeasurements{std::move(values), digest};
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_MEASUREMENTS_HPP
