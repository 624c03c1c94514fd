#ifndef PHASEKACZMARZ_ADMISSIBILITY_HPP
#define PHASEKACZMARZ_ADMISSIBILITY_HPP

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "phasekaczmarz/core.hpp"
#include "phasekaczmarz/measurements.hpp"
#include "phasekaczmarz/parallel.hpp"

namespace pkz {

namespace detail {
inline void validate_delta(double delta) {
  if (!(delta > 0.0) || !(delta < 1.0))
    throw std::invalid_argument("delta must lie in (0,1)");
}
}  // namespace detail

/// Quadratic cap with a linear ramp back to zero:
///   s^2 on [0, 1/delta], (2/delta - s)/delta on (1/delta, 2/delta], 0 beyond.
/// Continuous, Lipschitz with constant 2/delta, and s^2 1{s<=1/delta} <=
/// gamma1(s) <= min(s^2, s/delta).
inline double gamma1(double s, double delta) {
  detail::validate_delta(delta);
  if (!(s >= 0.0)) throw std::invalid_argument("gamma1: s must be nonnegative");
  const double inv = 1.0 / delta;
  if (s <= inv) return s * s;
  if (s <= 2.0 * inv) return (2.0 * inv - s) * inv;
  return 0.0;
}

/// Flattened quadratic: delta*s^2 up to the crossover at s = 1/delta, then s.
/// Equals min(delta*s^2, s); Lipschitz with constant 2.
inline double gamma2(double s, double delta) {
  detail::validate_delta(delta);
  if (!(s >= 0.0)) throw std::invalid_argument("gamma2: s must be nonnegative");
  if (s <= 1.0 / delta) return delta * s * s;
  return s;
}

enum class CheckMethod { kExactEigen, kSampledSup };

struct ConditionResult {
  bool passed = false;
  /// Distance from the observed extreme to the bound; negative when violated.
  double worst_margin = 0.0;
  CheckMethod method = CheckMethod::kSampledSup;
  std::int64_t samples_used = 0;
  /// State(s) achieving the worst margin: one direction, or a pair for the
  /// tessellation check. Ties go to the lowest candidate index.
  std::vector<Vector> witness;
};

/// Bound constants in the four conditions, exposed so they can be tightened
/// or relaxed; defaults are the working values used throughout:
///   second moment in [lower/d, upper/d], truncated fourth moment
///   <= fourth_factor/d^2, truncated tail <= tail_factor*delta/d.
struct AdmissibilityConstants {
  double second_lower = 0.5;
  double second_upper = 1.5;
  double fourth_factor = 4.0;
  double tail_factor = 4.0;
};

struct CertifyBudget {
  std::int64_t n_pairs = 2000;
  std::int64_t n_dirs = 2000;
};

struct AdmissibilityReport {
  double delta = 0.0;
  ConditionResult tessellation;
  ConditionResult second_moment;
  ConditionResult trunc_fourth;
  ConditionResult trunc_tail;
  bool overall = false;
};

/// Fraction of measurement vectors on which x and y disagree in sign,
/// evaluated with sigma(0) = +1.
inline double sign_disagreement_fraction(const MeasurementSystem& system,
                                         const Vector& x, const Vector& y) {
  if (x.size() != system.dim() || y.size() != system.dim())
    throw std::invalid_argument("sign_disagreement_fraction: dimension mismatch");
  const Vector px = system.vectors.transpose() * x;
  const Vector py = system.vectors.transpose() * y;
  Index disagree = 0;
  for (Index i = 0; i < system.size(); ++i)
    if (sigma(px[i]) != sigma(py[i])) ++disagree;
  return static_cast<double>(disagree) / static_cast<double>(system.size());
}

/// |empirical sign-disagreement fraction - normalized angle| for one pair.
inline double tessellation_deviation(const MeasurementSystem& system,
                                     const Vector& x, const Vector& y) {
  return std::abs(sign_disagreement_fraction(system, x, y) - geodesic_frac(x, y));
}

/// Mean of <z^,phi_i>^4 over the system, keeping only terms with
/// <z^,phi_i>^2 <= 1/(delta d); z^ is z normalized.
inline double trunc_fourth_value(const MeasurementSystem& system, double delta,
                                 const Vector& z) {
  detail::validate_delta(delta);
  if (z.size() != system.dim())
    throw std::invalid_argument("trunc_fourth_value: dimension mismatch");
  const double norm = z.norm();
  if (norm == 0.0) throw std::domain_error("trunc_fourth_value: zero direction");
  const Vector unit = z / norm;
  const double threshold = 1.0 / (delta * static_cast<double>(system.dim()));
  double acc = 0.0;
  for (Index i = 0; i < system.size(); ++i) {
    const double ip = system.phi(i).dot(unit);
    const double s = ip * ip;
    if (s <= threshold) acc += s * s;
  }
  return acc / static_cast<double>(system.size());
}

/// Mean of <z^,phi_i>^2 over the terms beyond the truncation level,
/// <z^,phi_i>^2 > 1/(delta d).
inline double trunc_tail_value(const MeasurementSystem& system, double delta,
                               const Vector& z) {
  detail::validate_delta(delta);
  if (z.size() != system.dim())
    throw std::invalid_argument("trunc_tail_value: dimension mismatch");
  const double norm = z.norm();
  if (norm == 0.0) throw std::domain_error("trunc_tail_value: zero direction");
  const Vector unit = z / norm;
  const double threshold = 1.0 / (delta * static_cast<double>(system.dim()));
  double acc = 0.0;
  for (Index i = 0; i < system.size(); ++i) {
    const double ip = system.phi(i).dot(unit);
    const double s = ip * ip;
    if (s > threshold) acc += s;
  }
  return acc / static_cast<double>(system.size());
}

namespace detail {

// Pair j of the tessellation sample. Even j: two independent uniform points.
// Odd j: a perturbed pair y = normalize(x + r u) with r log-uniform in
// [1e-4, 1], which probes small angles where the deviation bound is tight.
inline void tessellation_pair(Index d, const SeededRng& base, std::int64_t j,
                              Vector& x, Vector& y) {
  SeededRng rng = base.child(static_cast<std::uint64_t>(j));
  x = sample_unit_sphere(d, rng);
  if (j % 2 == 0) {
    y = sample_unit_sphere(d, rng);
    return;
  }
  for (;;) {
    const Vector u = sample_unit_sphere(d, rng);
    const double r = std::exp(std::log(1e-4) * (1.0 - rng.uniform01()));
    const Vector shifted = x + r * u;
    const double norm = shifted.norm();
    if (norm > 0.0) {
      y = shifted / norm;
      return;
    }
  }
}

}  // namespace detail

/// Sampled sup of the tessellation deviation over n_pairs pairs; passes when
/// the largest deviation stays strictly below delta. Does not advance rng
/// (pairs come from child streams), so repeated calls are identical.
inline ConditionResult check_tessellation(const MeasurementSystem& system, double delta,
                                          std::int64_t n_pairs, const SeededRng& rng,
                                          int threads = 1) {
  detail::validate_delta(delta);
  if (n_pairs < 1) throw std::invalid_argument("check_tessellation: n_pairs must be >= 1");
  validate_system(system);
  std::vector<double> deviations(static_cast<std::size_t>(n_pairs));
  parallel_for(n_pairs, threads, [&](std::int64_t j) {
    Vector x, y;
    detail::tessellation_pair(system.dim(), rng, j, x, y);
    deviations[static_cast<std::size_t>(j)] = tessellation_deviation(system, x, y);
  });
  std::int64_t worst = 0;
  for (std::int64_t j = 1; j < n_pairs; ++j)
    if (deviations[static_cast<std::size_t>(j)] > deviations[static_cast<std::size_t>(worst)])
      worst = j;
  ConditionResult result;
  result.method = CheckMethod::kSampledSup;
  result.samples_used = n_pairs;
  const double max_dev = deviations[static_cast<std::size_t>(worst)];
  result.worst_margin = delta - max_dev;
  result.passed = max_dev < delta;
  Vector wx, wy;
  detail::tessellation_pair(system.dim(), rng, worst, wx, wy);
  result.witness = {wx, wy};
  return result;
}

/// Exact two-sided bound on z -> mean <z,phi_i>^2 via the extreme eigenvalues
/// of the empirical second-moment matrix; no sampling involved.
inline ConditionResult check_second_moment(const MeasurementSystem& system,
                                           const AdmissibilityConstants& constants = {}) {
  validate_system(system);
  const double d = static_cast<double>(system.dim());
  const Eigen::MatrixXd gram =
      (system.vectors * system.vectors.transpose()) / static_cast<double>(system.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("check_second_moment: eigenvalue solver did not converge");
  const double lo = solver.eigenvalues()(0);
  const double hi = solver.eigenvalues()(system.dim() - 1);
  const double lower_bound = constants.second_lower / d;
  const double upper_bound = constants.second_upper / d;
  ConditionResult result;
  result.method = CheckMethod::kExactEigen;
  result.samples_used = 0;
  const double lo_margin = lo - lower_bound;
  const double hi_margin = upper_bound - hi;
  result.worst_margin = std::min(lo_margin, hi_margin);
  result.passed = lo >= lower_bound && hi <= upper_bound;
  result.witness = {lo_margin <= hi_margin ? Vector(solver.eigenvectors().col(0))
                                           : Vector(solver.eigenvectors().col(system.dim() - 1))};
  return result;
}

namespace detail {

enum class TruncKind { kFourth, kTail };

// Shared machinery for the two sampled-sup checks. Candidates are the m
// system vectors first (adversarially aligned directions), then n_dirs fresh
// uniform draws taken sequentially from one child stream, so growing n_dirs
// extends the candidate set instead of reshuffling it.
inline ConditionResult check_trunc(const MeasurementSystem& system, double delta,
                                   std::int64_t n_dirs, const SeededRng& rng, int threads,
                                   const AdmissibilityConstants& constants, TruncKind kind) {
  validate_delta(delta);
  if (n_dirs < 1) throw std::invalid_argument("truncated check: n_dirs must be >= 1");
  validate_system(system);
  const Index d = system.dim();
  const Index m = system.size();
  SeededRng draw = rng.child(0);
  Eigen::MatrixXd sampled(d, n_dirs);
  for (std::int64_t j = 0; j < n_dirs; ++j)
    sampled.col(static_cast<Index>(j)) = sample_unit_sphere(d, draw);

  const std::int64_t total = m + n_dirs;
  std::vector<double> values(static_cast<std::size_t>(total));
  auto candidate = [&](std::int64_t j) -> Vector {
    return j < m ? Vector(system.phi(static_cast<Index>(j)))
                 : Vector(sampled.col(static_cast<Index>(j - m)));
  };
  parallel_for(total, threads, [&](std::int64_t j) {
    const Vector z = candidate(j);
    values[static_cast<std::size_t>(j)] = kind == TruncKind::kFourth
                                              ? trunc_fourth_value(system, delta, z)
                                              : trunc_tail_value(system, delta, z);
  });
  std::int64_t worst = 0;
  for (std::int64_t j = 1; j < total; ++j)
    if (values[static_cast<std::size_t>(j)] > values[static_cast<std::size_t>(worst)]) worst = j;

  const double dd = static_cast<double>(d);
  const double bound = kind == TruncKind::kFourth ? constants.fourth_factor / (dd * dd)
                                                  : constants.tail_factor * delta / dd;
  ConditionResult result;
  result.method = CheckMethod::kSampledSup;
  result.samples_used = total;
  const double max_value = values[static_cast<std::size_t>(worst)];
  result.worst_margin = bound - max_value;
  result.passed = max_value <= bound;
  Vector w = candidate(worst);
  result.witness = {Vector(w / w.norm())};
  return result;
}

}  // namespace detail

/// Sampled sup of the truncated fourth moment against fourth_factor/d^2.
inline ConditionResult check_trunc_fourth(const MeasurementSystem& system, double delta,
                                          std::int64_t n_dirs, const SeededRng& rng,
                                          int threads = 1,
                                          const AdmissibilityConstants& constants = {}) {
  return detail::check_trunc(system, delta, n_dirs, rng, threads, constants,
                             detail::TruncKind::kFourth);
}

/// Sampled sup of the tail second moment against tail_factor*delta/d.
inline ConditionResult check_trunc_tail(const MeasurementSystem& system, double delta,
                                        std::int64_t n_dirs, const SeededRng& rng,
                                        int threads = 1,
                                        const AdmissibilityConstants& constants = {}) {
  return detail::check_trunc(system, delta, n_dirs, rng, threads, constants,
                             detail::TruncKind::kTail);
}

/// Run all four condition checks on independent child streams and AND the
/// verdicts.
inline AdmissibilityReport certify(const MeasurementSystem& system, double delta,
                                   const CertifyBudget& budget, const SeededRng& rng,
                                   int threads = 1,
                                   const AdmissibilityConstants& constants = {}) {
  AdmissibilityReport report;
  report.delta = delta;
  report.tessellation = check_tessellation(system, delta, budget.n_pairs, rng.child(1), threads);
  report.second_moment = check_second_moment(system, constants);
  report.trunc_fourth = check_trunc_fourth(system, delta, budget.n_dirs, rng.child(2), threads, constants);
  report.trunc_tail = check_trunc_tail(system, delta, budget.n_dirs, rng.child(3), threads, constants);
  report.overall = report.tessellation.passed && report.second_moment.passed &&
                   report.trunc_fourth.passed && report.trunc_tail.passed;
  return report;
}

// ---------------------------------------------------------------------------
// JSON serialization (round-trip safe; doubles use shortest exact form).
// ---------------------------------------------------------------------------

inline std::string check_method_tag(CheckMethod m) {
  return m == CheckMethod::kExactEigen ? "exact_eigen" : "sampled_sup";
}

inline CheckMethod check_method_from_tag(const std::string& tag) {
  if (tag == "exact_eigen") return CheckMethod::kExactEigen;
  if (tag == "sampled_sup") return CheckMethod::kSampledSup;
  throw std::invalid_argument("unknown check method '" + tag + "'");
}

inline void to_json(nlohmann::json& j, const ConditionResult& r) {
  nlohmann::json witness = nlohmann::json::array();
  for (const Vector& w : r.witness) {
    nlohmann::json coords = nlohmann::json::array();
    for (Index i = 0; i < w.size(); ++i) coords.push_back(w[i]);
    witness.push_back(std::move(coords));
  }
  j = nlohmann::json{{"passed", r.passed},
                     {"worst_margin", r.worst_margin},
                     {"method", check_method_tag(r.method)},
                     {"samples_used", r.samples_used},
                     {"witness", std::move(witness)}};
}

inline void from_json(const nlohmann::json& j, ConditionResult& r) {
  r.passed = j.at("passed").get<bool>();
  r.worst_margin = j.at("worst_margin").get<double>();
  r.method = check_method_from_tag(j.at("method").get<std::string>());
  r.samples_used = j.at("samples_used").get<std::int64_t>();
  r.witness.clear();
  for (const auto& coords : j.at("witness")) {
    Vector w(static_cast<Index>(coords.size()));
    for (Index i = 0; i < w.size(); ++i) w[i] = coords[static_cast<std::size_t>(i)].get<double>();
    r.witness.push_back(std::move(w));
  }
}

inline void to_json(nlohmann::json& j, const AdmissibilityReport& r) {
  j = nlohmann::json{{"delta", r.delta},
                     {"tessellation", r.tessellation},
                     {"second_moment", r.second_moment},
                     {"trunc_fourth", r.trunc_fourth},
                     {"trunc_tail", r.trunc_tail},
                     {"overall", r.overall}};
}

inline void from_json(const nlohmann::json& j, AdmissibilityReport& r) {
  r.delta = j.at("delta").get<double>();
  r.tessellation = j.at("tessellation").get<ConditionResult>();
  r.second_moment = j.at("second_moment").get<ConditionResult>();
  r.trunc_fourth = j.at("trunc_fourth").get<ConditionResult>();
  r.trunc_tail = j.at("trunc_tail").get<ConditionResult>();
  r.overall = j.at("overall").get<bool>();
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_ADMISSIBILITY_HPP
