#ifndef PHASEKACZMARZ_KACZMARZ_HPP
#define PHASEKACZMARZ_KACZMARZ_HPP

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "phasekaczmarz/core.hpp"
#include "phasekaczmarz/io.hpp"
#include "phasekaczmarz/measurements.hpp"

namespace pkz {

enum class SolveMode { kLinear, kPhase };

struct SolveConfig {
  std::int64_t max_steps = 1000;
  std::uint64_t seed = 0;
  /// Early stop once sq_error <= stop_tol. Requires ground truth; unset = off.
  std::optional<double> stop_tol;
  /// Record every trace_every-th step; the last executed step is always kept.
  std::int64_t trace_every = 1;
};

struct StepRecord {
  std::int64_t k;     // step index, 0-based
  Index t;            // measurement index drawn at this step
  double sq_error;    // dist_up_to_sign(x, x_{k+1})^2; NaN without ground truth
  bool mismatch;      // sign disagreement against the truth at this step
};

struct IterationTrace {
  std::vector<StepRecord> steps;
  Vector final_iterate;
  bool has_ground_truth = false;
  std::optional<double> initial_sq_error;  // dist_up_to_sign(x, x_0)^2
  /// Mismatch flags are evaluated against the global sign of the truth that
  /// is closer to x_0; true means -x was used.
  bool truth_negated = false;
  bool stopped_early = false;
  std::int64_t steps_executed = 0;
};

/// One normalized-row Kaczmarz update for a signed measurement y_t:
///   x + (y_t - <x,phi_t>) phi_t.
inline Vector linear_rk_step(const Vector& x_k, const Eigen::Ref<const Vector>& phi_t,
                             double y_t) {
  if (x_k.size() != phi_t.size())
    throw std::invalid_argument("linear_rk_step: dimension mismatch");
  if (!(std::abs(phi_t.norm() - 1.0) <= kUnitNormTol))
    throw std::invalid_argument("linear_rk_step: phi_t is not unit length");
  const double ip = phi_t.dot(x_k);
  return x_k + (y_t - ip) * phi_t;
}

/// Phase-adapting update for a magnitude y_abs_t = |<x,phi_t>|: the current
/// iterate supplies the sign,
///   x + (sigma(<x,phi_t>) y_abs_t - <x,phi_t>) phi_t.
inline Vector phase_rk_step(const Vector& x_k, const Eigen::Ref<const Vector>& phi_t,
                            double y_abs_t) {
  if (x_k.size() != phi_t.size())
    throw std::invalid_argument("phase_rk_step: dimension mismatch");
  if (!(std::abs(phi_t.norm() - 1.0) <= kUnitNormTol))
    throw std::invalid_argument("phase_rk_step: phi_t is not unit length");
  if (!(y_abs_t >= 0.0))
    throw std::invalid_argument("phase_rk_step: magnitude must be nonnegative");
  const double ip = phi_t.dot(x_k);
  return x_k + (sigma(ip) * y_abs_t - ip) * phi_t;
}

/// Run randomized Kaczmarz with i.i.d. uniform index draws from cfg.seed.
/// data holds signed values (Linear) or nonnegative magnitudes (Phase) and
/// must carry the digest of `system`. With ground truth, per-step squared
/// error and sign-mismatch flags are recorded.
inline IterationTrace run(const MeasurementSystem& system, SolveMode mode,
                          const Vector& data, std::uint64_t data_digest,
                          const Vector& x0, const SolveConfig& cfg,
                          const Vector* ground_truth = nullptr) {
  if (data.size() != system.size())
    throw std::invalid_argument("run: data size does not match system size");
  if (x0.size() != system.dim())
    throw std::invalid_argument("run: x0 dimension does not match system");
  if (cfg.max_steps < 1) throw std::invalid_argument("run: max_steps must be >= 1");
  if (cfg.trace_every < 1) throw std::invalid_argument("run: trace_every must be >= 1");
  const std::uint64_t expected = system_digest(system);
  if (data_digest != expected)
    throw DigestMismatchError("run: observation digest " + io::to_hex16(data_digest) +
                              " does not match system digest " + io::to_hex16(expected));
  if (mode == SolveMode::kPhase) {
    for (Index i = 0; i < data.size(); ++i)
      if (!(data[i] >= 0.0))
        throw std::invalid_argument("run: Phase mode requires nonnegative magnitudes");
  }
  if (ground_truth && ground_truth->size() != system.dim())
    throw std::invalid_argument("run: ground truth dimension mismatch");
  if (cfg.stop_tol && !ground_truth)
    throw std::invalid_argument("run: stop_tol requires ground truth");
  if (cfg.stop_tol && !(*cfg.stop_tol >= 0.0))
    throw std::invalid_argument("run: stop_tol must be nonnegative");

  IterationTrace trace;
  trace.has_ground_truth = ground_truth != nullptr;

  Vector truth_aligned;
  if (ground_truth) {
    // Fix the truth sign once, at k = 0, to whichever of +/-x is closer to x0.
    const double to_plus = (*ground_truth - x0).squaredNorm();
    const double to_minus = (*ground_truth + x0).squaredNorm();
    trace.truth_negated = to_minus < to_plus;
    truth_aligned = trace.truth_negated ? Vector(-*ground_truth) : *ground_truth;
    trace.initial_sq_error = sq_dist_up_to_sign(*ground_truth, x0);
  }

  SeededRng rng(cfg.seed);
  Vector x = x0;
  const std::int64_t last = cfg.max_steps - 1;
  for (std::int64_t k = 0; k <= last; ++k) {
    const Index t = static_cast<Index>(rng.uniform_index(system.size()));
    const auto phi = system.phi(t);
    bool mismatch = false;
    if (ground_truth && mode == SolveMode::kPhase)
      mismatch = sigma(phi.dot(truth_aligned)) != sigma(phi.dot(x));
    x = mode == SolveMode::kPhase ? phase_rk_step(x, phi, data[t])
                                  : linear_rk_step(x, phi, data[t]);
    trace.steps_executed = k + 1;

    double sq_error = std::numeric_limits<double>::quiet_NaN();
    if (ground_truth) sq_error = sq_dist_up_to_sign(*ground_truth, x);
    const bool stopping =
        ground_truth && cfg.stop_tol && sq_error <= *cfg.stop_tol;
    if (k % cfg.trace_every == 0 || k == last || stopping)
      trace.steps.push_back(StepRecord{k, t, sq_error, mismatch});
    if (stopping) {
      trace.stopped_early = true;
      break;
    }
  }
  trace.final_iterate = std::move(x);
  return trace;
}

inline IterationTrace run(const MeasurementSystem& system, const PhaselessObservation& obs,
                          const Vector& x0, const SolveConfig& cfg,
                          const Vector* ground_truth = nullptr) {
  return run(system, SolveMode::kPhase, obs.intensities, obs.system_digest, x0, cfg,
             ground_truth);
}

inline IterationTrace run(const MeasurementSystem& system, const SignedMeasurements& obs,
                          const Vector& x0, const SolveConfig& cfg,
                          const Vector* ground_truth = nullptr) {
  return run(system, SolveMode::kLinear, obs.values, obs.system_digest, x0, cfg,
             ground_truth);
}

/// First j >= 0 with sq_error_j > b^2 along the recorded error sequence
/// (j = 0 is the initial error, j = k+1 follows step k). Exact when the trace
/// was recorded with trace_every = 1; with coarser traces it can only miss
/// excursions between recorded steps. Empty result: never exceeded.
inline std::optional<std::int64_t> hitting_time(const IterationTrace& trace, double b) {
  if (!trace.has_ground_truth)
    throw std::invalid_argument("hitting_time: trace has no ground truth errors");
  if (!(b > 0.0)) throw std::invalid_argument("hitting_time: b must be positive");
  const double bsq = b * b;
  if (*trace.initial_sq_error > bsq) return 0;
  for (const StepRecord& s : trace.steps)
    if (s.sq_error > bsq) return s.k + 1;
  return std::nullopt;
}

/// Trace file: "k,t,sq_error,mismatch" header, one row per recorded step.
/// Error columns are left empty when the run had no ground truth.
inline void save_trace_csv(const IterationTrace& trace, const std::string& path) {
  std::string body = "k,t,sq_error,mismatch\n";
  for (const StepRecord& s : trace.steps) {
    body += std::to_string(s.k);
    body += ',';
    body += std::to_string(s.t);
    body += ',';
    if (trace.has_ground_truth) body += io::format_double(s.sq_error);
    body += ',';
    if (trace.has_ground_truth) body += s.mismatch ? '1' : '0';
    body += '\n';
  }
  io::write_file(path, body);
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_KACZMARZ_HPP
