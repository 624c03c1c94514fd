#ifndef PHASEKACZMARZ_ANALYSIS_HPP
#define PHASEKACZMARZ_ANALYSIS_HPP

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phasekaczmarz/core.hpp"
#include "phasekaczmarz/io.hpp"
#include "phasekaczmarz/kaczmarz.hpp"
#include "phasekaczmarz/measurements.hpp"
#include "phasekaczmarz/parallel.hpp"

namespace pkz {

// ---------------------------------------------------------------------------
// Closed-form moments of <z,phi> for phi uniform on the unit sphere in R^d.
// ---------------------------------------------------------------------------

/// E <z,phi>^2 = ||z||^2 / d.
inline double second_moment_exact(const Vector& z, Index d) {
  if (d < 1) throw std::invalid_argument("second_moment_exact: d must be >= 1");
  if (z.size() != d) throw std::invalid_argument("second_moment_exact: dimension mismatch");
  return z.squaredNorm() / static_cast<double>(d);
}

/// E <z,phi>^4 = 3 ||z||^4 / (d (d+2)).
inline double fourth_moment_exact(const Vector& z, Index d) {
  if (d < 1) throw std::invalid_argument("fourth_moment_exact: d must be >= 1");
  if (z.size() != d) throw std::invalid_argument("fourth_moment_exact: dimension mismatch");
  const double sq = z.squaredNorm();
  const double dd = static_cast<double>(d);
  return 3.0 * sq * sq / (dd * (dd + 2.0));
}

/// P{ sigma(<x,phi>) != sigma(<y,phi>) } = angle(x,y) / pi.
inline double mismatch_prob_exact(const Vector& x, const Vector& y) {
  return geodesic_frac(x, y);
}

struct MomentEstimate {
  double value = 0.0;
  std::int64_t n_samples = 0;
  double std_error = 0.0;
};

namespace detail {

template <typename Sampler>
inline MomentEstimate monte_carlo_mean(std::int64_t n, Sampler&& sample) {
  if (n < 2) throw std::invalid_argument("moment estimate: need n >= 2 samples");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = sample();
    sum += v;
    sum_sq += v * v;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  double var = (sum_sq - nn * mean * mean) / (nn - 1.0);
  if (var < 0.0) var = 0.0;  // rounding can push a near-zero variance negative
  return MomentEstimate{mean, n, std::sqrt(var / nn)};
}

}  // namespace detail

/// Monte Carlo mean of <z,phi>^2 over n fresh uniform-sphere draws.
inline MomentEstimate estimate_second_moment(const Vector& z, std::int64_t n,
                                             SeededRng& rng) {
  if (z.size() < 1) throw std::invalid_argument("estimate_second_moment: empty z");
  return detail::monte_carlo_mean(n, [&] {
    const Vector phi = sample_unit_sphere(z.size(), rng);
    const double ip = phi.dot(z);
    return ip * ip;
  });
}

/// Monte Carlo mean of <z,phi>^4.
inline MomentEstimate estimate_fourth_moment(const Vector& z, std::int64_t n,
                                             SeededRng& rng) {
  if (z.size() < 1) throw std::invalid_argument("estimate_fourth_moment: empty z");
  return detail::monte_carlo_mean(n, [&] {
    const Vector phi = sample_unit_sphere(z.size(), rng);
    const double ip = phi.dot(z);
    return ip * ip * ip * ip;
  });
}

/// Monte Carlo frequency of sign disagreement between x and y.
inline MomentEstimate estimate_mismatch_prob(const Vector& x, const Vector& y,
                                             std::int64_t n, SeededRng& rng) {
  if (x.size() != y.size())
    throw std::invalid_argument("estimate_mismatch_prob: dimension mismatch");
  if (x.size() < 1) throw std::invalid_argument("estimate_mismatch_prob: empty vectors");
  return detail::monte_carlo_mean(n, [&] {
    const Vector phi = sample_unit_sphere(x.size(), rng);
    return sigma(phi.dot(x)) != sigma(phi.dot(y)) ? 1.0 : 0.0;
  });
}

/// Exact conditional expectation of the post-step squared error given the
/// current iterate: the uniform index draw is enumerated, never sampled.
/// Magnitudes are taken from x itself, |<x,phi_t>|.
inline double expected_onestep_sq_error(const MeasurementSystem& system, const Vector& x,
                                        const Vector& x_k) {
  if (x.size() != system.dim() || x_k.size() != system.dim())
    throw std::invalid_argument("expected_onestep_sq_error: dimension mismatch");
  double acc = 0.0;
  for (Index t = 0; t < system.size(); ++t) {
    const auto phi = system.phi(t);
    const Vector next = phase_rk_step(x_k, phi, std::abs(phi.dot(x)));
    acc += (x - next).squaredNorm();
  }
  return acc / static_cast<double>(system.size());
}

/// x0 = x + abs_err * u with u uniform on the sphere, so that
/// dist_up_to_sign(x, x0) = abs_err exactly (abs_err < ||x|| keeps the
/// negated copy farther away).
inline Vector synthetic_init(const Vector& x, double abs_err, SeededRng& rng) {
  if (x.size() < 1) throw std::invalid_argument("synthetic_init: empty x");
  const double norm = x.norm();
  if (!(abs_err >= 0.0) || !(abs_err < norm))
    throw std::invalid_argument("synthetic_init: need 0 <= abs_err < ||x||");
  const Vector u = sample_unit_sphere(x.size(), rng);
  return x + abs_err * u;
}

// ---------------------------------------------------------------------------
// Drift and hitting-time Monte Carlo.
// ---------------------------------------------------------------------------

struct DriftConfig {
  double delta = 0.1;  // shell radius as a fraction of ||x||: b = delta ||x||
  double eps = 0.3;    // initial error as a fraction of b
  std::int64_t n_trials = 100;
  std::int64_t horizon = 1000;
  std::uint64_t base_seed = 0;
  std::int64_t record_every = 0;  // 0 = auto: max(1, horizon/200)
  int threads = 1;
};

struct DriftReport {
  Index d = 0;
  Index m = 0;
  double delta = 0.0;
  double eps = 0.0;
  double b = 0.0;                  // escape shell radius delta * ||x||
  double rho = 0.0;                // 1 - 1/(4d)
  double initial_sq_error = 0.0;   // shared by construction across trials
  std::int64_t n_trials = 0;
  std::int64_t horizon = 0;
  std::int64_t record_every = 0;
  std::uint64_t base_seed = 0;
  std::int64_t escape_count = 0;   // trials whose error ever exceeded b
  double escape_bound = 0.0;       // rho * (||z0||/b)^2
  std::vector<std::int64_t> ks;
  std::vector<std::int64_t> n_surviving;          // trials with no escape by k
  std::vector<double> surviving_mean_sq_error;    // conditional mean at k
  std::vector<double> surviving_se;               // standard error of that mean
  std::vector<double> theorem_bound;              // exp(-k/(4d)) * ||z0||^2
  // Means <= bound + 3 SE pointwise. The comparison saturates the bound at
  // the double-precision error floor 256 eps^2 ||x||^2: iterates cannot
  // represent squared errors below it, so smaller exact-arithmetic bounds
  // carry no testable content.
  bool decay_ok = false;
};

/// Repeated Phase-mode runs from perturbed starts. Trial i derives its state
/// from child(base_seed, i), runs for `horizon` steps against the exact
/// magnitudes of x, and records its squared-error path; the report aggregates
/// escape frequency and the conditional error decay of surviving trials.
/// Results are identical for every thread count.
inline DriftReport run_drift_experiment(const MeasurementSystem& system, const Vector& x,
                                        const DriftConfig& cfg) {
  if (x.size() != system.dim())
    throw std::invalid_argument("run_drift_experiment: dimension mismatch");
  const double x_norm = x.norm();
  if (x_norm == 0.0) throw std::invalid_argument("run_drift_experiment: x must be nonzero");
  if (!(cfg.delta > 0.0) || !(cfg.eps >= 0.0) || !(cfg.delta * cfg.eps < 1.0))
    throw std::invalid_argument("run_drift_experiment: need delta > 0, eps >= 0, delta*eps < 1");
  if (cfg.n_trials < 1 || cfg.horizon < 1)
    throw std::invalid_argument("run_drift_experiment: n_trials and horizon must be >= 1");

  DriftReport report;
  report.d = system.dim();
  report.m = system.size();
  report.delta = cfg.delta;
  report.eps = cfg.eps;
  report.b = cfg.delta * x_norm;
  report.rho = 1.0 - 1.0 / (4.0 * static_cast<double>(system.dim()));
  report.n_trials = cfg.n_trials;
  report.horizon = cfg.horizon;
  report.record_every =
      cfg.record_every > 0 ? cfg.record_every : std::max<std::int64_t>(1, cfg.horizon / 200);
  report.base_seed = cfg.base_seed;
  const double abs_err = cfg.delta * cfg.eps * x_norm;
  report.initial_sq_error = abs_err * abs_err;
  report.escape_bound = report.rho * cfg.eps * cfg.eps;

  for (std::int64_t k = 0; k <= cfg.horizon; k += report.record_every) report.ks.push_back(k);
  if (report.ks.back() != cfg.horizon) report.ks.push_back(cfg.horizon);
  const std::size_t n_points = report.ks.size();

  const PhaselessObservation obs = observe(system, x);
  const SeededRng base(cfg.base_seed);
  const std::int64_t kNeverExceeded = cfg.horizon + 1;

  std::vector<std::vector<double>> curves(static_cast<std::size_t>(cfg.n_trials));
  std::vector<std::int64_t> first_exceed(static_cast<std::size_t>(cfg.n_trials));
  parallel_for(cfg.n_trials, cfg.threads, [&](std::int64_t i) {
    SeededRng trial_rng = base.child(static_cast<std::uint64_t>(i));
    const Vector x0 = synthetic_init(x, abs_err, trial_rng);
    SolveConfig run_cfg;
    run_cfg.max_steps = cfg.horizon;
    run_cfg.seed = trial_rng.next_u64();
    run_cfg.trace_every = 1;
    const IterationTrace trace = run(system, obs, x0, run_cfg, &x);
    const auto hit = hitting_time(trace, report.b);
    first_exceed[static_cast<std::size_t>(i)] = hit ? *hit : kNeverExceeded;
    std::vector<double>& curve = curves[static_cast<std::size_t>(i)];
    curve.resize(n_points);
    for (std::size_t p = 0; p < n_points; ++p) {
      const std::int64_t k = report.ks[p];
      curve[p] = k == 0 ? *trace.initial_sq_error
                        : trace.steps[static_cast<std::size_t>(k - 1)].sq_error;
    }
  });

  for (std::int64_t i = 0; i < cfg.n_trials; ++i)
    if (first_exceed[static_cast<std::size_t>(i)] <= cfg.horizon) ++report.escape_count;

  report.n_surviving.resize(n_points);
  report.surviving_mean_sq_error.resize(n_points);
  report.surviving_se.resize(n_points);
  report.theorem_bound.resize(n_points);
  report.decay_ok = true;
  for (std::size_t p = 0; p < n_points; ++p) {
    const std::int64_t k = report.ks[p];
    report.theorem_bound[p] =
        std::exp(-static_cast<double>(k) / (4.0 * static_cast<double>(system.dim()))) *
        report.initial_sq_error;
    // Aggregate in trial order: the conditional set at k is every trial whose
    // error never exceeded b up to and including step k.
    std::int64_t n = 0;
    double sum = 0.0;
    for (std::int64_t i = 0; i < cfg.n_trials; ++i)
      if (first_exceed[static_cast<std::size_t>(i)] > k) {
        ++n;
        sum += curves[static_cast<std::size_t>(i)][p];
      }
    report.n_surviving[p] = n;
    if (n == 0) {
      report.surviving_mean_sq_error[p] = 0.0;
      report.surviving_se[p] = 0.0;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double sq_dev = 0.0;
    for (std::int64_t i = 0; i < cfg.n_trials; ++i)
      if (first_exceed[static_cast<std::size_t>(i)] > k) {
        const double dev = curves[static_cast<std::size_t>(i)][p] - mean;
        sq_dev += dev * dev;
      }
    const double se =
        n > 1 ? std::sqrt(sq_dev / (static_cast<double>(n - 1) * static_cast<double>(n))) : 0.0;
    report.surviving_mean_sq_error[p] = mean;
    report.surviving_se[p] = se;
    // Relative 1e-9 slack absorbs rounding at k = 0 where mean == bound; the
    // floor keeps the check meaningful once the bound decays below what the
    // iterate arithmetic can represent.
    const double fp_floor = 256.0 * std::numeric_limits<double>::epsilon() *
                            std::numeric_limits<double>::epsilon() * x_norm * x_norm;
    if (mean > std::max(report.theorem_bound[p], fp_floor) * (1.0 + 1e-9) + 3.0 * se)
      report.decay_ok = false;
  }
  return report;
}

// ---------------------------------------------------------------------------
// One-step contraction sweep over synthetic shells.
// ---------------------------------------------------------------------------

struct SweepRow {
  double radius = 0.0;
  double max_ratio = 0.0;
  double mean_ratio = 0.0;
  std::int64_t n_states = 0;
};

struct ContractionSweep {
  Index d = 0;
  Index m = 0;
  std::uint64_t seed = 0;
  /// How the states were produced; this harness only implements the
  /// uniform-shell surrogate x_k = x - r u, never posterior iterates.
  std::string state_sampling = "uniform_shell";
  std::vector<SweepRow> rows;
};

/// For each radius r, draw n_states states x_k = x - r u on the shell around
/// x and evaluate the exact one-step ratio
///   expected_onestep_sq_error(x, x_k) / ||x - x_k||^2.
/// Does not advance rng; states come from child streams indexed by
/// (radius, state) so every thread count yields the same table.
inline ContractionSweep contraction_sweep(const MeasurementSystem& system, const Vector& x,
                                          const std::vector<double>& radii,
                                          std::int64_t n_states, const SeededRng& rng,
                                          int threads = 1) {
  if (x.size() != system.dim())
    throw std::invalid_argument("contraction_sweep: dimension mismatch");
  if (x.norm() == 0.0) throw std::invalid_argument("contraction_sweep: x must be nonzero");
  if (radii.empty()) throw std::invalid_argument("contraction_sweep: no radii");
  for (double r : radii)
    if (!(r > 0.0)) throw std::invalid_argument("contraction_sweep: radii must be positive");
  if (n_states < 1) throw std::invalid_argument("contraction_sweep: n_states must be >= 1");

  ContractionSweep sweep;
  sweep.d = system.dim();
  sweep.m = system.size();
  sweep.seed = rng.seed();
  for (std::size_t j = 0; j < radii.size(); ++j) {
    const double r = radii[j];
    std::vector<double> ratios(static_cast<std::size_t>(n_states));
    parallel_for(n_states, threads, [&](std::int64_t i) {
      SeededRng state_rng =
          rng.child(static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(n_states) +
                    static_cast<std::uint64_t>(i));
      const Vector u = sample_unit_sphere(system.dim(), state_rng);
      const Vector x_k = x - r * u;
      ratios[static_cast<std::size_t>(i)] =
          expected_onestep_sq_error(system, x, x_k) / (x - x_k).squaredNorm();
    });
    SweepRow row;
    row.radius = r;
    row.n_states = n_states;
    row.max_ratio = ratios[0];
    double sum = 0.0;
    for (double v : ratios) {
      sum += v;
      if (v > row.max_ratio) row.max_ratio = v;
    }
    row.mean_ratio = sum / static_cast<double>(n_states);
    sweep.rows.push_back(row);
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const MomentEstimate& e) {
  j = nlohmann::json{
      {"value", e.value}, {"n_samples", e.n_samples}, {"std_error", e.std_error}};
}

inline void to_json(nlohmann::json& j, const DriftReport& r) {
  j = nlohmann::json{{"d", r.d},
                     {"m", r.m},
                     {"delta", r.delta},
                     {"eps", r.eps},
                     {"b", r.b},
                     {"rho", r.rho},
                     {"initial_sq_error", r.initial_sq_error},
                     {"n_trials", r.n_trials},
                     {"horizon", r.horizon},
                     {"record_every", r.record_every},
                     {"base_seed", r.base_seed},
                     {"escape_count", r.escape_count},
                     {"escape_bound", r.escape_bound},
                     {"k", r.ks},
                     {"n_surviving", r.n_surviving},
                     {"surviving_mean_sq_error", r.surviving_mean_sq_error},
                     {"surviving_se", r.surviving_se},
                     {"theorem_bound", r.theorem_bound},
                     {"decay_ok", r.decay_ok}};
}

inline void from_json(const nlohmann::json& j, DriftReport& r) {
  r.d = j.at("d").get<Index>();
  r.m = j.at("m").get<Index>();
  r.delta = j.at("delta").get<double>();
  r.eps = j.at("eps").get<double>();
  r.b = j.at("b").get<double>();
  r.rho = j.at("rho").get<double>();
  r.initial_sq_error = j.at("initial_sq_error").get<double>();
  r.n_trials = j.at("n_trials").get<std::int64_t>();
  r.horizon = j.at("horizon").get<std::int64_t>();
  r.record_every = j.at("record_every").get<std::int64_t>();
  r.base_seed = j.at("base_seed").get<std::uint64_t>();
  r.escape_count = j.at("escape_count").get<std::int64_t>();
  r.escape_bound = j.at("escape_bound").get<double>();
  r.ks = j.at("k").get<std::vector<std::int64_t>>();
  r.n_surviving = j.at("n_surviving").get<std::vector<std::int64_t>>();
  r.surviving_mean_sq_error = j.at("surviving_mean_sq_error").get<std::vector<double>>();
  r.surviving_se = j.at("surviving_se").get<std::vector<double>>();
  r.theorem_bound = j.at("theorem_bound").get<std::vector<double>>();
  r.decay_ok = j.at("decay_ok").get<bool>();
}

inline void to_json(nlohmann::json& j, const SweepRow& row) {
  j = nlohmann::json{{"radius", row.radius},
                     {"max_ratio", row.max_ratio},
                     {"mean_ratio", row.mean_ratio},
                     {"n_states", row.n_states}};
}

inline void from_json(const nlohmann::json& j, SweepRow& row) {
  row.radius = j.at("radius").get<double>();
  row.max_ratio = j.at("max_ratio").get<double>();
  row.mean_ratio = j.at("mean_ratio").get<double>();
  row.n_states = j.at("n_states").get<std::int64_t>();
}

inline void to_json(nlohmann::json& j, const ContractionSweep& s) {
  j = nlohmann::json{{"d", s.d},
                     {"m", s.m},
                     {"seed", s.seed},
                     {"state_sampling", s.state_sampling},
                     {"rows", s.rows}};
}

inline void from_json(const nlohmann::json& j, ContractionSweep& s) {
  s.d = j.at("d").get<Index>();
  s.m = j.at("m").get<Index>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.state_sampling = j.at("state_sampling").get<std::string>();
  s.rows = j.at("rows").get<std::vector<SweepRow>>();
}

/// Drift curves as CSV: k,surviving_mean_sq_error,theorem_bound,n_surviving.
inline void save_drift_csv(const DriftReport& r, const std::string& path) {
  std::string body = "k,surviving_mean_sq_error,theorem_bound,n_surviving\n";
  for (std::size_t p = 0; p < r.ks.size(); ++p) {
    body += std::to_string(r.ks[p]);
    body += ',';
    body += io::format_double(r.surviving_mean_sq_error[p]);
    body += ',';
    body += io::format_double(r.theorem_bound[p]);
    body += ',';
    body += std::to_string(r.n_surviving[p]);
    body += '\n';
  }
  io::write_file(path, body);
}

/// Sweep table as CSV: radius,max_ratio,mean_ratio,n_states.
inline void save_sweep_csv(const ContractionSweep& s, const std::string& path) {
  std::string body = "radius,max_ratio,mean_ratio,n_states\n";
  for (const SweepRow& row : s.rows) {
    body += io::format_double(row.radius);
    body += ',';
    body += io::format_double(row.max_ratio);
    body += ',';
    body += io::format_double(row.mean_ratio);
    body += ',';
    body += std::to_string(row.n_states);
    body += '\n';
  }
  io::write_file(path, body);
}

}  // namespace pkz

#endif  // PHASEKACZMARZ_ANALYSIS_HPP
