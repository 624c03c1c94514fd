// Command-line front-end: generate measurement systems, take observations,
// run the solvers, certify admissibility, and drive the Monte Carlo
// experiments. Every command is deterministic given its flags; rerunning
// with the same arguments reproduces output files byte for byte.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "phasekaczmarz/phasekaczmarz.hpp"

namespace {

using pkz::Index;
using pkz::Vector;

// Child indices reserved for CLI-level derivations. Experiment harnesses use
// child indices counted from zero, so these stay out of their range.
constexpr std::uint64_t kChildSystem = 1'000'000'000;
constexpr std::uint64_t kChildTruth = 1'000'000'001;
constexpr std::uint64_t kChildInit = 1'000'000'002;

// Exit codes: 0 success/pass, 1 usage or I/O error, 2 semantic failure
// (failed certification, digest mismatch).
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitSemantic = 2;

Vector load_vector_file(const std::string& path) {
  const std::vector<std::string> lines = pkz::io::read_lines(path);
  if (lines.empty()) throw pkz::ParseError(path + ": empty vector file");
  Vector v(static_cast<Index>(lines.size()));
  for (std::size_t i = 0; i < lines.size(); ++i)
    v[static_cast<Index>(i)] = pkz::io::parse_double(lines[i], path + ":" + std::to_string(i + 1));
  return v;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto tok : pkz::io::split(text, ','))
    out.push_back(pkz::io::parse_double(tok, what));
  return out;
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  pkz::io::write_file(path, j.dump(2) + "\n");
}

// --config support: a JSON object of flag values merged in as defaults.
// Explicit command-line flags win; config keys fill in only what was not
// given. Implemented by appending synthesized arguments before parsing.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--config") config_path = args[i + 1];
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw pkz::ParseError(config_path + ": cannot open config file");
  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw pkz::ParseError(config_path + ": invalid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw pkz::ParseError(config_path + ": config must be a JSON object");

  std::vector<std::string> merged = args;
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag) given = true;
    if (given) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back(flag);
    } else if (value.is_string()) {
      merged.push_back(flag);
      merged.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      merged.push_back(flag);
      merged.push_back(value.dump());
    } else {
      throw pkz::ParseError(config_path + ": config value for '" + key + "' must be a scalar");
    }
  }
  return merged;
}

struct CommonFlags {
  std::uint64_t seed = 0;
  std::string threads = "auto";
  std::string config;  // consumed by merge_config_args; registered for help

  int thread_count() const { return pkz::parse_thread_count(threads); }
};

void add_common(CLI::App* cmd, CommonFlags& common, bool with_threads) {
  cmd->add_option("--seed", common.seed, "RNG seed (default 0)");
  cmd->add_option("--config", common.config,
                  "JSON file of flag defaults; explicit flags override it");
  if (with_threads)
    cmd->add_option("--threads", common.threads, "worker threads, a count or 'auto'")
        ->envname("PHASEKACZMARZ_THREADS");
}

// Shared by drift/sweep: take --system, or generate from --d/--m in process.
struct SystemSource {
  std::string system_path;
  std::int64_t d = 0;
  std::int64_t m = 0;
  std::string dist = "sphere";
  std::string truth_path;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--system", system_path, "measurement system CSV");
    cmd->add_option("--d", d, "dimension (generate in process when no --system)");
    cmd->add_option("--m", m, "measurement count for in-process generation");
    cmd->add_option("--dist", dist, "sphere | gaussian (in-process generation)")
        ->check(CLI::IsMember({"sphere", "gaussian"}));
    cmd->add_option("--truth", truth_path, "signal vector file (default: random unit vector)");
  }

  pkz::MeasurementSystem load(const pkz::SeededRng& root) const {
    if (!system_path.empty()) return pkz::load_system(system_path);
    if (d < 1 || m < 1)
      throw std::invalid_argument("need --system, or --d and --m to generate one");
    pkz::SeededRng gen_rng = root.child(kChildSystem);
    return pkz::generate_system(d, m, dist == "gaussian" ? pkz::Provenance::kGaussianNormalized
                                                         : pkz::Provenance::kUniformSphere,
                                gen_rng);
  }

  Vector load_truth(Index dim, const pkz::SeededRng& root) const {
    if (!truth_path.empty()) {
      Vector x = load_vector_file(truth_path);
      if (x.size() != dim)
        throw std::invalid_argument("--truth dimension does not match the system");
      return x;
    }
    pkz::SeededRng truth_rng = root.child(kChildTruth);
    return pkz::sample_unit_sphere(dim, truth_rng);
  }
};

int cmd_gen(const std::int64_t d, const std::int64_t m, const std::string& dist,
            const CommonFlags& common, const std::string& out) {
  pkz::SeededRng rng(common.seed);
  const pkz::MeasurementSystem system = pkz::generate_system(
      d, m, dist == "gaussian" ? pkz::Provenance::kGaussianNormalized
                               : pkz::Provenance::kUniformSphere,
      rng);
  pkz::save_system(system, out);
  std::cout << "digest=" << pkz::io::to_hex16(pkz::system_digest(system)) << "\n";
  return kExitOk;
}

int cmd_observe(const std::string& system_path, const std::string& truth_path,
                bool signed_values, const std::string& out) {
  const pkz::MeasurementSystem system = pkz::load_system(system_path);
  const Vector x = load_vector_file(truth_path);
  if (x.size() != system.dim())
    throw std::invalid_argument("--truth dimension does not match the system");
  std::uint64_t digest = 0;
  if (signed_values) {
    const pkz::SignedMeasurements obs = pkz::observe_signed(system, x);
    pkz::save_observation(obs, out);
    digest = obs.system_digest;
  } else {
    const pkz::PhaselessObservation obs = pkz::observe(system, x);
    pkz::save_observation(obs, out);
    digest = obs.system_digest;
  }
  std::cout << "m=" << system.size() << " digest=" << pkz::io::to_hex16(digest) << "\n";
  return kExitOk;
}

struct SolveFlags {
  std::string system_path;
  std::string obs_path;
  std::string truth_path;
  std::string x0_path;
  double init_rel_err = -1.0;
  std::string mode = "phase";
  std::int64_t steps = 1000;
  std::int64_t trace_every = 1;
  double stop_tol = -1.0;
  std::string out;
};

int cmd_solve(const SolveFlags& f, const CommonFlags& common) {
  const pkz::MeasurementSystem system = pkz::load_system(f.system_path);
  const pkz::SolveMode mode =
      f.mode == "linear" ? pkz::SolveMode::kLinear : pkz::SolveMode::kPhase;

  std::optional<Vector> truth;
  if (!f.truth_path.empty()) {
    Vector x = load_vector_file(f.truth_path);
    if (x.size() != system.dim())
      throw std::invalid_argument("--truth dimension does not match the system");
    truth = std::move(x);
  }

  Vector data;
  std::uint64_t digest = 0;
  if (!f.obs_path.empty()) {
    if (mode == pkz::SolveMode::kPhase) {
      pkz::PhaselessObservation obs = pkz::load_phaseless_observation(f.obs_path);
      data = std::move(obs.intensities);
      digest = obs.system_digest;
    } else {
      pkz::SignedMeasurements obs = pkz::load_signed_measurements(f.obs_path);
      data = std::move(obs.values);
      digest = obs.system_digest;
    }
  } else if (truth) {
    if (mode == pkz::SolveMode::kPhase) {
      pkz::PhaselessObservation obs = pkz::observe(system, *truth);
      data = std::move(obs.intensities);
      digest = obs.system_digest;
    } else {
      pkz::SignedMeasurements obs = pkz::observe_signed(system, *truth);
      data = std::move(obs.values);
      digest = obs.system_digest;
    }
  } else {
    throw std::invalid_argument("need --obs, or --truth to synthesize observations");
  }

  pkz::SeededRng root(common.seed);
  Vector x0;
  if (!f.x0_path.empty()) {
    x0 = load_vector_file(f.x0_path);
    if (x0.size() != system.dim())
      throw std::invalid_argument("--x0 dimension does not match the system");
  } else if (f.init_rel_err >= 0.0) {
    if (!truth) throw std::invalid_argument("--init-rel-err needs --truth");
    pkz::SeededRng init_rng = root.child(kChildInit);
    x0 = pkz::synthetic_init(*truth, f.init_rel_err * truth->norm(), init_rng);
  } else {
    throw std::invalid_argument("need --x0, or --truth with --init-rel-err");
  }

  pkz::SolveConfig cfg;
  cfg.max_steps = f.steps;
  cfg.seed = common.seed;
  cfg.trace_every = f.trace_every;
  if (f.stop_tol >= 0.0) cfg.stop_tol = f.stop_tol;

  const pkz::IterationTrace trace =
      pkz::run(system, mode, data, digest, x0, cfg, truth ? &*truth : nullptr);
  pkz::save_trace_csv(trace, f.out);

  std::cout << "steps=" << trace.steps_executed;
  if (truth) {
    std::cout << " stopped_early=" << (trace.stopped_early ? "true" : "false")
              << " truth_negated=" << (trace.truth_negated ? "true" : "false")
              << " final_sq_error="
              << pkz::io::format_double(trace.steps.back().sq_error);
  }
  std::cout << "\n";
  return kExitOk;
}

int cmd_certify(const std::string& system_path, double delta, std::int64_t n_pairs,
                std::int64_t n_dirs, const CommonFlags& common, const std::string& out) {
  const pkz::MeasurementSystem system = pkz::load_system(system_path);
  const pkz::SeededRng root(common.seed);
  const pkz::AdmissibilityReport report = pkz::certify(
      system, delta, pkz::CertifyBudget{n_pairs, n_dirs}, root, common.thread_count());
  if (!out.empty()) write_json_file(nlohmann::json(report), out);

  const auto line = [](const char* name, const pkz::ConditionResult& r) {
    std::cout << name << " passed=" << (r.passed ? "true" : "false")
              << " margin=" << pkz::io::format_double(r.worst_margin)
              << " method=" << pkz::check_method_tag(r.method)
              << " samples=" << r.samples_used << "\n";
  };
  line("tessellation", report.tessellation);
  line("second_moment", report.second_moment);
  line("trunc_fourth", report.trunc_fourth);
  line("trunc_tail", report.trunc_tail);
  std::cout << "overall=" << (report.overall ? "pass" : "fail") << "\n";
  return report.overall ? kExitOk : kExitSemantic;
}

struct DriftFlags {
  SystemSource source;
  double delta = 0.1;
  double eps = 0.3;
  std::int64_t trials = 100;
  std::int64_t steps = 0;  // 0 = auto: 400 * d
  std::int64_t record_every = 0;
  std::string out;
  std::string csv;
};

int cmd_drift(const DriftFlags& f, const CommonFlags& common) {
  const pkz::SeededRng root(common.seed);
  const pkz::MeasurementSystem system = f.source.load(root);
  const Vector x = f.source.load_truth(system.dim(), root);

  pkz::DriftConfig cfg;
  cfg.delta = f.delta;
  cfg.eps = f.eps;
  cfg.n_trials = f.trials;
  cfg.horizon = f.steps > 0 ? f.steps : 400 * system.dim();
  cfg.base_seed = common.seed;
  cfg.record_every = f.record_every;
  cfg.threads = common.thread_count();

  const pkz::DriftReport report = pkz::run_drift_experiment(system, x, cfg);
  if (!f.out.empty()) write_json_file(nlohmann::json(report), f.out);
  if (!f.csv.empty()) pkz::save_drift_csv(report, f.csv);

  std::cout << "escapes=" << report.escape_count << "/" << report.n_trials
            << " bound=" << pkz::io::format_double(report.escape_bound)
            << " decay_ok=" << (report.decay_ok ? "true" : "false") << "\n";
  return kExitOk;
}

struct SweepFlags {
  SystemSource source;
  std::string radii = "0.01,0.1";
  std::int64_t n_states = 200;
  std::string out;
  std::string csv;
};

int cmd_sweep(const SweepFlags& f, const CommonFlags& common) {
  const pkz::SeededRng root(common.seed);
  const pkz::MeasurementSystem system = f.source.load(root);
  const Vector x = f.source.load_truth(system.dim(), root);
  const std::vector<double> radii = parse_double_list(f.radii, "--radii");

  const pkz::ContractionSweep sweep =
      pkz::contraction_sweep(system, x, radii, f.n_states, root, common.thread_count());
  if (!f.out.empty()) write_json_file(nlohmann::json(sweep), f.out);
  if (!f.csv.empty()) pkz::save_sweep_csv(sweep, f.csv);

  for (const pkz::SweepRow& row : sweep.rows)
    std::cout << "r=" << pkz::io::format_double(row.radius)
              << " max_ratio=" << pkz::io::format_double(row.max_ratio)
              << " mean_ratio=" << pkz::io::format_double(row.mean_ratio) << "\n";
  return kExitOk;
}

int cmd_moments(std::int64_t d, std::int64_t n, const std::string& angles_text,
                const CommonFlags& common, const std::string& out) {
  if (d < 2) throw std::invalid_argument("moments: need --d >= 2");
  constexpr double pi = std::numbers::pi;
  const std::vector<double> angles =
      angles_text.empty() ? std::vector<double>{pi / 6.0, pi / 4.0, pi / 2.0, 3.0 * pi / 4.0}
                          : parse_double_list(angles_text, "--angles");

  pkz::SeededRng rng(common.seed);
  Vector z = Vector::Zero(d);
  z[0] = 1.0;

  std::string table;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "d=%lld n=%lld seed=%llu\n",
                static_cast<long long>(d), static_cast<long long>(n),
                static_cast<unsigned long long>(common.seed));
  table += buf;
  std::snprintf(buf, sizeof(buf), "%-24s %-22s %-22s %-22s\n", "quantity", "closed_form",
                "monte_carlo", "std_error");
  table += buf;
  const auto row = [&](const std::string& name, double closed, const pkz::MomentEstimate& mc) {
    std::snprintf(buf, sizeof(buf), "%-24s %-22.12g %-22.12g %-22.12g\n", name.c_str(), closed,
                  mc.value, mc.std_error);
    table += buf;
  };

  row("second_moment", pkz::second_moment_exact(z, d), pkz::estimate_second_moment(z, n, rng));
  row("fourth_moment", pkz::fourth_moment_exact(z, d), pkz::estimate_fourth_moment(z, n, rng));
  for (double theta : angles) {
    Vector y = Vector::Zero(d);
    y[0] = std::cos(theta);
    y[1] = std::sin(theta);
    std::snprintf(buf, sizeof(buf), "mismatch theta=%.6g", theta);
    row(buf, pkz::mismatch_prob_exact(z, y), pkz::estimate_mismatch_prob(z, y, n, rng));
  }

  std::cout << table;
  if (!out.empty()) pkz::io::write_file(out, table);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phase-adapting randomized Kaczmarz: solvers, admissibility "
               "certification, drift experiments"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a random measurement system");
  std::int64_t gen_d = 0, gen_m = 0;
  std::string gen_dist = "sphere", gen_out;
  CommonFlags gen_common;
  gen->add_option("--d", gen_d, "dimension")->required();
  gen->add_option("--m", gen_m, "number of measurement vectors")->required();
  gen->add_option("--dist", gen_dist, "sphere | gaussian")
      ->check(CLI::IsMember({"sphere", "gaussian"}));
  gen->add_option("--out", gen_out, "output system CSV")->required();
  add_common(gen, gen_common, false);

  // observe
  auto* observe = app.add_subcommand("observe", "take measurements of a signal");
  std::string obs_system, obs_truth, obs_out;
  bool obs_signed = false;
  CommonFlags obs_common;
  observe->add_option("--system", obs_system, "measurement system CSV")->required();
  observe->add_option("--truth", obs_truth, "signal vector file")->required();
  observe->add_flag("--signed", obs_signed, "write signed values instead of magnitudes");
  observe->add_option("--out", obs_out, "output observation file")->required();
  add_common(observe, obs_common, false);

  // solve
  auto* solve = app.add_subcommand("solve", "run randomized Kaczmarz");
  SolveFlags solve_flags;
  CommonFlags solve_common;
  solve->add_option("--system", solve_flags.system_path, "measurement system CSV")->required();
  solve->add_option("--obs", solve_flags.obs_path, "observation file");
  solve->add_option("--truth", solve_flags.truth_path,
                    "signal vector file (enables error tracking; synthesizes observations "
                    "when --obs is absent)");
  solve->add_option("--x0", solve_flags.x0_path, "initial iterate vector file");
  solve->add_option("--init-rel-err", solve_flags.init_rel_err,
                    "synthesize x0 at this relative distance from --truth");
  solve->add_option("--mode", solve_flags.mode, "phase | linear")
      ->check(CLI::IsMember({"phase", "linear"}));
  solve->add_option("--steps", solve_flags.steps, "number of iterations");
  solve->add_option("--trace-every", solve_flags.trace_every, "trace recording stride");
  solve->add_option("--stop-tol", solve_flags.stop_tol,
                    "early stop once sq_error <= this (needs --truth)");
  solve->add_option("--out", solve_flags.out, "output trace CSV")->required();
  add_common(solve, solve_common, false);

  // certify
  auto* certify = app.add_subcommand("certify", "check admissibility conditions");
  std::string cert_system, cert_out;
  double cert_delta = 0.0;
  std::int64_t cert_pairs = 2000, cert_dirs = 2000;
  CommonFlags cert_common;
  certify->add_option("--system", cert_system, "measurement system CSV")->required();
  certify->add_option("--delta", cert_delta, "tessellation parameter in (0,1)")->required();
  certify->add_option("--n-pairs", cert_pairs, "tessellation sample pairs");
  certify->add_option("--n-dirs", cert_dirs, "sampled directions for the truncated checks");
  certify->add_option("--out", cert_out, "output report JSON");
  add_common(certify, cert_common, true);

  // drift
  auto* drift = app.add_subcommand("drift", "escape/decay Monte Carlo experiment");
  DriftFlags drift_flags;
  CommonFlags drift_common;
  drift_flags.source.add_flags(drift);
  drift->add_option("--delta", drift_flags.delta, "shell radius as a fraction of ||x||");
  drift->add_option("--eps", drift_flags.eps, "initial error as a fraction of the shell");
  drift->add_option("--trials", drift_flags.trials, "number of trials");
  drift->add_option("--steps", drift_flags.steps, "horizon (default 400*d)");
  drift->add_option("--record-every", drift_flags.record_every, "curve recording stride");
  drift->add_option("--out", drift_flags.out, "output report JSON");
  drift->add_option("--csv", drift_flags.csv, "output curve CSV");
  add_common(drift, drift_common, true);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "one-step contraction ratio sweep");
  SweepFlags sweep_flags;
  CommonFlags sweep_common;
  sweep_flags.source.add_flags(sweep);
  sweep->add_option("--radii", sweep_flags.radii, "comma-separated shell radii");
  sweep->add_option("--n-states", sweep_flags.n_states, "states per radius");
  sweep->add_option("--out", sweep_flags.out, "output table JSON");
  sweep->add_option("--csv", sweep_flags.csv, "output table CSV");
  add_common(sweep, sweep_common, true);

  // moments
  auto* moments = app.add_subcommand("moments", "closed-form vs Monte Carlo moment table");
  std::int64_t mom_d = 8, mom_n = 1'000'000;
  std::string mom_angles, mom_out;
  CommonFlags mom_common;
  moments->add_option("--d", mom_d, "dimension");
  moments->add_option("--n", mom_n, "Monte Carlo samples per row");
  moments->add_option("--angles", mom_angles, "comma-separated angles in radians");
  moments->add_option("--out", mom_out, "also write the table to this file");
  add_common(moments, mom_common, false);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = merge_config_args(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    // CLI11 wants reversed arguments for the vector-based parse entry point.
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_d, gen_m, gen_dist, gen_common, gen_out);
    if (observe->parsed()) return cmd_observe(obs_system, obs_truth, obs_signed, obs_out);
    if (solve->parsed()) return cmd_solve(solve_flags, solve_common);
    if (certify->parsed())
      return cmd_certify(cert_system, cert_delta, cert_pairs, cert_dirs, cert_common, cert_out);
    if (drift->parsed()) return cmd_drift(drift_flags, drift_common);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_common);
    if (moments->parsed())
      return cmd_moments(mom_d, mom_n, mom_angles, mom_common, mom_out);
  } catch (const pkz::DigestMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSemantic;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
