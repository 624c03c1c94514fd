#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "phasekaczmarz/measurements.hpp"

using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::StartsWith;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string tmp_path(const std::string& name) {
  const std::filesystem::path dir("pkz_cli_tmp");
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Run the installed binary through the shell. `env_prefix` may carry
/// VAR=value assignments; stdout/stderr are captured via redirection.
CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const char* bin = std::getenv("PKZ_CLI_BIN");
  REQUIRE(bin != nullptr);
  const std::string out_path = tmp_path("stdout_" + std::to_string(counter) + ".txt");
  const std::string err_path = tmp_path("stderr_" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd;
  if (!env_prefix.empty()) cmd += env_prefix + " ";
  cmd += std::string("\"") + bin + "\" " + args + " > " + out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return CliResult{WEXITSTATUS(status), read_file(out_path), read_file(err_path)};
}

std::string value_after(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find(key);
  REQUIRE(pos != std::string::npos);
  std::size_t end = pos + key.size();
  while (end < text.size() && text[end] != ' ' && text[end] != '\n') ++end;
  return text.substr(pos + key.size(), end - pos - key.size());
}

/// Shared fixture: a generated system plus a hand-written signal file.
struct Workspace {
  std::string system = tmp_path("sys.csv");
  std::string truth = tmp_path("truth.txt");
  std::string digest;

  Workspace() {
    const CliResult gen = run_cli("gen --d 4 --m 12 --seed 9 --out " + system);
    REQUIRE(gen.exit_code == 0);
    digest = value_after(gen.out, "digest=");
    pkz::io::write_file(truth, "0.5\n-0.25\n0.8125\n0.125\n");
  }
};

const Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("gen writes a deterministic system file", "[cli]") {
  const Workspace& ws = workspace();
  const std::string again = tmp_path("sys_again.csv");
  const CliResult r = run_cli("gen --d 4 --m 12 --seed 9 --out " + again);
  CHECK(r.exit_code == 0);
  CHECK(value_after(r.out, "digest=") == ws.digest);
  CHECK(read_file(again) == read_file(ws.system));

  const std::vector<std::string> lines = pkz::io::read_lines(ws.system);
  REQUIRE(lines.size() == 13);
  CHECK(lines[0] == "d,4,m,12,provenance,uniform_sphere,seed,9");
  CHECK_NOTHROW(pkz::load_system(ws.system));

  SECTION("different seeds change the digest") {
    const CliResult other =
        run_cli("gen --d 4 --m 12 --seed 10 --out " + tmp_path("sys_s10.csv"));
    CHECK(other.exit_code == 0);
    CHECK(value_after(other.out, "digest=") != ws.digest);
  }

  SECTION("the gaussian label is recorded") {
    const std::string path = tmp_path("sys_gauss.csv");
    const CliResult g = run_cli("gen --d 3 --m 5 --seed 1 --dist gaussian --out " + path);
    CHECK(g.exit_code == 0);
    CHECK_THAT(pkz::io::read_lines(path)[0],
               ContainsSubstring("provenance,gaussian_normalized"));
  }

  SECTION("usage errors exit with 1") {
    CHECK(run_cli("gen --d 4 --m 12").exit_code == 1);  // missing --out
    CHECK(run_cli("gen --d 0 --m 3 --out " + tmp_path("junk.csv")).exit_code == 1);
    CHECK(run_cli("gen --d 4 --m 12 --dist cauchy --out " + tmp_path("junk.csv")).exit_code == 1);
  }
}

TEST_CASE("observe records magnitudes bound to the system digest", "[cli]") {
  const Workspace& ws = workspace();
  const std::string obs = tmp_path("obs.csv");
  const CliResult r = run_cli("observe --system " + ws.system + " --truth " + ws.truth +
                              " --out " + obs);
  CHECK(r.exit_code == 0);
  CHECK(r.out == "m=12 digest=" + ws.digest + "\n");
  const std::vector<std::string> lines = pkz::io::read_lines(obs);
  REQUIRE(lines.size() == 13);
  CHECK(lines[0] == "m,12,digest," + ws.digest);
  const pkz::PhaselessObservation loaded = pkz::load_phaseless_observation(obs);
  CHECK((loaded.intensities.array() >= 0.0).all());

  SECTION("--signed keeps signs, which the phaseless loader rejects") {
    const std::string sobs = tmp_path("obs_signed.csv");
    const CliResult s = run_cli("observe --system " + ws.system + " --truth " + ws.truth +
                                " --signed --out " + sobs);
    CHECK(s.exit_code == 0);
    const pkz::SignedMeasurements sm = pkz::load_signed_measurements(sobs);
    CHECK((sm.values.array() < 0.0).any());
    CHECK(sm.values.cwiseAbs() == loaded.intensities);
    CHECK_THROWS_AS(pkz::load_phaseless_observation(sobs), pkz::ParseError);
  }

  SECTION("a truth of the wrong dimension is a usage error") {
    const std::string short_truth = tmp_path("short_truth.txt");
    pkz::io::write_file(short_truth, "1\n0\n");
    CHECK(run_cli("observe --system " + ws.system + " --truth " + short_truth +
                  " --out " + tmp_path("junk_obs.csv"))
              .exit_code == 1);
  }
}

TEST_CASE("solve from the signal itself stays at zero error", "[cli]") {
  const Workspace& ws = workspace();
  const std::string trace = tmp_path("trace_zero.csv");
  const CliResult r = run_cli("solve --system " + ws.system + " --truth " + ws.truth +
                              " --x0 " + ws.truth + " --steps 50 --out " + trace);
  CHECK(r.exit_code == 0);
  CHECK(r.out == "steps=50 stopped_early=false truth_negated=false final_sq_error=0\n");
  const std::vector<std::string> lines = pkz::io::read_lines(trace);
  REQUIRE(lines.size() == 51);
  CHECK(lines[0] == "k,t,sq_error,mismatch");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = pkz::io::split(lines[i], ',');
    REQUIRE(fields.size() == 4);
    CHECK(fields[2] == "0");
    CHECK(fields[3] == "0");
  }
}

TEST_CASE("solve in linear mode decays monotonically from an aligned start", "[cli]") {
  const Workspace& ws = workspace();
  const std::string trace = tmp_path("trace_linear.csv");
  const CliResult r = run_cli("solve --system " + ws.system + " --truth " + ws.truth +
                              " --init-rel-err 0.3 --mode linear --steps 200 --seed 2 --out " +
                              trace);
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.out, StartsWith("steps=200"));
  const std::vector<std::string> lines = pkz::io::read_lines(trace);
  REQUIRE(lines.size() == 201);
  double prev = 1e300;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = pkz::io::split(lines[i], ',');
    const double dist = std::sqrt(pkz::io::parse_double(fields[2], "sq_error"));
    CHECK(dist <= prev * (1.0 + 1e-10) + 1e-13);
    prev = dist;
  }
}

TEST_CASE("solve exits with 2 on a digest mismatch", "[cli]") {
  const Workspace& ws = workspace();
  const std::string other = tmp_path("sys_other.csv");
  REQUIRE(run_cli("gen --d 4 --m 12 --seed 77 --out " + other).exit_code == 0);
  const std::string obs = tmp_path("obs_other.csv");
  REQUIRE(run_cli("observe --system " + other + " --truth " + ws.truth + " --out " + obs)
              .exit_code == 0);
  const CliResult r = run_cli("solve --system " + ws.system + " --obs " + obs + " --x0 " +
                              ws.truth + " --out " + tmp_path("junk_trace.csv"));
  CHECK(r.exit_code == 2);
  CHECK_THAT(r.err, ContainsSubstring("digest"));

  SECTION("other solve misuses are plain usage errors") {
    CHECK(run_cli("solve --system " + ws.system + " --x0 " + ws.truth + " --out " +
                  tmp_path("junk1.csv"))
              .exit_code == 1);  // no data source
    CHECK(run_cli("solve --system " + ws.system + " --truth " + ws.truth + " --out " +
                  tmp_path("junk2.csv"))
              .exit_code == 1);  // no start
    CHECK(run_cli("solve --system " + ws.system + " --truth " + ws.truth + " --x0 " +
                  ws.truth + " --steps 0 --out " + tmp_path("junk3.csv"))
              .exit_code == 1);
  }
}

TEST_CASE("certify fails a rank-deficient system with exit 2", "[cli]") {
  const std::string degenerate = tmp_path("sys_degenerate.csv");
  pkz::io::write_file(degenerate, "d,2,m,2,provenance,loaded,seed,NA\n1,0\n1,0\n");
  const std::string report_path = tmp_path("cert_degenerate.json");
  const CliResult r = run_cli("certify --system " + degenerate +
                              " --delta 0.5 --n-pairs 100 --n-dirs 100 --out " + report_path);
  CHECK(r.exit_code == 2);
  CHECK_THAT(r.out, ContainsSubstring("second_moment passed=false"));
  CHECK_THAT(r.out, ContainsSubstring("overall=fail"));

  const nlohmann::json j = nlohmann::json::parse(read_file(report_path));
  CHECK(j.at("delta").get<double>() == 0.5);
  CHECK(j.at("overall").get<bool>() == false);
  CHECK(j.at("second_moment").at("passed").get<bool>() == false);
  CHECK(j.at("second_moment").at("method").get<std::string>() == "exact_eigen");
  CHECK_FALSE(j.at("second_moment").at("witness").empty());
  CHECK(j.at("tessellation").at("samples_used").get<std::int64_t>() == 100);

  SECTION("an out-of-range delta is a usage error") {
    CHECK(run_cli("certify --system " + degenerate + " --delta 1.5").exit_code == 1);
  }
}

TEST_CASE("certify passes a healthy random system reproducibly", "[cli]") {
  const std::string system = tmp_path("sys_healthy.csv");
  REQUIRE(run_cli("gen --d 8 --m 2000 --seed 5 --out " + system).exit_code == 0);
  const std::string report_path = tmp_path("cert_healthy.json");
  const std::string args = "certify --system " + system +
                           " --delta 0.45 --n-pairs 500 --n-dirs 500 --seed 11 --out " +
                           report_path;
  const CliResult r = run_cli(args);
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.out, ContainsSubstring("overall=pass"));
  CHECK_THAT(r.out, ContainsSubstring("tessellation passed=true"));
  const std::string first_json = read_file(report_path);

  const CliResult again = run_cli(args);
  CHECK(again.exit_code == 0);
  CHECK(again.out == r.out);
  CHECK(read_file(report_path) == first_json);

  SECTION("thread count does not change the report") {
    const CliResult threaded = run_cli(args + " --threads 4");
    CHECK(threaded.out == r.out);
    CHECK(read_file(report_path) == first_json);
  }
}

TEST_CASE("drift prints an escape summary and writes identical reruns", "[cli]") {
  const std::string out_json = tmp_path("drift.json");
  const std::string out_csv = tmp_path("drift.csv");
  const std::string args = "drift --d 6 --m 40 --seed 3 --delta 0.2 --eps 0.5 --trials 8"
                           " --steps 100 --out " + out_json + " --csv " + out_csv;
  const CliResult r = run_cli(args);
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.out, ContainsSubstring("escapes="));
  CHECK_THAT(r.out, ContainsSubstring("/8 bound="));
  CHECK_THAT(r.out, ContainsSubstring("decay_ok="));

  const nlohmann::json j = nlohmann::json::parse(read_file(out_json));
  CHECK(j.at("d").get<std::int64_t>() == 6);
  CHECK(j.at("m").get<std::int64_t>() == 40);
  CHECK(j.at("n_trials").get<std::int64_t>() == 8);
  CHECK(j.at("horizon").get<std::int64_t>() == 100);
  CHECK_THAT(pkz::io::read_lines(out_csv)[0],
             ContainsSubstring("k,surviving_mean_sq_error,theorem_bound,n_surviving"));

  const std::string json_bytes = read_file(out_json);
  const std::string csv_bytes = read_file(out_csv);
  const CliResult again = run_cli(args);
  CHECK(again.out == r.out);
  CHECK(read_file(out_json) == json_bytes);
  CHECK(read_file(out_csv) == csv_bytes);

  SECTION("thread counts never change the bytes") {
    const CliResult t1 = run_cli(args + " --threads 1");
    const std::string j1 = read_file(out_json);
    const CliResult t4 = run_cli(args + " --threads 4");
    CHECK(t4.out == t1.out);
    CHECK(read_file(out_json) == j1);
  }

  SECTION("zero initial error never escapes") {
    const CliResult z = run_cli("drift --d 6 --m 40 --seed 3 --delta 0.2 --eps 0"
                                " --trials 8 --steps 50");
    CHECK(z.exit_code == 0);
    CHECK_THAT(z.out, StartsWith("escapes=0/8"));
  }

  SECTION("invalid drift requests are usage errors") {
    CHECK(run_cli("drift --d 6 --m 40 --trials 0").exit_code == 1);
    CHECK(run_cli("drift --d 6 --m 40 --delta 0.5 --eps 2.0").exit_code == 1);
    CHECK(run_cli("drift --m 40").exit_code == 1);  // no system and no --d
  }
}

TEST_CASE("sweep tabulates one row per radius", "[cli]") {
  const std::string out_json = tmp_path("sweep.json");
  const std::string out_csv = tmp_path("sweep.csv");
  const std::string args = "sweep --d 6 --m 40 --seed 3 --radii 0.05,0.2 --n-states 20"
                           " --out " + out_json + " --csv " + out_csv;
  const CliResult r = run_cli(args);
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.out, StartsWith("r=0.05"));
  CHECK_THAT(r.out, ContainsSubstring("max_ratio="));
  CHECK_THAT(r.out, ContainsSubstring("\nr=0.2"));

  const std::vector<std::string> csv = pkz::io::read_lines(out_csv);
  REQUIRE(csv.size() == 3);
  CHECK(csv[0] == "radius,max_ratio,mean_ratio,n_states");

  const nlohmann::json j = nlohmann::json::parse(read_file(out_json));
  CHECK(j.at("state_sampling").get<std::string>() == "uniform_shell");
  CHECK(j.at("rows").size() == 2);

  const std::string bytes = read_file(out_json);
  const CliResult again = run_cli(args);
  CHECK(again.out == r.out);
  CHECK(read_file(out_json) == bytes);
}

TEST_CASE("moments prints the comparison table it writes", "[cli]") {
  const std::string out = tmp_path("moments.txt");
  const std::string args = "moments --d 4 --n 5000 --seed 1 --out " + out;
  const CliResult r = run_cli(args);
  CHECK(r.exit_code == 0);
  CHECK_THAT(r.out, ContainsSubstring("second_moment"));
  CHECK_THAT(r.out, ContainsSubstring("fourth_moment"));
  CHECK_THAT(r.out, ContainsSubstring("mismatch theta="));
  CHECK_THAT(r.out, ContainsSubstring("0.25"));  // closed form 1/d at d = 4
  CHECK(read_file(out) == r.out);

  const CliResult again = run_cli(args);
  CHECK(again.out == r.out);

  SECTION("d below 2 is rejected") {
    CHECK(run_cli("moments --d 1 --n 100").exit_code == 1);
  }
}

TEST_CASE("config files fill in unset flags", "[cli]") {
  const std::string cfg = tmp_path("cfg.json");
  pkz::io::write_file(cfg, "{\"d\": 6, \"m\": 20, \"seed\": 4}\n");

  const std::string s1 = tmp_path("sys_cfg.csv");
  const CliResult r1 = run_cli("gen --config " + cfg + " --out " + s1);
  CHECK(r1.exit_code == 0);
  CHECK(pkz::io::read_lines(s1)[0] == "d,6,m,20,provenance,uniform_sphere,seed,4");

  SECTION("explicit flags beat config values") {
    const std::string s2 = tmp_path("sys_cfg_override.csv");
    const CliResult r2 = run_cli("gen --config " + cfg + " --m 30 --out " + s2);
    CHECK(r2.exit_code == 0);
    CHECK(pkz::io::read_lines(s2)[0] == "d,6,m,30,provenance,uniform_sphere,seed,4");
  }

  SECTION("boolean config values become bare flags") {
    const Workspace& ws = workspace();
    const std::string bcfg = tmp_path("cfg_signed.json");
    pkz::io::write_file(bcfg, "{\"signed\": true}\n");
    const std::string obs = tmp_path("obs_cfg_signed.csv");
    const CliResult r = run_cli("observe --config " + bcfg + " --system " + ws.system +
                                " --truth " + ws.truth + " --out " + obs);
    CHECK(r.exit_code == 0);
    CHECK((pkz::load_signed_measurements(obs).values.array() < 0.0).any());
  }

  SECTION("malformed configs are usage errors") {
    const std::string bad = tmp_path("cfg_bad.json");
    pkz::io::write_file(bad, "{\"m\": [1,2]}\n");
    const CliResult r = run_cli("gen --config " + bad + " --d 4 --out " + tmp_path("junk4.csv"));
    CHECK(r.exit_code == 1);
    CHECK_THAT(r.err, ContainsSubstring("must be a scalar"));
    CHECK(run_cli("gen --config " + tmp_path("missing_cfg.json") + " --d 4 --m 4 --out " +
                  tmp_path("junk5.csv"))
              .exit_code == 1);
    const std::string unknown = tmp_path("cfg_unknown.json");
    pkz::io::write_file(unknown, "{\"no-such-flag\": 3}\n");
    CHECK(run_cli("gen --config " + unknown + " --d 4 --m 4 --out " + tmp_path("junk6.csv"))
              .exit_code == 1);
  }
}

TEST_CASE("the threads environment variable feeds the --threads flag", "[cli]") {
  const std::string out_json = tmp_path("drift_env.json");
  const std::string args = "drift --d 5 --m 30 --seed 6 --delta 0.2 --eps 0.5 --trials 4"
                           " --steps 50 --out " + out_json;
  const CliResult flag_run = run_cli(args + " --threads 2");
  const std::string flag_bytes = read_file(out_json);
  const CliResult env_run = run_cli(args, "PHASEKACZMARZ_THREADS=2");
  CHECK(env_run.exit_code == 0);
  CHECK(env_run.out == flag_run.out);
  CHECK(read_file(out_json) == flag_bytes);

  SECTION("an explicit flag overrides the environment") {
    const CliResult both = run_cli(args + " --threads 1", "PHASEKACZMARZ_THREADS=bogus");
    CHECK(both.exit_code == 0);
    CHECK(both.out == flag_run.out);
  }

  SECTION("an invalid value is a usage error") {
    const CliResult bad = run_cli(args, "PHASEKACZMARZ_THREADS=bogus");
    CHECK(bad.exit_code == 1);
  }
}

TEST_CASE("top-level usage behaves conventionally", "[cli]") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK_THAT(run_cli("--help").out, ContainsSubstring("gen"));
  CHECK(run_cli("").exit_code == 1);           // a subcommand is required
  CHECK(run_cli("frobnicate").exit_code == 1);  // unknown subcommand
  CHECK(run_cli("solve").exit_code == 1);       // missing required flags
}
