#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "cvdiscord/io.hpp"
#include "cvdiscord/serialization.hpp"

using namespace cvdiscord;
using namespace cvdiscord::cli;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            (std::string("cvdiscord_cli_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

int invoke(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::vector<const char*> argv{"cvdiscord"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = main_entry(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(CVDISCORD_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p)); }

class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~EnvGuard() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Settings

TEST(Depths, RangeAndListSyntax) {
  const auto r = parse_depths("0:5:22");
  ASSERT_EQ(r.size(), 22u);
  EXPECT_EQ(r.front(), 0.0);
  EXPECT_EQ(r.back(), 5.0);
  EXPECT_EQ(parse_depths("0.2,1,4.5"), (std::vector<double>{0.2, 1.0, 4.5}));
  EXPECT_EQ(parse_depths("3"), std::vector<double>{3.0});
  EXPECT_THROW(parse_depths("0:5"), MalformedInputError);
  EXPECT_THROW(parse_depths("0:5:2.5"), MalformedInputError);
  EXPECT_THROW(parse_depths("1,x"), MalformedInputError);
  EXPECT_THROW(parse_depths("-1:1:3"), DomainError);
}

TEST(Config, FlagsOverrideEnvironmentOverrideFile) {
  const json file = {{"seed", 5}, {"threads", 1}, {"n", 123}, {"out_dir", "from_file"}};
  {
    EnvGuard t("CVDISCORD_THREADS", "3");
    EnvGuard d("CVDISCORD_OUTPUT_DIR", "from_env");
    const auto c = resolve_config(Command::simulate, file, json{{"seed", "7"}});
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.threads, 3u);
    EXPECT_EQ(c.n, 123u);
    EXPECT_EQ(c.out_dir, "from_env");
    const auto f = resolve_config(Command::simulate, file, json{{"threads", "2"}});
    EXPECT_EQ(f.threads, 2u);
  }
  const auto d = resolve_config(Command::simulate, json::object(), json::object());
  EXPECT_EQ(d.n, 100000u);
  EXPECT_EQ(d.scheme, "gaussian");
  EXPECT_EQ(d.emit, Emit::both);
}

TEST(Config, RejectsUnknownAndMistypedSettings) {
  EXPECT_THROW(resolve_config(Command::verify, json{{"sed", 1}}, json::object()),
               MalformedInputError);
  EXPECT_THROW(resolve_config(Command::verify, json{{"seed", -1}}, json::object()),
               MalformedInputError);
  EXPECT_THROW(resolve_config(Command::verify, json{{"k_min", "lots"}}, json::object()),
               MalformedInputError);
  EXPECT_THROW(resolve_config(Command::verify, json{{"command", "sweep"}}, json::object()),
               MalformedInputError);
  EXPECT_THROW(resolve_config(Command::verify, json::array(), json::object()),
               MalformedInputError);
}

TEST(Config, ValidationRanges) {
  auto c = resolve_config(Command::simulate, json{{"duty", 0.0}}, json::object());
  EXPECT_THROW(c.validate(), DomainError);
  c = resolve_config(Command::simulate, json{{"scheme", "square"}}, json::object());
  EXPECT_THROW(c.validate(), MalformedInputError);
  c = resolve_config(Command::verify, json::object(), json::object());
  EXPECT_THROW(c.validate(), MalformedInputError);  // no records
  c = resolve_config(Command::simulate, json{{"depth", -1.0}}, json::object());
  EXPECT_THROW(c.validate(), DomainError);
  c = resolve_config(Command::verify, json{{"records", "x"}, {"peak_method", "mode"}},
                     json::object());
  EXPECT_THROW(c.validate(), MalformedInputError);
}

TEST(Config, ParsesCommandLineAndConfigFile) {
  TempDir dir;
  io::atomic_write(dir / "cfg.json", R"({"seed": 11, "n": 50, "scheme": "async_sine"})");
  const std::string cfg_path = (dir / "cfg.json").string();
  const char* argv[] = {"cvdiscord", "simulate", "--config", cfg_path.c_str(), "--n", "77",
                        "--theta-a-deg", "90"};
  const auto c = parse_command_line(8, argv);
  EXPECT_EQ(c.command, Command::simulate);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.n, 77u);
  EXPECT_EQ(c.scheme, "async_sine");
  EXPECT_EQ(c.theta_a_deg, 90.0);
  const char* bad[] = {"cvdiscord", "simulate", "--bogus", "1"};
  EXPECT_THROW(parse_command_line(4, bad), MalformedInputError);
}

TEST(Schemes, FlagsMapToSchemes) {
  RunConfig c;
  c.scheme = "switched_phase";
  const auto sp = std::get<SwitchedPhase>(make_scheme(c));
  EXPECT_NEAR(sp.depth_p, 2 * 6.0 / c.eta, 1e-12);
  EXPECT_EQ(sp.threshold_hint, -6.0);
  c.depth = 10.0;
  EXPECT_EQ(std::get<SwitchedPhase>(make_scheme(c)).depth_p, 10.0);
  c.scheme = "switched_noise";
  EXPECT_EQ(std::get<SwitchedNoise>(make_scheme(c)).depth_x, 10.0);
  c.scheme = "async_sine";
  c.depth.reset();
  EXPECT_EQ(std::get<AsyncSine>(make_scheme(c)).depth, 8.0);
}

// ---------------------------------------------------------------------------
// Commands

TEST(Simulate, WritesRecordsSidecarAndManifest) {
  TempDir dir;
  std::string text;
  ASSERT_EQ(invoke({"simulate", "--scheme", "gaussian", "--depth", "4.5", "--n", "2000", "--seed",
                    "7", "--out-dir", dir.path().string(), "--out", "rec.csv"},
                   &text),
            kExitOk)
      << text;
  const auto rs = read_records(dir / "rec.csv");
  EXPECT_EQ(rs.size(), 8000u);  // four phase pairs
  const auto side = read_json(dir / "rec.csv.json");
  EXPECT_EQ(side["seed"], 7);
  EXPECT_EQ(side["pairs"].size(), 4u);
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["exit_code"], 0);
  EXPECT_EQ(m["seed"], 7);
  EXPECT_TRUE(m["versions"].contains("eigen"));
  EXPECT_TRUE(m["timings"].contains("total_seconds"));
  ASSERT_EQ(m["outputs"].size(), 2u);
  for (const auto& o : m["outputs"]) {
    const fs::path p = o["path"].get<std::string>();
    EXPECT_EQ(o["sha256"], sha256_hex(p));
    EXPECT_EQ(o["bytes"], fs::file_size(p));
  }
}

TEST(Simulate, SinglePairAndSchemes) {
  TempDir dir;
  ASSERT_EQ(invoke({"simulate", "--n", "500", "--theta-a-deg", "90", "--out-dir",
                    dir.path().string()}),
            kExitOk);
  const auto rs = read_records(dir / "records.csv");
  ASSERT_EQ(rs.size(), 500u);
  EXPECT_NEAR(rs.records.front().theta_a, std::numbers::pi / 2, 1e-15);
  EXPECT_EQ(rs.records.front().theta_b, 0.0);
  ASSERT_EQ(invoke({"simulate", "--scheme", "switched_phase", "--n", "500", "--out-dir",
                    dir.path().string(), "--out", "sp.csv"}),
            kExitOk);
  const auto side = read_json(dir / "sp.csv.json");
  EXPECT_EQ(side["mode_hint"], "mixture");
  EXPECT_EQ(side["threshold_hint"], -6.0);
}

TEST(Simulate, StateFileSource) {
  TempDir dir;
  const json state = {{"cov", {{15.96, 0, 17.58, 0}, {0, 14.37, 0, 13.55}, {17.58, 0, 22.62, 0},
                               {0, 13.55, 0, 14.81}}}};
  io::atomic_write(dir / "state.json", state.dump());
  ASSERT_EQ(invoke({"simulate", "--state", (dir / "state.json").string(), "--n", "300",
                    "--out-dir", dir.path().string()}),
            kExitOk);
  EXPECT_EQ(read_records(dir / "records.csv").size(), 1200u);
  EXPECT_EQ(read_json(dir / "records.csv.json")["source"], "state_file");
}

TEST(Verify, GaussianEndToEnd) {
  TempDir dir;
  const auto d = dir.path().string();
  ASSERT_EQ(invoke({"simulate", "--depth", "4.5", "--n", "100000", "--seed", "7", "--out-dir", d,
                    "--out", "rec.csv"}),
            kExitOk);
  std::string text;
  ASSERT_EQ(invoke({"verify", "--records", (dir / "rec.csv").string(), "--mode", "gaussian",
                    "--pairs", "all", "--out-dir", d, "--plotdata", "curves.csv"},
                   &text),
            kExitOk)
      << text;
  const auto v = read_json(dir / "verdict.json");
  EXPECT_EQ(v["mode"], "gaussian");
  EXPECT_EQ(v["decision"], "discordant");
  ASSERT_EQ(v["pairs"].size(), 4u);
  // Analytic separation for the depth-4.5 split beam at (0, 0).
  const double delta = v["pairs"][0]["delta"], sigma = v["pairs"][0]["sigma_delta"];
  EXPECT_NEAR(delta, 3.47563334547696667, 3.0 * sigma);
  EXPECT_TRUE(fs::exists(dir / "verdict.csv"));
  for (const char* tag : {"A0_B0", "A0_B90", "A90_B0", "A90_B90"}) {
    const auto p = dir / ("curves_" + std::string(tag) + ".csv");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(io::read_file(p).substr(0, 26), "x,unconditional,plus,minus");
  }
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["outputs"].size(), 6u);
}

TEST(Verify, MixtureUsesSidecarThresholdAndReferenceCurve) {
  TempDir dir;
  const auto d = dir.path().string();
  ASSERT_EQ(invoke({"simulate", "--scheme", "switched_noise", "--n", "100000", "--out-dir", d}),
            kExitOk);
  ASSERT_EQ(invoke({"verify", "--records", (dir / "records.csv").string(), "--mode", "mixture",
                    "--out-dir", d, "--plotdata", "sn.csv", "--emit", "json"}),
            kExitOk);
  const auto v = read_json(dir / "verdict.json");
  EXPECT_EQ(v["mode"], "mixture");
  EXPECT_EQ(v["decision"], "discordant");
  EXPECT_EQ(v["threshold"], 0.0);
  EXPECT_FALSE(fs::exists(dir / "verdict.csv"));
  const auto header = io::read_file(dir / "sn.csv");
  EXPECT_NE(header.find("average_variance_gaussian"), std::string::npos);

  ASSERT_EQ(invoke({"simulate", "--scheme", "switched_phase", "--n", "100000", "--out-dir", d,
                    "--out", "sp.csv"}),
            kExitOk);
  ASSERT_EQ(invoke({"verify", "--records", (dir / "sp.csv").string(), "--mode", "mixture",
                    "--out-dir", d, "--out", "sp_verdict.json"}),
            kExitOk);
  EXPECT_EQ(read_json(dir / "sp_verdict.json")["threshold"], -6.0);
  EXPECT_TRUE(fs::exists(dir / "sp_verdict.csv"));
}

TEST(Verify, DeterministicAcrossThreadCounts) {
  TempDir dir;
  const auto d = dir.path().string();
  for (const char* t : {"1", "4"}) {
    const std::string tag = std::string("t") + t;
    ASSERT_EQ(invoke({"simulate", "--n", "150000", "--seed", "99", "--threads", t, "--out-dir", d,
                      "--out", tag + ".csv"}),
              kExitOk);
  }
  EXPECT_EQ(io::read_file(dir / "t1.csv"), io::read_file(dir / "t4.csv"));
  for (const char* t : {"1", "4"}) {
    const std::string tag = std::string("t") + t;
    ASSERT_EQ(invoke({"verify", "--records", (dir / "t1.csv").string(), "--threads", t,
                      "--seed", "3", "--out-dir", d, "--out", "v" + tag + ".json"}),
              kExitOk);
  }
  EXPECT_EQ(io::read_file(dir / "vt1.json"), io::read_file(dir / "vt4.json"));
  EXPECT_EQ(io::read_file(dir / "vt1.csv"), io::read_file(dir / "vt4.csv"));
}

TEST(Verify, ErrorsMapToExitCodes) {
  TempDir dir;
  const auto d = dir.path().string();
  // Validation: missing records flag.
  EXPECT_EQ(invoke({"verify", "--out-dir", d}), kExitValidation);
  EXPECT_EQ(read_json(dir / "manifest.json")["status"], "error");
  // Parse error in the record file.
  io::atomic_write(dir / "bad.csv", "theta_A,theta_B,x_A,x_B\n0,0,abc,1\n");
  EXPECT_EQ(invoke({"verify", "--records", (dir / "bad.csv").string(), "--out-dir", d}),
            kExitValidation);
  // Header only: nothing to verify.
  io::atomic_write(dir / "empty.csv", "theta_A,theta_B,x_A,x_B\n");
  EXPECT_EQ(invoke({"verify", "--records", (dir / "empty.csv").string(), "--out-dir", d}),
            kExitValidation);
  // Missing file is an I/O failure.
  EXPECT_EQ(invoke({"verify", "--records", (dir / "none.csv").string(), "--out-dir", d}),
            kExitRuntime);
  // Only one phase pair present: incomplete input.
  ASSERT_EQ(invoke({"simulate", "--n", "500", "--pairs", "single", "--out-dir", d}), kExitOk);
  EXPECT_EQ(invoke({"verify", "--records", (dir / "records.csv").string(), "--out-dir", d}),
            kExitValidation);
  EXPECT_FALSE(fs::exists(dir / "verdict.json"));
}

TEST(Verify, VerdictNeverChangesExitCode) {
  TempDir dir;
  const auto d = dir.path().string();
  ASSERT_EQ(invoke({"simulate", "--depth", "0", "--n", "20000", "--out-dir", d}), kExitOk);
  EXPECT_EQ(invoke({"verify", "--records", (dir / "records.csv").string(), "--out-dir", d}),
            kExitOk);
  EXPECT_EQ(read_json(dir / "verdict.json")["decision"], "not-detected");
}

TEST(Sweep, WritesTable) {
  TempDir dir;
  ASSERT_EQ(invoke({"sweep", "--depths", "0,1,4.5", "--n", "20000", "--bootstrap", "50",
                    "--out-dir", dir.path().string()}),
            kExitOk);
  const auto csv = io::read_file(dir / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "depth,delta,sigma_delta,delta_analytic");
  const auto j = read_json(dir / "sweep.json");
  ASSERT_EQ(j["rows"].size(), 3u);
  EXPECT_NEAR(j["rows"][2]["delta_analytic"].get<double>(), 3.47563334547696667, 1e-10);
  EXPECT_EQ(invoke({"sweep", "--depths", "0:1", "--out-dir", dir.path().string()}),
            kExitValidation);
}

TEST(Counterexample, ReportsBothCases) {
  TempDir dir;
  ASSERT_EQ(invoke({"counterexample", "--out-dir", dir.path().string(), "--export-rho"}), kExitOk);
  const auto j = read_json(dir / "counterexample.json");
  ASSERT_EQ(j["cases"].size(), 2u);
  const auto& z = j["cases"][0];
  EXPECT_EQ(z["name"], "zero_discord");
  EXPECT_EQ(z["classical_on_B"], true);
  EXPECT_GT(z["peak_separation"].get<double>(), 0.1);
  const auto& h = j["cases"][1];
  EXPECT_LT(std::abs(h["peak_separation"].get<double>()), 1e-3);
  EXPECT_GT(h["variance_ratio"].get<double>(), 1.1);
  EXPECT_GT(h["commutator_norm"].get<double>(), 1e-3);
  EXPECT_TRUE(fs::exists(dir / "counterexample_zero_discord.csv"));
  EXPECT_TRUE(fs::exists(dir / "counterexample_hidden_discord.csv"));
  const auto rho = serial::density_matrix_from_json(
      read_json(dir / "counterexample_zero_discord_rho.json"));
  EXPECT_EQ(rho.dim_a(), 20u);
}

TEST(Counterexample, TruncationFailureIsRuntimeError) {
  TempDir dir;
  EXPECT_EQ(invoke({"counterexample", "--which", "zero_discord", "--alpha", "8", "--out-dir",
                    dir.path().string()}),
            kExitRuntime);
}

// ---------------------------------------------------------------------------
// Plot data

TEST(PlotData, EmptyDataWritesNothing) {
  TempDir dir;
  const auto pd = plotdata_from_records(RecordSet{}, 0.0, false);
  EXPECT_EQ(pd.rows(), 0u);
  EXPECT_THROW(emit_plotdata(pd, dir / "p.csv"), DomainError);
  EXPECT_TRUE(fs::is_empty(dir.path()));
}

TEST(PlotData, GaussianCurvesShowSeparatedPeaks) {
  const auto state = split_balanced(modulated_beam(4.5, 4.5));
  const auto pd = plotdata_from_records(sample_gaussian(state, 0, 0, 200'000, 1), 0.0, false);
  ASSERT_EQ(pd.names.size(), 4u);
  auto argmax = [](const std::vector<double>& v) {
    return std::max_element(v.begin(), v.end()) - v.begin();
  };
  const double xp = pd.columns[0][argmax(pd.columns[2])];
  const double xm = pd.columns[0][argmax(pd.columns[3])];
  EXPECT_GT(xp - xm, 2.0);
  TempDir dir;
  emit_plotdata(pd, dir / "p.csv");
  EXPECT_TRUE(fs::exists(dir / "p.csv"));
}

// ---------------------------------------------------------------------------
// Binary

TEST(Binary, ExitCodes) {
  TempDir dir;
  const auto d = dir.path().string();
  EXPECT_EQ(run_tool("--help"), 0);
  EXPECT_EQ(run_tool("simulate --help"), 0);
  EXPECT_EQ(run_tool(""), 1);
  EXPECT_EQ(run_tool("frobnicate"), 1);
  EXPECT_EQ(run_tool("simulate --n 100 --out-dir " + d), 0);
  EXPECT_EQ(run_tool("simulate --n 0 --out-dir " + d), 1);
  EXPECT_EQ(run_tool("verify --records " + d + "/missing.csv --out-dir " + d), 2);
}

TEST(Binary, EnvironmentSetsOutputDirectory) {
  TempDir dir;
  const std::string cmd = "CVDISCORD_OUTPUT_DIR=" + dir.path().string() + " " +
                          std::string(CVDISCORD_TOOL) + " simulate --n 50 >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "records.csv"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}
