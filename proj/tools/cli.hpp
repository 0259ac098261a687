#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cvdiscord/sampler.hpp"
#include "json.hpp"

namespace cvdiscord::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

enum class Command { simulate, verify, sweep, counterexample };
enum class Emit { json, csv, both };

/// Fully resolved settings for one invocation. Every field has a config-file key of
/// the same name; flags use the same name with dashes.
struct RunConfig {
  Command command = Command::simulate;
  fs::path out_dir = ".";
  std::optional<fs::path> out;       // primary output, relative to out_dir
  std::optional<fs::path> manifest;  // default out_dir/manifest.json
  unsigned threads = 0;
  std::uint64_t seed = 0;
  std::size_t n = 100000;
  Emit emit = Emit::both;

  // simulate
  std::string scheme = "gaussian";
  std::optional<double> depth;
  double duty = 0.5;
  std::optional<double> threshold_hint;
  double eta = 0.70710678118654752;
  double v0 = 1.0;
  std::optional<double> theta_a_deg;
  std::optional<double> theta_b_deg;
  std::string pairs = "all";  // all | single
  std::optional<fs::path> state;

  // verify
  std::optional<fs::path> records;
  std::string mode = "gaussian";  // gaussian | mixture
  std::optional<double> threshold;
  double k_min = 3.0;
  double p_threshold = 0.05;
  std::string peak_method = "log_poly";
  std::size_t bootstrap = 200;
  std::optional<fs::path> plotdata;
  bool reference_gaussian = false;

  // sweep
  std::string depths = "0:5:22";

  // counterexample
  std::string which = "both";  // zero_discord | hidden_discord | both
  double alpha = 1.0;
  double nbar = 1.0;
  double r = 0.5;
  std::size_t dim_a = 0;
  std::size_t dim_b = 0;
  bool export_rho = false;

  void validate() const;
};

const char* to_string(Command c);

/// Layered settings: defaults < config file < environment < flags. `flags` holds
/// only the keys given on the command line (string or JSON values).
RunConfig resolve_config(Command command, const json& file, const json& flags);

/// Parses argv (subcommand first). Throws MalformedInputError on bad input.
RunConfig parse_command_line(int argc, const char* const* argv);

/// `a:b:n` (n evenly spaced values, inclusive) or a comma-separated list.
std::vector<double> parse_depths(const std::string& spec);

ModulationScheme make_scheme(const RunConfig& cfg);

struct PlotData {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
};

/// Unconditional and both conditional x_B densities on shared bins, optionally
/// with the Gaussian of the unconditional mean and variance.
PlotData plotdata_from_records(const RecordSet& rs, double threshold, bool reference_gaussian);

/// Writes aligned CSV columns atomically. Throws DomainError (writing nothing) when
/// there is no data.
void emit_plotdata(const PlotData& data, const fs::path& path);

std::string sha256_hex(const fs::path& path);

/// Executes the command, writes outputs and the manifest. Returns the exit status;
/// verdict content never changes it.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Full entry point: parse, run, map errors to exit codes.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cvdiscord::cli
