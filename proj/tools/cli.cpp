#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <openssl/evp.h>

#include <boost/version.hpp>

#include "CLI11.hpp"
#include "cvdiscord/cvdiscord.hpp"

#ifndef CVDISCORD_VERSION
#define CVDISCORD_VERSION "0.0.0"
#endif

namespace cvdiscord::cli {

namespace {

constexpr std::uint64_t kPairStream = 0x7061697273ULL;

struct HelpRequested {
  std::string text;
};

double deg_to_rad(double deg) { return deg / 180.0 * std::numbers::pi; }

// ---------------------------------------------------------------------------
// Value conversion for layered settings. Values arrive either as JSON scalars
// (config file) or as strings (flags, environment).

double to_double(const json& v, const std::string& key) {
  if (v.is_number()) {
    return v.get<double>();
  }
  double out = 0.0;
  if (v.is_string() && io::parse_double(v.get<std::string>(), out)) {
    return out;
  }
  throw MalformedInputError("setting '" + key + "' must be a number");
}

std::uint64_t to_uint(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) {
    return v.get<std::uint64_t>();
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    std::uint64_t out = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty()) {
      return out;
    }
  }
  throw MalformedInputError("setting '" + key + "' must be a non-negative integer");
}

std::string to_str(const json& v, const std::string& key) {
  if (!v.is_string()) {
    throw MalformedInputError("setting '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

bool to_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) {
    return v.get<bool>();
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "1") {
      return true;
    }
    if (s == "false" || s == "0") {
      return false;
    }
  }
  throw MalformedInputError("setting '" + key + "' must be true or false");
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"out_dir", [](RunConfig& c, const json& v, const std::string& k) { c.out_dir = to_str(v, k); }},
      {"out", [](RunConfig& c, const json& v, const std::string& k) { c.out = to_str(v, k); }},
      {"manifest", [](RunConfig& c, const json& v, const std::string& k) { c.manifest = to_str(v, k); }},
      {"threads",
       [](RunConfig& c, const json& v, const std::string& k) {
         c.threads = static_cast<unsigned>(to_uint(v, k));
       }},
      {"seed", [](RunConfig& c, const json& v, const std::string& k) { c.seed = to_uint(v, k); }},
      {"n", [](RunConfig& c, const json& v, const std::string& k) { c.n = to_uint(v, k); }},
      {"emit",
       [](RunConfig& c, const json& v, const std::string& k) {
         const auto s = to_str(v, k);
         if (s == "json") {
           c.emit = Emit::json;
         } else if (s == "csv") {
           c.emit = Emit::csv;
         } else if (s == "both") {
           c.emit = Emit::both;
         } else {
           throw MalformedInputError("emit must be json, csv or both");
         }
       }},
      {"scheme", [](RunConfig& c, const json& v, const std::string& k) { c.scheme = to_str(v, k); }},
      {"depth", [](RunConfig& c, const json& v, const std::string& k) { c.depth = to_double(v, k); }},
      {"duty", [](RunConfig& c, const json& v, const std::string& k) { c.duty = to_double(v, k); }},
      {"threshold_hint",
       [](RunConfig& c, const json& v, const std::string& k) { c.threshold_hint = to_double(v, k); }},
      {"eta", [](RunConfig& c, const json& v, const std::string& k) { c.eta = to_double(v, k); }},
      {"v0", [](RunConfig& c, const json& v, const std::string& k) { c.v0 = to_double(v, k); }},
      {"theta_a_deg",
       [](RunConfig& c, const json& v, const std::string& k) { c.theta_a_deg = to_double(v, k); }},
      {"theta_b_deg",
       [](RunConfig& c, const json& v, const std::string& k) { c.theta_b_deg = to_double(v, k); }},
      {"pairs", [](RunConfig& c, const json& v, const std::string& k) { c.pairs = to_str(v, k); }},
      {"state", [](RunConfig& c, const json& v, const std::string& k) { c.state = to_str(v, k); }},
      {"records", [](RunConfig& c, const json& v, const std::string& k) { c.records = to_str(v, k); }},
      {"mode", [](RunConfig& c, const json& v, const std::string& k) { c.mode = to_str(v, k); }},
      {"threshold",
       [](RunConfig& c, const json& v, const std::string& k) { c.threshold = to_double(v, k); }},
      {"k_min", [](RunConfig& c, const json& v, const std::string& k) { c.k_min = to_double(v, k); }},
      {"p_threshold",
       [](RunConfig& c, const json& v, const std::string& k) { c.p_threshold = to_double(v, k); }},
      {"peak_method",
       [](RunConfig& c, const json& v, const std::string& k) { c.peak_method = to_str(v, k); }},
      {"bootstrap",
       [](RunConfig& c, const json& v, const std::string& k) { c.bootstrap = to_uint(v, k); }},
      {"plotdata", [](RunConfig& c, const json& v, const std::string& k) { c.plotdata = to_str(v, k); }},
      {"reference_gaussian",
       [](RunConfig& c, const json& v, const std::string& k) { c.reference_gaussian = to_bool(v, k); }},
      {"depths", [](RunConfig& c, const json& v, const std::string& k) { c.depths = to_str(v, k); }},
      {"which", [](RunConfig& c, const json& v, const std::string& k) { c.which = to_str(v, k); }},
      {"alpha", [](RunConfig& c, const json& v, const std::string& k) { c.alpha = to_double(v, k); }},
      {"nbar", [](RunConfig& c, const json& v, const std::string& k) { c.nbar = to_double(v, k); }},
      {"r", [](RunConfig& c, const json& v, const std::string& k) { c.r = to_double(v, k); }},
      {"dim_a", [](RunConfig& c, const json& v, const std::string& k) { c.dim_a = to_uint(v, k); }},
      {"dim_b", [](RunConfig& c, const json& v, const std::string& k) { c.dim_b = to_uint(v, k); }},
      {"export_rho",
       [](RunConfig& c, const json& v, const std::string& k) { c.export_rho = to_bool(v, k); }},
  };
  return table;
}

void apply_layer(RunConfig& cfg, const json& layer, const char* origin) {
  if (layer.is_null()) {
    return;
  }
  if (!layer.is_object()) {
    throw MalformedInputError(std::string(origin) + " settings must be a JSON object");
  }
  for (const auto& [key, value] : layer.items()) {
    if (key == "command") {
      if (!value.is_string() || value.get<std::string>() != to_string(cfg.command)) {
        throw MalformedInputError(std::string(origin) + " is for a different command");
      }
      continue;
    }
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw MalformedInputError("unknown setting '" + key + "' in " + origin);
    }
    it->second(cfg, value, key);
  }
}

json environment_layer() {
  json env = json::object();
  if (const char* dir = std::getenv("CVDISCORD_OUTPUT_DIR"); dir && *dir) {
    env["out_dir"] = dir;
  }
  if (const char* t = std::getenv("CVDISCORD_THREADS"); t && *t) {
    env["threads"] = t;
  }
  return env;
}

std::string opt_path(const std::optional<fs::path>& p) { return p ? p->string() : ""; }

json config_echo(const RunConfig& c) {
  json j;
  j["command"] = to_string(c.command);
  j["out_dir"] = c.out_dir.string();
  j["out"] = opt_path(c.out);
  j["threads"] = resolve_threads(c.threads);
  j["seed"] = c.seed;
  j["n"] = c.n;
  switch (c.command) {
    case Command::simulate:
      j["scheme"] = c.scheme;
      j["depth"] = c.depth ? json(*c.depth) : json(nullptr);
      j["duty"] = c.duty;
      j["threshold_hint"] = c.threshold_hint ? json(*c.threshold_hint) : json(nullptr);
      j["eta"] = c.eta;
      j["v0"] = c.v0;
      j["theta_a_deg"] = c.theta_a_deg ? json(*c.theta_a_deg) : json(nullptr);
      j["theta_b_deg"] = c.theta_b_deg ? json(*c.theta_b_deg) : json(nullptr);
      j["pairs"] = c.pairs;
      j["state"] = opt_path(c.state);
      break;
    case Command::verify:
      j["records"] = opt_path(c.records);
      j["mode"] = c.mode;
      j["pairs"] = c.pairs;
      j["threshold"] = c.threshold ? json(*c.threshold) : json(nullptr);
      j["k_min"] = c.k_min;
      j["p_threshold"] = c.p_threshold;
      j["peak_method"] = c.peak_method;
      j["bootstrap"] = c.bootstrap;
      j["plotdata"] = opt_path(c.plotdata);
      j["reference_gaussian"] = c.reference_gaussian;
      break;
    case Command::sweep:
      j["depths"] = c.depths;
      j["peak_method"] = c.peak_method;
      j["bootstrap"] = c.bootstrap;
      break;
    case Command::counterexample:
      j["which"] = c.which;
      j["alpha"] = c.alpha;
      j["nbar"] = c.nbar;
      j["r"] = c.r;
      j["dim_a"] = c.dim_a;
      j["dim_b"] = c.dim_b;
      j["v0"] = c.v0;
      j["export_rho"] = c.export_rho;
      break;
  }
  return j;
}

/// Verdict echo: everything that determines the verdict content, nothing that
/// depends on the machine (thread count, output directory).
json verify_echo(const RunConfig& c, double threshold) {
  json j;
  j["records"] = opt_path(c.records);
  j["mode"] = c.mode;
  j["pairs"] = c.pairs;
  j["threshold"] = threshold;
  j["k_min"] = c.k_min;
  j["p_threshold"] = c.p_threshold;
  j["peak_method"] = c.peak_method;
  j["bootstrap"] = c.bootstrap;
  j["seed"] = c.seed;
  return j;
}

json versions() {
  json j;
  j["cvdiscord"] = CVDISCORD_VERSION;
  j["compiler"] = __VERSION__;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  j["boost"] = BOOST_LIB_VERSION;
  j["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  j["cli11"] = CLI11_VERSION;
  return j;
}

/// Tracks every file written during a run, for the manifest.
class Outputs {
 public:
  explicit Outputs(fs::path root) : root_(std::move(root)) {}

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : root_ / p; }

  void write(const fs::path& p, const std::function<void(std::ostream&)>& writer) {
    const auto full = resolve(p);
    io::atomic_write(full, writer);
    written_.push_back(full);
  }

  void write(const fs::path& p, const std::string& content) {
    write(p, [&](std::ostream& os) { os << content; });
  }

  const fs::path& root() const { return root_; }
  const std::vector<fs::path>& written() const { return written_; }

 private:
  fs::path root_;
  std::vector<fs::path> written_;
};

fs::path with_suffix(fs::path p, const std::string& ext) { return p.replace_extension(ext); }

fs::path with_tag(const fs::path& p, const std::string& tag) {
  fs::path out = p.parent_path() / (p.stem().string() + "_" + tag + p.extension().string());
  return out;
}

std::string pair_tag(double theta_a, double theta_b) {
  auto deg = [](double r) { return std::to_string(std::lround(r * 180.0 / std::numbers::pi)); };
  return "A" + deg(theta_a) + "_B" + deg(theta_b);
}

json read_json_file(const fs::path& p) {
  const auto text = io::read_file(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw MalformedInputError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

void cmd_simulate(const RunConfig& cfg, Outputs& outputs, std::ostream& out) {
  const fs::path rec_path = cfg.out.value_or("records.csv");
  const auto scheme = make_scheme(cfg);
  const bool single = cfg.theta_a_deg || cfg.theta_b_deg || cfg.pairs == "single";
  RecordSet rs;
  json side;
  side["seed"] = cfg.seed;
  side["n_per_pair"] = cfg.n;

  if (cfg.state || std::holds_alternative<GaussianModulation>(scheme)) {
    const auto state =
        cfg.state ? serial::state_from_json(read_json_file(*cfg.state))
                  : to_gaussian_state(std::get<GaussianModulation>(scheme), cfg.eta, cfg.v0);
    side["source"] = cfg.state ? "state_file" : "gaussian";
    if (!cfg.state) {
      side["scheme"] = serial::to_json(scheme);
      side["eta"] = cfg.eta;
    }
    side["state"] = serial::to_json(state);
    side["mode_hint"] = "gaussian";
    std::vector<std::pair<double, double>> phases;
    if (single) {
      phases.emplace_back(deg_to_rad(cfg.theta_a_deg.value_or(0.0)),
                          deg_to_rad(cfg.theta_b_deg.value_or(0.0)));
    } else {
      phases = standard_phase_pairs();
    }
    for (std::size_t i = 0; i < phases.size(); ++i) {
      auto part = sample_gaussian(state, phases[i].first, phases[i].second, cfg.n,
                                  substream_seed(cfg.seed, kPairStream, i), cfg.threads);
      rs.records.insert(rs.records.end(), part.records.begin(), part.records.end());
    }
    side["pairs"] = json::array();
    for (const auto& [a, b] : phases) {
      side["pairs"].push_back({a, b});
    }
  } else {
    SimulationConfig sc;
    sc.scheme = scheme;
    sc.eta = cfg.eta;
    sc.n_samples = cfg.n;
    sc.seed = cfg.seed;
    sc.v0 = cfg.v0;
    sc.threads = cfg.threads;
    if (cfg.theta_a_deg) {
      sc.theta_a = deg_to_rad(*cfg.theta_a_deg);
    }
    if (cfg.theta_b_deg) {
      sc.theta_b = deg_to_rad(*cfg.theta_b_deg);
    }
    rs = sample_scheme(sc);
    side["source"] = scheme_name(scheme);
    side["simulation"] = serial::to_json(sc);
    side["pmixture"] = serial::to_json(to_pmixture(scheme, cfg.eta, cfg.v0));
    side["mode_hint"] = "mixture";
    if (const auto* sp = std::get_if<SwitchedPhase>(&scheme)) {
      side["threshold_hint"] = sp->threshold_hint;
    }
    side["pairs"] = json::array({json::array({sc.resolved_theta_a(), sc.resolved_theta_b()})});
  }

  outputs.write(rec_path, [&](std::ostream& os) { write_records(rs, os); });
  fs::path side_path = rec_path;
  side_path += ".json";
  outputs.write(side_path, serial::dump(side));
  out << "simulate: wrote " << rs.size() << " records to " << outputs.resolve(rec_path).string()
      << '\n';
}

VerifierOptions verifier_options(const RunConfig& cfg, double threshold) {
  VerifierOptions o;
  o.k_min = cfg.k_min;
  o.p_threshold = cfg.p_threshold;
  o.threshold = threshold;
  o.peak.method = serial::peak_method_from_string(cfg.peak_method);
  o.peak.bootstrap_replicates = cfg.bootstrap;
  o.peak.seed = cfg.seed;
  o.peak.threads = cfg.threads;
  return o;
}

void write_pairs_csv(const DiscordVerdict& v, std::ostream& os) {
  std::vector<double> ta, tb, d, s, k, p;
  for (const auto& r : v.pairs) {
    ta.push_back(r.theta_a);
    tb.push_back(r.theta_b);
    d.push_back(r.delta);
    s.push_back(r.sigma_delta);
    k.push_back(r.k);
    p.push_back(r.chi2_p);
  }
  serial::write_columns_csv({"theta_A", "theta_B", "delta", "sigma_delta", "k", "chi2_p"},
                            {ta, tb, d, s, k, p}, os);
}

void write_mixture_csv(const MixtureReport& r, std::ostream& os) {
  os << "side,n,chi2,dof,chi2_p,mean_shift,variance_ratio\n";
  auto row = [&](const char* name, const SideComparison& c) {
    os << name << ',' << c.n << ',' << io::format_double(c.chi2.statistic) << ',' << c.chi2.dof
       << ',' << io::format_double(c.chi2.p_value) << ',' << io::format_double(c.mean_shift)
       << ',' << io::format_double(c.variance_ratio) << '\n';
  };
  row("plus", r.plus);
  row("minus", r.minus);
}

void cmd_verify(const RunConfig& cfg, Outputs& outputs, std::ostream& out) {
  const auto rs = read_records(*cfg.records);
  if (rs.empty()) {
    throw IncompleteInputError("record file " + cfg.records->string() + " has no records");
  }
  json side;
  fs::path side_path = *cfg.records;
  side_path += ".json";
  if (fs::exists(side_path)) {
    side = read_json_file(side_path);
  }
  const bool mixture = cfg.mode == "mixture";
  double threshold = 0.0;
  if (cfg.threshold) {
    threshold = *cfg.threshold;
  } else if (mixture && side.is_object() && side.contains("threshold_hint")) {
    threshold = side["threshold_hint"].get<double>();
  }
  const auto opts = verifier_options(cfg, threshold);
  const auto echo = verify_echo(cfg, threshold);
  const fs::path json_path = cfg.out.value_or("verdict.json");
  const fs::path csv_path = with_suffix(json_path, ".csv");
  const bool want_json = cfg.emit != Emit::csv;
  const bool want_csv = cfg.emit != Emit::json;
  const bool reference = cfg.reference_gaussian ||
                         (side.is_object() && side.value("source", "") == "switched_noise");

  if (!mixture) {
    DiscordVerdict v;
    std::vector<RecordSet> groups;
    if (cfg.pairs == "all") {
      groups = group_standard_pairs(rs);
      v = verdict_gaussian(groups, opts);
    } else {
      groups = {rs};
      v.options = opts;
      v.pairs.push_back(pair_statistics(rs, opts));
      v.decision = decide(v.pairs, opts);
    }
    if (want_json) {
      outputs.write(json_path, serial::dump(serial::to_json(v, echo)));
    }
    if (want_csv) {
      outputs.write(csv_path, [&](std::ostream& os) { write_pairs_csv(v, os); });
    }
    if (cfg.plotdata) {
      for (const auto& g : groups) {
        const auto pd = plotdata_from_records(g, threshold, reference);
        const auto& r0 = g.records.front();
        const auto path = groups.size() > 1 ? with_tag(*cfg.plotdata, pair_tag(r0.theta_a, r0.theta_b))
                                            : *cfg.plotdata;
        outputs.write(path, [&](std::ostream& os) {
          serial::write_columns_csv(pd.names, pd.columns, os);
        });
      }
    }
    out << "verify: " << to_string(v.decision) << '\n';
    for (const auto& p : v.pairs) {
      out << "  theta_A=" << pair_tag(p.theta_a, p.theta_b) << " delta=" << p.delta
          << " sigma=" << p.sigma_delta << " k=" << p.k << " chi2_p=" << p.chi2_p << '\n';
    }
  } else {
    const auto rep = verdict_mixture(rs, threshold, opts);
    if (want_json) {
      outputs.write(json_path, serial::dump(serial::to_json(rep, opts, echo)));
    }
    if (want_csv) {
      outputs.write(csv_path, [&](std::ostream& os) { write_mixture_csv(rep, os); });
    }
    if (cfg.plotdata) {
      const auto pd = plotdata_from_records(rs, threshold, reference);
      outputs.write(*cfg.plotdata, [&](std::ostream& os) {
        serial::write_columns_csv(pd.names, pd.columns, os);
      });
    }
    out << "verify: " << to_string(rep.decision) << " (min chi2 p = " << rep.min_p()
        << ", threshold " << threshold << ")\n";
  }
}

void cmd_sweep(const RunConfig& cfg, Outputs& outputs, std::ostream& out) {
  const auto depths = parse_depths(cfg.depths);
  PeakOptions peak;
  peak.method = serial::peak_method_from_string(cfg.peak_method);
  peak.bootstrap_replicates = cfg.bootstrap;
  const auto rows = sweep_modulation(depths, cfg.n, cfg.seed, peak, cfg.threads);
  const fs::path csv_path = cfg.out.value_or("sweep.csv");
  if (cfg.emit != Emit::json) {
    outputs.write(csv_path, [&](std::ostream& os) { serial::write_sweep_csv(rows, os); });
  }
  if (cfg.emit != Emit::csv) {
    json j;
    j["rows"] = json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"depth", r.depth},
                           {"delta", r.delta},
                           {"sigma_delta", r.sigma_delta},
                           {"delta_analytic", r.delta_analytic},
                           {"k", r.k()}});
    }
    json echo;
    echo["depths"] = cfg.depths;
    echo["n"] = cfg.n;
    echo["seed"] = cfg.seed;
    echo["peak_method"] = cfg.peak_method;
    echo["bootstrap"] = cfg.bootstrap;
    j["config"] = echo;
    outputs.write(with_suffix(csv_path, ".json"), serial::dump(j));
  }
  out << "sweep: " << rows.size() << " depths\n";
  for (const auto& r : rows) {
    out << "  depth=" << r.depth << " delta=" << r.delta << " sigma=" << r.sigma_delta
        << " analytic=" << r.delta_analytic << '\n';
  }
}

json summary_json(const fock::MarginalSummary& s) {
  return {{"peak", s.peak}, {"mean", s.mean}, {"variance", s.variance}, {"norm", s.norm}};
}

void cmd_counterexample(const RunConfig& cfg, Outputs& outputs, std::ostream& out) {
  const fs::path report_path = cfg.out.value_or("counterexample.json");
  const fock::FockDims dims{cfg.dim_a, cfg.dim_b};
  json report;
  report["cases"] = json::array();
  auto handle = [&](const std::string& name, const fock::FockDensityMatrix& rho, json params) {
    const auto a = fock::analyze_counterexample(rho, cfg.v0);
    json c;
    c["name"] = name;
    c["params"] = std::move(params);
    c["dims"] = {rho.dim_a(), rho.dim_b()};
    c["valid_density_matrix"] = rho.is_valid();
    if (name == "zero_discord") {
      c["classical_on_B"] = fock::verify_classical_on_B(rho, fock::plus_minus_basis(rho.dim_b()));
    }
    c["p_plus"] = a.plus.probability;
    c["p_minus"] = a.minus.probability;
    c["plus"] = summary_json(a.marginal_plus);
    c["minus"] = summary_json(a.marginal_minus);
    c["peak_separation"] = a.peak_separation;
    c["variance_ratio"] = a.variance_ratio;
    c["commutator_norm"] = a.commutator;

    const auto grid = fock::QuadratureGrid::symmetric(10.0, 0.02, cfg.v0);
    const auto uncond = fock::homodyne_marginal_fock(fock::partial_trace_a(rho), grid);
    const auto plus = fock::homodyne_marginal_fock(a.plus.rho_b, grid);
    const auto minus = fock::homodyne_marginal_fock(a.minus.rho_b, grid);
    const fs::path curve_path = with_tag(with_suffix(report_path, ".csv"), name);
    outputs.write(curve_path, [&](std::ostream& os) {
      serial::write_columns_csv({"x", "unconditional", "plus", "minus"},
                                {grid.points(), uncond, plus, minus}, os);
    });
    c["curves"] = curve_path.string();
    if (cfg.export_rho) {
      const fs::path rho_path = with_tag(report_path, name + "_rho");
      outputs.write(rho_path, serial::dump(serial::to_json(rho)));
      c["density_matrix"] = rho_path.string();
    }
    out << "counterexample " << name << ": peak separation " << a.peak_separation
        << ", variance ratio " << a.variance_ratio << ", commutator " << a.commutator << '\n';
    report["cases"].push_back(std::move(c));
  };
  if (cfg.which == "zero_discord" || cfg.which == "both") {
    handle("zero_discord", fock::build_ce_zero_discord(cfg.alpha, dims), {{"alpha", cfg.alpha}});
  }
  if (cfg.which == "hidden_discord" || cfg.which == "both") {
    fock::HiddenDiscordParams p;
    p.nbar = cfg.nbar;
    p.r = cfg.r;
    p.dims = dims;
    p.alpha_a = cfg.alpha;
    handle("hidden_discord", fock::build_ce_hidden_discord(p),
           {{"nbar", cfg.nbar}, {"r", cfg.r}, {"alpha_a", cfg.alpha}});
  }
  outputs.write(report_path, serial::dump(report));
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MalformedInputError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const IncompleteInputError*>(&e)) {
    return kExitValidation;
  }
  return kExitRuntime;
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(Command c) {
  switch (c) {
    case Command::simulate:
      return "simulate";
    case Command::verify:
      return "verify";
    case Command::sweep:
      return "sweep";
    default:
      return "counterexample";
  }
}

void RunConfig::validate() const {
  auto in = [](const std::string& v, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed) {
      if (v == a) {
        return true;
      }
    }
    return false;
  };
  if (!in(scheme, {"gaussian", "switched_noise", "switched_phase", "async_sine"})) {
    throw MalformedInputError("unknown scheme '" + scheme + "'");
  }
  if (!in(mode, {"gaussian", "mixture"})) {
    throw MalformedInputError("mode must be gaussian or mixture");
  }
  if (!in(pairs, {"all", "single"})) {
    throw MalformedInputError("pairs must be all or single");
  }
  if (!in(which, {"zero_discord", "hidden_discord", "both"})) {
    throw MalformedInputError("which must be zero_discord, hidden_discord or both");
  }
  serial::peak_method_from_string(peak_method);
  if (n < 1) {
    throw DomainError("n must be >= 1");
  }
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw DomainError("eta must lie in (0, 1]");
  }
  if (!(duty > 0.0 && duty <= 1.0)) {
    throw DomainError("duty must lie in (0, 1]");
  }
  if (!(v0 > 0.0) || !std::isfinite(v0)) {
    throw DomainError("v0 must be positive");
  }
  if (depth && (!(*depth >= 0.0) || !std::isfinite(*depth))) {
    throw DomainError("depth must be finite and >= 0");
  }
  if (!(k_min > 0.0)) {
    throw DomainError("k_min must be positive");
  }
  if (!(p_threshold > 0.0 && p_threshold < 1.0)) {
    throw DomainError("p_threshold must lie in (0, 1)");
  }
  if (bootstrap < 2) {
    throw DomainError("bootstrap needs at least 2 replicates");
  }
  if (!(nbar >= 0.0) || !(r >= 0.0) || !std::isfinite(alpha)) {
    throw DomainError("counterexample parameters out of range");
  }
  if (command == Command::verify && !records) {
    throw MalformedInputError("verify needs --records");
  }
  if (command == Command::sweep) {
    parse_depths(depths);
  }
  if (command == Command::simulate) {
    validate_scheme(make_scheme(*this));
  }
}

RunConfig resolve_config(Command command, const json& file, const json& flags) {
  RunConfig cfg;
  cfg.command = command;
  apply_layer(cfg, file, "config file");
  apply_layer(cfg, environment_layer(), "environment");
  apply_layer(cfg, flags, "command line");
  return cfg;
}

RunConfig parse_command_line(int argc, const char* const* argv) {
  CLI::App app{"Discord verification from homodyne records"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Spec {
    Command command;
    const char* description;
    std::vector<std::pair<const char*, const char*>> options;
    std::vector<std::pair<const char*, const char*>> flags;
  };
  const std::vector<std::pair<const char*, const char*>> common = {
      {"--out-dir", "output directory (env CVDISCORD_OUTPUT_DIR)"},
      {"--out", "primary output file"},
      {"--manifest", "manifest path (default <out-dir>/manifest.json)"},
      {"--threads", "worker threads (env CVDISCORD_THREADS)"},
      {"--seed", "random seed"},
      {"--n", "samples per phase pair or per sweep depth"},
      {"--emit", "json | csv | both"},
  };
  const std::vector<Spec> specs = {
      {Command::simulate,
       "sample homodyne records",
       {{"--scheme", "gaussian | switched_noise | switched_phase | async_sine"},
        {"--depth", "modulation depth in vacuum standard deviations"},
        {"--duty", "fraction of time the modulation is on"},
        {"--threshold-hint", "switched_phase: between-peaks cut on x_A"},
        {"--eta", "beam-splitter amplitude transmissivity"},
        {"--v0", "vacuum quadrature variance"},
        {"--theta-a-deg", "local-oscillator phase at A"},
        {"--theta-b-deg", "local-oscillator phase at B"},
        {"--pairs", "all | single (Gaussian sources)"},
        {"--state", "Gaussian state JSON to sample instead of a scheme"}},
       {}},
      {Command::verify,
       "run the discord verdict on a record file",
       {{"--records", "record CSV"},
        {"--mode", "gaussian | mixture"},
        {"--pairs", "all | single"},
        {"--threshold", "split point on x_A"},
        {"--k-min", "peak-separation significance"},
        {"--p-threshold", "chi-square rejection level"},
        {"--peak-method", "log_poly | bin_parabolic | kde"},
        {"--bootstrap", "bootstrap replicates"},
        {"--plotdata", "write density curves to this CSV"}},
       {{"--reference-gaussian", "add the average-variance Gaussian column"}}},
      {Command::sweep,
       "peak separation against modulation depth",
       {{"--depths", "a:b:n or comma list"},
        {"--peak-method", "log_poly | bin_parabolic | kde"},
        {"--bootstrap", "bootstrap replicates"}},
       {}},
      {Command::counterexample,
       "number-basis counterexamples",
       {{"--which", "zero_discord | hidden_discord | both"},
        {"--alpha", "coherent amplitude"},
        {"--nbar", "thermal photon number"},
        {"--r", "squeezing parameter"},
        {"--dim-a", "truncation at A (0 = automatic)"},
        {"--dim-b", "truncation at B (0 = automatic)"},
        {"--v0", "vacuum quadrature variance"}},
       {{"--export-rho", "write the joint density matrix"}}},
  };

  std::vector<std::pair<CLI::App*, Command>> subs;
  std::map<CLI::App*, std::string> config_paths;
  for (const auto& s : specs) {
    auto* sub = app.add_subcommand(to_string(s.command), s.description);
    sub->add_option("--config", config_paths[sub], "JSON config file");
    for (const auto& [name, desc] : common) {
      sub->add_option(name, desc);
    }
    for (const auto& [name, desc] : s.options) {
      sub->add_option(name, desc);
    }
    for (const auto& [name, desc] : s.flags) {
      sub->add_flag(name, desc);
    }
    subs.emplace_back(sub, s.command);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested{app.help("", CLI::AppFormatMode::All)};
  } catch (const CLI::ParseError& e) {
    // Subcommand help arrives here as well.
    if (e.get_exit_code() == 0) {
      std::string text;
      for (auto* sub : app.get_subcommands()) {
        text += sub->help();
      }
      throw HelpRequested{text.empty() ? app.help() : text};
    }
    throw MalformedInputError(e.what());
  }

  for (const auto& [sub, command] : subs) {
    if (!sub->parsed()) {
      continue;
    }
    json flags = json::object();
    for (const auto* opt : sub->get_options()) {
      if (opt->count() == 0 || opt->get_lnames().empty()) {
        continue;
      }
      std::string key = opt->get_lnames().front();
      if (key == "config" || key == "help") {
        continue;
      }
      std::replace(key.begin(), key.end(), '-', '_');
      if (opt->get_type_size() == 0) {
        flags[key] = true;
      } else {
        flags[key] = opt->results().back();
      }
    }
    json file = json::object();
    if (!config_paths[sub].empty()) {
      file = read_json_file(config_paths[sub]);
    }
    return resolve_config(command, file, flags);
  }
  throw MalformedInputError("no command given");
}

std::vector<double> parse_depths(const std::string& spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    const auto f = io::split(spec, ':');
    double a = 0.0, b = 0.0, n = 0.0;
    if (f.size() != 3 || !io::parse_double(f[0], a) || !io::parse_double(f[1], b) ||
        !io::parse_double(f[2], n) || n < 1.0 || n != std::floor(n)) {
      throw MalformedInputError("depth range must be a:b:n with integer n >= 1");
    }
    out = linspace(a, b, static_cast<std::size_t>(n));
  } else {
    for (const auto& part : io::split(spec, ',')) {
      double v = 0.0;
      if (!io::parse_double(part, v)) {
        throw MalformedInputError("bad depth value '" + std::string(part) + "'");
      }
      out.push_back(v);
    }
  }
  for (double d : out) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw DomainError("depths must be finite and >= 0");
    }
  }
  return out;
}

ModulationScheme make_scheme(const RunConfig& cfg) {
  if (cfg.scheme == "gaussian") {
    const double d = cfg.depth.value_or(4.5);
    return GaussianModulation{d, d};
  }
  if (cfg.scheme == "switched_noise") {
    const double d = cfg.depth.value_or(4.5);
    return SwitchedNoise{d, d, cfg.duty};
  }
  if (cfg.scheme == "switched_phase") {
    const double hint = cfg.threshold_hint.value_or(-6.0);
    if (cfg.depth) {
      return SwitchedPhase{*cfg.depth, cfg.duty, hint};
    }
    return SwitchedPhase::for_threshold(hint, cfg.eta, cfg.duty);
  }
  if (cfg.scheme == "async_sine") {
    return AsyncSine{cfg.depth.value_or(8.0)};
  }
  throw MalformedInputError("unknown scheme '" + cfg.scheme + "'");
}

PlotData plotdata_from_records(const RecordSet& rs, double threshold, bool reference_gaussian) {
  PlotData pd;
  if (rs.empty()) {
    return pd;
  }
  const auto [plus, minus] = split_by_threshold(rs, threshold);
  const auto all_b = column_x_b(rs);
  const Binning common{freedman_diaconis_edges(all_b)};
  const auto h_all = estimate_density(std::span<const double>(all_b), common);
  const auto h_plus = estimate_density(plus, common);
  const auto h_minus = estimate_density(minus, common);
  std::vector<double> x, u, p, m;
  for (std::size_t i = 0; i < h_all.bins(); ++i) {
    x.push_back(h_all.center(i));
    u.push_back(h_all.density(i));
    p.push_back(h_plus.density(i));
    m.push_back(h_minus.density(i));
  }
  pd.names = {"x", "unconditional", "plus", "minus"};
  pd.columns = {x, u, p, m};
  if (reference_gaussian) {
    const double mean = mean_of(all_b);
    const double var = detail::variance_of(all_b);
    std::vector<double> g;
    for (double xi : x) {
      g.push_back(numerics::normal_pdf(xi, mean, var));
    }
    pd.names.push_back("average_variance_gaussian");
    pd.columns.push_back(std::move(g));
  }
  return pd;
}

void emit_plotdata(const PlotData& data, const fs::path& path) {
  if (data.rows() == 0) {
    throw DomainError("no density data to write");
  }
  io::atomic_write(path, [&](std::ostream& os) {
    serial::write_columns_csv(data.names, data.columns, os);
  });
}

std::string sha256_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for hashing");
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 initialization failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) {
      EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return hex.str();
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  Outputs outputs(cfg.out_dir);
  int code = kExitOk;
  std::string error;
  try {
    cfg.validate();
    switch (cfg.command) {
      case Command::simulate:
        cmd_simulate(cfg, outputs, out);
        break;
      case Command::verify:
        cmd_verify(cfg, outputs, out);
        break;
      case Command::sweep:
        cmd_sweep(cfg, outputs, out);
        break;
      case Command::counterexample:
        cmd_counterexample(cfg, outputs, out);
        break;
    }
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    error = e.what();
    err << "error: " << e.what() << '\n';
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest;
  manifest["command"] = to_string(cfg.command);
  manifest["status"] = code == kExitOk ? "ok" : "error";
  manifest["exit_code"] = code;
  if (!error.empty()) {
    manifest["error"] = error;
  }
  manifest["config"] = config_echo(cfg);
  manifest["seed"] = cfg.seed;
  manifest["versions"] = versions();
  manifest["timings"] = {{"total_seconds", seconds}};
  manifest["outputs"] = json::array();
  try {
    for (const auto& p : outputs.written()) {
      manifest["outputs"].push_back({{"path", p.string()},
                                     {"bytes", fs::file_size(p)},
                                     {"sha256", sha256_hex(p)}});
    }
    io::atomic_write(outputs.resolve(cfg.manifest.value_or("manifest.json")),
                     serial::dump(manifest));
  } catch (const std::exception& e) {
    err << "error: manifest: " << e.what() << '\n';
    if (code == kExitOk) {
      code = kExitRuntime;
    }
  }
  return code;
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_command_line(argc, argv);
  } catch (const HelpRequested& h) {
    out << h.text;
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return run(cfg, out, err);
}

}  // namespace cvdiscord::cli
