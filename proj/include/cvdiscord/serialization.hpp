#pragma once

// JSON and CSV encodings for states, mixtures, verdicts, histograms, density
// matrices and curves. Doubles are written with 17 significant digits.

#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/fock.hpp"
#include "cvdiscord/io.hpp"
#include "cvdiscord/marginals.hpp"
#include "cvdiscord/sampler.hpp"
#include "cvdiscord/verifier.hpp"

namespace cvdiscord::serial {

using json = nlohmann::ordered_json;

namespace detail {

inline const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw MalformedInputError(std::string("missing field '") + key + "'");
  }
  return j.at(key);
}

inline double number(const json& j, const char* what) {
  if (!j.is_number()) {
    throw MalformedInputError(std::string("field '") + what + "' must be a number");
  }
  return j.get<double>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gaussian states: { "means": [4], "cov": [[4x4]], "v0": real }

inline json to_json(const GaussianBipartiteState& s) {
  json j;
  j["means"] = json::array();
  for (int i = 0; i < 4; ++i) {
    j["means"].push_back(s.means().values()(i));
  }
  j["cov"] = json::array();
  for (int i = 0; i < 4; ++i) {
    json row = json::array();
    for (int k = 0; k < 4; ++k) {
      row.push_back(s.cov()(i, k));
    }
    j["cov"].push_back(row);
  }
  j["v0"] = s.v0();
  return j;
}

/// Throws MalformedInputError on shape problems and DomainError on a non-physical matrix.
inline GaussianBipartiteState state_from_json(const json& j) {
  const double v0 = j.contains("v0") ? detail::number(j.at("v0"), "v0") : kShotNoiseVacuum;
  Vector4 means = Vector4::Zero();
  if (j.contains("means")) {
    const auto& m = j.at("means");
    if (!m.is_array() || m.size() != 4) {
      throw MalformedInputError("'means' must be an array of 4 numbers");
    }
    for (int i = 0; i < 4; ++i) {
      means(i) = detail::number(m[i], "means");
    }
  }
  const auto& c = detail::require(j, "cov");
  if (!c.is_array() || c.size() != 4) {
    throw MalformedInputError("'cov' must be a 4x4 array");
  }
  Matrix4 sigma;
  for (int i = 0; i < 4; ++i) {
    if (!c[i].is_array() || c[i].size() != 4) {
      throw MalformedInputError("'cov' must be a 4x4 array");
    }
    for (int k = 0; k < 4; ++k) {
      sigma(i, k) = detail::number(c[i][k], "cov");
    }
  }
  return {QuadratureMeans(means), CovarianceMatrix::make(sigma, v0)};
}

// ---------------------------------------------------------------------------
// P-function mixtures

inline json to_json(const MixtureComponent& c) {
  json j;
  j["kind"] = kind_name(c.kind);
  j["weight"] = c.weight;
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, CoherentPoint>) {
          j["alpha"] = {k.alpha.real(), k.alpha.imag()};
        } else if constexpr (std::is_same_v<T, ThermalNoise>) {
          j["nbar"] = k.nbar;
        } else {
          j["alpha0"] = k.alpha0;
        }
      },
      c.kind);
  return j;
}

inline MixtureComponent component_from_json(const json& j) {
  const auto& kind = detail::require(j, "kind");
  if (!kind.is_string()) {
    throw MalformedInputError("'kind' must be a string");
  }
  MixtureComponent c;
  c.weight = j.contains("weight") ? detail::number(j.at("weight"), "weight") : 1.0;
  const auto name = kind.get<std::string>();
  if (name == "coherent") {
    const auto& a = detail::require(j, "alpha");
    if (a.is_number()) {
      c.kind = CoherentPoint{a.get<double>()};
    } else if (a.is_array() && a.size() == 2) {
      c.kind = CoherentPoint{{detail::number(a[0], "alpha"), detail::number(a[1], "alpha")}};
    } else {
      throw MalformedInputError("'alpha' must be a number or [re, im]");
    }
  } else if (name == "thermal") {
    c.kind = ThermalNoise{detail::number(detail::require(j, "nbar"), "nbar")};
  } else if (name == "arcsine") {
    c.kind = ArcsineOrbit{detail::number(detail::require(j, "alpha0"), "alpha0")};
  } else {
    throw MalformedInputError("unknown mixture component kind '" + name + "'");
  }
  return c;
}

inline json to_json(const PMixtureState& pm) {
  json j;
  j["eta"] = pm.eta();
  j["v0"] = pm.v0();
  j["components"] = json::array();
  for (const auto& c : pm.components()) {
    j["components"].push_back(to_json(c));
  }
  return j;
}

inline PMixtureState pmixture_from_json(const json& j) {
  const auto& comps = detail::require(j, "components");
  if (!comps.is_array()) {
    throw MalformedInputError("'components' must be an array");
  }
  std::vector<MixtureComponent> out;
  for (const auto& c : comps) {
    out.push_back(component_from_json(c));
  }
  const double eta = j.contains("eta") ? detail::number(j.at("eta"), "eta") : std::sqrt(0.5);
  const double v0 = j.contains("v0") ? detail::number(j.at("v0"), "v0") : kShotNoiseVacuum;
  return PMixtureState::make(std::move(out), eta, v0);
}

// ---------------------------------------------------------------------------
// Modulation schemes

inline json to_json(const ModulationScheme& s) {
  json j;
  j["name"] = scheme_name(s);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, GaussianModulation>) {
          j["depth_x"] = v.depth_x;
          j["depth_p"] = v.depth_p;
        } else if constexpr (std::is_same_v<T, SwitchedNoise>) {
          j["depth_x"] = v.depth_x;
          j["depth_p"] = v.depth_p;
          j["duty"] = v.duty;
        } else if constexpr (std::is_same_v<T, SwitchedPhase>) {
          j["depth_p"] = v.depth_p;
          j["duty"] = v.duty;
          j["threshold_hint"] = v.threshold_hint;
        } else {
          j["depth"] = v.depth;
        }
      },
      s);
  return j;
}

inline json to_json(const SimulationConfig& c) {
  json j;
  j["scheme"] = to_json(c.scheme);
  j["eta"] = c.eta;
  j["n_samples"] = c.n_samples;
  j["seed"] = c.seed;
  j["theta_a"] = c.resolved_theta_a();
  j["theta_b"] = c.resolved_theta_b();
  j["v0"] = c.v0;
  return j;
}

// ---------------------------------------------------------------------------
// Verdicts

inline PeakMethod peak_method_from_string(const std::string& s) {
  if (s == "log_poly") {
    return PeakMethod::log_poly;
  }
  if (s == "bin_parabolic") {
    return PeakMethod::bin_parabolic;
  }
  if (s == "kde") {
    return PeakMethod::kde;
  }
  throw MalformedInputError("unknown peak method '" + s + "'");
}

inline json to_json(const VerifierOptions& o) {
  json j;
  j["k_min"] = o.k_min;
  j["p_threshold"] = o.p_threshold;
  j["threshold"] = o.threshold;
  j["peak_method"] = cvdiscord::to_string(o.peak.method);
  j["bootstrap_replicates"] = o.peak.bootstrap_replicates;
  j["bootstrap_seed"] = o.peak.seed;
  return j;
}

inline json to_json(const PairStatistics& p) {
  json j;
  j["theta_A"] = p.theta_a;
  j["theta_B"] = p.theta_b;
  j["delta"] = p.delta;
  j["sigma_delta"] = p.sigma_delta;
  j["k"] = p.k;
  j["chi2_p"] = p.chi2_p;
  j["chi2_p_sides"] = p.chi2_p_sides;
  j["n"] = p.n;
  j["n_plus"] = p.n_plus;
  j["n_minus"] = p.n_minus;
  return j;
}

/// Verdict document; `config` is echoed verbatim. Contains no timings.
inline json to_json(const DiscordVerdict& v, const json& config = json::object()) {
  json j;
  j["mode"] = "gaussian";
  j["decision"] = to_string(v.decision);
  j["pairs"] = json::array();
  for (const auto& p : v.pairs) {
    j["pairs"].push_back(to_json(p));
  }
  j["options"] = to_json(v.options);
  j["config"] = config;
  return j;
}

inline json to_json(const SideComparison& s) {
  json j;
  j["n"] = s.n;
  j["chi2"] = s.chi2.statistic;
  j["dof"] = s.chi2.dof;
  j["chi2_p"] = s.chi2.p_value;
  j["mean_shift"] = s.mean_shift;
  j["variance_ratio"] = s.variance_ratio;
  return j;
}

inline json to_json(const MixtureReport& r, const VerifierOptions& o,
                    const json& config = json::object()) {
  json j;
  j["mode"] = "mixture";
  j["decision"] = to_string(r.decision);
  j["threshold"] = r.threshold;
  j["chi2_p"] = r.min_p();
  j["plus"] = to_json(r.plus);
  j["minus"] = to_json(r.minus);
  j["delta"] = r.separation.delta;
  j["sigma_delta"] = r.separation.sigma_delta;
  j["options"] = to_json(o);
  j["config"] = config;
  return j;
}

// ---------------------------------------------------------------------------
// CSV tables

inline constexpr const char* kHistogramHeader = "left_edge,right_edge,count";

inline void write_histogram_csv(const Histogram& h, std::ostream& os) {
  os << kHistogramHeader << '\n';
  for (std::size_t i = 0; i < h.bins(); ++i) {
    os << io::format_double(h.edges[i]) << ',' << io::format_double(h.edges[i + 1]) << ','
       << h.counts[i] << '\n';
  }
}

inline Histogram read_histogram_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line.substr(0, line.find_last_not_of("\r") + 1) != kHistogramHeader) {
    throw ParseError("expected header '" + std::string(kHistogramHeader) + "'", 1);
  }
  Histogram h;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto f = io::split(line);
    double lo = 0.0, hi = 0.0, c = 0.0;
    if (f.size() != 3 || !io::parse_double(f[0], lo) || !io::parse_double(f[1], hi) ||
        !io::parse_double(f[2], c) || c < 0.0 || c != std::floor(c)) {
      throw ParseError("malformed histogram row", line_no);
    }
    if (h.edges.empty()) {
      h.edges.push_back(lo);
    } else if (h.edges.back() != lo) {
      throw ParseError("histogram bins are not contiguous", line_no);
    }
    h.edges.push_back(hi);
    h.counts.push_back(static_cast<std::uint64_t>(c));
    h.total += static_cast<std::uint64_t>(c);
  }
  return h;
}

/// Aligned numeric columns with a header row; space-free CSV readable by gnuplot
/// (`set datafile separator ','`).
inline void write_columns_csv(const std::vector<std::string>& names,
                              const std::vector<std::vector<double>>& columns, std::ostream& os) {
  if (names.size() != columns.size() || columns.empty()) {
    throw DomainError("column names and data do not match");
  }
  const std::size_t rows = columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != rows) {
      throw DomainError("columns have different lengths");
    }
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    os << (i ? "," : "") << names[i];
  }
  os << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      os << (i ? "," : "") << io::format_double(columns[i][r]);
    }
    os << '\n';
  }
}

inline void write_curve_csv(const std::vector<double>& x, const std::vector<double>& value,
                            std::ostream& os) {
  write_columns_csv({"x", "value"}, {x, value}, os);
}

inline json curve_to_json(const std::vector<double>& x, const std::vector<double>& value) {
  return json{{"x", x}, {"value", value}};
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os) {
  std::vector<double> d, delta, sigma, analytic;
  for (const auto& r : rows) {
    d.push_back(r.depth);
    delta.push_back(r.delta);
    sigma.push_back(r.sigma_delta);
    analytic.push_back(r.delta_analytic);
  }
  write_columns_csv({"depth", "delta", "sigma_delta", "delta_analytic"}, {d, delta, sigma, analytic},
                    os);
}

// ---------------------------------------------------------------------------
// Density matrices: { "dims": [dA, dB], "entries": [[re, im], ...] } row-major

inline json to_json(const fock::FockDensityMatrix& rho) {
  json j;
  j["dims"] = {rho.dim_a(), rho.dim_b()};
  json entries = json::array();
  const auto& m = rho.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      entries.push_back({m(r, c).real(), m(r, c).imag()});
    }
  }
  j["entries"] = std::move(entries);
  return j;
}

inline fock::FockDensityMatrix density_matrix_from_json(const json& j) {
  const auto& dims = detail::require(j, "dims");
  auto count = [](const json& d) { return d.is_number_integer() && d.get<long long>() > 0; };
  if (!dims.is_array() || dims.size() != 2 || !count(dims[0]) || !count(dims[1])) {
    throw MalformedInputError("'dims' must be [dim_a, dim_b]");
  }
  const auto da = dims[0].get<std::size_t>(), db = dims[1].get<std::size_t>();
  const auto& e = detail::require(j, "entries");
  const std::size_t n = da * db;
  if (!e.is_array() || e.size() != n * n) {
    throw MalformedInputError("'entries' must hold (dim_a*dim_b)^2 [re, im] pairs");
  }
  fock::Operator m(n, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    const auto& z = e[i];
    if (!z.is_array() || z.size() != 2) {
      throw MalformedInputError("density matrix entries must be [re, im] pairs");
    }
    m(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n)) = {
        detail::number(z[0], "entries"), detail::number(z[1], "entries")};
  }
  return {da, db, m};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace cvdiscord::serial
