#pragma once

// Synthetic dual-homodyne records. Each sample is drawn from a counter-derived
// substream keyed by (seed, chunk), so output never depends on the thread count.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/io.hpp"
#include "cvdiscord/marginals.hpp"
#include "cvdiscord/parallel.hpp"

namespace cvdiscord {

struct HomodyneRecord {
  double theta_a = 0.0;
  double theta_b = 0.0;
  double x_a = 0.0;
  double x_b = 0.0;

  friend bool operator==(const HomodyneRecord&, const HomodyneRecord&) = default;
};

struct RecordSet {
  std::vector<HomodyneRecord> records;
  /// Free-form provenance (scheme, seed, ...); not part of the CSV body.
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// ---------------------------------------------------------------------------
// Modulation schemes. Depths are in vacuum standard deviations.

/// Independent Gaussian displacement noise on both quadratures.
struct GaussianModulation {
  double depth_x = 4.5;
  double depth_p = 4.5;
};

/// Gaussian noise gated on with probability `duty`: vacuum/thermal mixture.
struct SwitchedNoise {
  double depth_x = 4.5;
  double depth_p = 4.5;
  double duty = 0.5;
};

/// Fixed phase-quadrature displacement gated on with probability `duty`: vacuum/coherent
/// mixture. The displacement points toward the sign of `threshold_hint`.
struct SwitchedPhase {
  double depth_p = 24.0 / std::numbers::sqrt2;
  double duty = 0.5;
  double threshold_hint = -6.0;

  /// Amplitude that puts the gated peak of the transmitted mode at 2 * hint,
  /// so that the hint is a between-peaks cut.
  static SwitchedPhase for_threshold(double hint, double eta, double duty = 0.5) {
    return {2.0 * std::abs(hint) / eta, duty, hint};
  }

  double signed_amplitude() const { return threshold_hint < 0.0 ? -depth_p : depth_p; }
};

/// Amplitude-quadrature sine displacement depth*cos(phi), phi uniform.
struct AsyncSine {
  double depth = 8.0;
};

using ModulationScheme = std::variant<GaussianModulation, SwitchedNoise, SwitchedPhase, AsyncSine>;

inline const char* scheme_name(const ModulationScheme& s) {
  switch (s.index()) {
    case 0:
      return "gaussian";
    case 1:
      return "switched_noise";
    case 2:
      return "switched_phase";
    default:
      return "async_sine";
  }
}

inline void validate_scheme(const ModulationScheme& scheme) {
  auto depth_ok = [](double d) { return std::isfinite(d) && d >= 0.0; };
  auto duty_ok = [](double d) { return d > 0.0 && d <= 1.0; };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianModulation>) {
          if (!depth_ok(s.depth_x) || !depth_ok(s.depth_p)) {
            throw DomainError("modulation depths must be finite and >= 0");
          }
        } else if constexpr (std::is_same_v<T, SwitchedNoise>) {
          if (!depth_ok(s.depth_x) || !depth_ok(s.depth_p)) {
            throw DomainError("modulation depths must be finite and >= 0");
          }
          if (!duty_ok(s.duty)) {
            throw DomainError("duty must lie in (0, 1]");
          }
        } else if constexpr (std::is_same_v<T, SwitchedPhase>) {
          if (!depth_ok(s.depth_p)) {
            throw DomainError("modulation depth must be finite and >= 0");
          }
          if (!duty_ok(s.duty)) {
            throw DomainError("duty must lie in (0, 1]");
          }
          if (!std::isfinite(s.threshold_hint)) {
            throw DomainError("threshold hint must be finite");
          }
        } else {
          if (!depth_ok(s.depth)) {
            throw DomainError("modulation depth must be finite and >= 0");
          }
        }
      },
      scheme);
}

/// Local-oscillator phase a scheme is naturally read out at: the phase quadrature for
/// switched-phase modulation, the amplitude quadrature otherwise.
inline double default_theta(const ModulationScheme& scheme) {
  return std::holds_alternative<SwitchedPhase>(scheme) ? std::numbers::pi / 2.0 : 0.0;
}

struct SimulationConfig {
  ModulationScheme scheme = GaussianModulation{};
  double eta = std::numbers::sqrt2 / 2.0;
  std::size_t n_samples = 100000;
  std::uint64_t seed = 0;
  std::optional<double> theta_a;
  std::optional<double> theta_b;
  double v0 = kShotNoiseVacuum;
  unsigned threads = 0;

  double resolved_theta_a() const { return theta_a.value_or(default_theta(scheme)); }
  double resolved_theta_b() const { return theta_b.value_or(default_theta(scheme)); }

  void validate() const {
    validate_scheme(scheme);
    BeamSplitter::make(eta);
    if (n_samples < 1) {
      throw DomainError("n_samples must be >= 1");
    }
    if (!(v0 > 0.0)) {
      throw DomainError("vacuum variance must be positive");
    }
  }
};

/// P-function description of the prepared input, for analytic comparison.
inline PMixtureState to_pmixture(const ModulationScheme& scheme, double eta,
                                 double v0 = kShotNoiseVacuum) {
  std::vector<MixtureComponent> comps;
  // Gaussian displacement noise of variance d^2 v0 per quadrature is a thermal
  // P-function with nbar = d^2 / 2.
  auto thermal = [](double dx, double dp) {
    if (dx != dp) {
      throw DomainError("anisotropic noise modulation has no thermal P-function form");
    }
    return ThermalNoise{0.5 * dx * dx};
  };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianModulation>) {
          comps.push_back({1.0, thermal(s.depth_x, s.depth_p)});
        } else if constexpr (std::is_same_v<T, SwitchedNoise>) {
          comps.push_back({s.duty, thermal(s.depth_x, s.depth_p)});
          comps.push_back({1.0 - s.duty, CoherentPoint{0.0}});
        } else if constexpr (std::is_same_v<T, SwitchedPhase>) {
          comps.push_back({s.duty, CoherentPoint{{0.0, 0.5 * s.signed_amplitude()}}});
          comps.push_back({1.0 - s.duty, CoherentPoint{0.0}});
        } else {
          comps.push_back({1.0, ArcsineOrbit{0.5 * s.depth}});
        }
      },
      scheme);
  return PMixtureState::make(std::move(comps), eta, v0);
}

/// Gaussian state prepared by the Gaussian modulation scheme.
inline GaussianBipartiteState to_gaussian_state(const GaussianModulation& g, double eta,
                                                double v0 = kShotNoiseVacuum) {
  return apply_beam_splitter(
      tensor_product(modulated_beam(g.depth_x, g.depth_p, v0), SingleModeState::vacuum(v0)),
      BeamSplitter::make(eta));
}

namespace detail {

inline constexpr std::size_t kChunkSize = 1u << 16;
inline constexpr std::uint64_t kGaussianStream = 0x6761757373ULL;
inline constexpr std::uint64_t kSchemeStream = 0x736368656dULL;

template <class DrawChunk>
std::vector<HomodyneRecord> sample_chunked(std::size_t n, std::uint64_t seed,
                                           std::uint64_t stream, unsigned threads,
                                           DrawChunk&& draw) {
  std::vector<HomodyneRecord> out(n);
  const std::size_t chunks = (n + kChunkSize - 1) / kChunkSize;
  parallel_for(chunks, threads, [&](std::size_t c) {
    std::mt19937_64 rng(substream_seed(seed, stream, c));
    const std::size_t begin = c * kChunkSize;
    const std::size_t end = std::min(n, begin + kChunkSize);
    draw(rng, std::span<HomodyneRecord>(out.data() + begin, end - begin));
  });
  return out;
}

}  // namespace detail

/// n draws of (x_A, x_B) from the Gaussian homodyne joint marginal at the given phases.
inline RecordSet sample_gaussian(const GaussianBipartiteState& state, double theta_a,
                                 double theta_b, std::size_t n, std::uint64_t seed,
                                 unsigned threads = 0) {
  if (n < 1) {
    throw DomainError("sample count must be >= 1");
  }
  // Revalidate: states can only be built through validating factories, but
  // a report failure here would mean a broken invariant upstream.
  if (!validate_covariance(state.cov().matrix(), state.v0()).ok()) {
    throw DomainError("refusing to sample a non-physical state");
  }
  const auto form = joint_marginal_form(state, theta_a, theta_b);
  const double l11 = std::sqrt(form.variance_a());
  const double l21 = form.covariance() / l11;
  const double l22 = std::sqrt(std::max(0.0, form.variance_b() - l21 * l21));
  const double ma = form.mean_a(), mb = form.mean_b();

  RecordSet rs;
  rs.records = detail::sample_chunked(
      n, seed, detail::kGaussianStream, threads,
      [&](std::mt19937_64& rng, std::span<HomodyneRecord> out) {
        boost::random::normal_distribution<double> normal;
        for (auto& r : out) {
          const double z1 = normal(rng);
          const double z2 = normal(rng);
          r = {theta_a, theta_b, ma + l11 * z1, mb + l21 * z1 + l22 * z2};
        }
      });
  rs.metadata["source"] = "gaussian_state";
  rs.metadata["seed"] = std::to_string(seed);
  return rs;
}

/// Samples the scheme: latent gate/phase per sample, displacement split through the
/// beam splitter, independent vacuum noise on each output quadrature.
inline RecordSet sample_scheme(const SimulationConfig& config) {
  config.validate();
  const double theta_a = config.resolved_theta_a();
  const double theta_b = config.resolved_theta_b();
  const BeamSplitter bs = BeamSplitter::make(config.eta);
  const double e = bs.eta(), et = bs.eta_tilde();
  const double sv = std::sqrt(config.v0);
  const double ca = std::cos(theta_a), sa = std::sin(theta_a);
  const double cb = std::cos(theta_b), sb = std::sin(theta_b);
  const ModulationScheme scheme = config.scheme;

  RecordSet rs;
  rs.records = detail::sample_chunked(
      config.n_samples, config.seed, detail::kSchemeStream, config.threads,
      [&](std::mt19937_64& rng, std::span<HomodyneRecord> out) {
        boost::random::normal_distribution<double> normal;
        boost::random::uniform_01<double> uniform;
        for (auto& r : out) {
          double dx = 0.0, dp = 0.0;
          std::visit(
              [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, GaussianModulation>) {
                  dx = s.depth_x * sv * normal(rng);
                  dp = s.depth_p * sv * normal(rng);
                } else if constexpr (std::is_same_v<T, SwitchedNoise>) {
                  const bool on = uniform(rng) < s.duty;
                  const double nx = normal(rng), np = normal(rng);
                  if (on) {
                    dx = s.depth_x * sv * nx;
                    dp = s.depth_p * sv * np;
                  }
                } else if constexpr (std::is_same_v<T, SwitchedPhase>) {
                  if (uniform(rng) < s.duty) {
                    dp = s.signed_amplitude() * sv;
                  }
                } else {
                  const double phi = 2.0 * std::numbers::pi * uniform(rng);
                  dx = s.depth * sv * std::cos(phi);
                }
              },
              scheme);
          const double na = normal(rng), nb = normal(rng);
          r.theta_a = theta_a;
          r.theta_b = theta_b;
          r.x_a = e * (ca * dx + sa * dp) + sv * na;
          r.x_b = et * (cb * dx + sb * dp) + sv * nb;
        }
      });
  rs.metadata["source"] = scheme_name(scheme);
  rs.metadata["seed"] = std::to_string(config.seed);
  return rs;
}

// ---------------------------------------------------------------------------
// Record files: CSV, header theta_A,theta_B,x_A,x_B.

inline constexpr const char* kRecordHeader = "theta_A,theta_B,x_A,x_B";

inline void write_records(const RecordSet& rs, std::ostream& os) {
  os << kRecordHeader << '\n';
  for (const auto& r : rs.records) {
    os << io::format_double(r.theta_a) << ',' << io::format_double(r.theta_b) << ','
       << io::format_double(r.x_a) << ',' << io::format_double(r.x_b) << '\n';
  }
}

inline void write_records(const RecordSet& rs, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& os) { write_records(rs, os); });
}

inline RecordSet read_records(std::istream& in) {
  RecordSet rs;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw ParseError("missing header", 1);
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != kRecordHeader) {
    throw ParseError("unexpected header '" + line + "'", line_no);
  }
  static constexpr const char* kFields[] = {"theta_A", "theta_B", "x_A", "x_B"};
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto fields = io::split(line);
    if (fields.size() != 4) {
      throw ParseError("expected 4 fields, got " + std::to_string(fields.size()), line_no);
    }
    double v[4];
    for (int i = 0; i < 4; ++i) {
      if (!io::parse_double(fields[i], v[i]) || !std::isfinite(v[i])) {
        throw ParseError("field " + std::string(kFields[i]) + " is not a finite number: '" +
                             std::string(fields[i]) + "'",
                         line_no);
      }
    }
    rs.records.push_back({v[0], v[1], v[2], v[3]});
  }
  return rs;
}

inline RecordSet read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open record file " + path.string());
  }
  return read_records(in);
}

/// Records measured at the given phases (exact match).
inline RecordSet select_pair(const RecordSet& rs, double theta_a, double theta_b) {
  RecordSet out;
  out.metadata = rs.metadata;
  for (const auto& r : rs.records) {
    if (r.theta_a == theta_a && r.theta_b == theta_b) {
      out.records.push_back(r);
    }
  }
  return out;
}

inline std::vector<double> column_x_a(const RecordSet& rs) {
  std::vector<double> v;
  v.reserve(rs.size());
  for (const auto& r : rs.records) {
    v.push_back(r.x_a);
  }
  return v;
}

inline std::vector<double> column_x_b(const RecordSet& rs) {
  std::vector<double> v;
  v.reserve(rs.size());
  for (const auto& r : rs.records) {
    v.push_back(r.x_b);
  }
  return v;
}

}  // namespace cvdiscord
