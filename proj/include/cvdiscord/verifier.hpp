#pragma once

// From homodyne records to a discord verdict: threshold splits, histograms,
// conditional peak locations with bootstrap errors, two-sample chi-square tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/binomial_distribution.hpp>

#include "cvdiscord/core_states.hpp"
#include "cvdiscord/errors.hpp"
#include "cvdiscord/marginals.hpp"
#include "cvdiscord/parallel.hpp"
#include "cvdiscord/sampler.hpp"

namespace cvdiscord {

struct Histogram {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  std::size_t bins() const { return counts.size(); }
  double width(std::size_t i) const { return edges[i + 1] - edges[i]; }
  double center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }

  /// Count density normalized to unit integral.
  double density(std::size_t i) const {
    return total == 0 ? 0.0 : static_cast<double>(counts[i]) / (total * width(i));
  }

  void check() const {
    if (edges.size() != counts.size() + 1) {
      throw MalformedInputError("histogram needs one more edge than bins");
    }
    if (!std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
      throw MalformedInputError("histogram edges must be strictly ascending");
    }
    if (std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) != total) {
      throw MalformedInputError("histogram counts do not sum to total");
    }
  }
};

inline constexpr std::size_t kMinBins = 50;
inline constexpr std::size_t kMaxBins = 400;

inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Equal-width edges over [min, max] padded by one bin on each side; the bin count
/// follows the Freedman-Diaconis rule clamped to [50, 400].
inline std::vector<double> freedman_diaconis_edges(std::span<const double> values) {
  if (values.empty()) {
    throw InsufficientDataError("cannot bin an empty sample");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double lo = sorted.front(), hi = sorted.back();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double fd = 2.0 * iqr * std::pow(static_cast<double>(sorted.size()), -1.0 / 3.0);
  std::size_t bins = kMinBins;
  if (fd > 0.0) {
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / fd));
  }
  bins = std::clamp(bins, kMinBins, kMaxBins);
  const double w = (hi - lo) / static_cast<double>(bins);
  std::vector<double> edges(bins + 3);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = lo - w + w * static_cast<double>(i);
  }
  // Bins are half-open, so the maximum needs an upper real edge strictly above it.
  edges[1] = lo;
  edges[bins + 1] = std::max(edges[bins + 1], std::nextafter(hi, HUGE_VAL));
  return edges;
}

/// Either explicit edges or the automatic rule.
struct Binning {
  std::optional<std::vector<double>> edges;
};

/// Values outside explicit edges are dropped (and not counted in total).
inline Histogram estimate_density(std::span<const double> values, const Binning& binning = {}) {
  if (values.empty()) {
    throw InsufficientDataError("cannot estimate a density from an empty sample");
  }
  Histogram h;
  h.edges = binning.edges ? *binning.edges : freedman_diaconis_edges(values);
  if (h.edges.size() < 2) {
    throw MalformedInputError("binning needs at least two edges");
  }
  h.counts.assign(h.edges.size() - 1, 0);
  const double lo = h.edges.front();
  const double w = (h.edges.back() - lo) / static_cast<double>(h.counts.size());
  for (double v : values) {
    if (v < lo || v > h.edges.back()) {
      continue;
    }
    auto i = static_cast<std::size_t>((v - lo) / w);
    i = std::min(i, h.counts.size() - 1);
    // Edges are equal width up to rounding; nudge to the enclosing bin.
    while (i > 0 && v < h.edges[i]) {
      --i;
    }
    while (i + 1 < h.counts.size() && v >= h.edges[i + 1]) {
      ++i;
    }
    ++h.counts[i];
    ++h.total;
  }
  h.check();
  return h;
}

inline Histogram estimate_density(const RecordSet& rs, const Binning& binning = {}) {
  const auto xb = column_x_b(rs);
  return estimate_density(std::span<const double>(xb), binning);
}

// ---------------------------------------------------------------------------
// Splits

/// Partition on x_A >= t (plus) vs x_A < t (minus); order within each side is kept.
inline std::pair<RecordSet, RecordSet> split_by_threshold(const RecordSet& rs, double t) {
  if (rs.empty()) {
    throw DegenerateSplitError("cannot split an empty record set");
  }
  RecordSet plus, minus;
  plus.metadata = minus.metadata = rs.metadata;
  for (const auto& r : rs.records) {
    (r.x_a >= t ? plus : minus).records.push_back(r);
  }
  if (plus.empty() || minus.empty()) {
    throw DegenerateSplitError("threshold " + std::to_string(t) + " leaves the " +
                               (plus.empty() ? "plus" : "minus") + " side empty");
  }
  return {std::move(plus), std::move(minus)};
}

// ---------------------------------------------------------------------------
// Peaks

enum class PeakMethod {
  /// Weighted cubic fit of log-counts over the bins above half the (smoothed) maximum.
  log_poly,
  /// Parabola through the maximum bin and its two neighbours.
  bin_parabolic,
  /// Gaussian-kernel smoothing of the histogram, then bin_parabolic on the smooth curve.
  kde,
};

inline const char* to_string(PeakMethod m) {
  switch (m) {
    case PeakMethod::log_poly:
      return "log_poly";
    case PeakMethod::bin_parabolic:
      return "bin_parabolic";
    default:
      return "kde";
  }
}

struct PeakOptions {
  PeakMethod method = PeakMethod::log_poly;
  std::size_t bootstrap_replicates = 200;
  std::uint64_t seed = 0;
  double window_fraction = 0.5;
  unsigned threads = 0;
};

struct PeakEstimate {
  double location = 0.0;
  double std_error = 0.0;
  PeakMethod method = PeakMethod::log_poly;
  bool boundary_warning = false;
};

namespace detail {

struct PeakPoint {
  double location;
  bool boundary;
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double parabolic_offset(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (denom >= 0.0) {
    return 0.0;
  }
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

inline PeakPoint three_point_peak(const std::vector<double>& edges, std::span<const double> y) {
  const std::size_t n = y.size();
  const std::size_t i = argmax(y);
  const double w = edges[1] - edges[0];
  const double c = 0.5 * (edges[i] + edges[i + 1]);
  if (i == 0 || i + 1 == n) {
    return {c, true};
  }
  return {c + w * parabolic_offset(y[i - 1], y[i], y[i + 1]), false};
}

inline std::vector<double> moving_average(std::span<const double> y, std::size_t k) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t lo = i >= k ? i - k : 0;
    const std::size_t hi = std::min(y.size() - 1, i + k);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) {
      s += y[j];
    }
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

/// Weighted least squares polynomial fit, coefficients in increasing degree.
inline Eigen::VectorXd poly_fit(const std::vector<double>& x, const std::vector<double>& y,
                                const std::vector<double>& w, int degree) {
  Eigen::MatrixXd a(x.size(), degree + 1);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sw = std::sqrt(w[i]);
    double p = 1.0;
    for (int d = 0; d <= degree; ++d) {
      a(i, d) = sw * p;
      p *= x[i];
    }
    b(i) = sw * y[i];
  }
  return a.colPivHouseholderQr().solve(b);
}

inline double poly_value(const Eigen::VectorXd& c, double u) {
  double r = 0.0;
  for (Eigen::Index i = c.size() - 1; i >= 0; --i) {
    r = r * u + c(i);
  }
  return r;
}

/// Highest interior local maximum of the polynomial on [lo, hi], if any.
inline std::optional<double> poly_vertex(const Eigen::VectorXd& c, double lo, double hi) {
  Eigen::VectorXd d(std::max<Eigen::Index>(c.size() - 1, 1));
  d.setZero();
  for (Eigen::Index i = 1; i < c.size(); ++i) {
    d(i - 1) = static_cast<double>(i) * c(i);
  }
  constexpr int kScan = 512;
  std::optional<double> best;
  double best_value = 0.0;
  double u0 = lo, d0 = poly_value(d, lo);
  for (int k = 1; k <= kScan; ++k) {
    const double u1 = lo + (hi - lo) * k / kScan;
    const double d1 = poly_value(d, u1);
    if (d0 > 0.0 && d1 <= 0.0) {
      double a = u0, b = u1;
      for (int it = 0; it < 60; ++it) {
        const double m = 0.5 * (a + b);
        (poly_value(d, m) > 0.0 ? a : b) = m;
      }
      const double u = 0.5 * (a + b);
      if (const double v = poly_value(c, u); !best || v > best_value) {
        best = u;
        best_value = v;
      }
    }
    u0 = u1;
    d0 = d1;
  }
  return best;
}

inline PeakPoint log_poly_peak(const std::vector<double>& edges, std::span<const double> y,
                               double fraction) {
  const std::size_t n = y.size();
  const std::size_t k = std::max<std::size_t>(1, n / 40);
  const auto smooth = moving_average(y, k);
  const std::size_t im = argmax(smooth);
  const bool boundary = im == 0 || im + 1 == n;
  const double thr = fraction * smooth[im];
  std::size_t lo = im, hi = im;
  while (lo > 0 && smooth[lo - 1] >= thr) {
    --lo;
  }
  while (hi + 1 < n && smooth[hi + 1] >= thr) {
    ++hi;
  }
  const double x0 = 0.5 * (edges[im] + edges[im + 1]);
  const double half = std::max(0.5 * (edges[hi + 1] - edges[lo]), edges[1] - edges[0]);
  std::vector<double> xs, ls, ws;
  for (std::size_t i = lo; i <= hi; ++i) {
    if (y[i] > 0.0) {
      xs.push_back((0.5 * (edges[i] + edges[i + 1]) - x0) / half);
      ls.push_back(std::log(y[i]));
      ws.push_back(y[i]);
    }
  }
  // Quartic absorbs the skew of strongly correlated conditionals; quadratic is the fallback.
  for (int degree : {4, 2}) {
    if (xs.size() < static_cast<std::size_t>(degree + 3)) {
      continue;
    }
    const auto coeffs = poly_fit(xs, ls, ws, degree);
    if (auto u = poly_vertex(coeffs, xs.front(), xs.back())) {
      return {x0 + half * *u, boundary};
    }
  }
  auto p = three_point_peak(edges, y);
  p.boundary = p.boundary || boundary;
  return p;
}

inline PeakPoint kde_peak(const Histogram& h, std::span<const double> y) {
  const double w = h.edges[1] - h.edges[0];
  double n = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    n += y[i];
    mean += y[i] * h.center(i);
  }
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    var += y[i] * (h.center(i) - mean) * (h.center(i) - mean);
  }
  const double sd = std::sqrt(var / n);
  const double bw = std::max(0.9 * sd * std::pow(n, -0.2), 0.5 * w);
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(4.0 * bw / w));
  std::vector<double> smooth(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::ptrdiff_t d = -reach; d <= reach; ++d) {
      const auto j = static_cast<std::ptrdiff_t>(i) + d;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(y.size())) {
        continue;
      }
      const double u = d * w / bw;
      smooth[i] += y[static_cast<std::size_t>(j)] * std::exp(-0.5 * u * u);
    }
  }
  return three_point_peak(h.edges, smooth);
}

inline PeakPoint peak_of_counts(const Histogram& h, std::span<const double> counts,
                                const PeakOptions& opts) {
  switch (opts.method) {
    case PeakMethod::bin_parabolic:
      return three_point_peak(h.edges, counts);
    case PeakMethod::kde:
      return kde_peak(h, counts);
    default:
      return log_poly_peak(h.edges, counts, opts.window_fraction);
  }
}

inline constexpr std::uint64_t kBootstrapStream = 0x626f6f74ULL;

}  // namespace detail

/// Peak location of the histogram with a bootstrap standard error. Resampling whole
/// records with fixed edges is equivalent to a multinomial draw of the bin counts,
/// which is what the replicates use.
inline PeakEstimate estimate_peak(const Histogram& h, const PeakOptions& opts = {}) {
  h.check();
  const auto occupied = std::count_if(h.counts.begin(), h.counts.end(),
                                      [](std::uint64_t c) { return c > 0; });
  if (occupied < 3) {
    throw InsufficientDataError("peak estimation needs at least 3 occupied bins");
  }
  std::vector<double> counts(h.counts.begin(), h.counts.end());
  const auto point = detail::peak_of_counts(h, counts, opts);

  PeakEstimate est;
  est.location = point.location;
  est.method = opts.method;
  est.boundary_warning = point.boundary;
  if (opts.bootstrap_replicates < 2) {
    return est;
  }
  std::vector<double> reps(opts.bootstrap_replicates);
  parallel_for(reps.size(), opts.threads, [&](std::size_t b) {
    std::mt19937_64 rng(substream_seed(opts.seed, detail::kBootstrapStream, b));
    std::vector<double> draw(counts.size(), 0.0);
    std::int64_t remaining = static_cast<std::int64_t>(h.total);
    double remaining_p = 1.0;
    for (std::size_t i = 0; i < counts.size() && remaining > 0; ++i) {
      const double p = counts[i] / static_cast<double>(h.total);
      if (p <= 0.0) {
        continue;
      }
      const double q = std::min(1.0, p / remaining_p);
      std::int64_t c = remaining;
      if (q < 1.0) {
        boost::random::binomial_distribution<std::int64_t, double> binom(remaining, q);
        c = binom(rng);
      }
      draw[i] = static_cast<double>(c);
      remaining -= c;
      remaining_p -= p;
    }
    reps[b] = detail::peak_of_counts(h, draw, opts).location;
  });
  const double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / reps.size();
  double ss = 0.0;
  for (double r : reps) {
    ss += (r - mean) * (r - mean);
  }
  est.std_error = std::sqrt(ss / static_cast<double>(reps.size() - 1));
  return est;
}

// ---------------------------------------------------------------------------
// Chi-square

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

inline constexpr double kMinExpectedCount = 5.0;

/// Two-sample chi-square test for binned data with unequal totals. Adjacent bins are
/// merged left to right until both expected counts of every merged bin are >= 5.
inline ChiSquareResult chi_square_two_sample(const Histogram& h1, const Histogram& h2) {
  h1.check();
  h2.check();
  if (h1.edges != h2.edges) {
    throw DomainError("chi-square test requires a common binning");
  }
  if (h1.total == 0 || h2.total == 0) {
    throw InsufficientDataError("chi-square test needs non-empty histograms");
  }
  const double r_tot = static_cast<double>(h1.total);
  const double s_tot = static_cast<double>(h2.total);
  const double n_tot = r_tot + s_tot;
  std::vector<std::pair<double, double>> merged;
  double r_acc = 0.0, s_acc = 0.0;
  for (std::size_t i = 0; i < h1.bins(); ++i) {
    r_acc += static_cast<double>(h1.counts[i]);
    s_acc += static_cast<double>(h2.counts[i]);
    const double pooled = r_acc + s_acc;
    if (std::min(r_tot, s_tot) * pooled / n_tot >= kMinExpectedCount) {
      merged.emplace_back(r_acc, s_acc);
      r_acc = s_acc = 0.0;
    }
  }
  if (r_acc + s_acc > 0.0) {
    if (merged.empty()) {
      merged.emplace_back(r_acc, s_acc);
    } else {
      merged.back().first += r_acc;
      merged.back().second += s_acc;
    }
  }
  if (merged.size() < 2) {
    throw InsufficientDataError("fewer than 2 bins remain after merging sparse bins");
  }
  const double kr = std::sqrt(s_tot / r_tot);
  const double ks = std::sqrt(r_tot / s_tot);
  double stat = 0.0;
  for (const auto& [r, s] : merged) {
    const double d = kr * r - ks * s;
    stat += d * d / (r + s);
  }
  ChiSquareResult res;
  res.statistic = stat;
  res.dof = static_cast<int>(merged.size()) - 1;
  res.p_value = stat <= 0.0 ? 1.0 : boost::math::gamma_q(0.5 * res.dof, 0.5 * stat);
  return res;
}

// ---------------------------------------------------------------------------
// Separation statistics and verdicts

struct SeparationResult {
  double delta = 0.0;
  double sigma_delta = 0.0;
  PeakEstimate plus;
  PeakEstimate minus;
  std::size_t n_plus = 0;
  std::size_t n_minus = 0;
  double mean_shift = 0.0;

  double significance() const {
    return sigma_delta > 0.0 ? std::abs(delta) / sigma_delta
                             : (delta == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  }
};

inline double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Peak of D_{B|+} minus peak of D_{B|-}, with sigma = sqrt(se+^2 + se-^2). Both sides
/// are binned on the edges of the pooled x_B sample.
inline SeparationResult separation_statistic(const RecordSet& rs, double threshold,
                                             const PeakOptions& opts = {}) {
  const auto [plus, minus] = split_by_threshold(rs, threshold);
  const auto all_b = column_x_b(rs);
  const Binning common{freedman_diaconis_edges(all_b)};
  const auto xb_plus = column_x_b(plus);
  const auto xb_minus = column_x_b(minus);
  PeakOptions plus_opts = opts, minus_opts = opts;
  plus_opts.seed = substream_seed(opts.seed, 0x2b, 0);
  minus_opts.seed = substream_seed(opts.seed, 0x2d, 0);
  SeparationResult res;
  res.plus = estimate_peak(estimate_density(std::span<const double>(xb_plus), common), plus_opts);
  res.minus =
      estimate_peak(estimate_density(std::span<const double>(xb_minus), common), minus_opts);
  res.delta = res.plus.location - res.minus.location;
  res.sigma_delta = std::hypot(res.plus.std_error, res.minus.std_error);
  res.n_plus = plus.size();
  res.n_minus = minus.size();
  res.mean_shift = mean_of(xb_plus) - mean_of(xb_minus);
  return res;
}

struct SideComparison {
  ChiSquareResult chi2;
  double mean_shift = 0.0;      // conditional mean minus unconditional mean
  double variance_ratio = 1.0;  // conditional variance over unconditional variance
  std::size_t n = 0;
};

namespace detail {
inline double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) {
    ss += (x - m) * (x - m);
  }
  return ss / static_cast<double>(v.size() - 1);
}

/// Conditional x_B histograms against the unconditional one on common edges.
inline std::pair<SideComparison, SideComparison> compare_sides(const RecordSet& rs,
                                                               double threshold) {
  const auto [plus, minus] = split_by_threshold(rs, threshold);
  const auto all_b = column_x_b(rs);
  const Binning common{freedman_diaconis_edges(all_b)};
  const auto h_all = estimate_density(std::span<const double>(all_b), common);
  const double m_all = mean_of(all_b);
  const double v_all = variance_of(all_b);
  auto side = [&](const RecordSet& s) {
    const auto xb = column_x_b(s);
    SideComparison c;
    c.chi2 = chi_square_two_sample(estimate_density(std::span<const double>(xb), common), h_all);
    c.mean_shift = mean_of(xb) - m_all;
    c.variance_ratio = xb.size() > 1 ? variance_of(xb) / v_all : 1.0;
    c.n = xb.size();
    return c;
  };
  return {side(plus), side(minus)};
}

/// Plus-side against minus-side x_B histograms: disjoint samples, so the p-value is
/// uniform under independence. Diagnostic only.
inline ChiSquareResult split_chi_square(const RecordSet& rs, double threshold) {
  const auto [plus, minus] = split_by_threshold(rs, threshold);
  const auto all_b = column_x_b(rs);
  const Binning common{freedman_diaconis_edges(all_b)};
  return chi_square_two_sample(estimate_density(plus, common), estimate_density(minus, common));
}
}  // namespace detail

enum class Decision { discordant, not_detected };

inline const char* to_string(Decision d) {
  return d == Decision::discordant ? "discordant" : "not-detected";
}

struct PairStatistics {
  double theta_a = 0.0;
  double theta_b = 0.0;
  double delta = 0.0;
  double sigma_delta = 0.0;
  double k = 0.0;
  /// Smaller of the two conditional-vs-unconditional chi-square p-values.
  double chi2_p = 1.0;
  /// Plus side against minus side; not used by the decision.
  double chi2_p_sides = 1.0;
  std::size_t n = 0;
  std::size_t n_plus = 0;
  std::size_t n_minus = 0;
  double mean_shift = 0.0;
};

struct VerifierOptions {
  double k_min = 3.0;
  double p_threshold = 0.05;
  double threshold = 0.0;
  PeakOptions peak;
};

struct DiscordVerdict {
  std::vector<PairStatistics> pairs;
  Decision decision = Decision::not_detected;
  VerifierOptions options;

  bool discordant() const { return decision == Decision::discordant; }

  /// Pairs that individually meet the significance rule.
  std::vector<const PairStatistics*> detecting_pairs() const {
    std::vector<const PairStatistics*> out;
    for (const auto& p : pairs) {
      if (p.k >= options.k_min || p.chi2_p < options.p_threshold) {
        out.push_back(&p);
      }
    }
    return out;
  }
};

inline PairStatistics pair_statistics(const RecordSet& rs, const VerifierOptions& opts) {
  if (rs.empty()) {
    throw IncompleteInputError("empty record set for a phase pair");
  }
  const auto sep = separation_statistic(rs, opts.threshold, opts.peak);
  const auto [cp, cm] = detail::compare_sides(rs, opts.threshold);
  PairStatistics p;
  p.theta_a = rs.records.front().theta_a;
  p.theta_b = rs.records.front().theta_b;
  p.delta = sep.delta;
  p.sigma_delta = sep.sigma_delta;
  p.k = sep.significance();
  p.chi2_p = std::min(cp.chi2.p_value, cm.chi2.p_value);
  p.chi2_p_sides = detail::split_chi_square(rs, opts.threshold).p_value;
  p.n = rs.size();
  p.n_plus = sep.n_plus;
  p.n_minus = sep.n_minus;
  p.mean_shift = sep.mean_shift;
  return p;
}

inline constexpr double kPhaseMatchTolerance = 1e-9;

/// The four local-oscillator settings {0, pi/2}^2 in table order.
inline std::vector<std::pair<double, double>> standard_phase_pairs() {
  constexpr double q = std::numbers::pi / 2.0;
  return {{0.0, 0.0}, {0.0, q}, {q, 0.0}, {q, q}};
}

/// Groups a combined record file by its (theta_A, theta_B) tags into the four pairs.
inline std::vector<RecordSet> group_standard_pairs(const RecordSet& rs) {
  const auto phases = standard_phase_pairs();
  std::vector<RecordSet> out(phases.size());
  for (auto& o : out) {
    o.metadata = rs.metadata;
  }
  for (const auto& r : rs.records) {
    for (std::size_t i = 0; i < phases.size(); ++i) {
      if (std::abs(r.theta_a - phases[i].first) < kPhaseMatchTolerance &&
          std::abs(r.theta_b - phases[i].second) < kPhaseMatchTolerance) {
        out[i].records.push_back(r);
        break;
      }
    }
  }
  return out;
}

inline Decision decide(const std::vector<PairStatistics>& pairs, const VerifierOptions& opts) {
  for (const auto& p : pairs) {
    if (p.k >= opts.k_min || p.chi2_p < opts.p_threshold) {
      return Decision::discordant;
    }
  }
  return Decision::not_detected;
}

/// Four-pair Gaussian verdict. `per_pair` must hold one record set for each of the
/// four settings (any order); sample sizes must agree within 10%.
inline DiscordVerdict verdict_gaussian(const std::vector<RecordSet>& per_pair,
                                       const VerifierOptions& opts = {}) {
  const auto phases = standard_phase_pairs();
  std::vector<const RecordSet*> ordered(phases.size(), nullptr);
  for (const auto& rs : per_pair) {
    if (rs.empty()) {
      continue;
    }
    const auto& r0 = rs.records.front();
    for (std::size_t i = 0; i < phases.size(); ++i) {
      if (std::abs(r0.theta_a - phases[i].first) < kPhaseMatchTolerance &&
          std::abs(r0.theta_b - phases[i].second) < kPhaseMatchTolerance) {
        ordered[i] = &rs;
      }
    }
  }
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (!ordered[i]) {
      throw IncompleteInputError("missing records for phase pair (" +
                                 std::to_string(phases[i].first) + ", " +
                                 std::to_string(phases[i].second) + ")");
    }
  }
  const auto [mn, mx] = std::minmax_element(
      ordered.begin(), ordered.end(),
      [](const RecordSet* a, const RecordSet* b) { return a->size() < b->size(); });
  if (static_cast<double>((*mx)->size()) > 1.1 * static_cast<double>((*mn)->size())) {
    throw DomainError("phase-pair sample sizes differ by more than 10%");
  }
  DiscordVerdict v;
  v.options = opts;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    VerifierOptions pair_opts = opts;
    pair_opts.peak.seed = substream_seed(opts.peak.seed, 0x70616972ULL, i);
    v.pairs.push_back(pair_statistics(*ordered[i], pair_opts));
  }
  v.decision = decide(v.pairs, opts);
  return v;
}

inline DiscordVerdict verdict_gaussian(const RecordSet& combined, const VerifierOptions& opts = {}) {
  return verdict_gaussian(group_standard_pairs(combined), opts);
}

struct MixtureReport {
  SideComparison plus;
  SideComparison minus;
  SeparationResult separation;
  double threshold = 0.0;
  double p_threshold = 0.05;
  Decision decision = Decision::not_detected;

  double min_p() const { return std::min(plus.chi2.p_value, minus.chi2.p_value); }
  bool discordant() const { return decision == Decision::discordant; }
};

/// For beam-splitter outputs of P-function mixtures any change of the conditional
/// marginals certifies discord; decided by chi-square on either side.
inline MixtureReport verdict_mixture(const RecordSet& rs, double threshold,
                                     const VerifierOptions& opts = {}) {
  MixtureReport rep;
  rep.threshold = threshold;
  rep.p_threshold = opts.p_threshold;
  std::tie(rep.plus, rep.minus) = detail::compare_sides(rs, threshold);
  rep.separation = separation_statistic(rs, threshold, opts.peak);
  rep.decision = rep.min_p() < opts.p_threshold ? Decision::discordant : Decision::not_detected;
  return rep;
}

// ---------------------------------------------------------------------------
// Modulation sweep

struct SweepRow {
  double depth = 0.0;
  double delta = 0.0;
  double sigma_delta = 0.0;
  double delta_analytic = 0.0;

  double k() const { return sigma_delta > 0.0 ? std::abs(delta) / sigma_delta : 0.0; }
};

/// Phase-quadrature modulation split 50:50, both stations locked to the phase quadrature.
inline GaussianBipartiteState phase_modulated_split(double depth, double v0 = kShotNoiseVacuum) {
  return split_balanced(modulated_beam(0.0, depth, v0));
}

inline SweepRow sweep_point(double depth, std::size_t n, std::uint64_t seed,
                            const PeakOptions& peak = {}, unsigned threads = 0) {
  constexpr double q = std::numbers::pi / 2.0;
  const auto state = phase_modulated_split(depth);
  const auto rs = sample_gaussian(state, q, q, n, seed, threads);
  PeakOptions po = peak;
  po.seed = substream_seed(seed, 0x7377656570ULL, 1);
  const auto sep = separation_statistic(rs, 0.0, po);
  return {depth, sep.delta, sep.sigma_delta,
          analytic_peak_separation(joint_marginal_form(state, q, q))};
}

inline std::vector<SweepRow> sweep_modulation(std::span<const double> depths, std::size_t n,
                                              std::uint64_t seed, const PeakOptions& peak = {},
                                              unsigned threads = 0) {
  for (double d : depths) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw DomainError("sweep depths must be finite and non-negative");
    }
  }
  std::vector<SweepRow> rows;
  rows.reserve(depths.size());
  for (std::size_t i = 0; i < depths.size(); ++i) {
    rows.push_back(
        sweep_point(depths[i], n, substream_seed(seed, 0x7377656570ULL, i), peak, threads));
  }
  return rows;
}

/// n evenly spaced values from a to b inclusive.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return v;
}

}  // namespace cvdiscord
