#pragma once

// Phase-space estimators of the physical observables. Symmetric-order
// (Wigner) moments are converted to normal order:
//   <a_k^+ a_l>    = <alpha_k^* alpha_l> - delta_kl / 2
//   <a^+2 a^2>     = <|alpha|^4> - 2 <|alpha|^2> + 1/2

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twachain/error.hpp"
#include "twachain/model.hpp"

namespace twachain {

inline Error empty_accumulator(const std::string& what) {
  return Error("observables", "EmptyAccumulator", "no samples available for " + what);
}

/// Mergeable running sums of single-site moments, phase moments e^{i m phi}
/// (m = 1..m_max) and configured cross-site correlators sum alpha_k^* alpha_l.
class MomentAccumulator {
 public:
  struct Site {
    double n2 = 0.0;   // sum |alpha|^2
    double n4 = 0.0;   // sum |alpha|^4
    double re = 0.0;   // sum Re alpha
    double im = 0.0;   // sum Im alpha
    double re2 = 0.0;  // sum (Re alpha)^2
    double im2 = 0.0;  // sum (Im alpha)^2
  };

  MomentAccumulator() = default;

  /// Cross pairs default to (0, l) for every site l.
  MomentAccumulator(int sites, int m_max, std::vector<std::pair<int, int>> pairs = {})
      : sites_(sites), m_max_(m_max), site_(sites),
        phase_(static_cast<std::size_t>(sites) * static_cast<std::size_t>(m_max)),
        pairs_(std::move(pairs)) {
    if (pairs_.empty())
      for (int l = 0; l < sites; ++l) pairs_.emplace_back(0, l);
    cross_.assign(pairs_.size(), cplx{});
  }

  int sites() const { return sites_; }
  int m_max() const { return m_max_; }
  double count() const { return count_; }
  const Site& site(int l) const { return site_.at(l); }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

  /// Adds one sample of all sites.
  void add(std::span<const cplx> a) {
    count_ += 1.0;
    for (int l = 0; l < sites_; ++l) {
      const double re = a[l].real(), im = a[l].imag();
      const double n = re * re + im * im;
      Site& s = site_[l];
      s.n2 += n;
      s.n4 += n * n;
      s.re += re;
      s.im += im;
      s.re2 += re * re;
      s.im2 += im * im;
      // e^{i m phi} from powers of the unit phasor; phi(0) = 0 as for arg().
      const double r = std::sqrt(n);
      const cplx u = r > 0.0 ? cplx(re / r, im / r) : cplx(1.0, 0.0);
      cplx um = u;
      cplx* ph = phase_.data() + static_cast<std::size_t>(l) * m_max_;
      for (int m = 0; m < m_max_; ++m) {
        ph[m] += um;
        um = cplx(um.real() * u.real() - um.imag() * u.imag(),
                  um.real() * u.imag() + um.imag() * u.real());
      }
    }
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const cplx x = a[pairs_[p].first], y = a[pairs_[p].second];
      cross_[p] += cplx(x.real() * y.real() + x.imag() * y.imag(),
                        x.real() * y.imag() - x.imag() * y.real());
    }
  }

  void merge(const MomentAccumulator& o) { combine(o, 1.0); }

  /// Sums with `o` removed; `o` must be a sub-block of this accumulator.
  MomentAccumulator without(const MomentAccumulator& o) const {
    MomentAccumulator r = *this;
    r.combine(o, -1.0);
    return r;
  }

  /// Sample means.
  double mean_n2(int l) const { return site_.at(l).n2 / count_; }
  double mean_n4(int l) const { return site_.at(l).n4 / count_; }
  double mean_re(int l) const { return site_.at(l).re / count_; }
  double mean_im(int l) const { return site_.at(l).im / count_; }
  double mean_im2(int l) const { return site_.at(l).im2 / count_; }
  double mean_re2(int l) const { return site_.at(l).re2 / count_; }
  cplx mean_phase(int l, int m) const {
    return phase_.at(static_cast<std::size_t>(l) * m_max_ + (m - 1)) / count_;
  }

  /// Mean of alpha_k^* alpha_l; requires (k, l) or (l, k) to be a configured pair.
  cplx mean_cross(int k, int l) const {
    if (k == l) return mean_n2(k);
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      if (pairs_[p] == std::pair{k, l}) return cross_[p] / count_;
      if (pairs_[p] == std::pair{l, k}) return std::conj(cross_[p]) / count_;
    }
    throw Error("observables", "PairNotConfigured",
                "cross moment (" + std::to_string(k + 1) + "," + std::to_string(l + 1) +
                    ") was not accumulated");
  }

  bool operator==(const MomentAccumulator&) const = default;

 private:
  void combine(const MomentAccumulator& o, double sign) {
    if (o.sites_ != sites_ || o.m_max_ != m_max_ || o.pairs_ != pairs_)
      throw Error("observables", "ShapeMismatch", "cannot merge accumulators of different shape");
    count_ += sign * o.count_;
    for (int l = 0; l < sites_; ++l) {
      Site& s = site_[l];
      const Site& t = o.site_[l];
      s.n2 += sign * t.n2;
      s.n4 += sign * t.n4;
      s.re += sign * t.re;
      s.im += sign * t.im;
      s.re2 += sign * t.re2;
      s.im2 += sign * t.im2;
    }
    for (std::size_t i = 0; i < phase_.size(); ++i) phase_[i] += sign * o.phase_[i];
    for (std::size_t i = 0; i < cross_.size(); ++i) cross_[i] += sign * o.cross_[i];
  }

  int sites_ = 0;
  int m_max_ = 0;
  double count_ = 0.0;
  std::vector<Site> site_;
  std::vector<cplx> phase_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<cplx> cross_;
};

// ---------------------------------------------------------------------------
// Scalar observables

inline void require_samples(const MomentAccumulator& acc, double min_count, const char* what) {
  if (acc.count() < min_count) throw empty_accumulator(what);
}

/// n_l = <|alpha_l|^2> - 1/2. Not clamped: sampling noise can make it negative.
inline double photon_number(const MomentAccumulator& acc, int l) {
  require_samples(acc, 1.0, "photon_number");
  return acc.mean_n2(l) - 0.5;
}

/// delta n_l = <a^+2 a^2> - <a^+ a>^2 with the Weyl correction applied.
inline double photon_fluctuations(const MomentAccumulator& acc, int l) {
  require_samples(acc, 2.0, "photon_fluctuations");
  const double m2 = acc.mean_n2(l);
  const double n = m2 - 0.5;
  return (acc.mean_n4(l) - 2.0 * m2 + 0.5) - n * n;
}

/// g2 = 1 + delta n / n^2; NaN when n <= 0.1 where it is numerically unreliable.
inline double second_order_coherence(const MomentAccumulator& acc, int l) {
  const double n = photon_number(acc, l);
  if (n <= 0.1) return std::numeric_limits<double>::quiet_NaN();
  return 1.0 + photon_fluctuations(acc, l) / (n * n);
}

/// C^(m) = |<e^{i m phi}>| in [0, 1].
inline double circular_moment(const MomentAccumulator& acc, int l, int m) {
  require_samples(acc, 1.0, "circular_moment");
  if (m < 1 || m > acc.m_max())
    throw Error("observables", "OrderOutOfRange",
                "circular moment order " + std::to_string(m) + " not accumulated");
  return std::min(1.0, std::abs(acc.mean_phase(l, m)));
}

inline double circular_variance(const MomentAccumulator& acc, int l, int m) {
  return 1.0 - circular_moment(acc, l, m);
}

/// g1_{k,l} = (<alpha_k^* alpha_l> - delta_kl/2) / sqrt(n_k n_l).
inline cplx first_order_coherence(const MomentAccumulator& acc, int k, int l) {
  const double nk = photon_number(acc, k);
  const double nl = photon_number(acc, l);
  if (!(nk > 0.0) || !(nl > 0.0))
    throw Error("observables", "VanishingPopulation",
                "first-order coherence needs positive populations at sites " +
                    std::to_string(k + 1) + " and " + std::to_string(l + 1));
  if (k == l) return 1.0;
  return acc.mean_cross(k, l) / std::sqrt(nk * nl);
}

/// Estimate with a standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Jackknife over independent blocks (one block per trajectory).
///
/// `total` must equal the merge of all `blocks`. With a single block the
/// standard error is NaN.
inline Estimate jackknife(const MomentAccumulator& total, std::span<const MomentAccumulator> blocks,
                          const std::function<double(const MomentAccumulator&)>& f) {
  Estimate e;
  e.value = f(total);
  const std::size_t nb = blocks.size();
  if (nb < 2) {
    e.std_error = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
  std::vector<double> loo(nb);
  for (std::size_t b = 0; b < nb; ++b) loo[b] = f(total.without(blocks[b]));
  const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / static_cast<double>(nb);
  double ss = 0.0;
  for (double x : loo) ss += (x - mean) * (x - mean);
  e.std_error = std::sqrt(ss * static_cast<double>(nb - 1) / static_cast<double>(nb));
  return e;
}

// ---------------------------------------------------------------------------
// Histograms

struct Grid2D {
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
  int bins_x = 201, bins_y = 201;

  double dx() const { return (x_max - x_min) / bins_x; }
  double dy() const { return (y_max - y_min) / bins_y; }
  double cell_area() const { return dx() * dy(); }
  double x_center(int i) const { return x_min + (i + 0.5) * dx(); }
  double y_center(int j) const { return y_min + (j + 0.5) * dy(); }
  bool operator==(const Grid2D&) const = default;
};

inline void check_grid(const Grid2D& g) {
  if (g.bins_x < 1 || g.bins_y < 1 || !(g.x_max > g.x_min) || !(g.y_max > g.y_min))
    throw Error("observables", "DegenerateGrid", "histogram grid has zero extent or no bins");
}

/// Estimate of a local Wigner function on a regular grid over (Re alpha, Im alpha).
/// Counts are kept raw so histograms merge exactly; `density` normalizes over
/// the in-grid samples so that sum(density) * cell_area = 1.
class WignerHistogram {
 public:
  WignerHistogram() = default;
  explicit WignerHistogram(const Grid2D& g)
      : grid_(g), counts_(static_cast<std::size_t>(g.bins_x) * static_cast<std::size_t>(g.bins_y)) {
    check_grid(g);
  }

  const Grid2D& grid() const { return grid_; }
  long long total_samples() const { return total_; }
  long long in_grid() const { return in_grid_; }
  double count(int i, int j) const { return counts_[index(i, j)]; }

  void add(cplx a) {
    ++total_;
    const double fx = (a.real() - grid_.x_min) / grid_.dx();
    const double fy = (a.imag() - grid_.y_min) / grid_.dy();
    if (!(fx >= 0.0 && fx < grid_.bins_x && fy >= 0.0 && fy < grid_.bins_y)) return;
    ++in_grid_;
    counts_[index(static_cast<int>(fx), static_cast<int>(fy))] += 1.0;
  }

  void merge(const WignerHistogram& o) {
    if (!(o.grid_ == grid_))
      throw Error("observables", "GridMismatch", "cannot merge histograms on different grids");
    total_ += o.total_;
    in_grid_ += o.in_grid_;
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  /// Normalized weights, row-major in x (index i * bins_y + j).
  std::vector<double> density() const {
    std::vector<double> w(counts_.size(), 0.0);
    if (in_grid_ == 0) return w;
    const double norm = 1.0 / (static_cast<double>(in_grid_) * grid_.cell_area());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = counts_[i] * norm;
    return w;
  }

  /// Builds a histogram directly from a density on the grid (used for
  /// synthesized model Wigner functions). Negative values are kept.
  static WignerHistogram from_density(const Grid2D& g, std::vector<double> density,
                                      long long samples) {
    WignerHistogram h(g);
    const double area = g.cell_area();
    double sum = 0.0;
    for (double w : density) sum += w * area;
    for (std::size_t i = 0; i < density.size(); ++i)
      h.counts_[i] = density[i] * area / sum * static_cast<double>(samples);
    h.total_ = samples;
    h.in_grid_ = samples;
    return h;
  }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * grid_.bins_y + static_cast<std::size_t>(j);
  }
  Grid2D grid_;
  std::vector<double> counts_;
  long long total_ = 0;
  long long in_grid_ = 0;
};

/// Default grid: mean +- 4 sample standard deviations, square cells, 201 x 201.
inline Grid2D auto_grid(std::span<const cplx> samples, int bins = 201) {
  if (samples.empty()) throw Error("observables", "EmptyAccumulator", "no samples to histogram");
  double mx = 0.0, my = 0.0;
  for (const auto& a : samples) mx += a.real(), my += a.imag();
  const double n = static_cast<double>(samples.size());
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& a : samples) {
    vx += (a.real() - mx) * (a.real() - mx);
    vy += (a.imag() - my) * (a.imag() - my);
  }
  const double half = 4.0 * std::sqrt(std::max(vx, vy) / n);
  if (!(half > 0.0))
    throw Error("observables", "DegenerateGrid", "samples have zero spread; cannot auto-range");
  return {mx - half, mx + half, my - half, my + half, bins, bins};
}

inline double grid_coverage(const Grid2D& g, std::span<const cplx> samples) {
  std::size_t inside = 0;
  for (const auto& a : samples)
    if (a.real() >= g.x_min && a.real() < g.x_max && a.imag() >= g.y_min && a.imag() < g.y_max)
      ++inside;
  return samples.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(samples.size());
}

/// Histogram of the samples of one site. Grids covering less than 99% of the
/// samples are widened about their centre until they do.
inline WignerHistogram wigner_histogram(std::span<const cplx> samples, Grid2D grid) {
  check_grid(grid);
  if (samples.empty()) throw Error("observables", "EmptyAccumulator", "no samples to histogram");
  while (grid_coverage(grid, samples) < 0.99) {
    const double cx = 0.5 * (grid.x_min + grid.x_max), cy = 0.5 * (grid.y_min + grid.y_max);
    const double hx = 0.75 * (grid.x_max - grid.x_min), hy = 0.75 * (grid.y_max - grid.y_min);
    grid.x_min = cx - hx, grid.x_max = cx + hx;
    grid.y_min = cy - hy, grid.y_max = cy + hy;
  }
  WignerHistogram h(grid);
  for (const auto& a : samples) h.add(a);
  return h;
}

inline WignerHistogram wigner_histogram(std::span<const cplx> samples) {
  return wigner_histogram(samples, auto_grid(samples));
}

/// Second moment <|alpha|^2> of a histogram about the origin (cell centres).
inline double histogram_second_moment(const WignerHistogram& h) {
  const auto w = h.density();
  const Grid2D& g = h.grid();
  double m = 0.0;
  for (int i = 0; i < g.bins_x; ++i)
    for (int j = 0; j < g.bins_y; ++j) {
      const double x = g.x_center(i), y = g.y_center(j);
      m += w[static_cast<std::size_t>(i) * g.bins_y + j] * (x * x + y * y);
    }
  return m * g.cell_area();
}

/// Circular moment |<e^{i m phi}>| of a histogram, phases taken at cell centres.
inline double histogram_circular_moment(const WignerHistogram& h, int m) {
  const auto w = h.density();
  const Grid2D& g = h.grid();
  cplx s = 0.0;
  for (int i = 0; i < g.bins_x; ++i)
    for (int j = 0; j < g.bins_y; ++j) {
      const double phi = std::atan2(g.y_center(j), g.x_center(i));
      s += w[static_cast<std::size_t>(i) * g.bins_y + j] * std::polar(1.0, m * phi);
    }
  return std::abs(s) * g.cell_area();
}

/// Regular one-dimensional density histogram.
struct Histogram1D {
  double min = 0.0, max = 1.0;
  std::vector<double> density;  // normalized over in-range samples
  double width() const { return (max - min) / static_cast<double>(density.size()); }
  double center(std::size_t i) const { return min + (static_cast<double>(i) + 0.5) * width(); }
};

/// Rice-rule bin count, clamped to [10, 200].
inline Histogram1D histogram_1d(std::span<const double> x, int bins = 0) {
  if (x.empty()) throw Error("observables", "EmptyAccumulator", "no samples to histogram");
  if (bins <= 0)
    bins = std::clamp(static_cast<int>(std::ceil(2.0 * std::cbrt(static_cast<double>(x.size())))),
                      10, 200);
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  Histogram1D h;
  h.min = *lo;
  h.max = *hi;
  if (!(h.max > h.min)) {
    h.min -= 0.5;
    h.max += 0.5;
  }
  h.density.assign(bins, 0.0);
  const double w = h.width();
  for (double v : x) {
    auto i = static_cast<std::size_t>((v - h.min) / w);
    if (i >= h.density.size()) i = h.density.size() - 1;
    h.density[i] += 1.0;
  }
  for (auto& d : h.density) d /= static_cast<double>(x.size()) * w;
  return h;
}

/// Momentum p = sqrt(2) Im alpha and the equipartition temperature T = |Delta| <p^2>.
struct MomentumStatistics {
  Histogram1D distribution;  // empty when built from an accumulator
  double p2_raw = 0.0;       // <p^2>
  double p2_centered = 0.0;  // <p^2> - <p>^2
  double temperature = 0.0;  // |Delta| <p^2>, from the raw moment
};

inline MomentumStatistics momentum_statistics(const MomentAccumulator& acc, int l, double detuning) {
  require_samples(acc, 2.0, "momentum_statistics");
  MomentumStatistics m;
  const double mean_p = std::sqrt(2.0) * acc.mean_im(l);
  m.p2_raw = 2.0 * acc.mean_im2(l);
  m.p2_centered = m.p2_raw - mean_p * mean_p;
  m.temperature = std::abs(detuning) * m.p2_raw;
  return m;
}

inline MomentumStatistics momentum_statistics(std::span<const cplx> samples, double detuning) {
  if (samples.size() < 2) throw empty_accumulator("momentum_statistics");
  std::vector<double> p(samples.size());
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    p[i] = std::sqrt(2.0) * samples[i].imag();
    s += p[i];
    s2 += p[i] * p[i];
  }
  const double n = static_cast<double>(samples.size());
  MomentumStatistics m;
  m.distribution = histogram_1d(p);
  m.p2_raw = s2 / n;
  m.p2_centered = m.p2_raw - (s / n) * (s / n);
  m.temperature = std::abs(detuning) * m.p2_raw;
  return m;
}

}  // namespace twachain
