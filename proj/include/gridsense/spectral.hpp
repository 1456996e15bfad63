#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "gridsense/types.hpp"

namespace gridsense {

enum class TraceMode { Reflectometry, EndToEnd };
enum class Window { Hann, Rectangular };

/// Distance-indexed magnitude trace of a tone sequence.
struct TimeTrace {
  std::vector<double> magnitude;  // one sample per padded time step over one period 1 / delta_f
  double sample_m = 0.0;          // distance per sample
  double bin_m = 0.0;             // resolution bin: v / (2 count delta_f) (reflectometry)
  double velocity = 0.0;
  TraceMode mode = TraceMode::Reflectometry;

  double distance(double sample) const { return sample * sample_m; }
  std::size_t size() const { return magnitude.size(); }
};

struct TraceOptions {
  Window window = Window::Hann;
  int pad = 4;
  TraceMode mode = TraceMode::Reflectometry;
};

/// Window weight for tone k (1-based) of `count`; the Hann window spans the
/// band and vanishes just outside its ends.
inline double window_weight(Window w, std::size_t k, std::size_t count) {
  if (w == Window::Rectangular) return 1.0;
  return 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(k) / static_cast<double>(count + 1));
}

/// Envelope of the windowed, zero-padded tone sequence: |IFFT| of the
/// one-sided spectrum, tone k at bin k. Magnitudes are scaled so a
/// unit-amplitude echo gives a peak of about 1.
inline TimeTrace to_time_domain(const std::vector<cplx>& tones, const FrequencyGrid& grid, double velocity,
                                const TraceOptions& opt = {}) {
  if (!(velocity > 0.0)) throw DomainError("velocity must be positive");
  if (opt.pad < 1) throw DomainError("padding factor must be at least 1");
  if (tones.size() != grid.count()) throw DomainError("tone count does not match grid");
  const std::size_t n = tones.size();
  const std::size_t m = static_cast<std::size_t>(opt.pad) * 2 * (n + 1);
  std::vector<cplx> full(m, cplx{});
  double wsum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double w = window_weight(opt.window, k, n);
    wsum += w;
    full[k] = w * tones[k - 1];
  }
  Eigen::FFT<double> fft;
  std::vector<cplx> time;
  fft.inv(time, full);
  const double scale = static_cast<double>(m) / wsum;
  TimeTrace tr;
  tr.velocity = velocity;
  tr.mode = opt.mode;
  const double factor = opt.mode == TraceMode::Reflectometry ? 0.5 : 1.0;
  tr.sample_m = factor * velocity / (static_cast<double>(m) * grid.delta_f());
  tr.bin_m = factor * velocity / (static_cast<double>(n) * grid.delta_f());
  tr.magnitude.resize(m);
  for (std::size_t i = 0; i < m; ++i) tr.magnitude[i] = std::abs(time[i]) * scale;
  return tr;
}

struct PeakIndex {
  double position = 0.0;  // fractional sample index after interpolation
  std::size_t index = 0;  // integer sample of the local maximum
  double amplitude = 0.0;
  double prominence = 0.0;
};

/// Local maxima with prominence >= min_prominence, at least min_separation
/// samples apart (higher peaks win), sorted by position. Flat tops count
/// once, at their middle; the two end samples are never peaks. Positions are
/// refined with a three-point parabola.
inline std::vector<PeakIndex> find_peaks(const std::vector<double>& y, double min_prominence = 0.0,
                                         double min_separation = 0.0) {
  std::vector<PeakIndex> peaks;
  const std::size_t n = y.size();
  if (n < 3) return peaks;
  std::size_t i = 1;
  while (i + 1 < n) {
    if (y[i] > y[i - 1]) {
      std::size_t j = i;
      while (j + 1 < n && y[j + 1] == y[i]) ++j;
      if (j + 1 < n && y[j + 1] < y[i]) {
        PeakIndex p;
        p.index = (i + j) / 2;
        p.amplitude = y[p.index];
        peaks.push_back(p);
      }
      i = j + 1;
    } else {
      ++i;
    }
  }
  for (auto& p : peaks) {
    double left_min = y[p.index];
    for (std::size_t k = p.index; k-- > 0;) {
      if (y[k] > p.amplitude) break;
      left_min = std::min(left_min, y[k]);
    }
    double right_min = y[p.index];
    for (std::size_t k = p.index + 1; k < n; ++k) {
      if (y[k] > p.amplitude) break;
      right_min = std::min(right_min, y[k]);
    }
    p.prominence = p.amplitude - std::max(left_min, right_min);
    p.position = static_cast<double>(p.index);
    const double a = y[p.index - 1], b = y[p.index], c = y[p.index + 1];
    const double den = a - 2.0 * b + c;
    if (den < 0.0) {
      const double d = 0.5 * (a - c) / den;
      if (std::abs(d) <= 0.5) {
        p.position += d;
        p.amplitude = b - 0.25 * (a - c) * d;
      }
    }
  }
  std::erase_if(peaks, [&](const PeakIndex& p) { return p.prominence < min_prominence || p.prominence <= 0.0; });
  if (min_separation > 0.0 && peaks.size() > 1) {
    std::vector<std::size_t> order(peaks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return peaks[a].amplitude > peaks[b].amplitude; });
    std::vector<bool> keep(peaks.size(), true);
    for (std::size_t a = 0; a < order.size(); ++a) {
      if (!keep[order[a]]) continue;
      for (std::size_t b = a + 1; b < order.size(); ++b)
        if (keep[order[b]] && std::abs(peaks[order[a]].position - peaks[order[b]].position) < min_separation)
          keep[order[b]] = false;
    }
    std::vector<PeakIndex> kept;
    for (std::size_t a = 0; a < peaks.size(); ++a)
      if (keep[a]) kept.push_back(peaks[a]);
    peaks.swap(kept);
  }
  return peaks;
}

enum class PeakMethod { Classical, RootMusic };

struct Peak {
  double distance_m = 0.0;
  double amplitude = 0.0;
  PeakMethod method = PeakMethod::Classical;
};

/// Peaks of a trace in metres; prominence threshold relative to the trace maximum.
inline std::vector<Peak> trace_peaks(const TimeTrace& tr, double rel_prominence, double min_separation_bins = 1.0) {
  const double top = tr.magnitude.empty() ? 0.0 : *std::max_element(tr.magnitude.begin(), tr.magnitude.end());
  std::vector<Peak> out;
  if (!(top > 0.0)) return out;
  const double sep = min_separation_bins * tr.bin_m / tr.sample_m;
  for (const auto& p : find_peaks(tr.magnitude, rel_prominence * top, sep))
    out.push_back({tr.distance(p.position), p.amplitude, PeakMethod::Classical});
  return out;
}

struct RootMusicResult {
  std::vector<double> delays_s;
  std::vector<double> distances_m;
  bool fallback = false;
};

/// Delays of a sum of complex exponentials x_k = sum_i a_i exp(-j 2 pi f_k tau_i)
/// over the tone grid by root-MUSIC.
///
/// Forward-backward averaged covariance of length-`window` subvectors
/// (0 picks count / 2), noise subspace from its smallest eigenvectors, and
/// the roots of sum_l c_l z^l with c_l the l-th diagonal sum of E_n E_n^H.
/// The `order` roots inside the unit circle closest to it give the delays.
/// A covariance of rank below `order` falls back to classical peak picking.
inline RootMusicResult root_music_delays(const std::vector<cplx>& x, const FrequencyGrid& grid, int order,
                                         double velocity, int window = 0) {
  RootMusicResult res;
  if (order <= 0) return res;
  const int n = static_cast<int>(x.size());
  if (2 * order >= n) throw DomainError("model order must be below half the tone count");
  const int len = window > 0 ? window : n / 2;
  if (len <= order || len > n) throw DomainError("root-MUSIC window must exceed the model order");
  const int snaps = n - len + 1;

  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(len, len);
  for (int s = 0; s < snaps; ++s) {
    Eigen::VectorXcd v(len);
    for (int i = 0; i < len; ++i) v(i) = x[s + i];
    r += v * v.adjoint();
  }
  r /= static_cast<double>(snaps);
  Eigen::MatrixXcd fb = r;
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j) fb(i, j) = 0.5 * (r(i, j) + std::conj(r(len - 1 - i, len - 1 - j)));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(fb);
  const Eigen::VectorXd ev = es.eigenvalues();  // ascending
  const double top = ev(len - 1);
  int rank = 0;
  for (int i = 0; i < len; ++i)
    if (ev(i) > 1e-10 * top) ++rank;
  auto fallback = [&]() {
    res.fallback = true;
    std::vector<cplx> tones(x.begin(), x.end());
    const TimeTrace tr = to_time_domain(tones, grid, velocity);
    auto peaks = trace_peaks(tr, 0.1);
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.amplitude > b.amplitude; });
    if (peaks.size() > static_cast<std::size_t>(order)) peaks.resize(order);
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.distance_m < b.distance_m; });
    for (const auto& p : peaks) {
      res.distances_m.push_back(p.distance_m);
      res.delays_s.push_back(2.0 * p.distance_m / velocity);
    }
    return res;
  };
  if (!(top > 0.0) || rank < order) return fallback();

  const Eigen::MatrixXcd en = es.eigenvectors().leftCols(len - order);
  const Eigen::MatrixXcd c = en * en.adjoint();
  // Coefficients of z^(l + len - 1), l = -(len-1) .. len-1.
  const int deg = 2 * (len - 1);
  Eigen::VectorXcd coef(deg + 1);
  for (int l = -(len - 1); l <= len - 1; ++l) {
    cplx s{};
    for (int i = 0; i < len; ++i) {
      const int j = i + l;
      if (j >= 0 && j < len) s += c(i, j);
    }
    coef(l + len - 1) = s;
  }
  // Companion matrix of the monic polynomial.
  Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -coef(i) / coef(deg);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> ces(comp, false);
  if (ces.info() != Eigen::Success) return fallback();
  std::vector<cplx> inside;
  for (int i = 0; i < deg; ++i) {
    const cplx z = ces.eigenvalues()(i);
    if (std::abs(z) <= 1.0 + 1e-9 && std::isfinite(std::abs(z))) inside.push_back(z);
  }
  std::sort(inside.begin(), inside.end(),
            [](const cplx& a, const cplx& b) { return 1.0 - std::abs(a) < 1.0 - std::abs(b); });
  if (inside.size() > static_cast<std::size_t>(order)) inside.resize(order);
  std::vector<double> taus;
  for (const auto& z : inside) {
    double phase = -std::arg(z);
    if (phase < 0.0) phase += 2.0 * kPi;
    taus.push_back(phase / (2.0 * kPi * grid.delta_f()));
  }
  std::sort(taus.begin(), taus.end());
  for (double t : taus) {
    res.delays_s.push_back(t);
    res.distances_m.push_back(velocity * t / 2.0);
  }
  return res;
}

}  // namespace gridsense
