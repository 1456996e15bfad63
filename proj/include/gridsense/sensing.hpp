#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gridsense/generator.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

/// Estimation error model on a measured quantity.
///
/// Physical: per tone and entry, E|X_N|^2 = |X_0|^2 (10^(tx/10) + 10^(rx/10))
/// + P_ref 10^(N(f)/10), where N(f) = n0 - slope log10(f / ref_hz) and P_ref
/// is the mean squared magnitude of the diagonal entries of X_0 at the tone
/// nearest ref_hz.
/// DirectQnr: E|X_N|^2 = |X_0|^2 10^(-qnr/10); +inf disables the noise.
struct NoiseModel {
  enum class Mode { Physical, DirectQnr };
  Mode mode = Mode::Physical;
  double tx_dbc = -50.0;
  double rx_dbc = -60.0;
  bool network_noise = true;
  double network_n0_db = -30.0;
  double network_slope_db = 35.0;  // per decade
  double network_ref_hz = 10e3;
  double qnr_db = std::numeric_limits<double>::infinity();

  static NoiseModel physical(double tx = -50.0, double rx = -60.0, bool network = true, double n0 = -30.0) {
    NoiseModel m;
    m.mode = Mode::Physical;
    m.tx_dbc = tx;
    m.rx_dbc = rx;
    m.network_noise = network;
    m.network_n0_db = n0;
    return m;
  }

  static NoiseModel direct_qnr(double db) {
    NoiseModel m;
    m.mode = Mode::DirectQnr;
    m.qnr_db = db;
    return m;
  }

  bool noiseless() const { return mode == Mode::DirectQnr && qnr_db == std::numeric_limits<double>::infinity(); }

  void validate() const {
    if (mode == Mode::Physical) {
      if (!(tx_dbc < 0.0) || !(rx_dbc < 0.0)) throw ConfigError("transmitter/receiver noise must be negative dBc");
      if (!std::isfinite(network_n0_db) || !std::isfinite(network_slope_db) || !(network_ref_hz > 0.0))
        throw ConfigError("network noise parameters must be finite");
    } else if (std::isnan(qnr_db) || qnr_db == -std::numeric_limits<double>::infinity()) {
      throw ConfigError("QNR must be finite or +inf");
    }
  }
};

/// SLS: one noisy estimate per symbol. MLS: M estimates averaged over
/// multiples of half the mains period.
struct MeasurementPlan {
  enum class Recurrence { SLS, MLS };
  Recurrence recurrence = Recurrence::MLS;
  int symbols_per_estimate = 1;
  int mains_half_periods = 1;
  int averages = 1;

  static MeasurementPlan sls() { return {Recurrence::SLS, 1, 1, 1}; }
  static MeasurementPlan mls(int m, int half_periods = 1) { return {Recurrence::MLS, 1, half_periods, m}; }

  int effective_averages() const { return recurrence == Recurrence::SLS ? 1 : averages; }

  void validate() const {
    if (averages < 1 || symbols_per_estimate < 1 || mains_half_periods < 1)
      throw ConfigError("averages, symbols and half periods must be at least 1");
  }
};

struct EstimatedSpectrum {
  Spectrum spectrum;
  NoiseModel noise;
  double realized_qnr_db = std::numeric_limits<double>::infinity();
};

/// Noise power E|X_N|^2 per tone and entry for the given truth.
inline std::vector<RMatrix> noise_variance(const Spectrum& truth, const NoiseModel& noise, const MeasurementPlan& plan) {
  noise.validate();
  plan.validate();
  const int n = truth.channels;
  std::vector<RMatrix> var(truth.size(), RMatrix::Zero(n, n));
  if (noise.noiseless()) return var;
  const double m = plan.effective_averages();
  if (noise.mode == NoiseModel::Mode::DirectQnr) {
    const double r = std::pow(10.0, -noise.qnr_db / 10.0);
    for (std::size_t k = 0; k < truth.size(); ++k) var[k] = truth.values[k].cwiseAbs2() * (r / m);
    return var;
  }
  const double sig = std::pow(10.0, noise.tx_dbc / 10.0) + std::pow(10.0, noise.rx_dbc / 10.0);
  double p_ref = 0.0;
  if (noise.network_noise) {
    std::size_t ref = 0;
    for (std::size_t k = 1; k < truth.size(); ++k)
      if (std::abs(truth.grid.frequency(k) - noise.network_ref_hz) <
          std::abs(truth.grid.frequency(ref) - noise.network_ref_hz))
        ref = k;
    p_ref = truth.values[ref].diagonal().cwiseAbs2().mean();
  }
  for (std::size_t k = 0; k < truth.size(); ++k) {
    var[k] = truth.values[k].cwiseAbs2() * sig;
    if (noise.network_noise) {
      const double nf = noise.network_n0_db -
                        noise.network_slope_db * std::log10(truth.grid.frequency(k) / noise.network_ref_hz);
      var[k].array() += p_ref * std::pow(10.0, nf / 10.0);
    }
    var[k] /= m;
  }
  return var;
}

/// Realized QNR of one estimate: -10 log10 of the tone-averaged ratio
/// |X_N|^2 / |X_0|^2 (Frobenius norms); tones with X_0 = 0 are skipped.
inline double realized_qnr_db(const Spectrum& estimate, const Spectrum& truth) {
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double p0 = truth.values[k].squaredNorm();
    if (p0 == 0.0) continue;
    acc += (estimate.values[k] - truth.values[k]).squaredNorm() / p0;
    ++used;
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  if (acc == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(acc / static_cast<double>(used));
}

/// X~ = X_0 + X_N with X_N circular complex Gaussian per tone and entry.
/// Averaging M estimates is drawn directly as one sample of variance / M.
inline EstimatedSpectrum simulate_measurement(const Spectrum& truth, const NoiseModel& noise,
                                              const MeasurementPlan& plan, std::uint64_t seed) {
  const auto var = noise_variance(truth, noise, plan);
  EstimatedSpectrum out{truth, noise, std::numeric_limits<double>::infinity()};
  if (noise.noiseless()) return out;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = truth.channels;
  for (std::size_t k = 0; k < truth.size(); ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const double s = std::sqrt(0.5 * var[k](i, j));
        const double re = gauss(rng);
        const double im = gauss(rng);
        out.spectrum.values[k](i, j) += cplx(s * re, s * im);
      }
  out.realized_qnr_db = realized_qnr_db(out.spectrum, truth);
  return out;
}

struct QnrReport {
  std::vector<double> per_tone_db;  // NaN for excluded tones
  std::vector<std::size_t> excluded;
  double aggregate_db = std::numeric_limits<double>::infinity();
};

/// QNR = |X_0|^2 / E[|X_N|^2] per tone, the expectation taken over the
/// given realizations. The aggregate is the mean of the finite per-tone dB
/// values; +inf when there is no error at all.
inline QnrReport qnr_of(const std::vector<Spectrum>& realizations, const Spectrum& truth) {
  if (realizations.empty()) throw DomainError("qnr_of needs at least one realization");
  QnrReport rep;
  rep.per_tone_db.assign(truth.size(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t finite = 0, infinite = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double p0 = truth.values[k].squaredNorm();
    if (p0 == 0.0) {
      rep.excluded.push_back(k);
      continue;
    }
    double pn = 0.0;
    for (const auto& r : realizations) {
      if (r.size() != truth.size()) throw DomainError("realization grid does not match truth");
      pn += (r.values[k] - truth.values[k]).squaredNorm();
    }
    pn /= static_cast<double>(realizations.size());
    if (pn == 0.0) {
      rep.per_tone_db[k] = std::numeric_limits<double>::infinity();
      ++infinite;
    } else {
      rep.per_tone_db[k] = 10.0 * std::log10(p0 / pn);
      sum += rep.per_tone_db[k];
      ++finite;
    }
  }
  if (finite > 0) {
    rep.aggregate_db = sum / static_cast<double>(finite);
  } else if (infinite == 0) {
    rep.aggregate_db = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

}  // namespace gridsense
