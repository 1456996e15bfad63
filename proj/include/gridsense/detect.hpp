#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/spectral.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

enum class DeltaModel { Superposition, Chain };

inline const char* to_string(DeltaModel m) { return m == DeltaModel::Chain ? "chain" : "sup"; }

inline DeltaModel delta_model_from_string(const std::string& s) {
  if (s == "sup" || s == "superposition") return DeltaModel::Superposition;
  if (s == "chain" || s == "ch") return DeltaModel::Chain;
  throw ConfigError("unknown anomaly model '" + s + "' (expected sup or chain)");
}

/// Increment of an estimate against the reference:
/// Superposition D = A - A_ref, Chain D = A A_ref^{-1}.
struct DeltaTrace {
  DeltaModel model = DeltaModel::Superposition;
  FrequencyGrid grid;
  int channels = 1;
  std::vector<CMatrix> values;

  /// Entry (row, col) per tone with the unperturbed value removed (the
  /// identity for the chain form), ready for a time transform.
  std::vector<cplx> entry_deviation(int row, int col) const {
    std::vector<cplx> out(values.size());
    for (std::size_t k = 0; k < values.size(); ++k)
      out[k] = values[k](row, col) - (model == DeltaModel::Chain && row == col ? 1.0 : 0.0);
    return out;
  }
};

inline DeltaTrace delta(const std::vector<CMatrix>& estimate, const std::vector<CMatrix>& reference,
                        const FrequencyGrid& grid, DeltaModel model) {
  if (estimate.size() != reference.size()) throw DomainError("estimate and reference grids differ");
  DeltaTrace d;
  d.model = model;
  d.grid = grid;
  d.channels = estimate.empty() ? 1 : static_cast<int>(estimate.front().rows());
  d.values.resize(estimate.size());
  std::vector<std::size_t> bad;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    if (model == DeltaModel::Superposition) {
      d.values[k] = estimate[k] - reference[k];
    } else {
      CMatrix inv;
      if (!try_inverse(reference[k], inv)) {
        bad.push_back(k);
        continue;
      }
      d.values[k] = estimate[k] * inv;
    }
  }
  if (!bad.empty()) throw NumericError("reference is singular in chain mode", bad);
  return d;
}

inline DeltaTrace delta(const Spectrum& estimate, const std::vector<CMatrix>& reference, DeltaModel model) {
  return delta(estimate.values, reference, estimate.grid, model);
}

struct DetectThresholds {
  double k_sigma = 3.0;
  int confirm = 5;        // K consecutive exceedances
  int warmup = 50;        // W estimates to initialise the reference
  double alpha = 0.05;    // EMA factor for reference and variance
  int tone_slack = 1;     // n_max may wander by this many tones
  double sigma_floor = 1e-9;  // relative floor on sigma (noiseless streams)
  /// Matrix entries inspected by the statistic; empty = all of them.
  std::vector<std::pair<int, int>> entries;
};

/// Running reference of the unperturbed quantity and the spread of its increments.
struct ReferenceState {
  DeltaModel model = DeltaModel::Superposition;
  FrequencyGrid grid;
  std::vector<CMatrix> reference;
  std::vector<RMatrix> sigma;  // per tone and entry: sqrt(E|D - D_0|^2)
  std::size_t updates = 0;
  struct Pending {
    std::size_t n_max = 0;
    int hits = 0;
  };
  std::optional<Pending> pending;
};

namespace detail {

inline CMatrix deviation(const CMatrix& d, DeltaModel model) {
  return model == DeltaModel::Chain ? CMatrix(d - CMatrix::Identity(d.rows(), d.cols())) : d;
}

}  // namespace detail

/// Reference from warm-up estimates: the mean, and the per-entry spread of
/// the increments against it (unbiased, W - 1).
inline ReferenceState init_reference(const std::vector<Spectrum>& warmup, DeltaModel model) {
  if (warmup.size() < 2) throw DomainError("reference needs at least two warm-up estimates");
  ReferenceState st;
  st.model = model;
  st.grid = warmup.front().grid;
  const std::size_t tones = warmup.front().size();
  const int n = warmup.front().channels;
  st.reference.assign(tones, CMatrix::Zero(n, n));
  for (const auto& w : warmup) {
    if (w.size() != tones) throw DomainError("warm-up estimates have different grids");
    for (std::size_t k = 0; k < tones; ++k) st.reference[k] += w.values[k];
  }
  for (auto& r : st.reference) r /= static_cast<double>(warmup.size());
  std::vector<RMatrix> var(tones, RMatrix::Zero(n, n));
  for (const auto& w : warmup) {
    const DeltaTrace d = delta(w, st.reference, model);
    for (std::size_t k = 0; k < tones; ++k) var[k] += detail::deviation(d.values[k], model).cwiseAbs2();
  }
  st.sigma.resize(tones);
  for (std::size_t k = 0; k < tones; ++k) st.sigma[k] = (var[k] / static_cast<double>(warmup.size() - 1)).cwiseSqrt();
  st.updates = warmup.size();
  return st;
}

struct StepResult {
  bool exceeded = false;
  bool detected = false;
  std::size_t n_max = 0;
  double statistic = 0.0;  // max over tones and entries of |D| / sigma
  double max_abs = 0.0;    // max over tones and entries of |D|
};

namespace detail {

struct ToneTest {
  std::vector<double> abs;   // per tone: max over inspected entries of |D|
  std::vector<bool> over;    // per tone: some entry above k sigma
};

inline ToneTest tone_test(const Spectrum& estimate, const ReferenceState& st, const DetectThresholds& thr,
                          StepResult& r) {
  const DeltaTrace d = delta(estimate, st.reference, st.model);
  const int n = d.channels;
  std::vector<std::pair<int, int>> entries = thr.entries;
  if (entries.empty())
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) entries.emplace_back(i, j);
  ToneTest t{std::vector<double>(d.values.size(), 0.0), std::vector<bool>(d.values.size(), false)};
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    const CMatrix dev = deviation(d.values[k], st.model);
    for (auto [i, j] : entries) {
      const double scale = st.model == DeltaModel::Chain ? 1.0 : std::abs(st.reference[k](i, j));
      const double sigma = std::max(st.sigma[k](i, j), thr.sigma_floor * std::max(scale, 1e-300));
      const double a = std::abs(dev(i, j));
      r.statistic = std::max(r.statistic, a / sigma);
      r.max_abs = std::max(r.max_abs, a);
      t.abs[k] = std::max(t.abs[k], a);
      if (a > thr.k_sigma * sigma) t.over[k] = true;
    }
  }
  return t;
}

}  // namespace detail

/// Detection statistic of one estimate against the reference, without
/// touching the state. n_max is the tone of the largest |D| among the tones
/// above threshold (or overall when none is).
inline StepResult detection_statistic(const Spectrum& estimate, const ReferenceState& st, const DetectThresholds& thr) {
  StepResult r;
  const auto t = detail::tone_test(estimate, st, thr, r);
  double best = -1.0;
  for (std::size_t k = 0; k < t.abs.size(); ++k) r.exceeded = r.exceeded || t.over[k];
  for (std::size_t k = 0; k < t.abs.size(); ++k)
    if ((t.over[k] || !r.exceeded) && t.abs[k] > best) {
      best = t.abs[k];
      r.n_max = k;
    }
  return r;
}

/// One step of the sequential test. The first exceedance saves n_max; the
/// following estimates must again exceed the threshold at n_max (within
/// `tone_slack` tones), and K exceedances in a row confirm a detection. An
/// estimate that fails the test clears the candidate and is folded into the
/// reference and spread with factor alpha.
inline StepResult detect_step(const Spectrum& estimate, ReferenceState& st, const DetectThresholds& thr) {
  StepResult r = detection_statistic(estimate, st, thr);
  if (st.pending) {
    StepResult tmp;
    const auto t = detail::tone_test(estimate, st, thr, tmp);
    const std::size_t lo = st.pending->n_max > static_cast<std::size_t>(thr.tone_slack)
                               ? st.pending->n_max - static_cast<std::size_t>(thr.tone_slack)
                               : 0;
    const std::size_t hi = std::min(t.over.size() - 1, st.pending->n_max + static_cast<std::size_t>(thr.tone_slack));
    bool held = false;
    for (std::size_t k = lo; k <= hi; ++k) held = held || t.over[k];
    if (held) {
      ++st.pending->hits;
      r.exceeded = true;
      r.n_max = st.pending->n_max;
      r.detected = st.pending->hits >= thr.confirm;
      return r;
    }
    r.exceeded = false;
  } else if (r.exceeded) {
    st.pending = ReferenceState::Pending{r.n_max, 1};
    r.detected = st.pending->hits >= thr.confirm;
    return r;
  }
  st.pending.reset();
  const DeltaTrace d = delta(estimate, st.reference, st.model);
  for (std::size_t k = 0; k < st.reference.size(); ++k) {
    const RMatrix dev2 = detail::deviation(d.values[k], st.model).cwiseAbs2();
    st.sigma[k] = ((1.0 - thr.alpha) * st.sigma[k].cwiseAbs2() + thr.alpha * dev2).cwiseSqrt();
    st.reference[k] = (1.0 - thr.alpha) * st.reference[k] + thr.alpha * estimate.values[k];
  }
  ++st.updates;
  return r;
}

// ---------------------------------------------------------------------------
// Classification

enum class AnomalyClass { None, ImpedanceVariation, LocalizedFault, DistributedFault };

inline const char* to_string(AnomalyClass c) {
  switch (c) {
    case AnomalyClass::None: return "none";
    case AnomalyClass::ImpedanceVariation: return "impedance_variation";
    case AnomalyClass::LocalizedFault: return "localized_fault";
    case AnomalyClass::DistributedFault: return "distributed_fault";
  }
  return "?";
}

inline AnomalyClass anomaly_class_from_string(const std::string& s) {
  if (s == "none") return AnomalyClass::None;
  if (s == "impedance_variation") return AnomalyClass::ImpedanceVariation;
  if (s == "localized_fault") return AnomalyClass::LocalizedFault;
  if (s == "distributed_fault") return AnomalyClass::DistributedFault;
  throw ConfigError("unknown anomaly class '" + s + "'");
}

struct ClassifyConfig {
  double thr2_tones = 2.0;  // frequency-peak displacement for a distributed fault
  double thr3_bins = 1.5;   // first increment peak vs an existing echo
  double thr4_bins = 1.5;   // new time-domain peaks
  double freq_prominence = 0.05;   // relative to the spread of |A(f)|
  double delta_prominence = 0.2;   // relative to the increment trace maximum
  double trace_prominence = 0.05;  // relative to the unperturbed trace maximum
  double min_distance_bins = 0.5;  // ignore trace peaks nearer than this to the port
  TraceOptions trace;
  int row = 0;
  int col = 0;
};

struct DetectionReport {
  bool detected = false;
  AnomalyClass cls = AnomalyClass::None;
  std::size_t n_max = 0;
  double d_hat = std::numeric_limits<double>::quiet_NaN();
  bool low_confidence = false;
  double freq_displacement_tones = 0.0;
  double first_peak_offset_bins = std::numeric_limits<double>::quiet_NaN();
  double new_peak_displacement_bins = 0.0;
  double bin_m = 0.0;
  std::vector<double> freq_peaks_before_hz;
  std::vector<double> freq_peaks_after_hz;
  std::vector<double> delta_peaks_m;
  std::vector<double> before_peaks_m;
  std::vector<double> after_peaks_m;
};

namespace detail {

/// Largest distance from a point of `from` to the nearest point of `to`.
inline double one_way_displacement(const std::vector<double>& from, const std::vector<double>& to) {
  if (from.empty()) return 0.0;
  if (to.empty()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (double p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (double q : to) best = std::min(best, std::abs(p - q));
    worst = std::max(worst, best);
  }
  return worst;
}

/// Largest shift between peaks of `a` and `b` that are each other's nearest
/// neighbour; peaks that appear or vanish do not count. 0 when no pair exists.
inline double matched_shift(const std::vector<double>& a, const std::vector<double>& b) {
  auto nearest = [](double x, const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (std::abs(v[i] - x) < std::abs(v[best] - x)) best = i;
    return best;
  };
  double worst = 0.0;
  if (a.empty() || b.empty()) return worst;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = nearest(a[i], b);
    if (nearest(b[j], a) == i) worst = std::max(worst, std::abs(a[i] - b[j]));
  }
  return worst;
}

inline std::vector<double> frequency_peaks(const std::vector<cplx>& a, const FrequencyGrid& grid, double rel) {
  std::vector<double> mag(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) mag[k] = std::abs(a[k]);
  const auto [lo, hi] = std::minmax_element(mag.begin(), mag.end());
  std::vector<double> out;
  for (const auto& p : find_peaks(mag, rel * (*hi - *lo))) out.push_back(grid.delta_f() * (p.position + 1.0));
  return out;
}

/// The static part (e.g. the characteristic admittance) leaks around zero
/// distance and would mask the echoes.
inline std::vector<cplx> without_mean(const std::vector<cplx>& a) {
  cplx mean{};
  for (const auto& x : a) mean += x;
  if (!a.empty()) mean /= static_cast<double>(a.size());
  std::vector<cplx> out(a);
  for (auto& x : out) x -= mean;
  return out;
}

/// Trace peaks at or beyond min_m, prominence relative to the largest of them.
inline std::vector<double> peaks_beyond(const TimeTrace& tr, double rel, double min_m) {
  const auto all = find_peaks(tr.magnitude, 0.0, tr.bin_m / tr.sample_m);
  double top = 0.0;
  for (const auto& p : all)
    if (tr.distance(p.position) >= min_m) top = std::max(top, p.amplitude);
  std::vector<double> out;
  if (!(top > 0.0)) return out;
  for (const auto& p : all)
    if (tr.distance(p.position) >= min_m && p.prominence >= rel * top) out.push_back(tr.distance(p.position));
  return out;
}

}  // namespace detail

/// Classification of a confirmed anomaly.
///
/// (i) a peak of |A(f)| shifts by more than thr2 tones (mutually nearest
///     peaks before and after) -> distributed;
/// (ii) else the first increment peak sits on an echo already present in the
///      unperturbed trace and every perturbed trace peak lies within thr4 of an
///      unperturbed one ->
///      impedance variation; (iii) otherwise a localized fault.
/// `before`/`after` are the unperturbed reference and a perturbed estimate of
/// the same quantity; `d` is their increment.
inline DetectionReport classify(const std::vector<cplx>& before, const std::vector<cplx>& after, const DeltaTrace& d,
                                double velocity, const ClassifyConfig& cfg) {
  DetectionReport rep;
  rep.detected = true;
  const FrequencyGrid& grid = d.grid;
  rep.freq_peaks_before_hz = detail::frequency_peaks(before, grid, cfg.freq_prominence);
  rep.freq_peaks_after_hz = detail::frequency_peaks(after, grid, cfg.freq_prominence);
  rep.freq_displacement_tones =
      detail::matched_shift(rep.freq_peaks_before_hz, rep.freq_peaks_after_hz) / grid.delta_f();

  const TimeTrace dt = to_time_domain(d.entry_deviation(cfg.row, cfg.col), grid, velocity, cfg.trace);
  const TimeTrace bt = to_time_domain(detail::without_mean(before), grid, velocity, cfg.trace);
  const TimeTrace at = to_time_domain(detail::without_mean(after), grid, velocity, cfg.trace);
  rep.bin_m = dt.bin_m;
  const double min_m = cfg.min_distance_bins * dt.bin_m;
  rep.delta_peaks_m = detail::peaks_beyond(dt, cfg.delta_prominence, min_m);
  rep.before_peaks_m = detail::peaks_beyond(bt, cfg.trace_prominence, min_m);
  rep.after_peaks_m = detail::peaks_beyond(at, cfg.trace_prominence, min_m);

  // n_max: tone of the largest increment.
  double best = -1.0;
  for (std::size_t k = 0; k < d.values.size(); ++k) {
    const double v = std::abs(detail::deviation(d.values[k], d.model)(cfg.row, cfg.col));
    if (v > best) {
      best = v;
      rep.n_max = k;
    }
  }

  if (rep.delta_peaks_m.empty()) {
    rep.cls = AnomalyClass::LocalizedFault;
    rep.low_confidence = true;
    return rep;
  }
  rep.d_hat = rep.delta_peaks_m.front();

  if (rep.freq_displacement_tones > cfg.thr2_tones) {
    rep.cls = AnomalyClass::DistributedFault;
    return rep;
  }
  double nearest = std::numeric_limits<double>::infinity();
  for (double p : rep.before_peaks_m) nearest = std::min(nearest, std::abs(p - rep.d_hat));
  rep.first_peak_offset_bins = nearest / dt.bin_m;
  rep.new_peak_displacement_bins = detail::one_way_displacement(rep.after_peaks_m, rep.before_peaks_m) / dt.bin_m;
  if (rep.before_peaks_m.empty() || rep.after_peaks_m.empty()) rep.low_confidence = true;
  if (rep.first_peak_offset_bins <= cfg.thr3_bins && rep.new_peak_displacement_bins < cfg.thr4_bins) {
    rep.cls = AnomalyClass::ImpedanceVariation;
  } else {
    rep.cls = AnomalyClass::LocalizedFault;
  }
  return rep;
}

inline void to_json(nlohmann::json& j, const DetectionReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  j = {{"detected", r.detected},
       {"class", to_string(r.cls)},
       {"n_max", r.n_max},
       {"d_hat_m", num(r.d_hat)},
       {"low_confidence", r.low_confidence},
       {"freq_displacement_tones", num(r.freq_displacement_tones)},
       {"first_peak_offset_bins", num(r.first_peak_offset_bins)},
       {"new_peak_displacement_bins", num(r.new_peak_displacement_bins)},
       {"bin_m", r.bin_m},
       {"evidence",
        {{"freq_peaks_before_hz", r.freq_peaks_before_hz},
         {"freq_peaks_after_hz", r.freq_peaks_after_hz},
         {"delta_peaks_m", r.delta_peaks_m},
         {"before_peaks_m", r.before_peaks_m},
         {"after_peaks_m", r.after_peaks_m}}}};
}

inline void from_json(const nlohmann::json& j, DetectionReport& r) {
  auto num = [&](const char* key) {
    return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<double>()
                                                   : std::numeric_limits<double>::quiet_NaN();
  };
  r.detected = j.at("detected").get<bool>();
  r.cls = anomaly_class_from_string(j.at("class").get<std::string>());
  r.n_max = j.value("n_max", std::size_t{0});
  r.d_hat = num("d_hat_m");
  r.low_confidence = j.value("low_confidence", false);
  r.freq_displacement_tones = num("freq_displacement_tones");
  r.first_peak_offset_bins = num("first_peak_offset_bins");
  r.new_peak_displacement_bins = num("new_peak_displacement_bins");
  r.bin_m = j.value("bin_m", 0.0);
  if (j.contains("evidence")) {
    const auto& e = j.at("evidence");
    r.freq_peaks_before_hz = e.value("freq_peaks_before_hz", std::vector<double>{});
    r.freq_peaks_after_hz = e.value("freq_peaks_after_hz", std::vector<double>{});
    r.delta_peaks_m = e.value("delta_peaks_m", std::vector<double>{});
    r.before_peaks_m = e.value("before_peaks_m", std::vector<double>{});
    r.after_peaks_m = e.value("after_peaks_m", std::vector<double>{});
  }
}

}  // namespace gridsense
