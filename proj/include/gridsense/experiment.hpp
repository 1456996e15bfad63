#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gridsense/detect.hpp"
#include "gridsense/generator.hpp"
#include "gridsense/locate.hpp"
#include "gridsense/network.hpp"
#include "gridsense/sensing.hpp"

namespace gridsense {

/// Matrix entry in 1-based "row-col" notation ("1-1", "1-2").
inline std::string entry_name(std::pair<int, int> e) {
  return std::to_string(e.first + 1) + "-" + std::to_string(e.second + 1);
}

inline std::pair<int, int> entry_from_string(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos) throw ConfigError("entry '" + s + "' is not of the form i-j");
  try {
    const int i = std::stoi(s.substr(0, dash)), j = std::stoi(s.substr(dash + 1));
    if (i < 1 || j < 1 || i > kMaxChannels || j > kMaxChannels) throw ConfigError("entry '" + s + "' out of range");
    return {i - 1, j - 1};
  } catch (const std::logic_error&) {
    throw ConfigError("entry '" + s + "' is not of the form i-j");
  }
}

struct ExperimentConfig {
  std::vector<Quantity> quantities{Quantity::Yin};
  std::vector<DeltaModel> models{DeltaModel::Superposition};
  int channels = 1;
  std::vector<std::pair<int, int>> entries{{0, 0}};
  std::vector<AnomalyKind> kinds{AnomalyKind::LocalizedFault};
  std::vector<int> node_counts{10};
  /// Empty: Physical noise (`physical`); otherwise one cell per QNR value.
  std::vector<double> qnr_db;
  NoiseModel physical = NoiseModel::physical();
  int averages = 1;
  int trials = 200;
  std::uint64_t seed = 1;
  int workers = 0;  // 0: hardware concurrency
  TopologyConfig topology;
  AnomalyDistribution anomalies;
  DetectThresholds detect;
  int max_stream = 10;  // anomalous estimates fed to the sequential test
  ClassifyConfig classify;
  LocateConfig locate;
  FrequencyGrid grid;
  std::string records_path;
  std::string summary_path;
  std::vector<std::string> group_by{"quantity", "model", "entry", "nodes", "noise", "kind"};

  void validate() const {
    if (trials < 1) throw ConfigError("trials must be at least 1");
    if (quantities.empty() || models.empty() || entries.empty() || kinds.empty() || node_counts.empty())
      throw ConfigError("sweep lists must be non-empty");
    if (channels != 1 && channels != 2) throw ConfigError("channels must be 1 or 2");
    for (auto [i, j] : entries)
      if (i >= channels || j >= channels) throw ConfigError("entry " + entry_name({i, j}) + " exceeds the channel count");
    for (int n : node_counts)
      if (n < 2) throw ConfigError("node counts must be at least 2");
    for (double q : qnr_db)
      if (std::isnan(q)) throw ConfigError("QNR values must be numbers");
    if (averages < 1) throw ConfigError("averages must be at least 1");
    if (detect.warmup < 2) throw ConfigError("warmup must be at least 2");
    if (detect.confirm < 1 || max_stream < detect.confirm) throw ConfigError("max_stream must be at least confirm >= 1");
    if (workers < 0) throw ConfigError("workers must be non-negative");
    physical.validate();
    topology.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size()) throw ConfigError("'" + key + "': '" + v + "' is not a number");
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  if (x != std::floor(x)) throw ConfigError("'" + key + "': '" + v + "' is not an integer");
  return static_cast<long long>(x);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "': '" + v + "' is not a boolean");
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  auto list = [&] {
    auto l = split_list(v);
    if (l.empty()) throw ConfigError("'" + key + "' needs at least one value");
    return l;
  };
  if (key == "quantities") {
    c.quantities.clear();
    for (const auto& s : list()) c.quantities.push_back(quantity_from_string(s));
  } else if (key == "models") {
    c.models.clear();
    for (const auto& s : list()) c.models.push_back(delta_model_from_string(s));
  } else if (key == "channels") {
    c.channels = static_cast<int>(parse_int(key, v));
  } else if (key == "entries") {
    c.entries.clear();
    for (const auto& s : list()) c.entries.push_back(entry_from_string(s));
  } else if (key == "kinds") {
    c.kinds.clear();
    for (const auto& s : list()) c.kinds.push_back(anomaly_kind_from_string(s));
  } else if (key == "nodes") {
    c.node_counts.clear();
    for (const auto& s : list()) c.node_counts.push_back(static_cast<int>(parse_int(key, s)));
  } else if (key == "noise") {
    if (v == "physical") {
      c.qnr_db.clear();
    } else if (v != "qnr") {
      throw ConfigError("'noise' must be physical or qnr");
    }
  } else if (key == "qnr_db") {
    c.qnr_db.clear();
    for (const auto& s : list())
      c.qnr_db.push_back(s == "inf" ? std::numeric_limits<double>::infinity() : parse_double(key, s));
  } else if (key == "tx_dbc") {
    c.physical.tx_dbc = parse_double(key, v);
  } else if (key == "rx_dbc") {
    c.physical.rx_dbc = parse_double(key, v);
  } else if (key == "network_noise") {
    c.physical.network_noise = parse_bool(key, v);
  } else if (key == "network_n0_db") {
    c.physical.network_n0_db = parse_double(key, v);
  } else if (key == "averages") {
    c.averages = static_cast<int>(parse_int(key, v));
  } else if (key == "trials") {
    c.trials = static_cast<int>(parse_int(key, v));
  } else if (key == "seed") {
    c.seed = std::stoull(v);
  } else if (key == "workers") {
    c.workers = static_cast<int>(parse_int(key, v));
  } else if (key == "avg_branch_length") {
    c.topology.avg_branch_length = parse_double(key, v);
  } else if (key == "max_node_degree") {
    c.topology.max_node_degree = static_cast<int>(parse_int(key, v));
  } else if (key == "port_choice") {
    if (v == "highest_degree") c.topology.port_choice = PortChoice::HighestDegree;
    else if (v == "random") c.topology.port_choice = PortChoice::Random;
    else throw ConfigError("'port_choice' must be highest_degree or random");
  } else if (key == "warmup") {
    c.detect.warmup = static_cast<int>(parse_int(key, v));
  } else if (key == "confirm") {
    c.detect.confirm = static_cast<int>(parse_int(key, v));
  } else if (key == "k_sigma") {
    c.detect.k_sigma = parse_double(key, v);
  } else if (key == "alpha") {
    c.detect.alpha = parse_double(key, v);
  } else if (key == "max_stream") {
    c.max_stream = static_cast<int>(parse_int(key, v));
  } else if (key == "thr2_tones") {
    c.classify.thr2_tones = parse_double(key, v);
  } else if (key == "thr3_bins") {
    c.classify.thr3_bins = parse_double(key, v);
  } else if (key == "thr4_bins") {
    c.classify.thr4_bins = parse_double(key, v);
  } else if (key == "freq_prominence") {
    c.classify.freq_prominence = parse_double(key, v);
  } else if (key == "delta_prominence") {
    c.classify.delta_prominence = parse_double(key, v);
  } else if (key == "trace_prominence") {
    c.classify.trace_prominence = parse_double(key, v);
  } else if (key == "score") {
    if (v == "mean") c.locate.score = ScoreMode::Mean;
    else if (v == "min") c.locate.score = ScoreMode::Min;
    else throw ConfigError("'score' must be mean or min");
  } else if (key == "records") {
    c.records_path = v;
  } else if (key == "summary") {
    c.summary_path = v;
  } else if (key == "group_by") {
    c.group_by = split_list(v);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

/// Flat `key = value` text, '#' starts a comment.
inline ExperimentConfig parse_experiment_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      apply_setting(c, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment_config(in);
}

/// GRIDSENSE_SEED, when set, replaces the master seed.
inline void apply_environment(ExperimentConfig& c) {
  if (const char* s = std::getenv("GRIDSENSE_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument("trailing");
      c.seed = v;
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("GRIDSENSE_SEED='") + s + "' is not an unsigned integer");
    }
  }
}

struct TrialRecord {
  std::size_t cell = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  int nodes = 0;
  AnomalyKind kind = AnomalyKind::LocalizedFault;
  std::string anomaly;  // compact JSON of the injected anomaly
  int true_branch = -1;
  int true_node = -1;   // load changes
  double true_distance_m = std::numeric_limits<double>::quiet_NaN();
  Quantity quantity = Quantity::Yin;
  DeltaModel model = DeltaModel::Superposition;
  std::pair<int, int> entry{0, 0};
  double qnr_db = std::numeric_limits<double>::quiet_NaN();  // NaN: physical noise
  double realized_qnr_db = std::numeric_limits<double>::quiet_NaN();
  double stat_normal = std::numeric_limits<double>::quiet_NaN();
  double stat_anomalous = std::numeric_limits<double>::quiet_NaN();
  bool detected = false;
  int detect_steps = 0;
  bool classified = false;
  AnomalyClass cls = AnomalyClass::None;
  bool class_ok = false;
  double d_hat_m = std::numeric_limits<double>::quiet_NaN();
  bool located = false;
  int located_id = -1;
  bool branch_hit = false;
  bool first_node_hit = false;
  std::string locate_error;  // localization gave no answer (a miss, not a trial failure)
  std::string error;

  std::string noise_label() const {
    if (std::isnan(qnr_db)) return "physical";
    std::ostringstream os;
    os << "qnr" << qnr_db;
    return os.str();
  }
};

inline AnomalyClass expected_class(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::LoadChange: return AnomalyClass::ImpedanceVariation;
    case AnomalyKind::LocalizedFault: return AnomalyClass::LocalizedFault;
    case AnomalyKind::DistributedFault: return AnomalyClass::DistributedFault;
  }
  return AnomalyClass::None;
}

/// One point of the sweep.
struct Cell {
  Quantity quantity;
  DeltaModel model;
  std::pair<int, int> entry;
  AnomalyKind kind;
  int nodes;
  std::size_t noise_index;  // into qnr_db, or 0 for physical
};

inline std::vector<Cell> experiment_cells(const ExperimentConfig& c) {
  std::vector<Cell> cells;
  const std::size_t noises = c.qnr_db.empty() ? 1 : c.qnr_db.size();
  for (int n : c.node_counts)
    for (auto k : c.kinds)
      for (std::size_t z = 0; z < noises; ++z)
        for (auto q : c.quantities)
          for (auto m : c.models)
            for (auto e : c.entries) cells.push_back({q, m, e, k, n, z});
  return cells;
}

namespace detail {

/// Receiver node for end-to-end quantities: the node farthest from the port.
inline int far_node(const Topology& topo, int port) {
  int best = port;
  double d = -1.0;
  for (const auto& [node, dn] : node_distances(topo, port))
    if (dn > d) {
      d = dn;
      best = node;
    }
  return best;
}

inline Spectrum true_quantity(const Topology& topo, int port, Quantity q, const FrequencyGrid& grid, int rx) {
  switch (q) {
    case Quantity::Yin: return tl::input_admittance(topo, port, grid);
    case Quantity::Rho: return tl::reflection_coefficient(tl::input_admittance(topo, port, grid));
    case Quantity::H: return tl::transfer_function(topo, port, rx, grid);
  }
  throw DomainError("unknown quantity");
}

inline double max_abs_deviation(const Spectrum& est, const std::vector<CMatrix>& ref, DeltaModel model,
                                std::pair<int, int> e) {
  const DeltaTrace d = delta(est, ref, model);
  double m = 0.0;
  for (const auto& v : d.values) m = std::max(m, std::abs(deviation(v, model)(e.first, e.second)));
  return m;
}

/// Nearest node of a branch to the port.
inline int near_node(const Topology& topo, const std::map<int, double>& dist, int branch) {
  const Branch& b = topo.branch(branch);
  return dist.at(b.a) <= dist.at(b.b) ? b.a : b.b;
}

}  // namespace detail

/// Seeds. The network and anomaly of trial t depend only on (nodes, kind,
/// t), and the noise additionally on the noise cell, so quantities, models
/// and entries are compared on common random numbers.
inline std::uint64_t network_seed(const ExperimentConfig& c, const Cell& cell, int trial) {
  return derive_seed(c.seed, {0x6e6574ULL, static_cast<std::uint64_t>(cell.nodes),
                              static_cast<std::uint64_t>(cell.kind), static_cast<std::uint64_t>(trial)});
}

inline std::uint64_t noise_seed(const ExperimentConfig& c, const Cell& cell, int trial) {
  return derive_seed(c.seed, {0x6e6f69ULL, static_cast<std::uint64_t>(cell.nodes), static_cast<std::uint64_t>(cell.kind),
                              static_cast<std::uint64_t>(trial), cell.noise_index});
}

/// One trial: network, anomaly, noisy streams, detection, classification
/// and localization. Failures are captured in `error`.
inline TrialRecord run_trial(const ExperimentConfig& c, std::size_t cell_index, const Cell& cell, int trial) {
  TrialRecord r;
  r.cell = cell_index;
  r.trial = trial;
  r.seed = network_seed(c, cell, trial);
  r.nodes = cell.nodes;
  r.kind = cell.kind;
  r.quantity = cell.quantity;
  r.model = cell.model;
  r.entry = cell.entry;
  if (!c.qnr_db.empty()) r.qnr_db = c.qnr_db[cell.noise_index];
  try {
    TopologyConfig tc = c.topology;
    tc.n_nodes = cell.nodes;
    tc.cable.channels = c.channels;
    Rng rng(r.seed);
    const Topology topo = generate_topology(tc, rng());
    const int port = topo.ports.front().node;
    AnomalyDistribution ad = c.anomalies;
    if (c.channels == 2) ad.conductors = {2, 0};
    const Anomaly anomaly = sample_anomaly(topo, port, cell.kind, ad, tc.loads, rng);
    r.anomaly = nlohmann::json(anomaly).dump();
    r.true_branch = anomaly_branch(topo, anomaly, port);
    if (const auto* lc = std::get_if<LoadChange>(&anomaly)) r.true_node = lc->node;
    r.true_distance_m = anomaly_distance(topo, anomaly, port);
    const Topology faulty = inject_anomaly(topo, anomaly);

    const int rx = detail::far_node(topo, port);
    const Spectrum x0 = detail::true_quantity(topo, port, cell.quantity, c.grid, rx);
    const Spectrum x1 = detail::true_quantity(faulty, port, cell.quantity, c.grid, rx);

    const NoiseModel noise = c.qnr_db.empty() ? c.physical : NoiseModel::direct_qnr(c.qnr_db[cell.noise_index]);
    const MeasurementPlan plan = MeasurementPlan::mls(c.averages);
    const std::uint64_t ns = noise_seed(c, cell, trial);
    std::uint64_t draw = 0;
    auto measure = [&](const Spectrum& truth) { return simulate_measurement(truth, noise, plan, derive_seed(ns, {draw++})); };

    std::vector<Spectrum> warm;
    for (int i = 0; i < c.detect.warmup; ++i) warm.push_back(measure(x0).spectrum);
    DetectThresholds thr = c.detect;
    thr.entries = {cell.entry};
    ReferenceState st = init_reference(warm, cell.model);
    const std::vector<CMatrix> before_ref = st.reference;

    const EstimatedSpectrum normal = measure(x0);
    r.stat_normal = detail::max_abs_deviation(normal.spectrum, before_ref, cell.model, cell.entry);
    r.realized_qnr_db = normal.realized_qnr_db;

    Spectrum after_sum = x1;
    for (auto& v : after_sum.values) v.setZero();
    int consumed = 0;
    for (int s = 0; s < c.max_stream; ++s) {
      const EstimatedSpectrum est = measure(x1);
      if (s == 0) r.stat_anomalous = detail::max_abs_deviation(est.spectrum, before_ref, cell.model, cell.entry);
      for (std::size_t k = 0; k < est.spectrum.size(); ++k) after_sum.values[k] += est.spectrum.values[k];
      ++consumed;
      const StepResult step = detect_step(est.spectrum, st, thr);
      if (step.detected) {
        r.detected = true;
        r.detect_steps = s + 1;
        break;
      }
    }
    if (!r.detected || cell.quantity == Quantity::H) return r;

    // Classification on the averaged anomalous estimates against the warm-up reference.
    for (auto& v : after_sum.values) v /= static_cast<double>(consumed);
    const DeltaTrace d = delta(after_sum, before_ref, cell.model);
    std::vector<cplx> before, after;
    for (std::size_t k = 0; k < before_ref.size(); ++k) {
      before.push_back(before_ref[k](cell.entry.first, cell.entry.second));
      after.push_back(after_sum.values[k](cell.entry.first, cell.entry.second));
    }
    ClassifyConfig cc = c.classify;
    cc.row = cell.entry.first;
    cc.col = cell.entry.second;
    const DetectionReport rep = classify(before, after, d, tc.cable.velocity(), cc);
    r.classified = true;
    r.cls = rep.cls;
    r.class_ok = rep.cls == expected_class(cell.kind);
    r.d_hat_m = rep.d_hat;
    if (!std::isfinite(rep.d_hat)) return r;

    LocalizationReport loc;
    try {
      loc = localize_single(rep, topo, port, c.locate);
    } catch (const LocateError& e) {
      r.locate_error = e.what();
      return r;
    }
    r.located = true;
    r.located_id = loc.chosen;
    const auto dist = node_distances(topo, port);
    const RootedTree tree = RootedTree::build(topo, port);
    int branch = loc.chosen;
    if (loc.target == LocateTarget::Node) {
      const auto it = tree.parent_branch.find(loc.chosen);
      branch = it == tree.parent_branch.end() ? -1 : it->second;
    }
    if (cell.kind == AnomalyKind::LoadChange && loc.target == LocateTarget::Node) {
      r.branch_hit = loc.chosen == r.true_node;
    } else {
      r.branch_hit = branch == r.true_branch;
    }
    r.first_node_hit = r.branch_hit || (branch >= 0 && r.true_branch >= 0 &&
                                        detail::near_node(topo, dist, branch) == detail::near_node(topo, dist, r.true_branch));
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

/// All (cell, trial) records in deterministic order, whatever the worker count.
inline std::vector<TrialRecord> run_monte_carlo(const ExperimentConfig& c) {
  c.validate();
  const auto cells = experiment_cells(c);
  const std::size_t jobs = cells.size() * static_cast<std::size_t>(c.trials);
  std::vector<TrialRecord> out(jobs);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const std::size_t ci = j / static_cast<std::size_t>(c.trials);
      out[j] = run_trial(c, ci, cells[ci], static_cast<int>(j % static_cast<std::size_t>(c.trials)));
    }
  };
  unsigned n = c.workers > 0 ? static_cast<unsigned>(c.workers) : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct Interval {
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
};

/// Wilson score interval for k successes out of n.
inline Interval wilson_interval(std::size_t k, std::size_t n, double z = 1.959964) {
  if (n == 0) return {};
  if (k > n) throw DomainError("more successes than trials");
  const double nn = static_cast<double>(n), p = static_cast<double>(k) / nn, z2 = z * z;
  const double den = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / den;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / den;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Half the overlap area of two densities estimated from samples by a
/// Gaussian kernel (Silverman bandwidth): 1/2 integral of min(p0, p1).
/// A constant sample is a point mass; two equal point masses give 0.5.
inline double p_failure_overlap(const std::vector<double>& s0, const std::vector<double>& s1, std::size_t points = 4096) {
  if (s0.empty() || s1.empty()) throw DomainError("p_failure needs two non-empty samples");
  for (const auto* s : {&s0, &s1})
    for (double x : *s)
      if (!std::isfinite(x)) throw DomainError("p_failure samples must be finite");
  auto is_const = [](const std::vector<double>& s) {
    return std::all_of(s.begin(), s.end(), [&](double x) { return x == s.front(); });
  };
  const bool c0 = is_const(s0), c1 = is_const(s1);
  if (c0 && c1) return s0.front() == s1.front() ? 0.5 : 0.0;
  if (c0 || c1) return 0.0;

  auto bandwidth = [](std::vector<double> s) {
    const double n = static_cast<double>(s.size());
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
    double var = 0.0;
    for (double x : s) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / (n - 1.0));
    std::sort(s.begin(), s.end());
    auto q = [&](double p) {
      const double pos = p * (n - 1.0);
      const std::size_t i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      return i + 1 < s.size() ? s[i] * (1.0 - f) + s[i + 1] * f : s[i];
    };
    const double iqr = q(0.75) - q(0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    return 0.9 * spread * std::pow(n, -0.2);
  };
  const double h0 = bandwidth(s0), h1 = bandwidth(s1);
  const auto [lo0, hi0] = std::minmax_element(s0.begin(), s0.end());
  const auto [lo1, hi1] = std::minmax_element(s1.begin(), s1.end());
  const double h = std::max(h0, h1);
  const double lo = std::min(*lo0, *lo1) - 5.0 * h, hi = std::max(*hi0, *hi1) + 5.0 * h;
  const double dx = (hi - lo) / static_cast<double>(points - 1);

  // Densities on the grid by binning onto it and summing kernels per bin.
  auto density = [&](const std::vector<double>& s, double bw) {
    std::vector<double> counts(points, 0.0);
    for (double x : s) {
      const double pos = (x - lo) / dx;
      const std::size_t i = std::min(points - 2, static_cast<std::size_t>(pos));
      const double f = pos - static_cast<double>(i);
      counts[i] += 1.0 - f;
      counts[i + 1] += f;
    }
    const int reach = static_cast<int>(std::ceil(6.0 * bw / dx));
    std::vector<double> kernel(2 * reach + 1);
    const double norm = 1.0 / (static_cast<double>(s.size()) * bw * std::sqrt(2.0 * kPi));
    for (int k = -reach; k <= reach; ++k) {
      const double u = k * dx / bw;
      kernel[k + reach] = norm * std::exp(-0.5 * u * u);
    }
    std::vector<double> p(points, 0.0);
    for (std::size_t i = 0; i < points; ++i) {
      if (counts[i] == 0.0) continue;
      const int lo_k = std::max(-reach, -static_cast<int>(i));
      const int hi_k = std::min(reach, static_cast<int>(points - 1 - i));
      for (int k = lo_k; k <= hi_k; ++k) p[i + k] += counts[i] * kernel[k + reach];
    }
    return p;
  };
  const auto p0 = density(s0, h0), p1 = density(s1, h1);
  double acc = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const double w = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
    acc += w * std::min(p0[i], p1[i]);
  }
  return std::clamp(0.5 * acc * dx, 0.0, 0.5);
}

struct SummaryRow {
  std::vector<std::pair<std::string, std::string>> key;
  std::size_t trials = 0;
  std::size_t errors = 0;
  std::size_t detected = 0;
  std::size_t classified_ok = 0;
  std::size_t branch_hits = 0;
  std::size_t first_node_hits = 0;
  double p_failure = std::numeric_limits<double>::quiet_NaN();

  double rate(std::size_t k) const {
    return trials == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(k) / static_cast<double>(trials);
  }
};

inline std::string record_field(const TrialRecord& r, const std::string& name) {
  if (name == "quantity") return to_string(r.quantity);
  if (name == "model") return to_string(r.model);
  if (name == "entry") return entry_name(r.entry);
  if (name == "nodes") return std::to_string(r.nodes);
  if (name == "noise") return r.noise_label();
  if (name == "kind") return to_string(r.kind);
  if (name == "cell") return std::to_string(r.cell);
  throw ConfigError("cannot group by '" + name + "'");
}

/// Per-group counts and the overlap failure probability of the log
/// statistics. Groups appear in order of first occurrence.
inline std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records, const std::vector<std::string>& group_by) {
  if (records.empty()) throw DomainError("no records to summarize");
  std::vector<SummaryRow> rows;
  std::map<std::vector<std::string>, std::size_t> index;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> stats;
  for (const auto& r : records) {
    std::vector<std::string> key;
    for (const auto& g : group_by) key.push_back(record_field(r, g));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, rows.size()).first;
      SummaryRow row;
      for (std::size_t i = 0; i < key.size(); ++i) row.key.emplace_back(group_by[i], key[i]);
      rows.push_back(row);
      stats.emplace_back();
    }
    SummaryRow& row = rows[it->second];
    ++row.trials;
    if (!r.error.empty()) {
      ++row.errors;
      continue;
    }
    row.detected += r.detected;
    row.classified_ok += r.class_ok;
    row.branch_hits += r.branch_hit;
    row.first_node_hits += r.first_node_hit;
    // Log statistics; zero maps to a large negative value (noiseless runs).
    auto lg = [](double x) { return x > 0.0 ? std::log(x) : -745.0; };
    if (std::isfinite(r.stat_normal) && std::isfinite(r.stat_anomalous)) {
      stats[it->second].first.push_back(lg(r.stat_normal));
      stats[it->second].second.push_back(lg(r.stat_anomalous));
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!stats[i].first.empty()) rows[i].p_failure = p_failure_overlap(stats[i].first, stats[i].second);
  return rows;
}

namespace detail {

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

inline std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_records_csv(std::ostream& os, const std::vector<TrialRecord>& records) {
  using detail::fmt;
  os << "cell,trial,seed,nodes,kind,anomaly,true_branch,true_node,true_distance_m,quantity,model,entry,noise,"
        "realized_qnr_db,stat_normal,stat_anomalous,detected,detect_steps,class,class_ok,d_hat_m,located_id,"
        "branch_hit,first_node_hit,locate_error,error\n";
  for (const auto& r : records) {
    os << r.cell << ',' << r.trial << ',' << r.seed << ',' << r.nodes << ',' << to_string(r.kind) << ','
       << detail::csv_text(r.anomaly) << ',' << r.true_branch << ',' << r.true_node << ',' << fmt(r.true_distance_m) << ','
       << to_string(r.quantity) << ',' << to_string(r.model) << ',' << entry_name(r.entry) << ',' << r.noise_label() << ','
       << fmt(r.realized_qnr_db) << ',' << fmt(r.stat_normal) << ',' << fmt(r.stat_anomalous) << ',' << r.detected << ','
       << r.detect_steps << ',' << (r.classified ? to_string(r.cls) : "") << ',' << r.class_ok << ',' << fmt(r.d_hat_m)
       << ',' << r.located_id << ',' << r.branch_hit << ',' << r.first_node_hit << ','
       << detail::csv_text(r.locate_error) << ',' << detail::csv_text(r.error)
       << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  using detail::fmt;
  if (rows.empty()) return;
  for (const auto& [k, _] : rows.front().key) os << k << ',';
  os << "trials,errors,p_failure,p_detect,p_detect_lo,p_detect_hi,p_class,p_class_lo,p_class_hi,p_branch,p_branch_lo,"
        "p_branch_hi,p_first_node,p_first_node_lo,p_first_node_hi\n";
  for (const auto& r : rows) {
    for (const auto& [_, v] : r.key) os << v << ',';
    os << r.trials << ',' << r.errors << ',' << fmt(r.p_failure);
    for (std::size_t k : {r.detected, r.classified_ok, r.branch_hits, r.first_node_hits}) {
      const Interval ci = wilson_interval(k, r.trials);
      os << ',' << fmt(r.rate(k)) << ',' << fmt(ci.lo) << ',' << fmt(ci.hi);
    }
    os << '\n';
  }
}

}  // namespace gridsense
