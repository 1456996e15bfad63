#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/admittance.hpp"
#include "gridsense/cable.hpp"
#include "gridsense/topology.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(master);
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline double log_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

/// Termination draw: a share of open circuits, a share of series RLC loads
/// resonating inside the band, the rest plain resistors. R is log-uniform.
struct LoadDistribution {
  double open_fraction = 0.1;
  double resonant_fraction = 0.3;
  double r_min = 5.0;
  double r_max = 1000.0;
  double resonance_min_hz = 10e3;
  double resonance_max_hz = 450e3;
  double q_min = 0.5;
  double q_max = 5.0;

  void validate() const {
    if (open_fraction < 0.0 || resonant_fraction < 0.0 || open_fraction + resonant_fraction > 1.0)
      throw ConfigError("load fractions must be non-negative and sum to at most 1");
    if (!(r_min > 0.0) || !(r_max >= r_min)) throw ConfigError("load resistance range is invalid");
    if (!(resonance_min_hz > 0.0) || !(resonance_max_hz >= resonance_min_hz))
      throw ConfigError("load resonance range is invalid");
    if (!(q_min > 0.0) || !(q_max >= q_min)) throw ConfigError("load quality factor range is invalid");
  }

  tl::AdmittanceModel draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double pick = u(rng);
    const double r = log_uniform(rng, r_min, r_max);
    if (pick < open_fraction) return tl::AdmittanceModel::open();
    if (pick < open_fraction + resonant_fraction) {
      const double wr = 2.0 * kPi * log_uniform(rng, resonance_min_hz, resonance_max_hz);
      const double q = log_uniform(rng, q_min, q_max);
      const double l = q * r / wr;
      return tl::AdmittanceModel::series(r, l, 1.0 / (wr * wr * l));
    }
    return tl::AdmittanceModel::resistor(r);
  }
};

enum class PortChoice { HighestDegree, Random };

struct TopologyConfig {
  int n_nodes = 20;
  double avg_branch_length = 900.0;  // m
  int max_node_degree = 4;
  double area_side = 0.0;  // m; 0 picks a side giving roughly avg_branch_length spacing
  tl::CableSpec cable;
  LoadDistribution loads;
  PortChoice port_choice = PortChoice::HighestDegree;

  void validate() const {
    if (n_nodes < 2) throw ConfigError("n_nodes must be at least 2");
    if (!(avg_branch_length > 0.0) || !std::isfinite(avg_branch_length))
      throw ConfigError("avg_branch_length must be positive");
    if (max_node_degree < 2 && n_nodes > 2) throw ConfigError("max_node_degree below 2 cannot connect a tree");
    if (max_node_degree < 1) throw ConfigError("max_node_degree must be positive");
    if (area_side < 0.0) throw ConfigError("area_side must be non-negative");
    cable.validate();
    loads.validate();
  }
};

/// Random tree grid.
///
/// Nodes are scattered uniformly over a square and joined by a Prim spanning
/// tree that never grows a node past `max_node_degree` (shortest admissible
/// edge first). Coordinates are then scaled so the mean branch length equals
/// `avg_branch_length`. The port is the highest-degree node (lowest id on
/// ties) or a uniformly drawn one; every other leaf receives a load.
inline Topology generate_topology(const TopologyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int n = cfg.n_nodes;
  const double side = cfg.area_side > 0.0 ? cfg.area_side : cfg.avg_branch_length * std::sqrt(static_cast<double>(n));
  std::uniform_real_distribution<double> coord(0.0, side);
  std::vector<double> xs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = coord(rng);
    ys[i] = coord(rng);
  }
  auto dist = [&](int i, int j) { return std::hypot(xs[i] - xs[j], ys[i] - ys[j]); };

  std::vector<int> degree(n, 0);
  std::vector<bool> in_tree(n, false);
  std::vector<std::pair<int, int>> edges;
  in_tree[0] = true;
  for (int added = 1; added < n; ++added) {
    double best = std::numeric_limits<double>::infinity();
    int bu = -1, bv = -1;
    for (int u = 0; u < n; ++u) {
      if (!in_tree[u] || degree[u] >= cfg.max_node_degree) continue;
      for (int v = 0; v < n; ++v) {
        if (in_tree[v]) continue;
        const double d = dist(u, v);
        if (d < best) {
          best = d;
          bu = u;
          bv = v;
        }
      }
    }
    if (bu < 0) throw ConfigError("degree bound prevents a connected tree");
    in_tree[bv] = true;
    ++degree[bu];
    ++degree[bv];
    edges.emplace_back(bu, bv);
  }

  double total = 0.0;
  for (auto [u, v] : edges) total += dist(u, v);
  const double mean = total / static_cast<double>(edges.size());
  const double scale = mean > 0.0 ? cfg.avg_branch_length / mean : 1.0;

  Topology t;
  for (int i = 0; i < n; ++i) t.nodes.push_back({i, xs[i] * scale, ys[i] * scale});
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [u, v] = edges[e];
    const double len = mean > 0.0 ? dist(u, v) * scale : cfg.avg_branch_length;
    t.branches.push_back({static_cast<int>(e), u, v, len, cfg.cable, {}});
  }

  int port = 0;
  if (cfg.port_choice == PortChoice::Random) {
    port = std::uniform_int_distribution<int>(0, n - 1)(rng);
  } else {
    for (int i = 1; i < n; ++i)
      if (degree[i] > degree[port]) port = i;
  }
  t.ports.push_back({port, tl::AdmittanceModel::matched()});
  for (int i = 0; i < n; ++i)
    if (degree[i] == 1 && i != port) t.loads[i] = cfg.loads.draw(rng);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Anomalies

struct LoadChange {
  int node = 0;
  tl::AdmittanceModel load;
  bool operator==(const LoadChange&) const = default;
};

/// Shunt at `offset_m` from the branch's `a` end.
struct LocalizedFault {
  int branch = 0;
  double offset_m = 0.0;
  tl::AdmittanceModel admittance;
  std::array<int, 2> conductors{1, 0};
  bool operator==(const LocalizedFault&) const = default;
};

/// Degraded span starting `start_m` from the branch's `a` end. Without an
/// explicit cable, the branch cable with R scaled by r_scale and C by c_scale.
struct DistributedFault {
  int branch = 0;
  double start_m = 0.0;
  double length_m = 0.0;
  std::optional<tl::CableSpec> cable;
  double r_scale = 1.5;
  double c_scale = 1.1;
  bool operator==(const DistributedFault&) const = default;
};

using Anomaly = std::variant<LoadChange, LocalizedFault, DistributedFault>;

enum class AnomalyKind { LoadChange, LocalizedFault, DistributedFault };

inline AnomalyKind kind_of(const Anomaly& a) { return static_cast<AnomalyKind>(a.index()); }

inline const char* to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::LoadChange: return "load_change";
    case AnomalyKind::LocalizedFault: return "localized_fault";
    case AnomalyKind::DistributedFault: return "distributed_fault";
  }
  return "?";
}

inline AnomalyKind anomaly_kind_from_string(const std::string& s) {
  if (s == "load_change") return AnomalyKind::LoadChange;
  if (s == "localized_fault") return AnomalyKind::LocalizedFault;
  if (s == "distributed_fault") return AnomalyKind::DistributedFault;
  throw ConfigError("unknown anomaly type '" + s + "'");
}

/// Returns a copy of `topo` with the anomaly applied.
inline Topology inject_anomaly(const Topology& topo, const Anomaly& anomaly) {
  Topology out = topo;
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, LoadChange>) {
          if (!out.has_node(a.node)) throw DomainError("load change on unknown node " + std::to_string(a.node));
          a.load.validate();
          out.loads[a.node] = a.load;
        } else if constexpr (std::is_same_v<T, LocalizedFault>) {
          Branch& b = out.branch(a.branch);
          if (!(a.offset_m >= 0.0 && a.offset_m <= b.length_m))
            throw DomainError("fault offset outside branch " + std::to_string(a.branch));
          b.inline_elements.push_back(ShuntElement{a.offset_m, a.admittance, a.conductors});
        } else {
          Branch& b = out.branch(a.branch);
          if (!(a.length_m > 0.0) || !(a.start_m >= 0.0) || a.start_m + a.length_m > b.length_m * (1.0 + 1e-12))
            throw DomainError("degraded span outside branch " + std::to_string(a.branch));
          const tl::CableSpec cable = a.cable ? *a.cable : b.cable.degraded(a.r_scale, a.c_scale);
          cable.validate();
          b.inline_elements.push_back(
              DegradedSection{a.start_m, std::min(a.start_m + a.length_m, b.length_m), cable});
        }
      },
      anomaly);
  out.validate();
  return out;
}

/// Parameters for drawing random anomalies.
struct AnomalyDistribution {
  double fault_r_min = 10.0;   // Ohm
  double fault_r_max = 1000.0;
  double offset_min = 0.1;     // fraction of branch length
  double offset_max = 0.9;
  double degraded_min = 0.2;   // fraction of branch length
  double degraded_max = 0.5;
  double r_scale = 1.5;
  double c_scale = 1.1;
  std::array<int, 2> conductors{1, 0};
};

/// Draws an anomaly of the given kind on a random element other than the port.
inline Anomaly sample_anomaly(const Topology& topo, int port, AnomalyKind kind, const AnomalyDistribution& dist,
                              const LoadDistribution& loads, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (kind) {
    case AnomalyKind::LoadChange: {
      std::vector<int> loaded;
      for (const auto& [node, _] : topo.loads)
        if (node != port) loaded.push_back(node);
      if (loaded.empty()) throw DomainError("no terminated node for a load change");
      const int node = loaded[std::uniform_int_distribution<std::size_t>(0, loaded.size() - 1)(rng)];
      tl::AdmittanceModel next = loads.draw(rng);
      for (int tries = 0; tries < 16 && next == topo.loads.at(node); ++tries) next = loads.draw(rng);
      return LoadChange{node, next};
    }
    case AnomalyKind::LocalizedFault: {
      const auto& b = topo.branches[std::uniform_int_distribution<std::size_t>(0, topo.branches.size() - 1)(rng)];
      const double off = b.length_m * (dist.offset_min + (dist.offset_max - dist.offset_min) * u(rng));
      const double r = log_uniform(rng, dist.fault_r_min, dist.fault_r_max);
      return LocalizedFault{b.id, off, tl::AdmittanceModel::resistor(r), dist.conductors};
    }
    case AnomalyKind::DistributedFault: {
      const auto& b = topo.branches[std::uniform_int_distribution<std::size_t>(0, topo.branches.size() - 1)(rng)];
      const double frac = dist.degraded_min + (dist.degraded_max - dist.degraded_min) * u(rng);
      const double len = frac * b.length_m;
      const double start = (b.length_m - len) * u(rng);
      return DistributedFault{b.id, start, len, std::nullopt, dist.r_scale, dist.c_scale};
    }
  }
  throw DomainError("unknown anomaly kind");
}

/// Branch id that carries an anomaly, or the parent branch of a load change
/// node (the branch through which the node is reached from `port`).
inline int anomaly_branch(const Topology& topo, const Anomaly& a, int port) {
  if (const auto* lc = std::get_if<LoadChange>(&a)) {
    const RootedTree tree = RootedTree::build(topo, port);
    const auto it = tree.parent_branch.find(lc->node);
    return it == tree.parent_branch.end() ? -1 : it->second;
  }
  if (const auto* lf = std::get_if<LocalizedFault>(&a)) return lf->branch;
  return std::get<DistributedFault>(a).branch;
}

/// Distance from `port` to the point where the anomaly starts.
inline double anomaly_distance(const Topology& topo, const Anomaly& a, int port) {
  const auto d = node_distances(topo, port);
  if (const auto* lc = std::get_if<LoadChange>(&a)) return d.at(lc->node);
  auto along = [&](int bid, double off) {
    const Branch& b = topo.branch(bid);
    return d.at(b.a) < d.at(b.b) ? d.at(b.a) + off : d.at(b.a) - off;
  };
  if (const auto* lf = std::get_if<LocalizedFault>(&a)) return along(lf->branch, lf->offset_m);
  const auto& df = std::get<DistributedFault>(a);
  const Branch& b = topo.branch(df.branch);
  return d.at(b.a) < d.at(b.b) ? d.at(b.a) + df.start_m : d.at(b.a) - df.start_m - df.length_m;
}

// ---------------------------------------------------------------------------
// Worked scenario: a trunk to a junction feeding two branches of unequal length

struct TwoBranchIds {
  static constexpr int port = 0;
  static constexpr int junction = 1;
  static constexpr int end_b2 = 2;
  static constexpr int end_b3 = 3;
  static constexpr int b1 = 1;
  static constexpr int b2 = 2;
  static constexpr int b3 = 3;
};

/// Port -> 11 km trunk (B1) -> junction; B2 ends at 12.95 km and B3 at
/// 15.95 km from the port. Both ends are open.
inline Topology two_branch_fixture(const tl::CableSpec& cable = {}) {
  Topology t;
  t.nodes = {{0, 0.0, 0.0}, {1, 11000.0, 0.0}, {2, 11000.0 + 1950.0, 0.0}, {3, 11000.0, -4950.0}};
  t.branches = {{TwoBranchIds::b1, 0, 1, 11000.0, cable, {}},
                {TwoBranchIds::b2, 1, 2, 1950.0, cable, {}},
                {TwoBranchIds::b3, 1, 3, 4950.0, cable, {}}};
  t.loads[TwoBranchIds::end_b2] = tl::AdmittanceModel::open();
  t.loads[TwoBranchIds::end_b3] = tl::AdmittanceModel::open();
  t.ports.push_back({TwoBranchIds::port, tl::AdmittanceModel::matched()});
  t.validate();
  return t;
}

/// Damaged section 11.5-12.4 km from the port on B2 or B3.
inline DistributedFault two_branch_damage(int branch, double r_scale = 1.5, double c_scale = 1.1) {
  return DistributedFault{branch, 500.0, 900.0, std::nullopt, r_scale, c_scale};
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Anomaly& a) {
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, LoadChange>) {
          j = {{"type", "load_change"}, {"node", v.node}, {"load", v.load}};
        } else if constexpr (std::is_same_v<T, LocalizedFault>) {
          j = {{"type", "localized_fault"},
               {"branch", v.branch},
               {"offset_m", v.offset_m},
               {"admittance", v.admittance},
               {"conductors", v.conductors}};
        } else {
          j = {{"type", "distributed_fault"}, {"branch", v.branch}, {"start_m", v.start_m}, {"length_m", v.length_m}};
          if (v.cable) {
            j["cable"] = *v.cable;
          } else {
            j["r_scale"] = v.r_scale;
            j["c_scale"] = v.c_scale;
          }
        }
      },
      a);
}

inline void from_json(const nlohmann::json& j, Anomaly& a) {
  switch (anomaly_kind_from_string(j.at("type").get<std::string>())) {
    case AnomalyKind::LoadChange:
      a = LoadChange{j.at("node").get<int>(), j.at("load").get<tl::AdmittanceModel>()};
      return;
    case AnomalyKind::LocalizedFault: {
      LocalizedFault f{j.at("branch").get<int>(), j.at("offset_m").get<double>(),
                       j.at("admittance").get<tl::AdmittanceModel>()};
      if (j.contains("conductors")) f.conductors = j.at("conductors").get<std::array<int, 2>>();
      a = f;
      return;
    }
    case AnomalyKind::DistributedFault: {
      DistributedFault f{j.at("branch").get<int>(), j.at("start_m").get<double>(), j.at("length_m").get<double>(), std::nullopt};
      if (j.contains("cable")) f.cable = j.at("cable").get<tl::CableSpec>();
      f.r_scale = j.value("r_scale", 1.5);
      f.c_scale = j.value("c_scale", 1.1);
      a = f;
      return;
    }
  }
}

}  // namespace gridsense
