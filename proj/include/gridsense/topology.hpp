#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/admittance.hpp"
#include "gridsense/cable.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

struct Node {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Node&) const = default;
};

/// Lumped shunt admittance at `offset_m` from the branch's `a` end. For two
/// channels `conductors` names the faulted pair; 0 is the reference wire.
struct ShuntElement {
  double offset_m = 0.0;
  tl::AdmittanceModel admittance;
  std::array<int, 2> conductors{1, 0};
  bool operator==(const ShuntElement&) const = default;
};

/// Span [start_m, end_m] (measured from the `a` end) with altered constants.
struct DegradedSection {
  double start_m = 0.0;
  double end_m = 0.0;
  tl::CableSpec cable;
  bool operator==(const DegradedSection&) const = default;
};

using InlineElement = std::variant<ShuntElement, DegradedSection>;

struct Branch {
  int id = 0;
  int a = 0;
  int b = 0;
  double length_m = 0.0;
  tl::CableSpec cable;
  std::vector<InlineElement> inline_elements;
  bool operator==(const Branch&) const = default;

  int other(int node) const { return node == a ? b : a; }
};

struct SensorPort {
  int node = 0;
  tl::AdmittanceModel y0 = tl::AdmittanceModel::matched();
  bool operator==(const SensorPort&) const = default;
};

/// Tree-structured grid: nodes, cable branches, terminations and sensor ports.
struct Topology {
  std::vector<Node> nodes;
  std::vector<Branch> branches;
  std::map<int, tl::AdmittanceModel> loads;
  std::vector<SensorPort> ports;

  bool operator==(const Topology&) const = default;

  int channels() const { return branches.empty() ? 1 : branches.front().cable.channels; }

  bool has_node(int id) const {
    return std::any_of(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
  }

  std::size_t node_index(int id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id == id) return i;
    throw DomainError("unknown node " + std::to_string(id));
  }

  const Branch& branch(int id) const {
    for (const auto& b : branches)
      if (b.id == id) return b;
    throw DomainError("unknown branch " + std::to_string(id));
  }

  Branch& branch(int id) { return const_cast<Branch&>(std::as_const(*this).branch(id)); }

  std::vector<int> incident_branches(int node) const {
    std::vector<int> out;
    for (const auto& b : branches)
      if (b.a == node || b.b == node) out.push_back(b.id);
    return out;
  }

  std::size_t degree(int node) const { return incident_branches(node).size(); }

  bool is_port(int node) const {
    return std::any_of(ports.begin(), ports.end(), [&](const SensorPort& p) { return p.node == node; });
  }

  const SensorPort& port(int node) const {
    for (const auto& p : ports)
      if (p.node == node) return p;
    throw DomainError("node " + std::to_string(node) + " is not a sensor port");
  }

  void validate() const;
};

namespace detail {

inline void validate_inline(const Branch& b) {
  std::vector<std::pair<double, double>> spans;
  for (const auto& el : b.inline_elements) {
    if (const auto* s = std::get_if<ShuntElement>(&el)) {
      if (!(s->offset_m >= 0.0 && s->offset_m <= b.length_m))
        throw DomainError("shunt offset outside branch " + std::to_string(b.id));
      s->admittance.validate();
      if (s->admittance.kind == tl::AdmittanceModel::Kind::Matched)
        throw DomainError("inline shunt cannot be 'matched'");
      const int n = b.cable.channels;
      for (int c : s->conductors)
        if (c < 0 || c > n) throw DomainError("shunt conductor index out of range");
      if (s->conductors[0] == s->conductors[1]) throw DomainError("shunt conductors must differ");
    } else {
      const auto& d = std::get<DegradedSection>(el);
      if (!(d.start_m >= 0.0 && d.end_m <= b.length_m && d.start_m < d.end_m))
        throw DomainError("degraded section outside branch " + std::to_string(b.id));
      d.cable.validate();
      if (d.cable.channels != b.cable.channels) throw DomainError("degraded section channel count mismatch");
      spans.emplace_back(d.start_m, d.end_m);
    }
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second)
      throw DomainError("degraded sections overlap on branch " + std::to_string(b.id));
}

}  // namespace detail

inline void Topology::validate() const {
  if (nodes.empty()) throw DomainError("topology has no nodes");
  std::map<int, int> seen;
  for (const auto& n : nodes)
    if (seen[n.id]++) throw DomainError("duplicate node id " + std::to_string(n.id));
  std::map<int, int> seen_b;
  const int n_ch = channels();
  for (const auto& b : branches) {
    if (seen_b[b.id]++) throw DomainError("duplicate branch id " + std::to_string(b.id));
    if (!has_node(b.a) || !has_node(b.b)) throw DomainError("branch " + std::to_string(b.id) + " has a dangling end");
    if (b.a == b.b) throw DomainError("branch " + std::to_string(b.id) + " is a self loop");
    if (!(b.length_m >= 0.0) || !std::isfinite(b.length_m))
      throw DomainError("branch " + std::to_string(b.id) + " has an invalid length");
    b.cable.validate();
    if (b.cable.channels != n_ch) throw DomainError("all branches must share one channel count");
    detail::validate_inline(b);
  }
  if (branches.size() + 1 != nodes.size()) throw DomainError("topology is not a tree (|branches| != |nodes| - 1)");
  // Connectivity by union-find.
  std::map<int, int> parent;
  for (const auto& n : nodes) parent[n.id] = n.id;
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& b : branches) {
    const int ra = find(b.a), rb = find(b.b);
    if (ra == rb) throw DomainError("topology contains a cycle");
    parent[ra] = rb;
  }
  for (const auto& [node, load] : loads) {
    if (!has_node(node)) throw DomainError("load on unknown node " + std::to_string(node));
    load.validate();
  }
  for (const auto& p : ports) {
    if (!has_node(p.node)) throw DomainError("port on unknown node " + std::to_string(p.node));
    p.y0.validate();
  }
  if (nodes.size() > 1) {
    for (const auto& n : nodes)
      if (degree(n.id) == 1 && !loads.count(n.id) && !is_port(n.id))
        throw DomainError("leaf node " + std::to_string(n.id) + " has no termination");
  }
}

/// Unique tree-path length from `port` to every node.
inline std::map<int, double> node_distances(const Topology& topo, int port) {
  if (!topo.has_node(port)) throw DomainError("unknown node " + std::to_string(port));
  std::map<int, double> dist{{port, 0.0}};
  std::vector<int> stack{port};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (const auto& b : topo.branches) {
      if (b.a != v && b.b != v) continue;
      const int w = b.other(v);
      if (dist.count(w)) continue;
      dist[w] = dist[v] + b.length_m;
      stack.push_back(w);
    }
  }
  return dist;
}

/// Tree rooted at a node: parent branch per node and a pre-order visit list.
struct RootedTree {
  int root = 0;
  std::vector<int> order;              // pre-order node ids
  std::map<int, int> parent_branch;    // node -> branch id toward root (absent for root)
  std::map<int, int> parent_node;
  std::map<int, std::vector<int>> child_branches;

  static RootedTree build(const Topology& topo, int root) {
    if (!topo.has_node(root)) throw DomainError("unknown node " + std::to_string(root));
    RootedTree t;
    t.root = root;
    std::vector<int> stack{root};
    std::map<int, bool> seen{{root, true}};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      t.order.push_back(v);
      t.child_branches[v];
      for (const auto& b : topo.branches) {
        if (b.a != v && b.b != v) continue;
        const int w = b.other(v);
        if (seen[w]) continue;
        seen[w] = true;
        t.parent_branch[w] = b.id;
        t.parent_node[w] = v;
        t.child_branches[v].push_back(b.id);
        stack.push_back(w);
      }
    }
    return t;
  }

  /// Node path from `from` up to the root, inclusive.
  std::vector<int> path_to_root(int from) const {
    std::vector<int> path{from};
    while (path.back() != root) path.push_back(parent_node.at(path.back()));
    return path;
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace tl {

inline void to_json(nlohmann::json& j, const CableSpec& c) {
  j = {{"channels", c.channels},         {"inductance", c.inductance},
       {"capacitance", c.capacitance},   {"resistance_ref", c.resistance_ref},
       {"conductance_ref", c.conductance_ref}, {"ref_frequency", c.ref_frequency},
       {"mutual_ratio", c.mutual_ratio}};
}

inline void from_json(const nlohmann::json& j, CableSpec& c) {
  CableSpec d;
  c.channels = j.value("channels", d.channels);
  c.inductance = j.value("inductance", d.inductance);
  c.capacitance = j.value("capacitance", d.capacitance);
  c.resistance_ref = j.value("resistance_ref", d.resistance_ref);
  c.conductance_ref = j.value("conductance_ref", d.conductance_ref);
  c.ref_frequency = j.value("ref_frequency", d.ref_frequency);
  c.mutual_ratio = j.value("mutual_ratio", d.mutual_ratio);
}

}  // namespace tl

inline void to_json(nlohmann::json& j, const InlineElement& el) {
  if (const auto* s = std::get_if<ShuntElement>(&el)) {
    j = {{"type", "shunt"}, {"offset_m", s->offset_m}, {"admittance", s->admittance}, {"conductors", s->conductors}};
  } else {
    const auto& d = std::get<DegradedSection>(el);
    j = {{"type", "degraded"}, {"start_m", d.start_m}, {"end_m", d.end_m}, {"cable", d.cable}};
  }
}

inline void from_json(const nlohmann::json& j, InlineElement& el) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "shunt") {
    ShuntElement s;
    s.offset_m = j.at("offset_m").get<double>();
    s.admittance = j.at("admittance").get<tl::AdmittanceModel>();
    if (j.contains("conductors")) s.conductors = j.at("conductors").get<std::array<int, 2>>();
    el = s;
  } else if (type == "degraded") {
    DegradedSection d;
    d.start_m = j.at("start_m").get<double>();
    d.end_m = j.at("end_m").get<double>();
    d.cable = j.at("cable").get<tl::CableSpec>();
    el = d;
  } else {
    throw ConfigError("unknown inline element type '" + type + "'");
  }
}

inline void to_json(nlohmann::json& j, const Topology& t) {
  j = nlohmann::json::object();
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : t.nodes) j["nodes"].push_back({{"id", n.id}, {"x", n.x}, {"y", n.y}});
  j["branches"] = nlohmann::json::array();
  for (const auto& b : t.branches) {
    nlohmann::json jb = {{"id", b.id}, {"a", b.a}, {"b", b.b}, {"length_m", b.length_m}, {"cable", b.cable}};
    jb["inline"] = nlohmann::json::array();
    for (const auto& el : b.inline_elements) jb["inline"].push_back(el);
    j["branches"].push_back(jb);
  }
  j["loads"] = nlohmann::json::object();
  for (const auto& [node, load] : t.loads) j["loads"][std::to_string(node)] = load;
  j["ports"] = nlohmann::json::array();
  for (const auto& p : t.ports) j["ports"].push_back({{"node", p.node}, {"y0", p.y0}});
}

inline void from_json(const nlohmann::json& j, Topology& t) {
  t = Topology{};
  for (const auto& jn : j.at("nodes")) t.nodes.push_back({jn.at("id").get<int>(), jn.value("x", 0.0), jn.value("y", 0.0)});
  for (const auto& jb : j.at("branches")) {
    Branch b;
    b.id = jb.at("id").get<int>();
    b.a = jb.at("a").get<int>();
    b.b = jb.at("b").get<int>();
    b.length_m = jb.at("length_m").get<double>();
    if (jb.contains("cable")) b.cable = jb.at("cable").get<tl::CableSpec>();
    if (jb.contains("inline"))
      for (const auto& je : jb.at("inline")) b.inline_elements.push_back(je.get<InlineElement>());
    t.branches.push_back(std::move(b));
  }
  if (j.contains("loads"))
    for (const auto& [key, jl] : j.at("loads").items()) t.loads[std::stoi(key)] = jl.get<tl::AdmittanceModel>();
  if (j.contains("ports")) {
    for (const auto& jp : j.at("ports")) {
      SensorPort p;
      if (jp.is_number_integer()) {
        p.node = jp.get<int>();
      } else {
        p.node = jp.at("node").get<int>();
        if (jp.contains("y0")) p.y0 = jp.at("y0").get<tl::AdmittanceModel>();
      }
      t.ports.push_back(p);
    }
  }
  t.validate();
}

}  // namespace gridsense
