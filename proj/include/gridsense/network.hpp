#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "gridsense/cable.hpp"
#include "gridsense/topology.hpp"
#include "gridsense/types.hpp"

namespace gridsense::tl {

/// Propagation parameters per distinct cable, computed on first use.
class LineCache {
 public:
  explicit LineCache(FrequencyGrid grid) : grid_(grid) {}

  const FrequencyGrid& grid() const { return grid_; }

  const LineParams& get(const CableSpec& cable) {
    for (const auto& e : entries_)
      if (e.cable == cable) return e;
    entries_.push_back(propagation_params(cable, grid_));
    return entries_.back();
  }

 private:
  FrequencyGrid grid_;
  std::deque<LineParams> entries_;
};

/// n x n admittance stamp of a shunt between two conductors (0 = reference).
inline CMatrix shunt_stamp(const ShuntElement& s, int channels, double f) {
  CMatrix y = CMatrix::Zero(channels, channels);
  const cplx v = s.admittance.at(f);
  const int i = s.conductors[0] - 1;
  const int j = s.conductors[1] - 1;
  if (i >= 0) y(i, i) += v;
  if (j >= 0) y(j, j) += v;
  if (i >= 0 && j >= 0) {
    y(i, j) -= v;
    y(j, i) -= v;
  }
  return y;
}

/// One step of a branch cascade: a uniform line piece or a lumped shunt.
struct Segment {
  enum class Kind { Line, Shunt };
  Kind kind = Kind::Line;
  double length = 0.0;
  const CableSpec* cable = nullptr;
  const ShuntElement* shunt = nullptr;
};

/// Cascade of a branch walked from `from_node` to the other end.
inline std::vector<Segment> branch_segments(const Branch& b, int from_node) {
  if (from_node != b.a && from_node != b.b)
    throw DomainError("node " + std::to_string(from_node) + " is not an end of branch " + std::to_string(b.id));
  std::vector<double> cuts{0.0, b.length_m};
  std::vector<const DegradedSection*> spans;
  std::vector<const ShuntElement*> shunts;
  for (const auto& el : b.inline_elements) {
    if (const auto* s = std::get_if<ShuntElement>(&el)) {
      if (s->offset_m < 0.0 || s->offset_m > b.length_m)
        throw DomainError("shunt offset outside branch " + std::to_string(b.id));
      shunts.push_back(s);
      cuts.push_back(s->offset_m);
    } else {
      const auto& d = std::get<DegradedSection>(el);
      if (d.start_m < 0.0 || d.end_m > b.length_m)
        throw DomainError("degraded section outside branch " + std::to_string(b.id));
      spans.push_back(&d);
      cuts.push_back(d.start_m);
      cuts.push_back(d.end_m);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::vector<Segment> out;
  auto shunts_at = [&](double pos) {
    for (const auto* s : shunts)
      if (s->offset_m == pos) out.push_back({Segment::Kind::Shunt, 0.0, nullptr, s});
  };
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    shunts_at(cuts[i]);
    const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    const CableSpec* cable = &b.cable;
    for (const auto* d : spans)
      if (mid > d->start_m && mid < d->end_m) cable = &d->cable;
    out.push_back({Segment::Kind::Line, cuts[i + 1] - cuts[i], cable, nullptr});
  }
  shunts_at(cuts.back());
  if (from_node != b.a || b.a == b.b) std::reverse(out.begin(), out.end());
  return out;
}

/// 2n x 2n chain matrix of a branch at one tone, oriented from `from_node`.
inline CMatrix branch_abcd_tone(const Branch& b, int from_node, std::size_t tone, LineCache& cache) {
  const int n = b.cable.channels;
  CMatrix m = CMatrix::Identity(2 * n, 2 * n);
  const double f = cache.grid().frequency(tone);
  for (const auto& seg : branch_segments(b, from_node)) {
    if (seg.kind == Segment::Kind::Line) {
      m = m * uniform_section_chain(cache.get(*seg.cable).tones[tone], seg.length);
    } else {
      m = m * shunt_chain(shunt_stamp(*seg.shunt, n, f));
    }
  }
  return m;
}

/// Chain matrix of a branch at every tone, oriented from `from_node`.
inline std::vector<CMatrix> branch_abcd(const Branch& b, const FrequencyGrid& grid, int from_node) {
  LineCache cache(grid);
  std::vector<CMatrix> out;
  out.reserve(grid.count());
  for (std::size_t k = 0; k < grid.count(); ++k) out.push_back(branch_abcd_tone(b, from_node, k, cache));
  return out;
}

/// Admittance seen through a chain matrix terminated in `y_far`:
/// Y' = (C + D Y)(A + B Y)^{-1}.
inline bool through_chain(const CMatrix& t, const CMatrix& y_far, CMatrix& y_near) {
  const int n = static_cast<int>(y_far.rows());
  const CMatrix a = t.topLeftCorner(n, n), b = t.topRightCorner(n, n);
  const CMatrix c = t.bottomLeftCorner(n, n), d = t.bottomRightCorner(n, n);
  CMatrix inv;
  if (!try_inverse(a + b * y_far, inv)) return false;
  y_near = (c + d * y_far) * inv;
  return y_near.allFinite();
}

/// Characteristic admittance of a branch cable at one tone.
inline const CMatrix& branch_yc(const Branch& b, std::size_t tone, LineCache& cache) {
  return cache.get(b.cable).tones[tone].yc;
}

/// Value of a node-level admittance model; `Matched` resolves to the sum of
/// the characteristic admittances of the branches meeting at the node.
inline CMatrix node_admittance(const Topology& topo, int node, const AdmittanceModel& model, std::size_t tone,
                               LineCache& cache) {
  const int n = topo.channels();
  if (model.kind == AdmittanceModel::Kind::Matched) {
    CMatrix sum = CMatrix::Zero(n, n);
    for (int bid : topo.incident_branches(node)) sum += branch_yc(topo.branch(bid), tone, cache);
    if (sum.isZero()) throw DomainError("matched admittance at isolated node " + std::to_string(node));
    return sum;
  }
  return model.at(cache.grid().frequency(tone)) * identity(n);
}

inline CMatrix load_at(const Topology& topo, int node, std::size_t tone, LineCache& cache) {
  const auto it = topo.loads.find(node);
  if (it == topo.loads.end()) return CMatrix::Zero(topo.channels(), topo.channels());
  return node_admittance(topo, node, it->second, tone, cache);
}

/// Leaf-to-root reduction at one tone. Returns the admittance looking into
/// each branch from the end nearer the root, keyed by branch id, and the
/// total admittance at every node (own load plus child branches).
struct Reduction {
  std::map<int, CMatrix> through;  // branch id -> admittance at the near end
  std::map<int, CMatrix> at_node;  // node id -> subtree admittance
};

inline bool reduce_tone(const Topology& topo, const RootedTree& tree, std::size_t tone, LineCache& cache,
                        Reduction& out) {
  out.through.clear();
  out.at_node.clear();
  for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
    const int v = *it;
    CMatrix y = load_at(topo, v, tone, cache);
    for (int bid : tree.child_branches.at(v)) {
      const Branch& b = topo.branch(bid);
      const int w = b.other(v);
      CMatrix yb;
      if (!through_chain(branch_abcd_tone(b, v, tone, cache), out.at_node.at(w), yb)) return false;
      out.through[bid] = yb;
      y += yb;
    }
    out.at_node[v] = y;
  }
  return true;
}

/// Reference admittance Y_0 of a sensor port per tone.
inline std::vector<CMatrix> port_reference(const Topology& topo, int port, LineCache& cache) {
  const SensorPort& p = topo.port(port);
  std::vector<CMatrix> y0;
  y0.reserve(cache.grid().count());
  for (std::size_t k = 0; k < cache.grid().count(); ++k) y0.push_back(node_admittance(topo, port, p.y0, k, cache));
  return y0;
}

/// Admittance of the whole network seen from `node` (its own load included).
inline Spectrum network_admittance(const Topology& topo, int node, const FrequencyGrid& grid, LineCache& cache) {
  const RootedTree tree = RootedTree::build(topo, node);
  Spectrum s;
  s.quantity = Quantity::Yin;
  s.grid = grid;
  s.channels = topo.channels();
  s.label = std::to_string(node);
  s.values.reserve(grid.count());
  std::vector<std::size_t> bad;
  Reduction red;
  for (std::size_t k = 0; k < grid.count(); ++k) {
    if (reduce_tone(topo, tree, k, cache, red)) {
      s.values.push_back(red.at_node.at(node));
    } else {
      bad.push_back(k);
      s.values.push_back(CMatrix::Zero(s.channels, s.channels));
    }
  }
  if (!bad.empty()) throw NumericError("singular (A + B Y) during admittance reduction", bad);
  return s;
}

/// Input admittance Y_in at a sensor port; the spectrum carries the port's Y_0.
inline Spectrum input_admittance(const Topology& topo, int port, const FrequencyGrid& grid) {
  LineCache cache(grid);
  Spectrum s = network_admittance(topo, port, grid, cache);
  s.reference = port_reference(topo, port, cache);
  return s;
}

/// rho = (I + Y_in Y_0^{-1})^{-1} (Y_in Y_0^{-1} - I); the inverse of
/// Y_in = (I + rho)(I - rho)^{-1} Y_0. A short gives rho = +1, an open -1.
inline Spectrum reflection_coefficient(const Spectrum& yin, const std::vector<CMatrix>& y0) {
  if (y0.size() != yin.size()) throw DomainError("reference admittance does not match spectrum length");
  Spectrum rho = yin;
  rho.quantity = Quantity::Rho;
  rho.reference = y0;
  const int n = yin.channels;
  std::vector<std::size_t> bad;
  for (std::size_t k = 0; k < yin.size(); ++k) {
    CMatrix y0inv, lhs_inv;
    if (!try_inverse(y0[k], y0inv)) {
      bad.push_back(k);
      continue;
    }
    const CMatrix x = yin.values[k] * y0inv;
    if (!try_inverse(identity(n) + x, lhs_inv)) {
      bad.push_back(k);
      continue;
    }
    rho.values[k] = lhs_inv * (x - identity(n));
  }
  if (!bad.empty()) throw NumericError("singular (I + Y_in Y_0^-1) in reflection coefficient", bad);
  return rho;
}

inline Spectrum reflection_coefficient(const Spectrum& yin) { return reflection_coefficient(yin, yin.reference); }

/// Y_in = (I + rho)(I - rho)^{-1} Y_0.
inline Spectrum admittance_from_reflection(const Spectrum& rho, const std::vector<CMatrix>& y0) {
  if (y0.size() != rho.size()) throw DomainError("reference admittance does not match spectrum length");
  Spectrum y = rho;
  y.quantity = Quantity::Yin;
  y.reference = y0;
  const int n = rho.channels;
  std::vector<std::size_t> bad;
  for (std::size_t k = 0; k < rho.size(); ++k) {
    CMatrix inv;
    if (!try_inverse(identity(n) - rho.values[k], inv)) {
      bad.push_back(k);
      continue;
    }
    y.values[k] = (identity(n) + rho.values[k]) * inv * y0[k];
  }
  if (!bad.empty()) throw NumericError("singular (I - rho) reconstructing admittance", bad);
  return y;
}

inline Spectrum admittance_from_reflection(const Spectrum& rho) {
  return admittance_from_reflection(rho, rho.reference);
}

/// End-to-end channel transfer function H = V_rx / V_source.
///
/// The source (series impedance zs) drives `tx`; the receiver loads `rx` with
/// zl. The chain is walked along the unique tx -> rx path, with every
/// off-path subtree folded into a shunt at its attachment node.
inline Spectrum transfer_function(const Topology& topo, int tx, int rx, const FrequencyGrid& grid, double zs = 1.0,
                                  double zl = 100e3) {
  if (tx == rx) throw DomainError("transmitter and receiver must differ");
  if (!topo.has_node(tx) || !topo.has_node(rx)) throw DomainError("transfer function endpoints must be nodes");
  if (!(zs >= 0.0) || !(zl > 0.0)) throw DomainError("source/receiver impedances must be non-negative/positive");
  LineCache cache(grid);
  const RootedTree tree = RootedTree::build(topo, tx);
  const std::vector<int> path = tree.path_to_root(rx);  // rx ... tx
  const int n = topo.channels();

  Spectrum s;
  s.quantity = Quantity::H;
  s.grid = grid;
  s.channels = n;
  s.label = std::to_string(tx) + "->" + std::to_string(rx);
  s.values.reserve(grid.count());
  std::vector<std::size_t> bad;
  Reduction red;
  for (std::size_t k = 0; k < grid.count(); ++k) {
    if (!reduce_tone(topo, tree, k, cache, red)) {
      bad.push_back(k);
      s.values.push_back(CMatrix::Zero(n, n));
      continue;
    }
    CMatrix p = identity(n);
    CMatrix q = identity(n) / zl + red.at_node.at(rx);
    bool ok = true;
    for (std::size_t i = 1; i < path.size() && ok; ++i) {
      const int v = path[i - 1];
      const int u = path[i];
      const int bid = tree.parent_branch.at(v);
      const CMatrix t = branch_abcd_tone(topo.branch(bid), u, k, cache);
      const CMatrix p_u = t.topLeftCorner(n, n) * p + t.topRightCorner(n, n) * q;
      const CMatrix q_u = t.bottomLeftCorner(n, n) * p + t.bottomRightCorner(n, n) * q;
      const CMatrix off = red.at_node.at(u) - red.through.at(bid);
      p = p_u;
      q = q_u + off * p_u;
    }
    CMatrix h;
    if (!try_inverse(p + zs * q, h)) {
      bad.push_back(k);
      s.values.push_back(CMatrix::Zero(n, n));
      continue;
    }
    s.values.push_back(h);
  }
  if (!bad.empty()) throw NumericError("singular chain in transfer function", bad);
  return s;
}

}  // namespace gridsense::tl
