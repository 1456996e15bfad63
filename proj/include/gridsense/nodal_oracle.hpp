#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Sparse>

#include "gridsense/network.hpp"
#include "gridsense/topology.hpp"
#include "gridsense/types.hpp"

namespace gridsense::tl {

struct OracleOptions {
  double segment_len = 10.0;  // m
  /// Combine solutions at segment_len and segment_len / 2 as (4 X_{h/2} - X_h) / 3,
  /// cancelling the O(h^2) discretization term.
  bool extrapolate = true;
  std::optional<int> port;              // Y_in seen from this node
  std::optional<std::pair<int, int>> link;  // (tx, rx) for H
  double zs = 1.0;
  double zl = 100e3;
};

struct OracleResult {
  std::optional<Spectrum> yin;
  std::optional<Spectrum> h;
};

namespace detail {

/// Lumped-element model of the whole network: a node list with series
/// impedance elements between them and shunt admittances to the reference.
class LumpedNetwork {
 public:
  LumpedNetwork(const Topology& topo, double h) : topo_(topo), n_(topo.channels()) {
    // Zero-length branches join their end nodes into one electrical node.
    std::map<int, int> root;
    for (const auto& nd : topo.nodes) root[nd.id] = nd.id;
    auto find = [&](int v) {
      while (root[v] != v) v = root[v] = root[root[v]];
      return v;
    };
    for (const auto& b : topo.branches)
      if (b.length_m == 0.0) root[find(b.a)] = find(b.b);
    std::map<int, int> index_of_root;
    for (const auto& nd : topo.nodes) {
      const int r = find(nd.id);
      if (!index_of_root.count(r)) index_of_root[r] = new_node();
      node_of_[nd.id] = index_of_root[r];
    }
    for (const auto& b : topo.branches) discretize(b, h);
  }

  int node(int topo_id) const { return node_of_.at(topo_id); }
  int size() const { return count_ * n_; }

  /// Sparse nodal matrix at one tone, plus optional extra shunts per node.
  Eigen::SparseMatrix<cplx> assemble(std::size_t tone, LineCache& cache,
                                     const std::map<int, CMatrix>& extra) const {
    const double f = cache.grid().frequency(tone);
    std::vector<Eigen::Triplet<cplx>> trip;
    auto stamp = [&](int u, int v, const CMatrix& y) {
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
          if (y(i, j) == cplx{}) continue;
          trip.emplace_back(u * n_ + i, u * n_ + j, y(i, j));
          if (v >= 0) {
            trip.emplace_back(v * n_ + i, v * n_ + j, y(i, j));
            trip.emplace_back(u * n_ + i, v * n_ + j, -y(i, j));
            trip.emplace_back(v * n_ + i, u * n_ + j, -y(i, j));
          }
        }
    };
    for (const auto& s : sections_) {
      const CMatrix z = s.cable->series_impedance(f) * s.len;
      const CMatrix y = s.cable->shunt_admittance(f) * (0.5 * s.len);
      CMatrix zinv;
      if (!try_inverse(z, zinv)) throw NumericError("singular lumped series impedance", {tone});
      stamp(s.u, s.v, zinv);
      stamp(s.u, -1, y);
      stamp(s.v, -1, y);
    }
    for (const auto& [u, shunt] : shunts_) stamp(u, -1, shunt_stamp(*shunt, n_, f));
    for (const auto& [id, model] : topo_.loads) stamp(node(id), -1, node_admittance(topo_, id, model, tone, cache));
    for (const auto& [u, y] : extra) stamp(u, -1, y);
    Eigen::SparseMatrix<cplx> m(size(), size());
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

 private:
  struct Section {
    int u, v;
    double len;
    const CableSpec* cable;
  };

  int new_node() { return count_++; }

  void discretize(const Branch& b, double h) {
    int cur = node(b.a);
    const int end = node(b.b);
    const auto segs = branch_segments(b, b.a);
    // Index of the last line piece, so the far end lands on the branch node.
    int last_line = -1;
    for (std::size_t i = 0; i < segs.size(); ++i)
      if (segs[i].kind == Segment::Kind::Line) last_line = static_cast<int>(i);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto& s = segs[i];
      if (s.kind == Segment::Kind::Shunt) {
        shunts_.emplace_back(cur, s.shunt);
        continue;
      }
      const int pieces = std::max(1, static_cast<int>(std::ceil(s.length / h - 1e-9)));
      const double step = s.length / pieces;
      for (int p = 0; p < pieces; ++p) {
        const bool final_piece = static_cast<int>(i) == last_line && p == pieces - 1;
        const int next = final_piece ? end : new_node();
        sections_.push_back({cur, next, step, s.cable});
        cur = next;
      }
    }
  }

  const Topology& topo_;
  int n_;
  int count_ = 0;
  std::map<int, int> node_of_;
  std::vector<Section> sections_;
  std::vector<std::pair<int, const ShuntElement*>> shunts_;
};

inline OracleResult solve_lumped(const Topology& topo, const FrequencyGrid& grid, double h,
                                 const OracleOptions& opt) {
  LineCache cache(grid);
  const LumpedNetwork net(topo, h);
  const int n = topo.channels();
  OracleResult res;
  auto make = [&](Quantity q, std::string label) {
    Spectrum s;
    s.quantity = q;
    s.grid = grid;
    s.channels = n;
    s.label = std::move(label);
    s.values.assign(grid.count(), CMatrix::Zero(n, n));
    return s;
  };
  if (opt.port) res.yin = make(Quantity::Yin, std::to_string(*opt.port));
  if (opt.link) res.h = make(Quantity::H, std::to_string(opt.link->first) + "->" + std::to_string(opt.link->second));

  std::vector<std::size_t> bad;
  Eigen::SparseLU<Eigen::SparseMatrix<cplx>> lu;
  auto factor = [&](const Eigen::SparseMatrix<cplx>& m) {
    lu.compute(m);
    return lu.info() == Eigen::Success;
  };

  for (std::size_t k = 0; k < grid.count(); ++k) {
    if (opt.port) {
      const int p = net.node(*opt.port);
      if (!factor(net.assemble(k, cache, {}))) {
        bad.push_back(k);
        continue;
      }
      CMatrix v(n, n);
      for (int j = 0; j < n; ++j) {
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(net.size());
        rhs(p * n + j) = 1.0;
        const Eigen::VectorXcd x = lu.solve(rhs);
        for (int i = 0; i < n; ++i) v(i, j) = x(p * n + i);
      }
      CMatrix y;
      if (!try_inverse(v, y)) {
        bad.push_back(k);
        continue;
      }
      res.yin->values[k] = y;
    }
    if (opt.link) {
      const int tx = net.node(opt.link->first);
      const int rx = net.node(opt.link->second);
      std::map<int, CMatrix> extra;
      extra[tx] = identity(n) / opt.zs;
      extra[rx] = (extra.count(rx) ? extra[rx] : CMatrix::Zero(n, n)) + identity(n) / opt.zl;
      if (!factor(net.assemble(k, cache, extra))) {
        bad.push_back(k);
        continue;
      }
      CMatrix hv(n, n);
      for (int j = 0; j < n; ++j) {
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(net.size());
        rhs(tx * n + j) = 1.0 / opt.zs;
        const Eigen::VectorXcd x = lu.solve(rhs);
        for (int i = 0; i < n; ++i) hv(i, j) = x(rx * n + i);
      }
      res.h->values[k] = hv;
    }
  }
  if (!bad.empty()) throw NumericError("singular nodal matrix", bad);
  return res;
}

}  // namespace detail

/// Independent reference solution: every branch is cut into lumped
/// pi-sections of at most `segment_len` and the full nodal admittance
/// matrix is solved per tone.
inline OracleResult nodal_oracle(const Topology& topo, const FrequencyGrid& grid, const OracleOptions& opt) {
  if (!(opt.segment_len > 0.0)) throw DomainError("segment length must be positive");
  if (!(opt.zs > 0.0) || !(opt.zl > 0.0)) throw DomainError("oracle needs positive zs and zl");
  if (opt.link && opt.link->first == opt.link->second) throw DomainError("transmitter and receiver must differ");
  OracleResult coarse = detail::solve_lumped(topo, grid, opt.segment_len, opt);
  if (!opt.extrapolate) return coarse;
  const OracleResult fine = detail::solve_lumped(topo, grid, 0.5 * opt.segment_len, opt);
  auto combine = [](std::optional<Spectrum>& c, const std::optional<Spectrum>& f) {
    if (!c) return;
    for (std::size_t k = 0; k < c->size(); ++k) c->values[k] = (4.0 * f->values[k] - c->values[k]) / 3.0;
  };
  combine(coarse.yin, fine.yin);
  combine(coarse.h, fine.h);
  return coarse;
}

}  // namespace gridsense::tl
