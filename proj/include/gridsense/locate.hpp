#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/detect.hpp"
#include "gridsense/topology.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

/// Localization gave no usable answer (distance estimate inconsistent with the topology).
class LocateError : public Error {
 public:
  LocateError(const std::string& what, int nearest) : Error(what), nearest_(nearest) {}
  /// Id of the nearest branch (faults) or node (impedance variations); -1 if none.
  int nearest() const { return nearest_; }

 private:
  int nearest_;
};

enum class LocateTarget { Node, Branch };
enum class ScoreMode { Mean, Min };

struct LocateConfig {
  double thr_bins = 1.5;          // node match and branch containment slack
  ScoreMode score = ScoreMode::Mean;
  double ambiguity_bins = 0.05;   // best scores closer than this are ambiguous
  double max_residual_bins = 3.0; // multi-sensor: rms residual beyond this is no fix
};

struct LocalizationReport {
  struct Candidate {
    int id = -1;
    double score_m = 0.0;
  };
  LocateTarget target = LocateTarget::Branch;
  int chosen = -1;
  double d_hat = std::numeric_limits<double>::quiet_NaN();
  double offset_m = std::numeric_limits<double>::quiet_NaN();  // multi-sensor point, from node a of the branch
  std::vector<Candidate> candidates;
  bool ambiguous = false;
};

namespace detail {

inline void pick_best(LocalizationReport& rep, double tol) {
  std::stable_sort(rep.candidates.begin(), rep.candidates.end(),
                   [](const auto& a, const auto& b) { return a.score_m < b.score_m; });
  rep.chosen = rep.candidates.front().id;
  rep.ambiguous = rep.candidates.size() > 1 && rep.candidates[1].score_m - rep.candidates[0].score_m < tol;
}

inline double nearest_gap(double x, const std::vector<double>& peaks) {
  double best = std::numeric_limits<double>::infinity();
  for (double p : peaks) best = std::min(best, std::abs(p - x));
  return best;
}

}  // namespace detail

/// Single-sensor localization from the increment trace.
///
/// Impedance variation: the node whose port distance matches d_hat within
/// thr bins. Faults: every branch whose port-path interval contains d_hat is
/// a candidate; its far and near nodes N1, N2 predict secondary echoes at
/// d_hat + |d_hat - d(N)|, and the score is the mean (or min) distance of
/// those predictions to the nearest measured peak. Lowest score wins.
inline LocalizationReport localize_single(const DetectionReport& report, const std::vector<double>& peaks_m,
                                          const Topology& topo, int port, const LocateConfig& cfg = {}) {
  if (!report.detected || report.cls == AnomalyClass::None) throw DomainError("no detected anomaly to locate");
  if (!std::isfinite(report.d_hat)) throw DomainError("report has no first-peak distance");
  if (!(report.bin_m > 0.0)) throw DomainError("report has no distance bin");
  const auto dist = node_distances(topo, port);
  const double tol = cfg.thr_bins * report.bin_m;
  const double d = report.d_hat;
  LocalizationReport rep;
  rep.d_hat = d;

  if (report.cls == AnomalyClass::ImpedanceVariation) {
    rep.target = LocateTarget::Node;
    int nearest = -1;
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& [node, dn] : dist) {
      if (node == port) continue;
      const double g = std::abs(dn - d);
      if (g < gap) {
        gap = g;
        nearest = node;
      }
      if (g < tol) rep.candidates.push_back({node, g});
    }
    if (rep.candidates.empty())
      throw LocateError("no node at distance " + std::to_string(d) + " m (nearest: node " + std::to_string(nearest) + ")",
                        nearest);
    detail::pick_best(rep, cfg.ambiguity_bins * report.bin_m);
    rep.ambiguous = rep.candidates.size() > 1;
    return rep;
  }

  rep.target = LocateTarget::Branch;
  int nearest = -1;
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& b : topo.branches) {
    const double da = dist.at(b.a), db = dist.at(b.b);
    const double lo = std::min(da, db), hi = std::max(da, db);
    const double g = d < lo ? lo - d : (d > hi ? d - hi : 0.0);
    if (g < gap) {
      gap = g;
      nearest = b.id;
    }
    if (g > tol) continue;
    const double p1 = d + std::abs(d - lo);
    const double p2 = d + std::abs(d - hi);
    const double e1 = detail::nearest_gap(p1, peaks_m), e2 = detail::nearest_gap(p2, peaks_m);
    double c = cfg.score == ScoreMode::Mean ? 0.5 * (e1 + e2) : std::min(e1, e2);
    if (!std::isfinite(c)) c = std::numeric_limits<double>::max();
    rep.candidates.push_back({b.id, c});
  }
  if (rep.candidates.empty())
    throw LocateError("no branch spans distance " + std::to_string(d) + " m (nearest: branch " +
                          std::to_string(nearest) + ")",
                      nearest);
  detail::pick_best(rep, cfg.ambiguity_bins * report.bin_m);
  return rep;
}

inline LocalizationReport localize_single(const DetectionReport& report, const Topology& topo, int port,
                                          const LocateConfig& cfg = {}) {
  return localize_single(report, report.delta_peaks_m, topo, port, cfg);
}

/// Multi-sensor fusion: the point of the tree whose path distances to the
/// ports best match the measured first-peak distances (least squares over
/// points spaced at most one bin apart on every branch).
inline LocalizationReport localize_multi(const std::map<int, double>& first_peak_m, const Topology& topo, double bin_m,
                                         const LocateConfig& cfg = {}) {
  if (first_peak_m.size() < 2) throw DomainError("multi-sensor localization needs at least two ports");
  if (!(bin_m > 0.0)) throw DomainError("bin must be positive");
  std::map<int, std::map<int, double>> dist;
  for (const auto& [port, d] : first_peak_m) {
    if (!std::isfinite(d) || d < 0.0) throw DomainError("invalid distance for port " + std::to_string(port));
    dist[port] = node_distances(topo, port);
  }
  struct Point {
    int branch;
    double offset;
    double rms;
  };
  std::vector<Point> pts;
  for (const auto& b : topo.branches) {
    const int steps = std::max(1, static_cast<int>(std::ceil(b.length_m / bin_m)));
    for (int s = 0; s <= steps; ++s) {
      const double x = b.length_m * s / steps;
      double ssr = 0.0;
      for (const auto& [port, d] : first_peak_m) {
        const double to = std::min(dist[port].at(b.a) + x, dist[port].at(b.b) + b.length_m - x);
        ssr += (to - d) * (to - d);
      }
      pts.push_back({b.id, x, std::sqrt(ssr / static_cast<double>(first_peak_m.size()))});
    }
  }
  const auto best = *std::min_element(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.rms < b.rms; });
  int nearest = best.branch;
  if (best.rms > cfg.max_residual_bins * bin_m)
    throw LocateError("first-peak distances are inconsistent with the topology (rms residual " +
                          std::to_string(best.rms) + " m)",
                      nearest);

  // Tree distance between two points, through the node distances of the best point's branch ends.
  const Branch& bb = topo.branch(best.branch);
  const auto from_a = node_distances(topo, bb.a);
  const auto from_b = node_distances(topo, bb.b);
  auto separation = [&](const Point& p) {
    const Branch& pb = topo.branch(p.branch);
    if (p.branch == best.branch) return std::abs(p.offset - best.offset);
    auto via = [&](int end, double off_end) {
      const auto& base = end == bb.a ? from_a : from_b;
      return off_end + std::min(base.at(pb.a) + p.offset, base.at(pb.b) + pb.length_m - p.offset);
    };
    return std::min(via(bb.a, best.offset), via(bb.b, bb.length_m - best.offset));
  };

  LocalizationReport rep;
  rep.target = LocateTarget::Branch;
  rep.chosen = best.branch;
  rep.offset_m = best.offset;
  rep.d_hat = first_peak_m.begin()->second;
  std::map<int, double> per_branch;
  for (const auto& p : pts) {
    auto it = per_branch.find(p.branch);
    if (it == per_branch.end() || p.rms < it->second) per_branch[p.branch] = p.rms;
    if (separation(p) > bin_m && p.rms - best.rms < cfg.ambiguity_bins * bin_m) rep.ambiguous = true;
  }
  for (const auto& [id, s] : per_branch) rep.candidates.push_back({id, s});
  std::stable_sort(rep.candidates.begin(), rep.candidates.end(),
                   [](const auto& a, const auto& b) { return a.score_m < b.score_m; });
  return rep;
}

inline void to_json(nlohmann::json& j, const LocalizationReport& r) {
  j = nlohmann::json{{"target", r.target == LocateTarget::Node ? "node" : "branch"},
                     {"chosen", r.chosen},
                     {"d_hat_m", r.d_hat},
                     {"ambiguous", r.ambiguous}};
  if (std::isfinite(r.offset_m)) j["offset_m"] = r.offset_m;
  auto& c = j["candidates"] = nlohmann::json::array();
  for (const auto& x : r.candidates) c.push_back({{"id", x.id}, {"score_m", x.score_m}});
}

inline void from_json(const nlohmann::json& j, LocalizationReport& r) {
  const std::string t = j.at("target").get<std::string>();
  if (t != "node" && t != "branch") throw ConfigError("unknown localization target '" + t + "'");
  r.target = t == "node" ? LocateTarget::Node : LocateTarget::Branch;
  r.chosen = j.at("chosen").get<int>();
  r.d_hat = j.value("d_hat_m", std::numeric_limits<double>::quiet_NaN());
  r.offset_m = j.value("offset_m", std::numeric_limits<double>::quiet_NaN());
  r.ambiguous = j.value("ambiguous", false);
  r.candidates.clear();
  for (const auto& c : j.value("candidates", nlohmann::json::array()))
    r.candidates.push_back({c.at("id").get<int>(), c.at("score_m").get<double>()});
}

}  // namespace gridsense
