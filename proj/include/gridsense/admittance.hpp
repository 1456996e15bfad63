#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gridsense/types.hpp"

namespace gridsense::tl {

/// Frequency-dependent scalar admittance of a termination or fault.
///
/// Series RLC: Z = R + jwL + 1/(jwC); absent elements are shorted.
/// Parallel RLC: Y = 1/R + 1/(jwL) + jwC; absent elements are open.
/// Matched: resolved by the topology to the characteristic admittance seen at
/// a node; it has no value on its own.
struct AdmittanceModel {
  enum class Kind { Constant, SeriesRLC, ParallelRLC, Matched };

  Kind kind = Kind::Constant;
  cplx value{};                  // Constant
  std::optional<double> r, l, c;  // RLC elements in Ohm, H, F

  static AdmittanceModel constant(cplx y) { return {Kind::Constant, y, {}, {}, {}}; }
  static AdmittanceModel open() { return constant({0.0, 0.0}); }
  static AdmittanceModel resistor(double ohms) { return series(ohms, std::nullopt, std::nullopt); }
  static AdmittanceModel series(std::optional<double> r, std::optional<double> l, std::optional<double> c) {
    return {Kind::SeriesRLC, {}, r, l, c};
  }
  static AdmittanceModel parallel(std::optional<double> r, std::optional<double> l, std::optional<double> c) {
    return {Kind::ParallelRLC, {}, r, l, c};
  }
  static AdmittanceModel matched() { return {Kind::Matched, {}, {}, {}, {}}; }

  bool operator==(const AdmittanceModel&) const = default;

  bool is_passive() const {
    switch (kind) {
      case Kind::Constant: return value.real() >= 0.0;
      case Kind::Matched: return true;
      default: return r.value_or(0.0) >= 0.0 && l.value_or(0.0) >= 0.0 && c.value_or(0.0) >= 0.0;
    }
  }

  void validate() const {
    auto bad = [](const std::optional<double>& v) { return v && (!std::isfinite(*v) || *v < 0.0); };
    if (kind == Kind::Constant && !std::isfinite(std::abs(value))) throw ConfigError("admittance must be finite");
    if (bad(r) || bad(l) || bad(c)) throw ConfigError("RLC elements must be finite and non-negative");
    if (kind == Kind::SeriesRLC && r.value_or(0.0) == 0.0 && l.value_or(0.0) == 0.0 && !c)
      throw ConfigError("series RLC with no elements is a short circuit");
    if (kind == Kind::SeriesRLC && c && *c == 0.0) throw ConfigError("series capacitance must be positive");
    if (kind == Kind::ParallelRLC && ((r && *r == 0.0) || (l && *l == 0.0)))
      throw ConfigError("parallel R and L must be positive");
  }

  /// Admittance at frequency f. Matched models must be resolved by the caller.
  cplx at(double f) const {
    const double w = 2.0 * kPi * f;
    switch (kind) {
      case Kind::Constant: return value;
      case Kind::SeriesRLC: {
        cplx z = r.value_or(0.0);
        if (l) z += kJ * w * *l;
        if (c) z += 1.0 / (kJ * w * *c);
        return 1.0 / z;
      }
      case Kind::ParallelRLC: {
        cplx y = 0.0;
        if (r) y += 1.0 / *r;
        if (l) y += 1.0 / (kJ * w * *l);
        if (c) y += kJ * w * *c;
        return y;
      }
      case Kind::Matched: break;
    }
    throw DomainError("matched admittance has no stand-alone value");
  }
};

inline void to_json(nlohmann::json& j, const AdmittanceModel& m) {
  using K = AdmittanceModel::Kind;
  switch (m.kind) {
    case K::Constant:
      j = {{"type", "constant"}, {"re", m.value.real()}, {"im", m.value.imag()}};
      return;
    case K::Matched:
      j = {{"type", "matched"}};
      return;
    case K::SeriesRLC:
    case K::ParallelRLC:
      j = {{"type", m.kind == K::SeriesRLC ? "series_rlc" : "parallel_rlc"}};
      if (m.r) j["r"] = *m.r;
      if (m.l) j["l"] = *m.l;
      if (m.c) j["c"] = *m.c;
      return;
  }
}

inline void from_json(const nlohmann::json& j, AdmittanceModel& m) {
  const std::string type = j.at("type").get<std::string>();
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.contains(key) && !j.at(key).is_null()) return j.at(key).get<double>();
    return std::nullopt;
  };
  if (type == "constant") {
    m = AdmittanceModel::constant({j.value("re", 0.0), j.value("im", 0.0)});
  } else if (type == "open") {
    m = AdmittanceModel::open();
  } else if (type == "matched") {
    m = AdmittanceModel::matched();
  } else if (type == "series_rlc") {
    m = AdmittanceModel::series(opt("r"), opt("l"), opt("c"));
  } else if (type == "parallel_rlc") {
    m = AdmittanceModel::parallel(opt("r"), opt("l"), opt("c"));
  } else {
    throw ConfigError("unknown admittance type '" + type + "'");
  }
  m.validate();
}

}  // namespace gridsense::tl
