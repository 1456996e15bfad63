#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "gridsense/types.hpp"

namespace gridsense::tl {

/// Per-unit-length cable constants.
///
/// One channel is a two-conductor line. Two channels model a three-conductor
/// cable in the conductor domain with wire 3 as reference: R and L carry
/// positive mutual terms, G and C the (Maxwell) negative ones, each with
/// magnitude `mutual_ratio` times the self term.
///
/// Skin effect scales R with sqrt(f / ref_frequency); dielectric loss scales
/// G linearly with f / ref_frequency.
struct CableSpec {
  int channels = 1;
  double inductance = 0.4e-6;      // H/m
  double capacitance = 0.1e-9;     // F/m
  double resistance_ref = 0.05;    // Ohm/m at ref_frequency
  double conductance_ref = 1e-9;   // S/m at ref_frequency
  double ref_frequency = 500e3;    // Hz
  double mutual_ratio = 0.3;

  bool operator==(const CableSpec&) const = default;

  void validate() const {
    if (channels != 1 && channels != 2) throw ConfigError("cable must have 1 or 2 channels");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(inductance) || !finite(capacitance) || !finite(resistance_ref) ||
        !finite(conductance_ref) || !finite(ref_frequency) || !finite(mutual_ratio))
      throw ConfigError("cable constants must be finite");
    if (!(inductance > 0.0) || !(capacitance > 0.0)) throw ConfigError("cable L and C must be positive");
    if (resistance_ref < 0.0 || conductance_ref < 0.0) throw ConfigError("cable R and G must be non-negative");
    if (!(ref_frequency > 0.0)) throw ConfigError("cable reference frequency must be positive");
    if (channels == 2 && !(mutual_ratio >= 0.0 && mutual_ratio < 1.0))
      throw ConfigError("cable mutual ratio must lie in [0, 1)");
  }

  double resistance_at(double f) const { return resistance_ref * std::sqrt(f / ref_frequency); }
  double conductance_at(double f) const { return conductance_ref * (f / ref_frequency); }

  RMatrix R(double f) const { return pattern(+1.0) * resistance_at(f); }
  RMatrix L() const { return pattern(+1.0) * inductance; }
  RMatrix G(double f) const { return pattern(-1.0) * conductance_at(f); }
  RMatrix C() const { return pattern(-1.0) * capacitance; }

  /// Series impedance R + jwL per metre.
  CMatrix series_impedance(double f) const {
    const double w = 2.0 * kPi * f;
    return R(f).cast<cplx>() + kJ * w * L().cast<cplx>();
  }

  /// Shunt admittance G + jwC per metre.
  CMatrix shunt_admittance(double f) const {
    const double w = 2.0 * kPi * f;
    return G(f).cast<cplx>() + kJ * w * C().cast<cplx>();
  }

  /// Lossless phase velocity of the first propagation mode.
  double velocity() const {
    const double m = channels == 2 ? mutual_ratio : 0.0;
    return 1.0 / std::sqrt(inductance * capacitance * (1.0 - m * m));
  }

  /// Copy with resistance and capacitance scaled, used for aged cable sections.
  CableSpec degraded(double r_scale, double c_scale) const {
    CableSpec out = *this;
    out.resistance_ref *= r_scale;
    out.capacitance *= c_scale;
    return out;
  }

 private:
  RMatrix pattern(double mutual_sign) const {
    RMatrix m(channels, channels);
    if (channels == 1) {
      m(0, 0) = 1.0;
    } else {
      m << 1.0, mutual_sign * mutual_ratio, mutual_sign * mutual_ratio, 1.0;
    }
    return m;
  }
};

/// Spectral data of an n x n matrix, n <= 2: eigenvalues plus enough to
/// evaluate analytic functions of it with the Lagrange-Sylvester formula.
struct SmallSpectral {
  int n = 1;
  cplx mu1{};
  cplx mu2{};
  CMatrix m;  // the matrix itself

  static SmallSpectral of(const CMatrix& mat) {
    SmallSpectral s;
    s.n = static_cast<int>(mat.rows());
    s.m = mat;
    if (s.n == 1) {
      s.mu1 = mat(0, 0);
      s.mu2 = mat(0, 0);
      return s;
    }
    const cplx tr = mat(0, 0) + mat(1, 1);
    const cplx det = mat(0, 0) * mat(1, 1) - mat(0, 1) * mat(1, 0);
    const cplx disc = std::sqrt(tr * tr - 4.0 * det);
    s.mu1 = 0.5 * (tr + disc);
    s.mu2 = 0.5 * (tr - disc);
    return s;
  }
};

/// f(M) for n <= 2 from f and its first three derivatives.
///
/// With eigenvalues mid +- h, f(M) = e I + o (M - mid I) where e is the even
/// and o the odd divided difference of f. For |h| <= 1e-3 * scale both are
/// replaced by their Taylor expansions to O(h^4), which avoids cancellation
/// for the (common) degenerate case.
template <class F0, class F1, class F2, class F3>
CMatrix matrix_function(const SmallSpectral& s, double scale, F0&& f, F1&& d1, F2&& d2, F3&& d3) {
  if (s.n == 1) {
    CMatrix out(1, 1);
    out(0, 0) = f(s.mu1);
    return out;
  }
  const cplx mid = 0.5 * (s.mu1 + s.mu2);
  const cplx h = 0.5 * (s.mu1 - s.mu2);
  cplx even, odd;
  if (std::abs(h) <= 1e-3 * scale) {
    const cplx h2 = h * h;
    even = f(mid) + d2(mid) * h2 / 2.0;
    odd = d1(mid) + d3(mid) * h2 / 6.0;
  } else {
    const cplx f1 = f(s.mu1);
    const cplx f2 = f(s.mu2);
    even = 0.5 * (f1 + f2);
    odd = (f1 - f2) / (2.0 * h);
  }
  return even * identity(2) + odd * (s.m - mid * identity(2));
}

/// Principal square root of a 1x1 or 2x2 matrix.
inline CMatrix matrix_sqrt(const SmallSpectral& s) {
  const double scale = std::abs(0.5 * (s.mu1 + s.mu2));
  return matrix_function(
      s, scale, [](cplx v) { return std::sqrt(v); }, [](cplx v) { return 0.5 / std::sqrt(v); },
      [](cplx v) { return -0.25 / (v * std::sqrt(v)); },
      [](cplx v) { return 0.375 / (v * v * std::sqrt(v)); });
}

inline CMatrix matrix_cosh(const SmallSpectral& s) {
  auto c = [](cplx v) { return std::cosh(v); };
  auto sh = [](cplx v) { return std::sinh(v); };
  return matrix_function(s, 1.0, c, sh, c, sh);
}

inline CMatrix matrix_sinh(const SmallSpectral& s) {
  auto c = [](cplx v) { return std::cosh(v); };
  auto sh = [](cplx v) { return std::sinh(v); };
  return matrix_function(s, 1.0, sh, c, sh, c);
}

/// Propagation data for one tone.
struct ToneLineParams {
  CMatrix gamma;         // propagation matrix, 1/m
  cplx gamma_eig[2]{};   // eigenvalues of gamma, Re >= 0
  CMatrix yc;            // characteristic admittance, S
  CMatrix zc;            // inverse of yc
};

/// Propagation matrix and characteristic admittance at every tone.
struct LineParams {
  CableSpec cable;
  FrequencyGrid grid;
  std::vector<ToneLineParams> tones;
};

/// Gamma = sqrt(Z Y) on the principal branch (Re of every eigenvalue >= 0)
/// and Y_C = Z^{-1} Gamma, with Z = R + jwL and Y = G + jwC.
inline ToneLineParams tone_line_params(const CableSpec& cable, double f, std::size_t tone_index) {
  const CMatrix z = cable.series_impedance(f);
  const CMatrix y = cable.shunt_admittance(f);
  const CMatrix zy = z * y;
  const SmallSpectral spec = SmallSpectral::of(zy);
  ToneLineParams out;
  if (!std::isfinite(std::abs(spec.mu1)) || !std::isfinite(std::abs(spec.mu2)))
    throw NumericError("eigendecomposition of ZY did not converge", {tone_index});
  out.gamma = matrix_sqrt(spec);
  out.gamma_eig[0] = std::sqrt(spec.mu1);
  out.gamma_eig[1] = std::sqrt(spec.mu2);
  CMatrix zinv;
  if (!try_inverse(z, zinv)) throw NumericError("series impedance matrix is singular", {tone_index});
  out.yc = zinv * out.gamma;
  if (!try_inverse(out.yc, out.zc)) throw NumericError("characteristic admittance is singular", {tone_index});
  if (!out.gamma.allFinite() || !out.yc.allFinite())
    throw NumericError("propagation parameters are not finite", {tone_index});
  return out;
}

inline LineParams propagation_params(const CableSpec& cable, const FrequencyGrid& grid) {
  cable.validate();
  LineParams lp{cable, grid, {}};
  lp.tones.reserve(grid.count());
  for (std::size_t k = 0; k < grid.count(); ++k) lp.tones.push_back(tone_line_params(cable, grid.frequency(k), k));
  return lp;
}

/// Chain (ABCD) matrix of a uniform section of length `len`:
///   [V_in; I_in] = [A B; C D] [V_out; I_out]
/// with A = cosh(Gamma l), B = sinh(Gamma l) Z_C, C = Y_C sinh(Gamma l),
/// D = Y_C cosh(Gamma l) Z_C.
inline CMatrix uniform_section_chain(const ToneLineParams& p, double len) {
  const int n = static_cast<int>(p.gamma.rows());
  CMatrix out(2 * n, 2 * n);
  if (len == 0.0) {
    out.setIdentity();
    return out;
  }
  SmallSpectral s;
  s.n = n;
  s.m = p.gamma * len;
  s.mu1 = p.gamma_eig[0] * len;
  s.mu2 = (n == 2 ? p.gamma_eig[1] : p.gamma_eig[0]) * len;
  const CMatrix ch = matrix_cosh(s);
  const CMatrix sh = matrix_sinh(s);
  out.topLeftCorner(n, n) = ch;
  out.topRightCorner(n, n) = sh * p.zc;
  out.bottomLeftCorner(n, n) = p.yc * sh;
  out.bottomRightCorner(n, n) = p.yc * ch * p.zc;
  return out;
}

/// Chain matrix of a shunt admittance: [I 0; Y I].
inline CMatrix shunt_chain(const CMatrix& y) {
  const int n = static_cast<int>(y.rows());
  CMatrix out = CMatrix::Identity(2 * n, 2 * n);
  out.bottomLeftCorner(n, n) = y;
  return out;
}

}  // namespace gridsense::tl
