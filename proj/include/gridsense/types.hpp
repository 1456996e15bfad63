#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gridsense {

using cplx = std::complex<double>;

/// Small complex matrix with inline storage. Channel matrices are n x n with
/// n <= 2; chain matrices are 2n x 2n.
using CMatrix = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
using RMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;

inline constexpr int kMaxChannels = 2;
inline constexpr double kPi = std::numbers::pi;
inline constexpr cplx kJ{0.0, 1.0};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid reference or argument outside the domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or infeasible configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown at one or more tones of a frequency grid.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::vector<std::size_t> tones)
      : Error(format(what, tones)), tones_(std::move(tones)) {}

  const std::vector<std::size_t>& tones() const { return tones_; }

 private:
  static std::string format(const std::string& what, const std::vector<std::size_t>& tones) {
    std::ostringstream os;
    os << what << " (tone index";
    if (tones.size() > 1) os << "es";
    for (std::size_t i = 0; i < tones.size(); ++i) os << (i ? ", " : " ") << tones[i];
    os << ")";
    return os.str();
  }

  std::vector<std::size_t> tones_;
};

/// Uniform tone grid f_k = k * delta_f, k = 1..count. DC is not part of it.
class FrequencyGrid {
 public:
  FrequencyGrid() = default;
  FrequencyGrid(double delta_f, std::size_t count) : delta_f_(delta_f), count_(count) {
    if (!(delta_f > 0.0) || !std::isfinite(delta_f)) throw ConfigError("frequency step must be positive");
    if (count < 2) throw ConfigError("frequency grid needs at least two tones");
  }

  double delta_f() const { return delta_f_; }
  std::size_t count() const { return count_; }
  double f_max() const { return static_cast<double>(count_) * delta_f_; }

  /// Frequency of tone index i (0-based), i.e. (i + 1) * delta_f.
  double frequency(std::size_t i) const { return static_cast<double>(i + 1) * delta_f_; }
  double omega(std::size_t i) const { return 2.0 * kPi * frequency(i); }

  bool operator==(const FrequencyGrid&) const = default;

 private:
  double delta_f_ = 4300.0;
  std::size_t count_ = 116;
};

enum class Quantity { Yin, Rho, H };

inline const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::Yin: return "yin";
    case Quantity::Rho: return "rho";
    case Quantity::H: return "h";
  }
  return "?";
}

inline Quantity quantity_from_string(const std::string& s) {
  if (s == "yin" || s == "Yin" || s == "y") return Quantity::Yin;
  if (s == "rho" || s == "Rho") return Quantity::Rho;
  if (s == "h" || s == "H" || s == "htot") return Quantity::H;
  throw ConfigError("unknown quantity '" + s + "' (expected yin, rho or h)");
}

/// Matrix-valued frequency response on a grid.
struct Spectrum {
  Quantity quantity = Quantity::Yin;
  FrequencyGrid grid;
  int channels = 1;
  std::vector<CMatrix> values;
  /// Port reference admittance Y_0 per tone. Populated for Yin and Rho.
  std::vector<CMatrix> reference;
  std::string label;

  std::size_t size() const { return values.size(); }
  cplx entry(std::size_t tone, int row = 0, int col = 0) const { return values[tone](row, col); }
};

inline CMatrix identity(int n) { return CMatrix::Identity(n, n); }

/// Inverts a small matrix into `out`. Returns false when it is numerically singular.
inline bool try_inverse(const CMatrix& m, CMatrix& out) {
  const double scale = m.cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !std::isfinite(scale)) return false;
  if (m.rows() == 1) {
    out = CMatrix(1, 1);
    out(0, 0) = 1.0 / m(0, 0);
    return std::isfinite(std::abs(out(0, 0)));
  }
  if (m.rows() == 2) {
    const cplx det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    if (std::abs(det) <= 1e-13 * scale * scale) return false;
    out = CMatrix(2, 2);
    out(0, 0) = m(1, 1) / det;
    out(1, 1) = m(0, 0) / det;
    out(0, 1) = -m(0, 1) / det;
    out(1, 0) = -m(1, 0) / det;
    return true;
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(m);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) return false;
  out = lu.inverse();
  return true;
}

inline double relative_error(const CMatrix& a, const CMatrix& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

}  // namespace gridsense
