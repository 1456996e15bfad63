#pragma once

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gridsense/spectral.hpp"
#include "gridsense/types.hpp"

namespace gridsense {

namespace detail {

inline std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    if (!f.empty() && f.back() == '\r') f.pop_back();
    out.push_back(f);
  }
  return out;
}

inline double csv_number(const std::string& s, int line) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return x;
}

inline void write_entries_header(std::ostream& os, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) os << ",re_" << i << j << ",im_" << i << j;
  os << '\n';
}

inline void write_entries(std::ostream& os, const CMatrix& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) os << ',' << m(i, j).real() << ',' << m(i, j).imag();
  os << '\n';
}

/// Channel count from the number of re/im columns after `skip` leading ones.
inline int channels_from_header(const std::vector<std::string>& h, std::size_t skip) {
  const std::size_t cols = h.size() - skip;
  for (int n = 1; n <= kMaxChannels; ++n)
    if (cols == static_cast<std::size_t>(2 * n * n)) return n;
  throw ConfigError("CSV header has " + std::to_string(cols) + " value columns; expected 2, or 8 for two channels");
}

inline FrequencyGrid grid_from_frequencies(const std::vector<double>& f) {
  if (f.size() < 2) throw ConfigError("spectrum needs at least two tones");
  const double df = f.front();
  for (std::size_t k = 0; k < f.size(); ++k)
    if (std::abs(f[k] - df * static_cast<double>(k + 1)) > 1e-6 * df)
      throw ConfigError("frequencies are not the uniform grid k * " + std::to_string(df) + " Hz");
  return FrequencyGrid(df, f.size());
}

}  // namespace detail

/// Spectrum as CSV: f_hz, re_00, im_00, ... (row-major entries).
inline void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
  os << std::setprecision(17) << "f_hz";
  detail::write_entries_header(os, s.channels);
  for (std::size_t k = 0; k < s.size(); ++k) {
    os << s.grid.frequency(k);
    detail::write_entries(os, s.values[k]);
  }
}

inline Spectrum read_spectrum_csv(std::istream& is, Quantity q = Quantity::Yin) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty spectrum CSV");
  const auto header = detail::csv_fields(line);
  if (header.empty() || header.front() != "f_hz") throw ConfigError("spectrum CSV must start with f_hz");
  const int n = detail::channels_from_header(header, 1);
  Spectrum s;
  s.quantity = q;
  s.channels = n;
  std::vector<double> freqs;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::csv_fields(line);
    if (f.size() != header.size()) throw ConfigError("line " + std::to_string(lineno) + ": wrong number of columns");
    freqs.push_back(detail::csv_number(f[0], lineno));
    CMatrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t c = 1 + 2 * static_cast<std::size_t>(i * n + j);
        m(i, j) = cplx(detail::csv_number(f[c], lineno), detail::csv_number(f[c + 1], lineno));
      }
    s.values.push_back(m);
  }
  s.grid = detail::grid_from_frequencies(freqs);
  return s;
}

/// Stream of estimates as CSV: estimate, f_hz, re_00, im_00, ...
inline void write_stream_csv(std::ostream& os, const std::vector<Spectrum>& stream) {
  if (stream.empty()) return;
  os << std::setprecision(17) << "estimate,f_hz";
  detail::write_entries_header(os, stream.front().channels);
  for (std::size_t e = 0; e < stream.size(); ++e)
    for (std::size_t k = 0; k < stream[e].size(); ++k) {
      os << e << ',' << stream[e].grid.frequency(k);
      detail::write_entries(os, stream[e].values[k]);
    }
}

inline std::vector<Spectrum> read_stream_csv(std::istream& is, Quantity q = Quantity::Yin) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty stream CSV");
  const auto header = detail::csv_fields(line);
  if (header.size() < 2 || header[0] != "estimate" || header[1] != "f_hz")
    throw ConfigError("stream CSV must start with estimate,f_hz");
  const int n = detail::channels_from_header(header, 2);
  std::vector<Spectrum> out;
  std::vector<std::vector<double>> freqs;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::csv_fields(line);
    if (f.size() != header.size()) throw ConfigError("line " + std::to_string(lineno) + ": wrong number of columns");
    const double e = detail::csv_number(f[0], lineno);
    if (e < 0 || e != std::floor(e)) throw ConfigError("line " + std::to_string(lineno) + ": bad estimate index");
    const std::size_t idx = static_cast<std::size_t>(e);
    if (idx == out.size()) {
      Spectrum s;
      s.quantity = q;
      s.channels = n;
      out.push_back(s);
      freqs.emplace_back();
    } else if (idx + 1 != out.size()) {
      throw ConfigError("line " + std::to_string(lineno) + ": estimates must be contiguous and in order");
    }
    freqs[idx].push_back(detail::csv_number(f[1], lineno));
    CMatrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t c = 2 + 2 * static_cast<std::size_t>(i * n + j);
        m(i, j) = cplx(detail::csv_number(f[c], lineno), detail::csv_number(f[c + 1], lineno));
      }
    out[idx].values.push_back(m);
  }
  for (std::size_t e = 0; e < out.size(); ++e) out[e].grid = detail::grid_from_frequencies(freqs[e]);
  return out;
}

/// Trace as CSV: distance_m, magnitude.
inline void write_trace_csv(std::ostream& os, const TimeTrace& tr) {
  os << std::setprecision(10) << "distance_m,magnitude\n";
  for (std::size_t i = 0; i < tr.size(); ++i) os << tr.distance(static_cast<double>(i)) << ',' << tr.magnitude[i] << '\n';
}

}  // namespace gridsense
