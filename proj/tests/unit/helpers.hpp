#pragma once

#include "msnn/random.hpp"
#include "msnn/tensor.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace msnn::test {

inline Tensor random_tensor(std::size_t c, std::size_t t, std::size_t f, Rng& rng, double scale = 1.0) {
  Tensor x(c, t, f);
  for (double& v : x.values()) v = scale * rng.normal();
  return x;
}

inline void randomize(std::vector<double>& v, Rng& rng, double scale = 1.0) {
  for (double& x : v) x = scale * rng.normal();
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Least-squares amplitude of a sinusoid at `freq` (sine + cosine fit).
inline double sine_amplitude(std::span<const double> y, double freq, double fs) {
  double ss = 0, cc = 0, sc = 0, ys = 0, yc = 0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double w = 2.0 * std::numbers::pi * freq * static_cast<double>(n) / fs;
    const double s = std::sin(w), c = std::cos(w);
    ss += s * s;
    cc += c * c;
    sc += s * c;
    ys += y[n] * s;
    yc += y[n] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (ys * cc - yc * sc) / det;
  const double b = (yc * ss - ys * sc) / det;
  return std::hypot(a, b);
}

inline std::vector<double> sine(std::size_t n, double freq, double fs, double amp = 1.0, double phase = 0.0) {
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs + phase);
  }
  return y;
}

inline double rms(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += v * v;
  return std::sqrt(s / static_cast<double>(y.size()));
}

}  // namespace msnn::test
