#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace msnn {

struct WelchOptions {
  std::size_t window = 0;  // samples; 0 selects one second (round(fs))
  double overlap = 0.5;
};

struct Spectrum {
  std::vector<double> freqs;
  std::vector<double> power;  // one-sided density, units^2 / Hz
};

std::size_t welch_window_length(double fs, const WelchOptions& opt = {});

// Frequency grid k * fs / window for k = 0..window/2, shared by every
// spectral output so curves line up.
std::vector<double> welch_frequencies(double fs, std::size_t window);

// Averaged periodogram: periodic Hann window, per-segment mean removal,
// density scaling with one-sided doubling. Throws if the signal is shorter
// than one window.
Spectrum welch_psd(std::span<const double> signal, double fs, const WelchOptions& opt = {});

}  // namespace msnn
