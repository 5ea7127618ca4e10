#include "msnn/spectrum.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace msnn {

namespace {

// FFTW planning is not thread-safe; execution on a private plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

std::size_t welch_window_length(double fs, const WelchOptions& opt) {
  if (opt.window != 0) return opt.window;
  if (!(fs > 0.0)) throw std::invalid_argument("welch: sampling rate must be positive");
  return static_cast<std::size_t>(std::llround(fs));
}

std::vector<double> welch_frequencies(double fs, std::size_t window) {
  std::vector<double> freqs(window / 2 + 1);
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    freqs[k] = static_cast<double>(k) * fs / static_cast<double>(window);
  }
  return freqs;
}

Spectrum welch_psd(std::span<const double> signal, double fs, const WelchOptions& opt) {
  if (!(fs > 0.0)) throw std::invalid_argument("welch_psd: sampling rate must be positive");
  if (!(opt.overlap >= 0.0 && opt.overlap < 1.0)) {
    throw std::invalid_argument("welch_psd: overlap must be in [0, 1)");
  }
  const std::size_t n = welch_window_length(fs, opt);
  if (n < 2) throw std::invalid_argument("welch_psd: window must span at least two samples");
  if (signal.size() < n) {
    throw std::invalid_argument("welch_psd: signal of " + std::to_string(signal.size()) +
                                " samples is shorter than the " + std::to_string(n) + "-sample window");
  }
  const auto overlap = static_cast<std::size_t>(std::floor(static_cast<double>(n) * opt.overlap));
  const std::size_t hop = n - overlap;

  std::vector<double> window(n);
  double window_energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    window_energy += window[i] * window[i];
  }

  const std::size_t bins = n / 2 + 1;
  Spectrum out{welch_frequencies(fs, n), std::vector<double>(bins, 0.0)};
  RealFft fft(n);
  std::size_t segments = 0;
  for (std::size_t start = 0; start + n <= signal.size(); start += hop) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += signal[start + i];
    mean /= static_cast<double>(n);
    double* buf = fft.input();
    for (std::size_t i = 0; i < n; ++i) buf[i] = (signal[start + i] - mean) * window[i];
    fft.execute();
    for (std::size_t k = 0; k < bins; ++k) out.power[k] += fft.power(k);
    ++segments;
  }

  const double scale = 1.0 / (fs * window_energy * static_cast<double>(segments));
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    out.power[k] *= edge ? scale : 2.0 * scale;
  }
  return out;
}

}  // namespace msnn
