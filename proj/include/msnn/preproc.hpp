#pragma once

#include "msnn/dataset.hpp"
#include "msnn/tensor.hpp"

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace msnn {

// Raw multichannel recording prior to epoching; samples are [n_c, n_samples, 1].
struct RawRecord {
  Tensor samples;
  double fs = 0.0;
  std::vector<std::string> channel_names;
  std::map<std::string, std::vector<std::string>> montage;

  void validate() const;
};

// One biquad in transposed direct form II, a0 normalized to 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 2> a{};  // a1, a2
};

// Digital Butterworth band-pass as cascaded second-order sections. A
// prototype of order n gives n sections (2n poles).
class ButterworthBandpass {
 public:
  ButterworthBandpass(int prototype_order, double low_hz, double high_hz, double fs);

  const std::vector<Biquad>& sections() const { return sections_; }
  int filter_order() const { return 2 * prototype_order_; }

  // Causal single pass with steady-state initial conditions scaled by x[0].
  std::vector<double> filter(std::span<const double> x) const;
  // Zero-phase forward-backward pass with odd-extension padding.
  std::vector<double> filtfilt(std::span<const double> x) const;
  std::size_t pad_length() const { return static_cast<std::size_t>(3 * (filter_order() + 1)); }

 private:
  int prototype_order_;
  std::vector<Biquad> sections_;
  std::vector<std::array<double, 2>> steady_state_;  // per section, for unit input
};

inline constexpr int kBandpassPrototypeOrder = 4;

// Zero-phase 4th-order Butterworth band-pass on every channel.
RawRecord bandpass(const RawRecord& record, double low_hz, double high_hz);
Tensor bandpass(const Tensor& signal, double fs, double low_hz, double high_hz);
EpochSet bandpass(const EpochSet& set, double low_hz, double high_hz);

// y_c = x_c - mean of the montage neighbours of c; channels without
// neighbours pass through.
RawRecord large_laplacian(const RawRecord& record);

Tensor baseline_correct(const Tensor& epoch, std::span<const double> baseline_mean);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation, > 0
};

NormStats fit_normalization(const EpochSet& train);
EpochSet apply_normalization(const NormStats& stats, const EpochSet& epochs);
Tensor apply_normalization(const NormStats& stats, const Tensor& signal);
Tensor invert_normalization(const NormStats& stats, const Tensor& signal);

// Drops round(fs*head) leading samples; the total removed is round(fs*(head+tail)).
Tensor crop_epoch(const Tensor& epoch, double drop_head_s, double drop_tail_s, double fs);
EpochSet crop_epochs(const EpochSet& set, double drop_head_s, double drop_tail_s);

}  // namespace msnn
