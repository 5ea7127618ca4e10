#include "msnn/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <set>
#include <stdexcept>

namespace msnn {

void RawRecord::validate() const {
  if (samples.channels() < 1) throw std::invalid_argument("RawRecord: needs at least one channel");
  if (samples.maps() != 1) throw std::invalid_argument("RawRecord: samples must have one map");
  if (!(fs > 0.0)) throw std::invalid_argument("RawRecord: sampling rate must be positive");
  if (!channel_names.empty() && channel_names.size() != samples.channels()) {
    throw std::invalid_argument("RawRecord: channel name count does not match samples");
  }
  const std::set<std::string> names(channel_names.begin(), channel_names.end());
  for (const auto& [channel, neighbours] : montage) {
    if (!names.contains(channel)) {
      throw std::invalid_argument("RawRecord: montage names unknown channel '" + channel + "'");
    }
    for (const auto& n : neighbours) {
      if (!names.contains(n)) {
        throw std::invalid_argument("RawRecord: montage neighbour '" + n + "' of '" + channel +
                                    "' is not a channel");
      }
    }
  }
  if (!samples.all_finite()) throw std::invalid_argument("RawRecord: non-finite sample");
}

// ---------------------------------------------------------------------------
// Butterworth design: analog prototype -> band-pass transform -> bilinear
// transform with pre-warped edges, grouped into conjugate-pole biquads with
// zeros at z = +1 and z = -1.
// ---------------------------------------------------------------------------
ButterworthBandpass::ButterworthBandpass(int prototype_order, double low_hz, double high_hz, double fs)
    : prototype_order_(prototype_order) {
  if (prototype_order < 1) throw std::invalid_argument("bandpass: filter order must be >= 1");
  if (!(fs > 0.0)) throw std::invalid_argument("bandpass: sampling rate must be positive");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0)) {
    throw std::invalid_argument("bandpass: band edges must satisfy 0 < low (" + std::to_string(low_hz) +
                                ") < high (" + std::to_string(high_hz) + ") < fs/2 (" +
                                std::to_string(fs / 2.0) + ")");
  }
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * fs;
  const double w_low = fs2 * std::tan(pi * low_hz / fs);
  const double w_high = fs2 * std::tan(pi * high_hz / fs);
  const double bw = w_high - w_low;
  const double w0 = std::sqrt(w_low * w_high);

  std::vector<cd> digital_poles;
  for (int k = 0; k < prototype_order; ++k) {
    const double angle = pi * (2.0 * k - prototype_order + 1) / (2.0 * prototype_order);
    const cd proto = -std::exp(cd(0.0, angle));
    const cd scaled = proto * (bw / 2.0);
    const cd root = std::sqrt(scaled * scaled - w0 * w0);
    for (const cd s : {scaled + root, scaled - root}) {
      digital_poles.push_back((fs2 + s) / (fs2 - s));
    }
  }

  std::vector<cd> upper;
  std::vector<double> real_poles;
  for (const cd p : digital_poles) {
    if (std::abs(p.imag()) <= 1e-14 * std::max(1.0, std::abs(p))) {
      real_poles.push_back(p.real());
    } else if (p.imag() > 0.0) {
      upper.push_back(p);
    }
  }
  std::sort(upper.begin(), upper.end(), [](cd x, cd y) { return std::abs(x) < std::abs(y); });
  for (const cd p : upper) {
    sections_.push_back(Biquad{{1.0, 0.0, -1.0}, {-2.0 * p.real(), std::norm(p)}});
  }
  std::sort(real_poles.begin(), real_poles.end());
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    const double p1 = real_poles[i], p2 = real_poles[i + 1];
    sections_.push_back(Biquad{{1.0, 0.0, -1.0}, {-(p1 + p2), p1 * p2}});
  }
  if (real_poles.size() % 2 != 0) {
    throw std::logic_error("bandpass: unpaired real pole in Butterworth design");
  }

  // Unit gain at the centre frequency, applied to the first section.
  const double omega0 = 2.0 * std::atan(w0 / fs2);
  const cd z = std::exp(cd(0.0, omega0));
  const cd zi = 1.0 / z;
  cd response = 1.0;
  for (const auto& s : sections_) {
    response *= (s.b[0] + s.b[1] * zi + s.b[2] * zi * zi) / (1.0 + s.a[0] * zi + s.a[1] * zi * zi);
  }
  const double gain = 1.0 / std::abs(response);
  for (double& c : sections_.front().b) c *= gain;

  double scale = 1.0;
  for (const auto& s : sections_) {
    const double a1 = s.a[0], a2 = s.a[1];
    const double det = 1.0 + a1 + a2;
    const double B0 = s.b[1] - a1 * s.b[0];
    const double B1 = s.b[2] - a2 * s.b[0];
    const double z0 = (B0 + B1) / det;
    const double z1 = ((1.0 + a1) * B1 - a2 * B0) / det;
    steady_state_.push_back({scale * z0, scale * z1});
    scale *= (s.b[0] + s.b[1] + s.b[2]) / det;
  }
}

namespace {

void run_sections(const std::vector<Biquad>& sections, const std::vector<std::array<double, 2>>& zi,
                  double zi_scale, std::vector<double>& x) {
  for (std::size_t s = 0; s < sections.size(); ++s) {
    const Biquad& q = sections[s];
    double z0 = zi[s][0] * zi_scale;
    double z1 = zi[s][1] * zi_scale;
    for (double& v : x) {
      const double in = v;
      const double out = q.b[0] * in + z0;
      z0 = q.b[1] * in - q.a[0] * out + z1;
      z1 = q.b[2] * in - q.a[1] * out;
      v = out;
    }
  }
}

}  // namespace

std::vector<double> ButterworthBandpass::filter(std::span<const double> x) const {
  std::vector<double> y(x.begin(), x.end());
  if (!y.empty()) run_sections(sections_, steady_state_, y.front(), y);
  return y;
}

std::vector<double> ButterworthBandpass::filtfilt(std::span<const double> x) const {
  const std::size_t pad = pad_length();
  const std::size_t n = x.size();
  if (n <= pad) {
    throw std::invalid_argument("bandpass: signal of " + std::to_string(n) +
                                " samples is too short; need more than " + std::to_string(pad) +
                                " (3 x (filter order + 1))");
  }
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  run_sections(sections_, steady_state_, ext.front(), ext);
  std::reverse(ext.begin(), ext.end());
  run_sections(sections_, steady_state_, ext.front(), ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.end() - static_cast<std::ptrdiff_t>(pad)};
}

Tensor bandpass(const Tensor& signal, double fs, double low_hz, double high_hz) {
  if (signal.maps() != 1) throw std::invalid_argument("bandpass: expected a single-map signal");
  const ButterworthBandpass filter(kBandpassPrototypeOrder, low_hz, high_hz, fs);
  Tensor out(signal.channels(), signal.time(), 1);
  const auto n = signal.time();
  for (std::size_t c = 0; c < signal.channels(); ++c) {
    const std::span<const double> row(signal.row(c, 0), n);
    const auto y = filter.filtfilt(row);
    std::copy(y.begin(), y.end(), out.row(c, 0));
  }
  return out;
}

RawRecord bandpass(const RawRecord& record, double low_hz, double high_hz) {
  RawRecord out = record;
  out.samples = bandpass(record.samples, record.fs, low_hz, high_hz);
  return out;
}

EpochSet bandpass(const EpochSet& set, double low_hz, double high_hz) {
  EpochSet out = set;
  for (auto& trial : out.trials) trial = bandpass(trial, set.fs, low_hz, high_hz);
  return out;
}

RawRecord large_laplacian(const RawRecord& record) {
  if (record.montage.empty()) throw std::invalid_argument("large_laplacian: montage is empty");
  record.validate();
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < record.channel_names.size(); ++c) index[record.channel_names[c]] = c;

  RawRecord out = record;
  const std::size_t n = record.samples.time();
  for (std::size_t c = 0; c < record.channel_names.size(); ++c) {
    const auto it = record.montage.find(record.channel_names[c]);
    if (it == record.montage.end() || it->second.empty()) continue;
    const auto& neighbours = it->second;
    const auto count = static_cast<double>(neighbours.size());
    for (std::size_t t = 0; t < n; ++t) {
      double sum = 0.0;
      for (const auto& name : neighbours) sum += record.samples(index.at(name), t, 0);
      out.samples(c, t, 0) = record.samples(c, t, 0) - sum / count;
    }
  }
  return out;
}

Tensor baseline_correct(const Tensor& epoch, std::span<const double> baseline_mean) {
  if (baseline_mean.size() != epoch.channels()) {
    throw std::invalid_argument("baseline_correct: " + std::to_string(baseline_mean.size()) +
                                " baseline values for " + std::to_string(epoch.channels()) + " channels");
  }
  Tensor out = epoch;
  for (std::size_t c = 0; c < epoch.channels(); ++c) {
    for (std::size_t t = 0; t < epoch.time(); ++t) {
      for (std::size_t f = 0; f < epoch.maps(); ++f) out(c, t, f) -= baseline_mean[c];
    }
  }
  return out;
}

NormStats fit_normalization(const EpochSet& train) {
  if (train.trials.empty()) throw std::invalid_argument("fit_normalization: empty training set");
  const std::size_t n_c = train.n_channels();
  NormStats stats{std::vector<double>(n_c, 0.0), std::vector<double>(n_c, 0.0)};
  double count = 0.0;
  for (const auto& trial : train.trials) count += static_cast<double>(trial.time());
  for (std::size_t c = 0; c < n_c; ++c) {
    double sum = 0.0;
    for (const auto& trial : train.trials) {
      for (std::size_t t = 0; t < trial.time(); ++t) sum += trial(c, t, 0);
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& trial : train.trials) {
      for (std::size_t t = 0; t < trial.time(); ++t) {
        const double d = trial(c, t, 0) - mean;
        ss += d * d;
      }
    }
    const double sd = std::sqrt(ss / count);
    if (!(sd > 0.0)) {
      const std::string name = c < train.channel_names.size() ? train.channel_names[c] : std::to_string(c);
      throw std::invalid_argument("fit_normalization: channel '" + name + "' has zero variance");
    }
    stats.mean[c] = mean;
    stats.std[c] = sd;
  }
  return stats;
}

Tensor apply_normalization(const NormStats& stats, const Tensor& signal) {
  if (stats.mean.size() != signal.channels() || stats.std.size() != signal.channels()) {
    throw std::invalid_argument("apply_normalization: statistics for " + std::to_string(stats.mean.size()) +
                                " channels, signal has " + std::to_string(signal.channels()));
  }
  Tensor out = signal;
  for (std::size_t c = 0; c < signal.channels(); ++c) {
    const double inv = 1.0 / stats.std[c];
    for (std::size_t t = 0; t < signal.time(); ++t) {
      for (std::size_t f = 0; f < signal.maps(); ++f) out(c, t, f) = (signal(c, t, f) - stats.mean[c]) * inv;
    }
  }
  return out;
}

EpochSet apply_normalization(const NormStats& stats, const EpochSet& epochs) {
  EpochSet out = epochs;
  for (auto& trial : out.trials) trial = apply_normalization(stats, trial);
  return out;
}

Tensor invert_normalization(const NormStats& stats, const Tensor& signal) {
  Tensor out = signal;
  for (std::size_t c = 0; c < signal.channels(); ++c) {
    for (std::size_t t = 0; t < signal.time(); ++t) {
      for (std::size_t f = 0; f < signal.maps(); ++f) out(c, t, f) = signal(c, t, f) * stats.std[c] + stats.mean[c];
    }
  }
  return out;
}

Tensor crop_epoch(const Tensor& epoch, double drop_head_s, double drop_tail_s, double fs) {
  if (drop_head_s < 0.0 || drop_tail_s < 0.0) throw std::invalid_argument("crop_epoch: negative crop");
  const auto head = static_cast<std::size_t>(std::llround(fs * drop_head_s));
  const auto total = static_cast<std::size_t>(std::llround(fs * (drop_head_s + drop_tail_s)));
  if (total >= epoch.time()) {
    throw std::invalid_argument("crop_epoch: removing " + std::to_string(total) + " of " +
                                std::to_string(epoch.time()) + " samples leaves nothing");
  }
  const std::size_t keep = epoch.time() - total;
  Tensor out(epoch.channels(), keep, epoch.maps());
  for (std::size_t c = 0; c < epoch.channels(); ++c) {
    std::copy_n(epoch.row(c, head), keep * epoch.maps(), out.row(c, 0));
  }
  return out;
}

EpochSet crop_epochs(const EpochSet& set, double drop_head_s, double drop_tail_s) {
  EpochSet out = set;
  for (auto& trial : out.trials) trial = crop_epoch(trial, drop_head_s, drop_tail_s, set.fs);
  return out;
}

}  // namespace msnn
