#include "msnn/synth.hpp"

#include "msnn/preproc.hpp"
#include "msnn/random.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace msnn {

std::vector<double> pink_noise(std::size_t n, double sigma, double pole, Rng& rng) {
  if (!(pole >= 0.0 && pole < 1.0)) throw std::invalid_argument("pink_noise: pole must lie in [0, 1)");
  std::vector<double> out(n);
  const double drive = std::sqrt(1.0 - pole * pole);
  double y = rng.normal();  // stationary start
  for (std::size_t i = 0; i < n; ++i) {
    y = pole * y + drive * rng.normal();
    out[i] = sigma * y;
  }
  return out;
}

std::vector<std::string> default_channel_names(std::size_t n_c) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n_c; ++c) names.push_back("ch" + std::to_string(c));
  return names;
}

std::string SynthTruth::to_json() const {
  nlohmann::ordered_json j;
  j["generator"] = generator;
  j["informative_channels"] = informative_channels;
  j["freqs_hz"] = freqs_hz;
  auto& ev = j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : events) ev.push_back({{"onset", e.onset}, {"offset", e.offset}, {"label", e.label}});
  return j.dump(2);
}

namespace {

void check_common(std::size_t n_trials, std::size_t n_c, std::size_t n_T, double fs) {
  if (n_trials == 0 || n_c == 0 || n_T == 0) throw std::invalid_argument("synth: sizes must be positive");
  if (!(fs > 0.0)) throw std::invalid_argument("synth: sampling rate must be positive");
}

void check_band(double f, double fs) {
  if (!(f > 0.0 && f < fs / 2.0)) {
    throw std::invalid_argument("synth: frequency " + std::to_string(f) + " Hz must lie in (0, fs/2 = " +
                                std::to_string(fs / 2.0) + ")");
  }
}

Tensor background(std::size_t n_c, std::size_t n_T, double sigma, double pole, Rng& rng) {
  Tensor t(n_c, n_T, 1);
  if (sigma == 0.0) return t;
  for (std::size_t c = 0; c < n_c; ++c) {
    const auto noise = pink_noise(n_T, sigma, pole, rng);
    std::copy(noise.begin(), noise.end(), t.row(c, 0));
  }
  return t;
}

}  // namespace

SynthEpochs synth_bandpower(const BandpowerParams& p) {
  check_common(p.n_trials, p.n_c, p.n_T, p.fs);
  if (p.classes.size() < 2) throw std::invalid_argument("synth_bandpower: need at least 2 classes");
  SynthEpochs out;
  out.truth.generator = "bandpower";
  for (const auto& cls : p.classes) {
    check_band(cls.freq_hz, p.fs);
    for (auto c : cls.channels) {
      if (c >= p.n_c) throw std::invalid_argument("synth_bandpower: channel " + std::to_string(c) + " out of range");
    }
    out.truth.informative_channels.push_back(cls.channels);
    out.truth.freqs_hz.push_back({cls.freq_hz});
  }
  EpochSet& set = out.data;
  set.fs = p.fs;
  set.channel_names = default_channel_names(p.n_c);
  set.paradigm = Paradigm::Synthetic;
  set.n_classes = static_cast<int>(p.classes.size());
  Rng rng(p.seed);
  for (std::size_t i = 0; i < p.n_trials; ++i) {
    const int y = static_cast<int>(i % p.classes.size());
    const auto& cls = p.classes[static_cast<std::size_t>(y)];
    Tensor t = background(p.n_c, p.n_T, p.noise_sigma, p.noise_pole, rng);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (auto c : cls.channels) {
      for (std::size_t n = 0; n < p.n_T; ++n) {
        t(c, n, 0) += cls.amplitude * std::sin(2.0 * std::numbers::pi * cls.freq_hz * static_cast<double>(n) / p.fs + phase);
      }
    }
    set.trials.push_back(std::move(t));
    set.labels.push_back(y);
  }
  return out;
}

SynthEpochs synth_ssvep(const SsvepParams& p) {
  check_common(p.n_trials, p.n_c, p.n_T, p.fs);
  if (p.freqs.size() < 2) throw std::invalid_argument("synth_ssvep: need at least 2 target frequencies");
  if (p.harmonics < 1) throw std::invalid_argument("synth_ssvep: harmonics must be >= 1");
  if (!(p.snr > 0.0)) throw std::invalid_argument("synth_ssvep: snr must be positive");
  for (auto c : p.channels) {
    if (c >= p.n_c) throw std::invalid_argument("synth_ssvep: channel " + std::to_string(c) + " out of range");
  }
  SynthEpochs out;
  out.truth.generator = "ssvep";
  for (double f : p.freqs) {
    std::vector<double> fs_list;
    for (std::size_t h = 1; h <= p.harmonics; ++h) {
      check_band(f * static_cast<double>(h), p.fs);
      fs_list.push_back(f * static_cast<double>(h));
    }
    out.truth.informative_channels.push_back(p.channels);
    out.truth.freqs_hz.push_back(fs_list);
  }
  EpochSet& set = out.data;
  set.fs = p.fs;
  set.channel_names = default_channel_names(p.n_c);
  set.paradigm = Paradigm::Ssvep;
  set.n_classes = static_cast<int>(p.freqs.size());
  const double sigma = std::isinf(p.snr) ? 0.0 : p.amplitude / p.snr;
  Rng rng(p.seed);
  for (std::size_t i = 0; i < p.n_trials; ++i) {
    const int y = static_cast<int>(i % p.freqs.size());
    const double f = p.freqs[static_cast<std::size_t>(y)];
    Tensor t = background(p.n_c, p.n_T, sigma, p.noise_pole, rng);
    std::vector<double> phases(p.harmonics);
    for (auto& ph : phases) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (auto c : p.channels) {
      for (std::size_t n = 0; n < p.n_T; ++n) {
        const double time = static_cast<double>(n) / p.fs;
        for (std::size_t h = 1; h <= p.harmonics; ++h) {
          t(c, n, 0) += p.amplitude / static_cast<double>(h) *
                        std::sin(2.0 * std::numbers::pi * f * static_cast<double>(h) * time + phases[h - 1]);
        }
      }
    }
    set.trials.push_back(std::move(t));
    set.labels.push_back(y);
  }
  return out;
}

SynthRecord synth_seizure_record(const SeizureParams& p) {
  if (!(p.fs > 0.0) || p.n_c == 0 || !(p.duration_s > 0.0) || !(p.event_s > 0.0)) {
    throw std::invalid_argument("synth_seizure_record: durations, rate and channel count must be positive");
  }
  check_band(p.burst_low_hz, p.fs);
  check_band(p.burst_high_hz, p.fs);
  const auto n = static_cast<std::size_t>(std::llround(p.duration_s * p.fs));
  const auto ev_len = static_cast<std::size_t>(std::llround(p.event_s * p.fs));
  const auto gap = static_cast<std::size_t>(std::llround(p.min_gap_s * p.fs));
  const std::size_t needed = p.n_events * ev_len + (p.n_events + 1) * gap;
  if (needed > n) {
    throw std::invalid_argument("synth_seizure_record: " + std::to_string(p.n_events) + " events of " +
                                std::to_string(p.event_s) + " s with " + std::to_string(p.min_gap_s) +
                                " s gaps do not fit in " + std::to_string(p.duration_s) + " s");
  }
  Rng rng(p.seed);
  SynthRecord out;
  out.truth.generator = "seizure";
  ContinuousRecord& rec = out.record;
  rec.fs = p.fs;
  rec.channel_names = default_channel_names(p.n_c);
  rec.samples = background(p.n_c, n, p.noise_sigma, p.noise_pole, rng);

  // Spread the slack over the n_events + 1 gaps at random.
  const std::size_t slack = n - needed;
  std::vector<double> w(p.n_events + 1);
  double wsum = 0.0;
  for (auto& v : w) wsum += (v = rng.uniform() + 1e-9);
  std::size_t pos = 0, used = 0;
  for (std::size_t e = 0; e < p.n_events; ++e) {
    const auto extra = static_cast<std::size_t>(std::floor(static_cast<double>(slack) * w[e] / wsum));
    used += extra;
    pos += gap + extra;
    rec.events.push_back({pos, pos + ev_len, 1});
    pos += ev_len;
  }
  (void)used;

  const ButterworthBandpass filter(kBandpassPrototypeOrder, p.burst_low_hz, p.burst_high_hz, p.fs);
  const double target = p.amplitude_ratio * p.noise_sigma;
  for (const auto& ev : rec.events) {
    for (std::size_t c = 0; c < p.n_c; ++c) {
      std::vector<double> white(ev_len);
      for (auto& v : white) v = rng.normal();
      std::vector<double> burst = filter.filter(white);
      double ss = 0.0;
      for (double v : burst) ss += v * v;
      const double scale = target / std::sqrt(ss / static_cast<double>(ev_len));
      for (std::size_t i = 0; i < ev_len; ++i) rec.samples(c, ev.onset + i, 0) += scale * burst[i];
    }
  }
  out.truth.events = rec.events;
  out.truth.freqs_hz.push_back({p.burst_low_hz, p.burst_high_hz});
  std::vector<std::size_t> all(p.n_c);
  for (std::size_t c = 0; c < p.n_c; ++c) all[c] = c;
  out.truth.informative_channels.push_back(all);
  rec.validate();
  return out;
}

}  // namespace msnn
