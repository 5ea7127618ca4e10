#pragma once

#include "msnn/dataset.hpp"
#include "msnn/random.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace msnn {

// Coloured background: AR(1) low-pass of white noise scaled to standard
// deviation `sigma`, so power falls with frequency.
std::vector<double> pink_noise(std::size_t n, double sigma, double pole, Rng& rng);

struct BandpowerClass {
  double freq_hz = 10.0;
  std::vector<std::size_t> channels{3, 4};
  double amplitude = 1.0;
};

struct BandpowerParams {
  std::size_t n_trials = 200;
  std::size_t n_c = 8;
  std::size_t n_T = 256;
  double fs = 128.0;
  std::vector<BandpowerClass> classes{{10.0, {3, 4}, 1.0}, {22.0, {3, 4}, 1.0}};
  double noise_sigma = 1.0;
  double noise_pole = 0.9;
  std::uint64_t seed = 0;
};

struct SsvepParams {
  std::size_t n_trials = 200;
  std::size_t n_c = 8;
  std::size_t n_T = 256;
  double fs = 128.0;
  std::vector<double> freqs{5.45, 6.67, 8.57, 12.0};
  std::size_t harmonics = 2;  // fundamental plus harmonics at amplitude 1/h
  std::vector<std::size_t> channels{5, 6, 7};
  double amplitude = 1.0;
  double snr = 1.0;  // amplitude / noise sigma; infinity disables noise
  double noise_pole = 0.9;
  std::uint64_t seed = 0;
};

struct SeizureParams {
  double duration_s = 600.0;
  double fs = 64.0;
  std::size_t n_c = 4;
  std::size_t n_events = 3;
  double event_s = 30.0;
  double min_gap_s = 10.0;  // between events and at both record edges
  double burst_low_hz = 3.0;
  double burst_high_hz = 7.0;
  double amplitude_ratio = 3.0;  // burst RMS over background RMS
  double noise_sigma = 1.0;
  double noise_pole = 0.9;
  std::uint64_t seed = 0;
};

// Ground truth carried next to generated data.
struct SynthTruth {
  std::string generator;
  std::vector<std::vector<std::size_t>> informative_channels;  // per class
  std::vector<std::vector<double>> freqs_hz;                   // per class
  std::vector<Annotation> events;

  std::string to_json() const;
};

struct SynthEpochs {
  EpochSet data;
  SynthTruth truth;
};

struct SynthRecord {
  ContinuousRecord record;
  SynthTruth truth;
};

SynthEpochs synth_bandpower(const BandpowerParams& p);
SynthEpochs synth_ssvep(const SsvepParams& p);
SynthRecord synth_seizure_record(const SeizureParams& p);

std::vector<std::string> default_channel_names(std::size_t n_c);

}  // namespace msnn
