#pragma once

#include "msnn/dataset.hpp"
#include "msnn/evaluation.hpp"
#include "msnn/model.hpp"
#include "msnn/training.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msnn::cli {

// Bad flags, unknown keys and conflicting settings: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthSettings {
  std::size_t trials = 200;
  std::size_t channels = 8;
  std::size_t samples = 256;
  double fs = 128.0;
  double noise_sigma = 1.0;
  double snr = 1.0;
  std::size_t harmonics = 2;
  double duration_s = 600.0;
  std::size_t events = 3;
  double event_s = 30.0;
  double min_gap_s = 10.0;
  double amplitude_ratio = 3.0;
  std::size_t records = 1;
};

struct RunConfig {
  MsnnConfig model;  // n_c and n_T come from the data
  std::string preset;  // "", "mi" or "ssvep"
  bool kernels_explicit = false;
  std::size_t model_fs = 0;  // 0: data rate
  std::size_t model_n_o = 0;  // 0: data classes
  TrainConfig train;
  PreprocConfig preproc;
  EpochExtraction extraction;
  DetectionConfig detection;
  bool online_timing = true;
  std::size_t stride_samples = 1;
  SynthSettings synth;
  std::uint64_t seed = 0;
  bool seed_set = false;

  std::string config_path;
  std::vector<std::string> overrides;  // "section.key=value", in the order applied

  // Sets one "section.key"; throws UsageError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Every key in a fixed order, used for the resolved config file.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  // Applies preset and seed fallbacks; throws UsageError on conflicts.
  void resolve(const char* env_seed);
};

// key=value lines with [section] headers; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);

std::vector<std::size_t> parse_size_list(const std::string& s);
std::string format_double(double v);

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv);

}  // namespace msnn::cli
