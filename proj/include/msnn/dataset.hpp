#pragma once

#include "msnn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace msnn {

enum class Paradigm : std::uint8_t { MotorImagery = 0, Ssvep = 1, Vigilance = 2, Seizure = 3, Synthetic = 4 };

std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& s);

// Labeled epochs of identical shape. Each trial is a Tensor [n_c, n_T, 1].
struct EpochSet {
  std::vector<Tensor> trials;
  std::vector<int> labels;
  double fs = 0.0;
  std::vector<std::string> channel_names;
  Paradigm paradigm = Paradigm::Synthetic;
  int n_classes = 2;

  std::size_t size() const { return trials.size(); }
  std::size_t n_channels() const { return trials.empty() ? channel_names.size() : trials.front().channels(); }
  std::size_t n_samples() const { return trials.empty() ? 0 : trials.front().time(); }

  EpochSet subset(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> class_counts() const;
  // Throws std::invalid_argument on inconsistent shapes, label range or
  // non-finite samples.
  void validate() const;
};

struct Annotation {
  std::size_t onset = 0;   // first sample inside the event
  std::size_t offset = 0;  // one past the last sample
  int label = 1;
};

// Unsegmented multichannel recording, samples as Tensor [n_c, n_samples, 1].
struct ContinuousRecord {
  Tensor samples;
  double fs = 0.0;
  std::vector<std::string> channel_names;
  std::vector<Annotation> events;

  std::size_t n_channels() const { return samples.channels(); }
  std::size_t n_samples() const { return samples.time(); }
  bool has_events() const { return !events.empty(); }
  void validate() const;
};

// EPCH file: "EPCH", u16 version, n_trials/n_c/n_T as u32, fs f64, n_o u16,
// paradigm byte, channel names (u16-prefixed UTF-8), u16 label per trial,
// f64 payload trial-major, trailing CRC32.
inline constexpr std::uint16_t kEpochFormatVersion = 1;
std::vector<std::uint8_t> encode_epochs(const EpochSet& set);
EpochSet decode_epochs(std::span<const std::uint8_t> bytes);
void write_epochs(const std::filesystem::path& path, const EpochSet& set);
EpochSet read_epochs(const std::filesystem::path& path);

// RCRD file: "RCRD", u16 version, n_c/n_samples as u32, fs f64, channel
// names, u32 event count then (onset u32, offset u32, label u16) per event,
// f64 payload channel-major, trailing CRC32.
inline constexpr std::uint16_t kRecordFormatVersion = 1;
std::vector<std::uint8_t> encode_record(const ContinuousRecord& rec);
ContinuousRecord decode_record(std::span<const std::uint8_t> bytes);
void write_record(const std::filesystem::path& path, const ContinuousRecord& rec);
ContinuousRecord read_record(const std::filesystem::path& path);

// PERCLOS-style score thresholds: < t1 awake (0), [t1, t2) tired (1), >= t2 drowsy (2).
std::vector<int> label_from_score(std::span<const double> scores, double t1, double t2);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Split> folds;
  std::vector<std::string> warnings;
};

// Stratified k-fold: every index is a test index in exactly one fold.
FoldPlan kfold(const std::vector<int>& labels, int n_classes, std::size_t k, std::uint64_t seed);

struct RecordSplit {
  std::vector<std::size_t> train;  // record indices
  std::size_t test = 0;
};

// One split per seizure record; non-seizure records are always in train.
std::vector<RecordSplit> leave_one_record_out(const std::vector<bool>& seizure_flags);

struct EpochExtraction {
  double window_s = 4.0;
  double stride_s = 1.0;
  // Negative windows must stay this far from any event.
  double guard_s = 0.0;
};

// Cuts a continuous record into labeled windows: label 1 when the window lies
// inside an event, 0 when it avoids all events; straddling windows are dropped.
EpochSet extract_epochs(const std::vector<ContinuousRecord>& records, const EpochExtraction& opt);

}  // namespace msnn
