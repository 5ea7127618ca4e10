#pragma once

#include "msnn/dataset.hpp"
#include "msnn/model.hpp"
#include "msnn/training.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace msnn {

struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;  // rows = true, cols = predicted

  explicit ConfusionMatrix(std::size_t n_classes = 0);
  std::size_t n_classes() const { return counts.size(); }
  std::size_t total() const;
  // Row-normalized; all-zero rows stay zero.
  std::vector<std::vector<double>> normalized() const;
  double accuracy() const;  // trace / total
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<double> precision;  // per class; 0 when the class is never predicted
  std::vector<double> recall;     // per class; 0 when the class is absent
  std::vector<int> predictions;
  std::vector<std::vector<double>> probs;

  std::string to_json() const;
};

// argmax with ties to the lowest class index.
int argmax(const std::vector<double>& p);

EvalResult evaluate_predictions(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                                std::size_t n_classes);
EvalResult evaluate(const MsnnModel& model, const EpochSet& test);

// trace[i] = P(positive_class | samples [i*stride, i*stride + window)).
// The record is used as given: preprocessing must already be applied.
std::vector<double> sliding_window_trace(const MsnnModel& model, const ContinuousRecord& record, double window_s,
                                         std::size_t stride_samples, int positive_class = 1, std::size_t jobs = 1);

struct DetectionConfig {
  double threshold = 0.8;
  double min_hold_s = 1.0;
  double margin_s = 5.0;
  // Time of trace[0] in seconds. 0 stamps each window at its start; the
  // window length stamps it at its end (online timing).
  double time_offset_s = 0.0;
};

struct DetectionResult {
  std::vector<double> trace;
  std::vector<std::size_t> detections;  // record sample at which each detection fires
  std::vector<std::optional<double>> latency_s;  // per annotated event; empty = missed
  std::size_t false_detections = 0;
  std::size_t detected_events = 0;
  DetectionConfig config;

  double mean_latency() const;  // over detected events; NaN if none
  std::string to_json(bool include_trace = false) const;
};

// Fires when the trace stays >= threshold for min_hold_s. An annotated event
// counts as detected when some held sample falls in [onset - margin,
// offset + margin]; latency = max(0, first such time - onset). Held runs
// outside every such window are false detections.
DetectionResult detect_onsets(const std::vector<double>& trace, const DetectionConfig& cfg, double fs,
                              std::size_t stride_samples, const std::vector<Annotation>& events);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
  std::string flag;  // "n=1" for a single fold
};
Aggregate aggregate_folds(const std::vector<double>& values);
std::map<std::string, Aggregate> aggregate_folds(const std::map<std::string, std::vector<double>>& metrics);

struct PreprocConfig {
  bool bandpass = false;
  double low_hz = 4.0;
  double high_hz = 40.0;
  double crop_head_s = 0.0;
  double crop_tail_s = 0.0;
  bool normalize = true;
};

// Fold-independent steps: band-pass then crop.
EpochSet preprocess_epochs(const EpochSet& data, const PreprocConfig& cfg);

// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; exceptions are rethrown in index order.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Splits `train` 9:1 as fit() would, fits normalization on the training part
// only (when enabled) and attaches it to the returned model.
FitResult train_model(const EpochSet& train, const MsnnConfig& model_cfg, const TrainConfig& train_cfg,
                      bool normalize);
// Applies the model's attached normalization, if any.
EpochSet prepare_for_model(const MsnnModel& model, const EpochSet& data);

struct FoldReport {
  std::size_t fold = 0;
  EvalResult test;
  TrainReport train;
  std::uint64_t model_seed = 0;
  std::uint64_t train_seed = 0;
};

struct KFoldReport {
  std::vector<FoldReport> folds;
  std::map<std::string, Aggregate> aggregate;  // accuracy, best_epoch
  std::vector<std::string> warnings;

  std::string to_json() const;
};

// Stratified k-fold: train on k-1 folds, report held-out test-fold metrics.
// Seeds per fold come from (seed, fold index), so results do not depend on `jobs`.
KFoldReport run_kfold(const EpochSet& data, const MsnnConfig& model_cfg, const TrainConfig& train_cfg,
                      std::size_t k, std::uint64_t seed, bool normalize, std::size_t jobs = 1);

struct LoroSplitReport {
  std::size_t test_record = 0;
  DetectionResult detection;
  TrainReport train;
};

struct LoroReport {
  std::vector<LoroSplitReport> splits;
  std::size_t events = 0;
  std::size_t detected = 0;
  std::size_t false_detections = 0;
  double mean_latency_s = 0.0;  // over all detected events

  std::string to_json() const;
};

struct LoroConfig {
  EpochExtraction extraction;
  DetectionConfig detection;
  bool online_timing = true;  // stamp each window at its end
  std::size_t stride_samples = 1;
  bool normalize = true;
};

LoroReport run_loro(const std::vector<ContinuousRecord>& records, const MsnnConfig& model_cfg,
                    const TrainConfig& train_cfg, const LoroConfig& cfg, std::uint64_t seed, std::size_t jobs = 1);

}  // namespace msnn
