#include "msnn/evaluation.hpp"

#include "msnn/preproc.hpp"
#include "msnn/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace msnn {

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : counts(n_classes, std::vector<std::size_t>(n_classes, 0)) {}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return t;
}

std::vector<std::vector<double>> ConfusionMatrix::normalized() const {
  std::vector<std::vector<double>> out(counts.size(), std::vector<double>(counts.size(), 0.0));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto row_total = std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0});
    if (row_total == 0) continue;
    for (std::size_t j = 0; j < counts.size(); ++j) {
      out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(row_total);
    }
  }
  return out;
}

double ConfusionMatrix::accuracy() const {
  std::size_t diag = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) diag += counts[i][i];
  const std::size_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(t);
}

int argmax(const std::vector<double>& p) {
  if (p.empty()) throw std::invalid_argument("argmax: empty vector");
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

EvalResult evaluate_predictions(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                                std::size_t n_classes) {
  if (probs.size() != labels.size()) throw std::invalid_argument("evaluate: prediction and label counts differ");
  EvalResult r;
  r.confusion = ConfusionMatrix(n_classes);
  r.probs = probs;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw std::invalid_argument("evaluate: label " + std::to_string(labels[i]) + " out of range");
    }
    const int pred = argmax(probs[i]);
    r.predictions.push_back(pred);
    ++r.confusion.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred)];
    correct += pred == labels[i];
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < n_classes; ++j) {
      predicted += r.confusion.counts[j][c];
      actual += r.confusion.counts[c][j];
    }
    const double tp = static_cast<double>(r.confusion.counts[c][c]);
    r.precision.push_back(predicted ? tp / static_cast<double>(predicted) : 0.0);
    r.recall.push_back(actual ? tp / static_cast<double>(actual) : 0.0);
  }
  return r;
}

EvalResult evaluate(const MsnnModel& model, const EpochSet& test) {
  if (static_cast<std::size_t>(test.n_classes) > model.config.n_o) {
    throw std::invalid_argument("evaluate: data has more classes than the model outputs");
  }
  return evaluate_predictions(predict_proba(model, test.trials), test.labels, model.config.n_o);
}

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["n"] = predictions.size();
  j["confusion"] = confusion.counts;
  j["confusion_normalized"] = confusion.normalized();
  j["precision"] = precision;
  j["recall"] = recall;
  return j.dump(2);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<double> sliding_window_trace(const MsnnModel& model, const ContinuousRecord& record, double window_s,
                                         std::size_t stride_samples, int positive_class, std::size_t jobs) {
  if (stride_samples == 0) throw std::invalid_argument("sliding_window_trace: stride must be >= 1");
  const auto win = static_cast<std::size_t>(std::llround(window_s * record.fs));
  if (win > record.n_samples()) {
    throw std::invalid_argument("sliding_window_trace: window of " + std::to_string(win) +
                                " samples is longer than the record (" + std::to_string(record.n_samples()) + ")");
  }
  if (win != model.config.n_T) {
    throw std::invalid_argument("sliding_window_trace: window of " + std::to_string(win) +
                                " samples does not match the model input length " + std::to_string(model.config.n_T));
  }
  if (positive_class < 0 || static_cast<std::size_t>(positive_class) >= model.config.n_o) {
    throw std::out_of_range("sliding_window_trace: positive class out of range");
  }
  const std::size_t n_windows = (record.n_samples() - win) / stride_samples + 1;
  std::vector<double> trace(n_windows);
  const std::size_t chunk = 32;
  const std::size_t n_chunks = (n_windows + chunk - 1) / chunk;
  parallel_for(n_chunks, jobs, [&](std::size_t ci) {
    Batch batch;
    const std::size_t lo = ci * chunk, hi = std::min(n_windows, lo + chunk);
    for (std::size_t i = lo; i < hi; ++i) {
      Tensor t(record.n_channels(), win, 1);
      for (std::size_t c = 0; c < record.n_channels(); ++c) {
        std::copy_n(record.samples.row(c, i * stride_samples), win, t.row(c, 0));
      }
      batch.push_back(std::move(t));
    }
    const auto probs = predict_proba(model, batch, chunk);
    for (std::size_t i = lo; i < hi; ++i) trace[i] = probs[i - lo][static_cast<std::size_t>(positive_class)];
  });
  return trace;
}

double DetectionResult::mean_latency() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& l : latency_s) {
    if (l) {
      sum += *l;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::string DetectionResult::to_json(bool include_trace) const {
  nlohmann::ordered_json j;
  j["threshold"] = config.threshold;
  j["min_hold_s"] = config.min_hold_s;
  j["margin_s"] = config.margin_s;
  j["time_offset_s"] = config.time_offset_s;
  j["events"] = latency_s.size();
  j["detected_events"] = detected_events;
  j["false_detections"] = false_detections;
  j["detections"] = detections;
  auto& lat = j["latency_s"] = nlohmann::ordered_json::array();
  for (const auto& l : latency_s) lat.push_back(l ? nlohmann::ordered_json(*l) : nlohmann::ordered_json(nullptr));
  const double ml = mean_latency();
  j["mean_latency_s"] = std::isnan(ml) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(ml);
  if (include_trace) j["trace"] = trace;
  return j.dump(2);
}

DetectionResult detect_onsets(const std::vector<double>& trace, const DetectionConfig& cfg, double fs,
                              std::size_t stride_samples, const std::vector<Annotation>& events) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw std::invalid_argument("detect_onsets: threshold must lie in (0, 1)");
  if (!(fs > 0.0) || stride_samples == 0) throw std::invalid_argument("detect_onsets: bad rate or stride");
  if (cfg.min_hold_s < 0.0 || cfg.margin_s < 0.0) throw std::invalid_argument("detect_onsets: negative hold or margin");
  DetectionResult r;
  r.trace = trace;
  r.config = cfg;
  r.latency_s.assign(events.size(), std::nullopt);

  const double dt = static_cast<double>(stride_samples) / fs;
  const auto hold = static_cast<std::size_t>(std::llround(cfg.min_hold_s / dt));
  const auto time_of = [&](std::size_t i) { return cfg.time_offset_s + static_cast<double>(i) * dt; };

  std::size_t i = 0;
  while (i < trace.size()) {
    if (trace[i] < cfg.threshold) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < trace.size() && trace[end] >= cfg.threshold) ++end;
    const std::size_t fire = i + hold;
    if (fire < end) {
      r.detections.push_back(static_cast<std::size_t>(std::llround(time_of(fire) * fs)));
      const double held_lo = time_of(fire), held_hi = time_of(end - 1);
      bool matched = false;
      for (std::size_t e = 0; e < events.size(); ++e) {
        const double on = static_cast<double>(events[e].onset) / fs;
        const double off = static_cast<double>(events[e].offset) / fs;
        const double lo = on - cfg.margin_s, hi = off + cfg.margin_s;
        if (held_hi < lo || held_lo > hi) continue;
        matched = true;
        const double first = std::max(held_lo, lo);
        const double latency = std::max(0.0, first - on);
        if (!r.latency_s[e] || latency < *r.latency_s[e]) r.latency_s[e] = latency;
      }
      if (!matched) ++r.false_detections;
    }
    i = end;
  }
  for (const auto& l : r.latency_s) r.detected_events += l.has_value();
  return r;
}

Aggregate aggregate_folds(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("aggregate_folds: no reports");
  Aggregate a;
  a.n = values.size();
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(a.n));
  if (a.n == 1) a.flag = "n=1";
  return a;
}

std::map<std::string, Aggregate> aggregate_folds(const std::map<std::string, std::vector<double>>& metrics) {
  std::map<std::string, Aggregate> out;
  for (const auto& [name, values] : metrics) out[name] = aggregate_folds(values);
  return out;
}

EpochSet preprocess_epochs(const EpochSet& data, const PreprocConfig& cfg) {
  EpochSet out = cfg.bandpass ? bandpass(data, cfg.low_hz, cfg.high_hz) : data;
  if (cfg.crop_head_s > 0.0 || cfg.crop_tail_s > 0.0) out = crop_epochs(out, cfg.crop_head_s, cfg.crop_tail_s);
  return out;
}

FitResult train_model(const EpochSet& train, const MsnnConfig& model_cfg, const TrainConfig& train_cfg,
                      bool normalize) {
  train_cfg.validate();
  // Same split fit() would draw; statistics come from the training part only.
  const auto split =
      split_train_val(train.labels, train.n_classes, train_cfg.val_fraction, Rng::derive(train_cfg.seed, 0));
  EpochSet tr = train.subset(split.train);
  EpochSet va = train.subset(split.val);
  std::optional<NormStats> stats;
  if (normalize) {
    stats = fit_normalization(tr);
    tr = apply_normalization(*stats, tr);
    va = apply_normalization(*stats, va);
  }
  FitResult res = fit(MsnnModel::build(model_cfg), tr, va, train_cfg);
  res.report.warnings.insert(res.report.warnings.begin(), split.warnings.begin(), split.warnings.end());
  res.best.norm = stats;
  return res;
}

EpochSet prepare_for_model(const MsnnModel& model, const EpochSet& data) {
  return model.norm ? apply_normalization(*model.norm, data) : data;
}

namespace {

nlohmann::ordered_json aggregate_json(const std::map<std::string, Aggregate>& agg) {
  nlohmann::ordered_json j;
  for (const auto& [name, a] : agg) {
    j[name] = {{"mean", a.mean}, {"std", a.std}, {"n", a.n}};
    if (!a.flag.empty()) j[name]["flag"] = a.flag;
  }
  return j;
}

}  // namespace

std::string KFoldReport::to_json() const {
  nlohmann::ordered_json j;
  j["k"] = folds.size();
  j["aggregate"] = aggregate_json(aggregate);
  j["warnings"] = warnings;
  auto& arr = j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : folds) {
    arr.push_back({{"fold", f.fold},
                   {"test_accuracy", f.test.accuracy},
                   {"n_test", f.test.predictions.size()},
                   {"best_epoch", f.train.best_epoch},
                   {"epochs_run", f.train.epochs.size()},
                   {"confusion", f.test.confusion.counts},
                   {"model_seed", f.model_seed},
                   {"train_seed", f.train_seed}});
  }
  return j.dump(2);
}

KFoldReport run_kfold(const EpochSet& data, const MsnnConfig& model_cfg, const TrainConfig& train_cfg,
                      std::size_t k, std::uint64_t seed, bool normalize, std::size_t jobs) {
  data.validate();
  const FoldPlan plan = kfold(data.labels, data.n_classes, k, Rng::derive(seed, 0));
  KFoldReport rep;
  rep.warnings = plan.warnings;
  rep.folds.resize(k);
  parallel_for(k, jobs, [&](std::size_t f) {
    MsnnConfig mc = model_cfg;
    TrainConfig tc = train_cfg;
    mc.seed = Rng::derive(seed, 1000 + f);
    tc.seed = Rng::derive(seed, 2000 + f);
    FitResult fit_res = train_model(data.subset(plan.folds[f].train), mc, tc, normalize);
    const EpochSet test = prepare_for_model(fit_res.best, data.subset(plan.folds[f].test));
    rep.folds[f] = FoldReport{f, evaluate(fit_res.best, test), std::move(fit_res.report), mc.seed, tc.seed};
  });
  std::map<std::string, std::vector<double>> metrics;
  for (const auto& f : rep.folds) {
    metrics["accuracy"].push_back(f.test.accuracy);
    metrics["best_epoch"].push_back(static_cast<double>(f.train.best_epoch));
  }
  rep.aggregate = aggregate_folds(metrics);
  return rep;
}

std::string LoroReport::to_json() const {
  nlohmann::ordered_json j;
  j["events"] = events;
  j["detected"] = detected;
  j["false_detections"] = false_detections;
  j["mean_latency_s"] = mean_latency_s;
  auto& arr = j["splits"] = nlohmann::ordered_json::array();
  for (const auto& s : splits) {
    auto d = nlohmann::ordered_json::parse(s.detection.to_json());
    d["test_record"] = s.test_record;
    d["best_epoch"] = s.train.best_epoch;
    arr.push_back(d);
  }
  return j.dump(2);
}

LoroReport run_loro(const std::vector<ContinuousRecord>& records, const MsnnConfig& model_cfg,
                    const TrainConfig& train_cfg, const LoroConfig& cfg, std::uint64_t seed, std::size_t jobs) {
  std::vector<bool> flags;
  for (const auto& r : records) flags.push_back(r.has_events());
  const auto splits = leave_one_record_out(flags);
  DetectionConfig det = cfg.detection;
  if (cfg.online_timing) det.time_offset_s = cfg.extraction.window_s;

  LoroReport rep;
  rep.splits.resize(splits.size());
  parallel_for(splits.size(), jobs, [&](std::size_t s) {
    std::vector<ContinuousRecord> train_recs;
    for (auto i : splits[s].train) train_recs.push_back(records[i]);
    MsnnConfig mc = model_cfg;
    TrainConfig tc = train_cfg;
    mc.seed = Rng::derive(seed, 1000 + s);
    tc.seed = Rng::derive(seed, 2000 + s);
    FitResult fit_res = train_model(extract_epochs(train_recs, cfg.extraction), mc, tc, cfg.normalize);
    ContinuousRecord test = records[splits[s].test];
    if (fit_res.best.norm) test.samples = apply_normalization(*fit_res.best.norm, test.samples);
    const auto trace = sliding_window_trace(fit_res.best, test, cfg.extraction.window_s, cfg.stride_samples);
    rep.splits[s] = LoroSplitReport{splits[s].test,
                                    detect_onsets(trace, det, test.fs, cfg.stride_samples, test.events),
                                    std::move(fit_res.report)};
  });
  double lat_sum = 0.0;
  for (const auto& s : rep.splits) {
    rep.events += s.detection.latency_s.size();
    rep.detected += s.detection.detected_events;
    rep.false_detections += s.detection.false_detections;
    for (const auto& l : s.detection.latency_s) {
      if (l) lat_sum += *l;
    }
  }
  rep.mean_latency_s = rep.detected ? lat_sum / static_cast<double>(rep.detected)
                                    : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace msnn
