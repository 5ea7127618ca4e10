#include "cli.hpp"

#include "msnn/checkpoint.hpp"
#include "msnn/interpret.hpp"
#include "msnn/random.hpp"
#include "msnn/spectrum.hpp"
#include "msnn/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace msnn::cli {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class RunDir {
 public:
  RunDir(const fs::path& dir, std::string command, std::vector<std::string> argv, const RunConfig& cfg)
      : dir_(dir), command_(std::move(command)), argv_(std::move(argv)), cfg_(cfg), started_(utc_now()) {
    std::error_code ec;
    if (fs::exists(dir_, ec) && !(fs::is_directory(dir_) && fs::is_empty(dir_))) {
      throw std::runtime_error("run directory " + dir_.string() + " exists and is not empty");
    }
    fs::create_directories(dir_);
    write_text("config.txt", cfg_.to_text());
  }

  void write_bytes(const std::string& name, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    outputs_.emplace_back(name, bytes.size());
  }

  void write_text(const std::string& name, const std::string& text) {
    write_bytes(name, std::vector<std::uint8_t>(text.begin(), text.end()));
  }

  ojson extra = ojson::object();

  void finish() {
    ojson m;
    m["command"] = command_;
    m["argv"] = argv_;
    m["config_file"] = cfg_.config_path;
    m["overrides"] = cfg_.overrides;
    m["seed"] = cfg_.seed;
    m["started_utc"] = started_;
    m["finished_utc"] = utc_now();
    auto& outs = m["outputs"] = ojson::array();
    for (const auto& [name, size] : outputs_) outs.push_back({{"name", name}, {"bytes", size}});
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    std::ofstream out(dir_ / "manifest.json");
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write manifest");
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> argv_;
  const RunConfig& cfg_;
  std::string started_;
  std::vector<std::pair<std::string, std::size_t>> outputs_;
};

struct Invocation {
  std::vector<std::string> argv;
  std::string out;
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> flags;  // key, value from named flags
  std::size_t jobs = 1;
};

RunConfig build_config(const Invocation& inv, const std::vector<std::string>& extras) {
  RunConfig cfg;
  if (!inv.config_file.empty()) {
    cfg.config_path = inv.config_file;
    apply_config_text(cfg, read_text(inv.config_file));
  }
  auto apply = [&](const std::string& key, const std::string& value) {
    cfg.set(key, value);
    cfg.overrides.push_back(key + "=" + value);
  };
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos) {
      throw UsageError("unexpected argument '" + tok + "'");
    }
    const std::string body = tok.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      apply(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw UsageError(tok + " needs a value");
      apply(body, extras[++i]);
    }
  }
  for (const auto& [key, value] : inv.flags) apply(key, value);
  cfg.resolve(std::getenv("MSNN_SEED"));
  return cfg;
}

bool has_ext(const std::string& path, const std::string& ext) { return fs::path(path).extension() == ext; }

EpochSet load_training_data(const std::vector<std::string>& paths, const RunConfig& cfg) {
  if (paths.empty()) throw UsageError("--data is required");
  bool all_records = true;
  for (const auto& p : paths) all_records = all_records && has_ext(p, ".rcrd");
  if (all_records) {
    std::vector<ContinuousRecord> recs;
    for (const auto& p : paths) recs.push_back(read_record(p));
    return extract_epochs(recs, cfg.extraction);
  }
  if (paths.size() != 1) throw UsageError("--data takes one EPCH file or a list of RCRD files");
  return read_epochs(paths.front());
}

MsnnConfig model_config(const RunConfig& cfg, std::size_t n_c, std::size_t n_T, double fs, std::size_t n_classes) {
  MsnnConfig mc = cfg.model;
  mc.n_c = n_c;
  mc.n_T = n_T;
  mc.f_s = cfg.model_fs ? cfg.model_fs : static_cast<std::size_t>(std::llround(fs));
  mc.n_o = cfg.model_n_o ? cfg.model_n_o : n_classes;
  mc.seed = Rng::derive(cfg.seed, 10);
  mc.validate();
  return mc;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = Rng::derive(cfg.seed, 11);
  tc.validate();
  return tc;
}

std::string curve_csv(const TrainReport& r) {
  std::string s = "epoch,train_loss,val_loss,val_accuracy,lr\n";
  for (const auto& e : r.epochs) {
    s += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
         format_double(e.val_accuracy) + "," + format_double(e.lr) + "\n";
  }
  return s;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string s = "true";
  for (std::size_t j = 0; j < cm.n_classes(); ++j) s += ",pred" + std::to_string(j);
  s += "\n";
  for (std::size_t i = 0; i < cm.n_classes(); ++i) {
    s += std::to_string(i);
    for (std::size_t j = 0; j < cm.n_classes(); ++j) s += "," + std::to_string(cm.counts[i][j]);
    s += "\n";
  }
  return s;
}

// ---- synth

int cmd_synth(const std::string& kind, const Invocation& inv, const RunConfig& cfg) {
  const auto& s = cfg.synth;
  if (kind == "seizure") {
    std::vector<SynthRecord> recs;
    for (std::size_t i = 0; i < s.records; ++i) {
      SeizureParams p;
      p.duration_s = s.duration_s;
      p.fs = s.fs;
      p.n_c = s.channels;
      p.n_events = s.events;
      p.event_s = s.event_s;
      p.min_gap_s = s.min_gap_s;
      p.amplitude_ratio = s.amplitude_ratio;
      p.noise_sigma = s.noise_sigma;
      p.seed = Rng::derive(cfg.seed, i);
      recs.push_back(synth_seizure_record(p));
    }
    RunDir run(inv.out, "synth seizure", inv.argv, cfg);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "record_%03zu", i);
      run.write_bytes(std::string(name) + ".rcrd", encode_record(recs[i].record));
      run.write_text(std::string(name) + ".truth.json", recs[i].truth.to_json() + "\n");
    }
    run.finish();
    std::cout << "wrote " << recs.size() << " record(s) to " << inv.out << "\n";
    return 0;
  }

  SynthEpochs out;
  if (kind == "bandpower") {
    BandpowerParams p;
    p.n_trials = s.trials;
    p.n_c = s.channels;
    p.n_T = s.samples;
    p.fs = s.fs;
    p.noise_sigma = s.noise_sigma;
    p.seed = cfg.seed;
    out = synth_bandpower(p);
  } else {
    SsvepParams p;
    p.n_trials = s.trials;
    p.n_c = s.channels;
    p.n_T = s.samples;
    p.fs = s.fs;
    p.snr = s.snr;
    p.harmonics = s.harmonics;
    p.seed = cfg.seed;
    out = synth_ssvep(p);
  }
  RunDir run(inv.out, "synth " + kind, inv.argv, cfg);
  run.write_bytes("data.epch", encode_epochs(out.data));
  run.write_text("data.truth.json", out.truth.to_json() + "\n");
  run.finish();
  std::cout << "wrote " << out.data.size() << " trials (" << out.data.n_classes << " classes) to " << inv.out
            << "\n";
  return 0;
}

// ---- train

int cmd_train(const std::vector<std::string>& data_paths, const Invocation& inv, const RunConfig& cfg) {
  const EpochSet data = preprocess_epochs(load_training_data(data_paths, cfg), cfg.preproc);
  data.validate();
  const MsnnConfig mc = model_config(cfg, data.n_channels(), data.n_samples(), data.fs,
                                     static_cast<std::size_t>(data.n_classes));
  const TrainConfig tc = train_config(cfg);

  RunDir run(inv.out, "train", inv.argv, cfg);
  FitResult res;
  try {
    res = train_model(data, mc, tc, cfg.preproc.normalize);
  } catch (const TrainingDiverged& e) {
    run.write_text("train_report.json", e.report().to_json() + "\n");
    run.extra["error"] = e.what();
    run.finish();
    throw;
  }
  run.write_bytes("model.ckpt", encode_checkpoint(res.best));
  run.write_text("train_report.json", res.report.to_json() + "\n");
  run.write_text("train_curve.csv", curve_csv(res.report));
  run.finish();
  const auto& best = res.report.epochs.at(res.report.best_epoch);
  std::cout << "best epoch " << res.report.best_epoch << " val accuracy " << best.val_accuracy << "\n";
  return 0;
}

// ---- eval

int eval_epochs(const std::string& ckpt, const std::string& data_path, const Invocation& inv, const RunConfig& cfg) {
  const MsnnModel model = load(ckpt);
  const EpochSet data = prepare_for_model(model, preprocess_epochs(read_epochs(data_path), cfg.preproc));
  const EvalResult r = evaluate(model, data);
  RunDir run(inv.out, "eval", inv.argv, cfg);
  run.write_text("eval.json", r.to_json() + "\n");
  run.write_text("confusion.csv", confusion_csv(r.confusion));
  std::string pred = "trial,label,predicted";
  for (std::size_t j = 0; j < model.config.n_o; ++j) pred += ",p" + std::to_string(j);
  pred += "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    pred += std::to_string(i) + "," + std::to_string(data.labels[i]) + "," + std::to_string(r.predictions[i]);
    for (double p : r.probs[i]) pred += "," + format_double(p);
    pred += "\n";
  }
  run.write_text("predictions.csv", pred);
  run.finish();
  std::cout << "accuracy " << r.accuracy << " on " << data.size() << " trials\n";
  return 0;
}

int eval_records(const std::string& ckpt, const std::vector<std::string>& paths, const Invocation& inv,
                 const RunConfig& cfg) {
  const MsnnModel model = load(ckpt);
  std::vector<ContinuousRecord> recs;
  for (const auto& p : paths) {
    recs.push_back(read_record(p));
    if (recs.back().n_channels() != model.config.n_c) {
      throw std::invalid_argument(p + " has " + std::to_string(recs.back().n_channels()) +
                                  " channels, the checkpoint expects " + std::to_string(model.config.n_c));
    }
  }
  RunDir run(inv.out, "eval", inv.argv, cfg);
  auto& summary = run.extra["records"] = ojson::array();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ContinuousRecord rec = recs[i];
    if (model.norm) rec.samples = apply_normalization(*model.norm, rec.samples);
    const double window_s = static_cast<double>(model.config.n_T) / rec.fs;
    DetectionConfig det = cfg.detection;
    det.time_offset_s = cfg.online_timing ? window_s : 0.0;
    const auto trace = sliding_window_trace(model, rec, window_s, cfg.stride_samples, 1, inv.jobs);
    const DetectionResult d = detect_onsets(trace, det, rec.fs, cfg.stride_samples, rec.events);
    std::string csv = "time_s,probability\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
      const double t = det.time_offset_s + static_cast<double>(k * cfg.stride_samples) / rec.fs;
      csv += format_double(t) + "," + format_double(trace[k]) + "\n";
    }
    char name[32];
    std::snprintf(name, sizeof name, "record_%03zu", i);
    run.write_text(std::string(name) + ".detection.json", d.to_json() + "\n");
    run.write_text(std::string(name) + ".trace.csv", csv);
    summary.push_back({{"input", paths[i]},
                       {"detected", d.detected_events},
                       {"events", d.latency_s.size()},
                       {"false_detections", d.false_detections}});
    std::cout << paths[i] << ": " << d.detected_events << "/" << d.latency_s.size() << " events, "
              << d.false_detections << " false detections\n";
  }
  run.finish();
  return 0;
}

int eval_kfold(std::size_t k, const std::string& data_path, const Invocation& inv, const RunConfig& cfg) {
  const EpochSet data = preprocess_epochs(read_epochs(data_path), cfg.preproc);
  data.validate();
  const MsnnConfig mc = model_config(cfg, data.n_channels(), data.n_samples(), data.fs,
                                     static_cast<std::size_t>(data.n_classes));
  const TrainConfig tc = train_config(cfg);
  if (k < 2 || k > data.size()) throw UsageError("--kfold must lie in [2, n_trials]");
  RunDir run(inv.out, "eval", inv.argv, cfg);
  const KFoldReport rep = run_kfold(data, mc, tc, k, cfg.seed, cfg.preproc.normalize, inv.jobs);
  run.write_text("kfold.json", rep.to_json() + "\n");
  std::string csv = "fold,n_test,accuracy,best_epoch\n";
  for (const auto& f : rep.folds) {
    csv += std::to_string(f.fold) + "," + std::to_string(f.test.predictions.size()) + "," +
           format_double(f.test.accuracy) + "," + std::to_string(f.train.best_epoch) + "\n";
  }
  run.write_text("folds.csv", csv);
  run.finish();
  const auto& acc = rep.aggregate.at("accuracy");
  std::cout << k << "-fold accuracy " << acc.mean << " +/- " << acc.std << "\n";
  return 0;
}

int eval_loro(const std::vector<std::string>& paths, const Invocation& inv, const RunConfig& cfg) {
  std::vector<ContinuousRecord> recs;
  for (const auto& p : paths) recs.push_back(read_record(p));
  if (recs.size() < 2) throw UsageError("--loro needs at least two records");
  const double fs = recs.front().fs;
  const auto n_T = static_cast<std::size_t>(std::llround(cfg.extraction.window_s * fs));
  MsnnConfig mc = model_config(cfg, recs.front().n_channels(), n_T, fs, 2);
  const TrainConfig tc = train_config(cfg);
  LoroConfig lc;
  lc.extraction = cfg.extraction;
  lc.detection = cfg.detection;
  lc.online_timing = cfg.online_timing;
  lc.stride_samples = cfg.stride_samples;
  lc.normalize = cfg.preproc.normalize;
  RunDir run(inv.out, "eval", inv.argv, cfg);
  const LoroReport rep = run_loro(recs, mc, tc, lc, cfg.seed, inv.jobs);
  run.write_text("loro.json", rep.to_json() + "\n");
  std::string csv = "test_record,events,detected,false_detections,mean_latency_s\n";
  for (const auto& s : rep.splits) {
    csv += std::to_string(s.test_record) + "," + std::to_string(s.detection.latency_s.size()) + "," +
           std::to_string(s.detection.detected_events) + "," + std::to_string(s.detection.false_detections) +
           "," + format_double(s.detection.mean_latency()) + "\n";
  }
  run.write_text("splits.csv", csv);
  run.finish();
  std::cout << rep.detected << "/" << rep.events << " events detected, " << rep.false_detections
            << " false detections, mean latency " << rep.mean_latency_s << " s\n";
  return 0;
}

// ---- analyze

const std::vector<std::string> kAnalyses{"lrp", "relevance-spectrum", "patterns", "features", "psd"};

struct AnalyzeArgs {
  std::string checkpoint;
  std::string data;
  int target_class = -1;
  long trial = -1;
  double epsilon = 1e-6;
  std::string branch;
  std::string stage = "gap_concat";
  std::string channel = "0";
};

std::vector<std::size_t> selected_trials(const EpochSet& data, long trial) {
  if (trial >= 0 && static_cast<std::size_t>(trial) >= data.size()) {
    throw std::out_of_range("--trial " + std::to_string(trial) + " out of range (" + std::to_string(data.size()) +
                            " trials)");
  }
  if (trial >= 0) return {static_cast<std::size_t>(trial)};
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

std::vector<std::size_t> parse_branches(const std::string& spec, std::size_t n) {
  if (spec.empty()) {
    std::vector<std::size_t> all;
    for (std::size_t k = 1; k <= n; ++k) all.push_back(k);
    return all;
  }
  std::size_t lo = 0, hi = 0;
  if (const auto dots = spec.find(".."); dots != std::string::npos) {
    lo = parse_size_list(spec.substr(0, dots)).at(0);
    hi = parse_size_list(spec.substr(dots + 2)).at(0);
  } else {
    lo = hi = parse_size_list(spec).at(0);
  }
  if (lo < 1 || hi > n || lo > hi) {
    throw UsageError("--branch " + spec + " outside 1.." + std::to_string(n));
  }
  std::vector<std::size_t> out;
  for (std::size_t k = lo; k <= hi; ++k) out.push_back(k);
  return out;
}

std::size_t resolve_channel(const EpochSet& data, const std::string& spec) {
  for (std::size_t c = 0; c < data.channel_names.size(); ++c) {
    if (data.channel_names[c] == spec) return c;
  }
  try {
    const auto c = parse_size_list(spec);
    if (c.size() == 1 && c[0] < data.n_channels()) return c[0];
  } catch (const UsageError&) {
  }
  throw UsageError("--channel " + spec + " matches no channel name or index");
}

int cmd_analyze(const std::string& name, const AnalyzeArgs& a, const Invocation& inv, const RunConfig& cfg) {
  if (std::find(kAnalyses.begin(), kAnalyses.end(), name) == kAnalyses.end()) {
    std::string opts;
    for (const auto& o : kAnalyses) opts += (opts.empty() ? "" : ", ") + o;
    throw UsageError("unknown analysis '" + name + "'; options: " + opts);
  }
  const EpochSet raw = preprocess_epochs(read_epochs(a.data), cfg.preproc);

  if (name == "psd") {
    const std::size_t c = resolve_channel(raw, a.channel);
    RunDir run(inv.out, "analyze psd", inv.argv, cfg);
    Spectrum mean;
    for (const auto& t : raw.trials) {
      const Spectrum s = welch_psd(std::span<const double>(t.row(c, 0), t.time()), raw.fs);
      if (mean.freqs.empty()) mean = Spectrum{s.freqs, std::vector<double>(s.power.size(), 0.0)};
      for (std::size_t k = 0; k < s.power.size(); ++k) mean.power[k] += s.power[k] / static_cast<double>(raw.size());
    }
    std::string csv = "freq,power\n";
    for (std::size_t k = 0; k < mean.freqs.size(); ++k) {
      csv += format_double(mean.freqs[k]) + "," + format_double(mean.power[k]) + "\n";
    }
    run.write_text("psd.csv", csv);
    run.extra["channel"] = raw.channel_names.at(c);
    run.finish();
    return 0;
  }

  if (a.checkpoint.empty()) throw UsageError("analyze " + name + " needs --checkpoint");
  const MsnnModel model = load(a.checkpoint);
  check_batch(model.config, raw.trials);
  const EpochSet data = prepare_for_model(model, raw);

  if (name == "lrp" || name == "relevance-spectrum") {
    if (a.target_class >= static_cast<int>(model.config.n_o)) {
      throw UsageError("--class " + std::to_string(a.target_class) + " out of range");
    }
    const auto trials = selected_trials(data, a.trial);
    LrpOptions opt;
    opt.epsilon = a.epsilon;
    if (!(opt.epsilon > 0.0)) throw UsageError("--epsilon must be positive");
    RunDir run(inv.out, "analyze " + name, inv.argv, cfg);
    std::string maps = "trial,channel,sample,relevance\n";
    std::string summary = "trial,target,logit,contribution,total,conservation_error\n";
    std::vector<double> channel_mass(data.n_channels(), 0.0);
    Spectrum rel_mean, psd_mean;
    double max_err = 0.0, sum_err = 0.0;
    for (auto i : trials) {
      const int target = a.target_class >= 0 ? a.target_class : data.labels[i];
      const RelevanceMap r = lrp(model, data.trials[i], target, opt);
      const double err = r.conservation_error();
      max_err = std::max(max_err, err);
      sum_err += err;
      summary += std::to_string(i) + "," + std::to_string(target) + "," + format_double(r.logit) + "," +
                 format_double(r.contribution) + "," + format_double(r.total) + "," + format_double(err) + "\n";
      for (std::size_t c = 0; c < data.n_channels(); ++c) {
        for (std::size_t t = 0; t < data.n_samples(); ++t) {
          const double v = r.relevance(c, t, 0);
          channel_mass[c] += std::abs(v);
          if (name == "lrp") {
            maps += std::to_string(i) + "," + std::to_string(c) + "," + std::to_string(t) + "," + format_double(v) +
                    "\n";
          }
        }
      }
      if (name == "relevance-spectrum") {
        const Spectrum rs = relevance_spectrum(r, data.fs);
        if (rel_mean.freqs.empty()) {
          rel_mean = Spectrum{rs.freqs, std::vector<double>(rs.power.size(), 0.0)};
          psd_mean = rel_mean;
        }
        const double w = 1.0 / static_cast<double>(trials.size());
        for (std::size_t k = 0; k < rs.power.size(); ++k) rel_mean.power[k] += w * rs.power[k];
        for (std::size_t c = 0; c < data.n_channels(); ++c) {
          const Tensor& x = raw.trials[i];
          const Spectrum ps = welch_psd(std::span<const double>(x.row(c, 0), x.time()), data.fs);
          for (std::size_t k = 0; k < ps.power.size(); ++k) {
            psd_mean.power[k] += w * ps.power[k] / static_cast<double>(data.n_channels());
          }
        }
      }
    }
    if (name == "lrp") {
      run.write_text("lrp.csv", maps);
    } else {
      std::string csv = "freq,psd,relevance\n";
      for (std::size_t k = 0; k < rel_mean.freqs.size(); ++k) {
        csv += format_double(rel_mean.freqs[k]) + "," + format_double(psd_mean.power[k]) + "," +
               format_double(rel_mean.power[k]) + "\n";
      }
      run.write_text("relevance_spectrum.csv", csv);
    }
    run.write_text("lrp_summary.csv", summary);
    double mass = 0.0;
    for (double m : channel_mass) mass += m;
    std::vector<double> share;
    for (double m : channel_mass) share.push_back(mass > 0.0 ? m / mass : 0.0);
    run.extra["lrp"] = {{"epsilon", opt.epsilon},
                        {"trials", trials.size()},
                        {"max_conservation_error", max_err},
                        {"mean_conservation_error", sum_err / static_cast<double>(trials.size())},
                        {"channel_abs_share", share}};
    run.finish();
    std::cout << "max conservation error " << max_err << " over " << trials.size() << " trial(s)\n";
    return 0;
  }

  if (name == "patterns") {
    const auto branches = parse_branches(a.branch, model.config.N());
    RunDir run(inv.out, "analyze patterns", inv.argv, cfg);
    for (auto k : branches) {
      const auto pats = activation_patterns(model, data, k);
      std::string csv = "channel";
      for (const auto& p : pats) {
        csv += ",filter" + std::to_string(p.filter) + "_raw,filter" + std::to_string(p.filter) + "_norm";
      }
      csv += "\n";
      for (std::size_t c = 0; c < data.n_channels(); ++c) {
        csv += data.channel_names.at(c);
        for (const auto& p : pats) csv += "," + format_double(p.raw[c]) + "," + format_double(p.normalized[c]);
        csv += "\n";
      }
      run.write_text("patterns_branch" + std::to_string(k) + ".csv", csv);
    }
    run.finish();
    return 0;
  }

  // features
  const FeatureMatrix fm = export_features(model, data, a.stage);
  RunDir run(inv.out, "analyze features", inv.argv, cfg);
  std::string csv = "label";
  for (std::size_t d = 0; d < fm.dim(); ++d) csv += ",x" + std::to_string(d);
  csv += "\n";
  for (std::size_t i = 0; i < fm.rows.size(); ++i) {
    csv += std::to_string(fm.labels[i]);
    for (double v : fm.rows[i]) csv += "," + format_double(v);
    csv += "\n";
  }
  run.write_text("features_" + fm.stage + ".csv", csv);
  run.finish();
  return 0;
}

void add_common(CLI::App* sub, Invocation& inv) {
  sub->add_option("--out", inv.out, "Fresh run directory for every output")->required();
  sub->add_option("--config", inv.config_file, "key=value config file with [sections]");
  sub->add_option_function<std::string>(
      "--seed", [&inv](const std::string& v) { inv.flags.emplace_back("run.seed", v); },
      "Global seed (falls back to MSNN_SEED, then 0)");
  sub->allow_extras();
}

void bind(CLI::App* sub, Invocation& inv, const std::string& flag, const std::string& key, const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&inv, key](const std::string& v) { inv.flags.emplace_back(key, v); }, help);
}

void add_model_train_flags(CLI::App* sub, Invocation& inv) {
  bind(sub, inv, "--preset", "model.preset", "Kernel preset: mi or ssvep");
  bind(sub, inv, "--kernel-sizes", "model.kernel_sizes", "Comma-separated T_1..T_N");
  bind(sub, inv, "--maps", "model.maps", "Comma-separated F_0..F_N");
  bind(sub, inv, "--epochs", "train.max_epochs", "Maximum epochs");
  bind(sub, inv, "--patience", "train.patience", "Early-stopping patience");
  bind(sub, inv, "--batch-size", "train.batch_size", "Mini-batch size");
  bind(sub, inv, "--lr", "train.lr0", "Initial learning rate");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Multi-scale EEG network: synthesize, train, evaluate, analyze"};
  app.name("msnn");
  app.require_subcommand(1);

  Invocation inv;
  for (int i = 0; i < argc; ++i) inv.argv.emplace_back(argv[i]);

  std::string synth_kind;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("kind", synth_kind, "bandpower, ssvep or seizure")
      ->required()
      ->check(CLI::IsMember({"bandpower", "ssvep", "seizure"}));
  add_common(synth, inv);
  bind(synth, inv, "--trials", "synth.trials", "Number of trials");
  bind(synth, inv, "--channels", "synth.channels", "Number of channels");
  bind(synth, inv, "--samples", "synth.samples", "Samples per trial");
  bind(synth, inv, "--fs", "synth.fs", "Sampling rate in Hz");
  bind(synth, inv, "--noise", "synth.noise_sigma", "Background noise standard deviation");
  bind(synth, inv, "--snr", "synth.snr", "SSVEP amplitude over noise sigma");
  bind(synth, inv, "--duration", "synth.duration_s", "Seizure record length in seconds");
  bind(synth, inv, "--events", "synth.events", "Seizure events per record");
  bind(synth, inv, "--event-s", "synth.event_s", "Seizure event length in seconds");
  bind(synth, inv, "--records", "synth.records", "Number of seizure records");

  std::vector<std::string> train_data;
  auto* train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train->add_option("--data", train_data, "EPCH file, or RCRD files cut into windows")->required();
  add_common(train, inv);
  add_model_train_flags(train, inv);

  std::string ckpt, eval_data;
  std::vector<std::string> eval_records_paths;
  std::size_t kfold_k = 0;
  bool loro = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or run a cross-validation protocol");
  eval->add_option("--checkpoint", ckpt, "Checkpoint to evaluate");
  eval->add_option("--data", eval_data, "EPCH test set");
  eval->add_option("--record", eval_records_paths, "RCRD file(s) for onset detection");
  eval->add_option("--kfold", kfold_k, "Stratified k-fold cross-validation on --data");
  eval->add_flag("--loro", loro, "Leave-one-record-out over the --record files");
  eval->add_option("--jobs", inv.jobs, "Worker threads")->check(CLI::PositiveNumber);
  add_common(eval, inv);
  add_model_train_flags(eval, inv);
  bind(eval, inv, "--threshold", "detect.threshold", "Detection threshold");

  std::string analysis;
  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Interpretation and spectral analyses");
  analyze->add_option("analysis", analysis, "lrp, relevance-spectrum, patterns, features or psd")->required();
  analyze->add_option("--checkpoint", aa.checkpoint, "Trained checkpoint");
  analyze->add_option("--data", aa.data, "EPCH file")->required();
  analyze->add_option("--class", aa.target_class, "Target class (default: each trial's label)");
  analyze->add_option("--trial", aa.trial, "Single trial index (default: all)");
  analyze->add_option("--epsilon", aa.epsilon, "LRP stabilizer");
  analyze->add_option("--branch", aa.branch, "Branch k or range a..b (default: all)");
  analyze->add_option("--stage", aa.stage, "Feature stage: gap_concat or f<k>_sst");
  analyze->add_option("--channel", aa.channel, "Channel name or index for psd");
  add_common(analyze, inv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const RunConfig cfg = build_config(inv, sub->remaining());
    if (sub == synth) return cmd_synth(synth_kind, inv, cfg);
    if (sub == train) return cmd_train(train_data, inv, cfg);
    if (sub == eval) {
      const int modes = (kfold_k > 0) + loro + !ckpt.empty();
      if (modes != 1) throw UsageError("eval needs exactly one of --checkpoint, --kfold, --loro");
      if (kfold_k > 0) {
        if (eval_data.empty()) throw UsageError("--kfold needs --data");
        return eval_kfold(kfold_k, eval_data, inv, cfg);
      }
      if (loro) return eval_loro(eval_records_paths, inv, cfg);
      if (!eval_data.empty() == !eval_records_paths.empty()) {
        throw UsageError("--checkpoint needs exactly one of --data or --record");
      }
      return eval_data.empty() ? eval_records(ckpt, eval_records_paths, inv, cfg)
                               : eval_epochs(ckpt, eval_data, inv, cfg);
    }
    return cmd_analyze(analysis, aa, inv, cfg);
  } catch (const UsageError& e) {
    std::cerr << "msnn: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "msnn: invalid configuration\n";
    for (const auto& f : e.failures()) std::cerr << "  " << f << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "msnn: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msnn::cli
