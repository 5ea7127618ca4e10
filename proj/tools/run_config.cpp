#include "cli.hpp"

#include <charconv>
#include <concepts>
#include <cstdio>
#include <sstream>

namespace msnn::cli {

namespace {

template <class C, class V>
void visit_fields(C& c, V&& v) {
  v("run.seed", c.seed);
  v("model.kernel_sizes", c.model.T);
  v("model.maps", c.model.F);
  v("model.f_s", c.model_fs);
  v("model.n_o", c.model_n_o);
  v("model.leaky_slope", c.model.leaky_slope);
  v("model.bn_eps", c.model.bn_eps);
  v("model.bn_momentum", c.model.bn_momentum);
  v("train.batch_size", c.train.batch_size);
  v("train.lr0", c.train.lr0);
  v("train.decay_per_epoch", c.train.decay_per_epoch);
  v("train.schedule", c.train.schedule);
  v("train.l1", c.train.l1);
  v("train.l2", c.train.l2);
  v("train.max_epochs", c.train.max_epochs);
  v("train.patience", c.train.patience);
  v("train.adam_beta1", c.train.adam_beta1);
  v("train.adam_beta2", c.train.adam_beta2);
  v("train.adam_eps", c.train.adam_eps);
  v("train.val_fraction", c.train.val_fraction);
  v("preproc.bandpass", c.preproc.bandpass);
  v("preproc.low_hz", c.preproc.low_hz);
  v("preproc.high_hz", c.preproc.high_hz);
  v("preproc.crop_head_s", c.preproc.crop_head_s);
  v("preproc.crop_tail_s", c.preproc.crop_tail_s);
  v("preproc.normalize", c.preproc.normalize);
  v("detect.window_s", c.extraction.window_s);
  v("detect.extract_stride_s", c.extraction.stride_s);
  v("detect.guard_s", c.extraction.guard_s);
  v("detect.threshold", c.detection.threshold);
  v("detect.min_hold_s", c.detection.min_hold_s);
  v("detect.margin_s", c.detection.margin_s);
  v("detect.online_timing", c.online_timing);
  v("detect.stride_samples", c.stride_samples);
  v("synth.trials", c.synth.trials);
  v("synth.channels", c.synth.channels);
  v("synth.samples", c.synth.samples);
  v("synth.fs", c.synth.fs);
  v("synth.noise_sigma", c.synth.noise_sigma);
  v("synth.snr", c.synth.snr);
  v("synth.harmonics", c.synth.harmonics);
  v("synth.duration_s", c.synth.duration_s);
  v("synth.events", c.synth.events);
  v("synth.event_s", c.synth.event_s);
  v("synth.min_gap_s", c.synth.min_gap_s);
  v("synth.amplitude_ratio", c.synth.amplitude_ratio);
  v("synth.records", c.synth.records);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format(double v) { return format_double(v); }
template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
std::string format(T v) {
  return std::to_string(v);
}
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(LrSchedule s) { return s == LrSchedule::Geometric ? "geometric" : "exponential"; }
std::string format(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw UsageError(key + ": cannot parse '" + s + "'");
  return v;
}

void parse_into(const std::string& key, const std::string& s, double& out) { out = parse_number<double>(key, s); }
template <std::unsigned_integral T>
  requires(!std::same_as<T, bool>)
void parse_into(const std::string& key, const std::string& s, T& out) {
  out = parse_number<T>(key, s);
}
void parse_into(const std::string& key, const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
  } else if (s == "false" || s == "0" || s == "no") {
    out = false;
  } else {
    throw UsageError(key + ": expected true or false, got '" + s + "'");
  }
}
void parse_into(const std::string& key, const std::string& s, LrSchedule& out) {
  if (s == "geometric") {
    out = LrSchedule::Geometric;
  } else if (s == "exponential") {
    out = LrSchedule::Exponential;
  } else {
    throw UsageError(key + ": expected geometric or exponential, got '" + s + "'");
  }
}
void parse_into(const std::string& key, const std::string& s, std::vector<std::size_t>& out) {
  try {
    out = parse_size_list(s);
  } catch (const UsageError& e) {
    throw UsageError(key + ": " + e.what());
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>("list", trim(item)));
  if (out.empty()) throw UsageError("empty list");
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "model.preset") {
    if (value != "mi" && value != "ssvep" && !value.empty()) {
      throw UsageError("model.preset: expected mi or ssvep, got '" + value + "'");
    }
    preset = value;
    return;
  }
  bool found = false;
  visit_fields(*this, [&](const char* name, auto& field) {
    if (key != name) return;
    parse_into(key, trim(value), field);
    found = true;
  });
  if (!found) throw UsageError("unknown setting '" + key + "'");
  if (key == "model.kernel_sizes") kernels_explicit = true;
  if (key == "run.seed") seed_set = true;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  visit_fields(*this, [&](const char* name, const auto& field) { out.emplace_back(name, format(field)); });
  return out;
}

std::string RunConfig::to_text() const {
  std::string out, section;
  for (const auto& [key, value] : entries()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

void RunConfig::resolve(const char* env_seed) {
  if (!preset.empty()) {
    if (kernels_explicit) throw UsageError("--preset " + preset + " conflicts with explicit kernel sizes");
    model.T = preset == "ssvep" ? kSsvepKernels : kMotorImageryKernels;
  }
  if (!seed_set && env_seed && *env_seed) {
    try {
      seed = parse_number<std::uint64_t>("MSNN_SEED", env_seed);
    } catch (const UsageError&) {
      throw UsageError(std::string("MSNN_SEED is not an unsigned integer: '") + env_seed + "'");
    }
    seed_set = true;
  }
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::stringstream ss(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("config line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw UsageError("config line " + std::to_string(line_no) + ": key outside a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    cfg.set(key, value);
  }
}

}  // namespace msnn::cli
