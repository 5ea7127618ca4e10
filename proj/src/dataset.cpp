#include "msnn/dataset.hpp"

#include "msnn/binary_io.hpp"
#include "msnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msnn {

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::MotorImagery: return "mi";
    case Paradigm::Ssvep: return "ssvep";
    case Paradigm::Vigilance: return "vigilance";
    case Paradigm::Seizure: return "seizure";
    case Paradigm::Synthetic: return "synthetic";
  }
  throw std::invalid_argument("unknown paradigm value");
}

Paradigm paradigm_from_string(const std::string& s) {
  for (auto p : {Paradigm::MotorImagery, Paradigm::Ssvep, Paradigm::Vigilance, Paradigm::Seizure, Paradigm::Synthetic}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown paradigm '" + s + "' (expected mi, ssvep, vigilance, seizure or synthetic)");
}

EpochSet EpochSet::subset(const std::vector<std::size_t>& indices) const {
  EpochSet out;
  out.fs = fs;
  out.channel_names = channel_names;
  out.paradigm = paradigm;
  out.n_classes = n_classes;
  for (auto i : indices) {
    out.trials.push_back(trials.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<std::size_t> EpochSet::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(n_classes, 0)), 0);
  for (int y : labels) {
    if (y >= 0 && y < n_classes) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

void EpochSet::validate() const {
  if (!(fs > 0.0)) throw std::invalid_argument("epoch set: sampling rate must be positive");
  if (n_classes < 2) throw std::invalid_argument("epoch set: need at least 2 classes");
  if (trials.size() != labels.size()) {
    throw std::invalid_argument("epoch set: " + std::to_string(trials.size()) + " trials but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const Tensor& t = trials[i];
    if (t.maps() != 1 || t.channels() != trials[0].channels() || t.time() != trials[0].time()) {
      throw std::invalid_argument("epoch set: trial " + std::to_string(i) + " has shape " + t.shape_string() +
                                  ", expected " + trials[0].shape_string());
    }
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw std::invalid_argument("epoch set: label " + std::to_string(labels[i]) + " of trial " +
                                  std::to_string(i) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    if (!t.all_finite()) throw std::invalid_argument("epoch set: trial " + std::to_string(i) + " has non-finite samples");
  }
  if (!trials.empty() && !channel_names.empty() && channel_names.size() != trials[0].channels()) {
    throw std::invalid_argument("epoch set: channel name count does not match channel dimension");
  }
}

void ContinuousRecord::validate() const {
  if (!(fs > 0.0)) throw std::invalid_argument("record: sampling rate must be positive");
  if (samples.maps() != 1 || samples.channels() == 0) throw std::invalid_argument("record: bad sample shape");
  if (!channel_names.empty() && channel_names.size() != samples.channels()) {
    throw std::invalid_argument("record: channel name count does not match channel dimension");
  }
  std::vector<Annotation> sorted = events;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].onset >= sorted[i].offset || sorted[i].offset > n_samples()) {
      throw std::invalid_argument("record: annotation [" + std::to_string(sorted[i].onset) + ", " +
                                  std::to_string(sorted[i].offset) + ") out of bounds");
    }
    if (i > 0 && sorted[i].onset < sorted[i - 1].offset) throw std::invalid_argument("record: overlapping annotations");
  }
  if (!samples.all_finite()) throw std::invalid_argument("record: non-finite samples");
}

namespace {

constexpr std::string_view kEpochMagic = "EPCH";
constexpr std::string_view kRecordMagic = "RCRD";

void invalid(const std::string& what) { throw FormatError(FormatError::Kind::Invalid, what); }

}  // namespace

std::vector<std::uint8_t> encode_epochs(const EpochSet& set) {
  set.validate();
  ByteWriter w;
  w.raw(kEpochMagic);
  w.u16(kEpochFormatVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.n_channels()));
  w.u32(static_cast<std::uint32_t>(set.n_samples()));
  w.f64(set.fs);
  w.u16(static_cast<std::uint16_t>(set.n_classes));
  w.u8(static_cast<std::uint8_t>(set.paradigm));
  const std::size_t n_names = set.channel_names.empty() ? 0 : set.n_channels();
  w.u16(static_cast<std::uint16_t>(n_names));
  for (std::size_t c = 0; c < n_names; ++c) w.short_string(set.channel_names[c]);
  for (int y : set.labels) w.u16(static_cast<std::uint16_t>(y));
  for (const auto& t : set.trials) w.f64_array(t.values());
  w.seal();
  return w.bytes();
}

EpochSet decode_epochs(std::span<const std::uint8_t> bytes) {
  ByteReader r = begin_container(bytes, kEpochMagic, kEpochFormatVersion, "epoch file");
  const std::uint32_t n_trials = r.u32(), n_c = r.u32(), n_T = r.u32();
  EpochSet set;
  set.fs = r.f64();
  set.n_classes = r.u16();
  const std::uint8_t tag = r.u8();
  const std::uint16_t n_names = r.u16();
  for (std::uint16_t i = 0; i < n_names; ++i) set.channel_names.push_back(r.short_string());
  for (std::uint32_t i = 0; i < n_trials; ++i) set.labels.push_back(r.u16());
  for (std::uint32_t i = 0; i < n_trials; ++i) set.trials.emplace_back(n_c, n_T, 1, r.f64_array(std::size_t{n_c} * n_T));
  end_container(r, bytes, "epoch file");

  if (tag > static_cast<std::uint8_t>(Paradigm::Synthetic)) invalid("epoch file: unknown paradigm tag " + std::to_string(tag));
  set.paradigm = static_cast<Paradigm>(tag);
  if (n_names != 0 && n_names != n_c) invalid("epoch file: channel name table does not match n_c");
  try {
    set.validate();
  } catch (const std::invalid_argument& e) {
    invalid(std::string("epoch file validation failed: ") + e.what());
  }
  return set;
}

void write_epochs(const std::filesystem::path& path, const EpochSet& set) { write_file_bytes(path, encode_epochs(set)); }
EpochSet read_epochs(const std::filesystem::path& path) { return decode_epochs(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_record(const ContinuousRecord& rec) {
  rec.validate();
  ByteWriter w;
  w.raw(kRecordMagic);
  w.u16(kRecordFormatVersion);
  w.u32(static_cast<std::uint32_t>(rec.n_channels()));
  w.u32(static_cast<std::uint32_t>(rec.n_samples()));
  w.f64(rec.fs);
  const std::size_t n_names = rec.channel_names.empty() ? 0 : rec.n_channels();
  w.u16(static_cast<std::uint16_t>(n_names));
  for (std::size_t c = 0; c < n_names; ++c) w.short_string(rec.channel_names[c]);
  w.u32(static_cast<std::uint32_t>(rec.events.size()));
  for (const auto& e : rec.events) {
    w.u32(static_cast<std::uint32_t>(e.onset));
    w.u32(static_cast<std::uint32_t>(e.offset));
    w.u16(static_cast<std::uint16_t>(e.label));
  }
  w.f64_array(rec.samples.values());
  w.seal();
  return w.bytes();
}

ContinuousRecord decode_record(std::span<const std::uint8_t> bytes) {
  ByteReader r = begin_container(bytes, kRecordMagic, kRecordFormatVersion, "record file");
  const std::uint32_t n_c = r.u32(), n = r.u32();
  ContinuousRecord rec;
  rec.fs = r.f64();
  const std::uint16_t n_names = r.u16();
  for (std::uint16_t i = 0; i < n_names; ++i) rec.channel_names.push_back(r.short_string());
  const std::uint32_t n_events = r.u32();
  for (std::uint32_t i = 0; i < n_events; ++i) {
    Annotation a;
    a.onset = r.u32();
    a.offset = r.u32();
    a.label = r.u16();
    rec.events.push_back(a);
  }
  rec.samples = Tensor(n_c, n, 1, r.f64_array(std::size_t{n_c} * n));
  end_container(r, bytes, "record file");
  try {
    rec.validate();
  } catch (const std::invalid_argument& e) {
    invalid(std::string("record file validation failed: ") + e.what());
  }
  return rec;
}

void write_record(const std::filesystem::path& path, const ContinuousRecord& rec) {
  write_file_bytes(path, encode_record(rec));
}
ContinuousRecord read_record(const std::filesystem::path& path) { return decode_record(read_file_bytes(path)); }

std::vector<int> label_from_score(std::span<const double> scores, double t1, double t2) {
  if (!(t1 < t2)) throw std::invalid_argument("label_from_score: thresholds must satisfy t1 < t2");
  std::vector<int> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s < t1 ? 0 : (s < t2 ? 1 : 2));
  return out;
}

FoldPlan kfold(const std::vector<int>& labels, int n_classes, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be at least 2");
  if (k > labels.size()) {
    throw std::invalid_argument("kfold: k = " + std::to_string(k) + " exceeds the " + std::to_string(labels.size()) +
                                " available trials");
  }
  FoldPlan plan;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw std::invalid_argument("kfold: label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> dealt;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (!by_class[c].empty() && by_class[c].size() < k) {
      plan.warnings.push_back("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                              " trials, fewer than k = " + std::to_string(k) + "; some folds will lack it");
    }
    rng.shuffle(by_class[c]);
    dealt.insert(dealt.end(), by_class[c].begin(), by_class[c].end());
  }
  // Round-robin over the class-grouped order keeps both fold sizes and
  // per-class counts within one of each other.
  std::vector<std::vector<std::size_t>> tests(k);
  for (std::size_t i = 0; i < dealt.size(); ++i) tests[i % k].push_back(dealt[i]);
  for (std::size_t f = 0; f < k; ++f) {
    Split s;
    s.test = tests[f];
    std::sort(s.test.begin(), s.test.end());
    std::vector<bool> is_test(labels.size(), false);
    for (auto i : s.test) is_test[i] = true;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!is_test[i]) s.train.push_back(i);
    }
    plan.folds.push_back(std::move(s));
  }
  return plan;
}

std::vector<RecordSplit> leave_one_record_out(const std::vector<bool>& seizure_flags) {
  const auto n_seizure = std::count(seizure_flags.begin(), seizure_flags.end(), true);
  if (n_seizure < 2) {
    throw std::invalid_argument("leave_one_record_out: need at least 2 seizure records, got " + std::to_string(n_seizure));
  }
  std::vector<RecordSplit> out;
  for (std::size_t t = 0; t < seizure_flags.size(); ++t) {
    if (!seizure_flags[t]) continue;
    RecordSplit s;
    s.test = t;
    for (std::size_t i = 0; i < seizure_flags.size(); ++i) {
      if (i != t) s.train.push_back(i);
    }
    out.push_back(std::move(s));
  }
  return out;
}

EpochSet extract_epochs(const std::vector<ContinuousRecord>& records, const EpochExtraction& opt) {
  if (records.empty()) throw std::invalid_argument("extract_epochs: no records");
  if (!(opt.window_s > 0.0) || !(opt.stride_s > 0.0) || opt.guard_s < 0.0) {
    throw std::invalid_argument("extract_epochs: window and stride must be positive, guard non-negative");
  }
  EpochSet set;
  set.fs = records[0].fs;
  set.channel_names = records[0].channel_names;
  set.paradigm = Paradigm::Seizure;
  set.n_classes = 2;
  const auto win = static_cast<std::size_t>(std::llround(opt.window_s * set.fs));
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.stride_s * set.fs)));
  const auto guard = static_cast<std::size_t>(std::llround(opt.guard_s * set.fs));
  for (const auto& rec : records) {
    rec.validate();
    if (rec.fs != set.fs || rec.n_channels() != records[0].n_channels()) {
      throw std::invalid_argument("extract_epochs: records disagree on sampling rate or channel count");
    }
    for (std::size_t s = 0; s + win <= rec.n_samples(); s += stride) {
      const std::size_t e = s + win;
      int label = 0;
      for (const auto& ev : rec.events) {
        if (s >= ev.onset && e <= ev.offset) {
          label = 1;
          break;
        }
        const std::size_t lo = ev.onset > guard ? ev.onset - guard : 0;
        if (s < ev.offset + guard && e > lo) label = -1;
      }
      if (label < 0) continue;
      Tensor t(rec.n_channels(), win, 1);
      for (std::size_t c = 0; c < rec.n_channels(); ++c) {
        std::copy_n(rec.samples.row(c, s), win, t.row(c, 0));
      }
      set.trials.push_back(std::move(t));
      set.labels.push_back(label);
    }
  }
  return set;
}

}  // namespace msnn
