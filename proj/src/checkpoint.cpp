#include "msnn/checkpoint.hpp"

#include "msnn/binary_io.hpp"

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

namespace msnn {

namespace {

constexpr std::string_view kMagic = "MSNN";
constexpr std::string_view kParamTag = "PARM";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw FormatError(FormatError::Kind::Invalid, "checkpoint config: bad integer for " + key + ": '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::Invalid, "checkpoint config: bad number for " + key + ": '" + v + "'");
  }
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
  return out;
}

struct Block {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

void write_block(ByteWriter& w, const std::string& name, const std::vector<std::size_t>& shape,
                 std::span<const double> data) {
  w.short_string(name);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  w.f64_array(data);
}

void write_header(ByteWriter& w, const MsnnConfig& config, bool bn_ready) {
  w.raw(kMagic);
  w.u16(kCheckpointVersion);
  std::string text = config_to_text(config);
  text += "bn_ready=" + std::string(bn_ready ? "1" : "0") + "\n";
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
}

}  // namespace

std::string config_to_text(const MsnnConfig& c) {
  std::string s;
  s += "n_c=" + std::to_string(c.n_c) + "\n";
  s += "n_T=" + std::to_string(c.n_T) + "\n";
  s += "f_s=" + std::to_string(c.f_s) + "\n";
  s += "n_o=" + std::to_string(c.n_o) + "\n";
  s += "T=" + fmt_list(c.T) + "\n";
  s += "F=" + fmt_list(c.F) + "\n";
  s += "leaky_slope=" + fmt_double(c.leaky_slope) + "\n";
  s += "bn_eps=" + fmt_double(c.bn_eps) + "\n";
  s += "bn_momentum=" + fmt_double(c.bn_momentum) + "\n";
  s += "effective_fs=" + fmt_double(c.effective_fs) + "\n";
  s += "seed=" + std::to_string(c.seed) + "\n";
  return s;
}

namespace {

MsnnConfig parse_config(const std::string& text, bool* bn_ready) {
  MsnnConfig c;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(FormatError::Kind::Invalid, "checkpoint config: malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
    seen.insert(key);
    if (key == "n_c") c.n_c = parse_u64(key, v);
    else if (key == "n_T") c.n_T = parse_u64(key, v);
    else if (key == "f_s") c.f_s = parse_u64(key, v);
    else if (key == "n_o") c.n_o = parse_u64(key, v);
    else if (key == "T") c.T = parse_list(key, v);
    else if (key == "F") c.F = parse_list(key, v);
    else if (key == "leaky_slope") c.leaky_slope = parse_double(key, v);
    else if (key == "bn_eps") c.bn_eps = parse_double(key, v);
    else if (key == "bn_momentum") c.bn_momentum = parse_double(key, v);
    else if (key == "effective_fs") c.effective_fs = parse_double(key, v);
    else if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "bn_ready" && bn_ready) *bn_ready = v == "1";
    else throw FormatError(FormatError::Kind::Invalid, "checkpoint config: unknown key '" + key + "'");
  }
  for (const char* k : {"n_c", "n_T", "f_s", "n_o", "T", "F"}) {
    if (!seen.count(k)) throw FormatError(FormatError::Kind::Invalid, std::string("checkpoint config: missing ") + k);
  }
  return c;
}

}  // namespace

MsnnConfig config_from_text(const std::string& text) { return parse_config(text, nullptr); }

std::vector<std::uint8_t> encode_config_only(const MsnnConfig& config) {
  ByteWriter w;
  write_header(w, config, false);
  w.seal();
  return w.bytes();
}

std::vector<std::uint8_t> encode_checkpoint(const MsnnModel& model) {
  ByteWriter w;
  write_header(w, model.config, model.bn_ready());
  w.raw(kParamTag);
  const auto params = model.trainable_params();
  const auto bns = model.batch_norms();
  const std::uint32_t count =
      static_cast<std::uint32_t>(params.size() + 2 * bns.size() + (model.norm ? 2 : 0));
  w.u32(count);
  for (const Param* p : params) write_block(w, p->name, p->shape, p->value);
  for (const BatchNormParams* bn : bns) {
    const std::string base = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
    write_block(w, base + ".running_mean", {bn->maps()}, bn->running_mean);
    write_block(w, base + ".running_var", {bn->maps()}, bn->running_var);
  }
  if (model.norm) {
    write_block(w, "norm.mean", {model.norm->mean.size()}, model.norm->mean);
    write_block(w, "norm.std", {model.norm->std.size()}, model.norm->std);
  }
  w.seal();
  return w.bytes();
}

MsnnModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r = begin_container(bytes, kMagic, kCheckpointVersion, "checkpoint");
  const std::uint32_t text_len = r.u32();
  const std::string text = r.raw(text_len);
  if (r.remaining() == 4) {
    throw FormatError(FormatError::Kind::MissingSection, "checkpoint: missing parameter section");
  }
  const std::string tag = r.raw(kParamTag.size());
  if (tag != kParamTag) {
    throw FormatError(FormatError::Kind::MissingSection, "checkpoint: missing parameter section");
  }
  const std::uint32_t count = r.u32();
  std::map<std::string, Block> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.short_string();
    Block b;
    const std::uint8_t rank = r.u8();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      b.shape.push_back(r.u32());
      n *= b.shape.back();
    }
    b.data = r.f64_array(n);
    blocks[std::move(name)] = std::move(b);
  }
  end_container(r, bytes, "checkpoint");

  bool bn_ready = false;
  const MsnnConfig config = parse_config(text, &bn_ready);
  MsnnModel m = MsnnModel::build(config);

  std::set<std::string> used;
  const auto take = [&](const std::string& name, const std::vector<std::size_t>& shape) -> std::vector<double>& {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw FormatError(FormatError::Kind::Invalid, "checkpoint: missing block " + name);
    if (it->second.shape != shape) {
      throw FormatError(FormatError::Kind::Invalid, "checkpoint: block " + name + " has the wrong shape");
    }
    used.insert(name);
    return it->second.data;
  };
  for (Param* p : m.trainable_params()) p->value = take(p->name, p->shape);
  for (BatchNormParams* bn : m.batch_norms()) {
    const std::string base = bn->gamma.name.substr(0, bn->gamma.name.rfind('.'));
    bn->running_mean = take(base + ".running_mean", {bn->maps()});
    bn->running_var = take(base + ".running_var", {bn->maps()});
    bn->ready = bn_ready;
  }
  if (blocks.count("norm.mean") || blocks.count("norm.std")) {
    NormStats ns;
    ns.mean = take("norm.mean", {config.n_c});
    ns.std = take("norm.std", {config.n_c});
    m.norm = std::move(ns);
  }
  for (const auto& [name, b] : blocks) {
    if (!used.count(name)) throw FormatError(FormatError::Kind::Invalid, "checkpoint: unexpected block " + name);
  }
  return m;
}

void save(const MsnnModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(model));
}

MsnnModel load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace msnn
