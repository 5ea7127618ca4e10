#include "msnn/model.hpp"

#include "msnn/random.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace msnn {

namespace {

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "; " : "") + xs[i];
  return out;
}

BatchNormParams make_bn(const std::string& name, std::size_t maps, const MsnnConfig& cfg) {
  BatchNormParams bn;
  bn.gamma = Param::zeros(name + ".gamma", {maps}, ParamRole::BnGamma);
  bn.beta = Param::zeros(name + ".beta", {maps}, ParamRole::BnBeta);
  std::fill(bn.gamma.value.begin(), bn.gamma.value.end(), 1.0);
  bn.running_mean.assign(maps, 0.0);
  bn.running_var.assign(maps, 1.0);
  bn.eps = cfg.bn_eps;
  bn.momentum = cfg.bn_momentum;
  return bn;
}

void xavier(Param& p, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : p.value) v = rng.uniform(-limit, limit);
}

void expect_shape(const Tensor& t, std::size_t c, std::size_t time, std::size_t f, const char* what) {
  if (t.channels() != c || t.time() != time || t.maps() != f) {
    throw std::logic_error(std::string("shape chain broken at ") + what + ": got " + t.shape_string());
  }
}

}  // namespace

ConfigError::ConfigError(const std::vector<std::string>& failures)
    : std::invalid_argument("invalid model config: " + join(failures)), failures_(failures) {}

std::size_t MsnnConfig::branch_maps() const {
  return F.size() < 2 ? 0 : std::accumulate(F.begin() + 1, F.end(), std::size_t{0});
}

double MsnnConfig::branch_frequency(std::size_t k) const {
  if (k == 0 || k > T.size()) throw std::out_of_range("branch index out of range");
  return branch_fs() / static_cast<double>(T[k - 1]);
}

void MsnnConfig::validate() const {
  std::vector<std::string> bad;
  if (n_c < 1) bad.push_back("n_c must be >= 1");
  if (f_s < 2 || f_s % 2 != 0) bad.push_back("f_s must be even and >= 2 (got " + std::to_string(f_s) + ")");
  if (n_o < 2) bad.push_back("n_o must be >= 2 (got " + std::to_string(n_o) + ")");
  if (T.empty()) bad.push_back("T must list at least one kernel length");
  if (F.size() != T.size() + 1) {
    bad.push_back("F must have N+1 = " + std::to_string(T.size() + 1) + " entries (got " +
                  std::to_string(F.size()) + ")");
  }
  for (std::size_t i = 0; i < F.size(); ++i) {
    if (F[i] < 1) bad.push_back("F_" + std::to_string(i) + " must be >= 1");
  }
  const bool stem_fits = f_s >= 2 && n_T >= f_s / 2;
  if (!stem_fits) {
    bad.push_back("n_T (" + std::to_string(n_T) + ") must be >= f_s/2 (" + std::to_string(f_s / 2) + ")");
  }
  for (std::size_t k = 0; k < T.size(); ++k) {
    if (T[k] < 1) bad.push_back("T_" + std::to_string(k + 1) + " must be >= 1");
    if (stem_fits && T[k] > n_T_prime()) {
      bad.push_back("T_" + std::to_string(k + 1) + " (" + std::to_string(T[k]) + ") exceeds n_T' (" +
                    std::to_string(n_T_prime()) + ")");
    }
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) bad.push_back("leaky_slope must lie in (0, 1)");
  if (!(bn_eps > 0.0)) bad.push_back("bn_eps must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) bad.push_back("bn_momentum must lie in [0, 1)");
  if (effective_fs < 0.0) bad.push_back("effective_fs must be >= 0");
  if (!bad.empty()) throw ConfigError(bad);
}

MsnnModel MsnnModel::build(const MsnnConfig& config) {
  config.validate();
  MsnnModel m;
  m.config = config;
  const std::size_t L = config.stem_length();
  const std::size_t F0 = config.F[0];
  m.stem.kernel = Param::zeros("stem.kernel", {F0, L}, ParamRole::Weight);
  m.stem.bias = Param::zeros("stem.bias", {F0}, ParamRole::Bias);
  m.stem_bn = make_bn("stem_bn", F0, config);
  for (std::size_t k = 0; k < config.N(); ++k) {
    const std::string pre = "branch" + std::to_string(k + 1);
    const std::size_t Fi = config.F[k], Fo = config.F[k + 1];
    Branch b;
    b.sep.depthwise = Param::zeros(pre + ".sep.depthwise", {Fi, config.T[k]}, ParamRole::Weight);
    b.sep.pointwise = Param::zeros(pre + ".sep.pointwise", {Fo, Fi}, ParamRole::Weight);
    b.sep.bias = Param::zeros(pre + ".sep.bias", {Fo}, ParamRole::Bias);
    b.sep_bn = make_bn(pre + ".sep_bn", Fo, config);
    b.spatial.kernel = Param::zeros(pre + ".spatial.kernel", {config.n_c, Fo, Fo}, ParamRole::Weight);
    b.spatial.bias = Param::zeros(pre + ".spatial.bias", {Fo}, ParamRole::Bias);
    b.spatial_bn = make_bn(pre + ".spatial_bn", Fo, config);
    m.branches.push_back(std::move(b));
  }
  m.classifier.weight = Param::zeros("classifier.weight", {config.branch_maps(), config.n_o}, ParamRole::Weight);
  m.classifier.bias = Param::zeros("classifier.bias", {config.n_o}, ParamRole::Bias);

  Rng rng(config.seed);
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  xavier(m.stem.kernel, d(L), d(L * F0), rng);
  for (std::size_t k = 0; k < config.N(); ++k) {
    auto& b = m.branches[k];
    const std::size_t Fi = config.F[k], Fo = config.F[k + 1];
    xavier(b.sep.depthwise, d(config.T[k]), d(config.T[k]), rng);
    xavier(b.sep.pointwise, d(Fi), d(Fo), rng);
    xavier(b.spatial.kernel, d(config.n_c * Fo), d(config.n_c * Fo), rng);
  }
  xavier(m.classifier.weight, d(config.branch_maps()), d(config.n_o), rng);
  return m;
}

std::vector<Param*> MsnnModel::trainable_params() {
  std::vector<Param*> ps{&stem.kernel, &stem.bias, &stem_bn.gamma, &stem_bn.beta};
  for (auto& b : branches) {
    for (Param* p : {&b.sep.depthwise, &b.sep.pointwise, &b.sep.bias, &b.sep_bn.gamma, &b.sep_bn.beta,
                     &b.spatial.kernel, &b.spatial.bias, &b.spatial_bn.gamma, &b.spatial_bn.beta}) {
      ps.push_back(p);
    }
  }
  ps.push_back(&classifier.weight);
  ps.push_back(&classifier.bias);
  return ps;
}

std::vector<const Param*> MsnnModel::trainable_params() const {
  auto ps = const_cast<MsnnModel*>(this)->trainable_params();
  return {ps.begin(), ps.end()};
}

std::vector<BatchNormParams*> MsnnModel::batch_norms() {
  std::vector<BatchNormParams*> out{&stem_bn};
  for (auto& b : branches) {
    out.push_back(&b.sep_bn);
    out.push_back(&b.spatial_bn);
  }
  return out;
}

std::vector<const BatchNormParams*> MsnnModel::batch_norms() const {
  auto bs = const_cast<MsnnModel*>(this)->batch_norms();
  return {bs.begin(), bs.end()};
}

bool MsnnModel::bn_ready() const {
  for (const auto* bn : batch_norms()) {
    if (!bn->ready) return false;
  }
  return true;
}

void check_batch(const MsnnConfig& config, const Batch& batch) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor& x = batch[b];
    if (x.channels() != config.n_c || x.time() != config.n_T || x.maps() != 1) {
      std::ostringstream msg;
      msg << "forward: sample " << b << " has shape " << x.shape_string() << ", model expects [" << config.n_c
          << ", " << config.n_T << ", 1]";
      throw std::invalid_argument(msg.str());
    }
  }
}

namespace {

template <class Model, class BnFn>
ForwardIds record_impl(GradTape& tape, Model& model, const Batch& batch, BnFn&& bn) {
  const MsnnConfig& cfg = model.config;
  check_batch(cfg, batch);
  const double slope = cfg.leaky_slope;
  const std::size_t Tp = cfg.n_T_prime();
  ForwardIds ids;
  ids.input = tape.input(batch);
  GradTape::Id h = tape.leaky_relu(bn(tape.temporal_conv(ids.input, model.stem), model.stem_bn), slope);
  expect_shape(tape.value(h).front(), cfg.n_c, Tp, cfg.F[0], "stem");
  ids.stem = h;
  for (std::size_t k = 0; k < cfg.N(); ++k) {
    auto& br = model.branches[k];
    h = tape.leaky_relu(bn(tape.separable_conv(h, br.sep), br.sep_bn), slope);
    expect_shape(tape.value(h).front(), cfg.n_c, Tp, cfg.F[k + 1], "f_st");
    ids.f_st.push_back(h);
    const auto s = tape.leaky_relu(bn(tape.spatial_conv(h, br.spatial), br.spatial_bn), slope);
    expect_shape(tape.value(s).front(), 1, Tp, cfg.F[k + 1], "f_sst");
    ids.f_sst.push_back(s);
  }
  ids.concat = tape.concat(ids.f_sst);
  expect_shape(tape.value(ids.concat).front(), 1, Tp, cfg.branch_maps(), "concat");
  ids.gap = tape.gap(ids.concat);
  expect_shape(tape.value(ids.gap).front(), 1, 1, cfg.branch_maps(), "gap");
  ids.logits = tape.dense(ids.gap, model.classifier);
  return ids;
}

ForwardResult collect(const GradTape& tape, const ForwardIds& ids) {
  ForwardResult r;
  for (const auto& z : tape.value(ids.logits)) {
    r.logits.emplace_back(z.values().begin(), z.values().end());
    r.probs.push_back(nn::softmax(z.values()));
  }
  for (auto id : ids.f_st) r.f_st.push_back(tape.value(id));
  for (auto id : ids.f_sst) r.f_sst.push_back(tape.value(id));
  r.concat = tape.value(ids.concat);
  r.gap = tape.value(ids.gap);
  return r;
}

}  // namespace

ForwardIds record_forward(GradTape& tape, MsnnModel& model, const Batch& batch, Mode mode, bool update_running) {
  return record_impl(tape, model, batch, [&](GradTape::Id x, BatchNormParams& p) {
    return tape.batch_norm(x, p, mode, update_running);
  });
}

ForwardIds record_forward(GradTape& tape, const MsnnModel& model, const Batch& batch) {
  return record_impl(tape, model, batch,
                     [&](GradTape::Id x, const BatchNormParams& p) { return tape.batch_norm(x, p, Mode::Eval); });
}

ForwardResult forward(MsnnModel& model, const Batch& batch, Mode mode) {
  GradTape tape;
  const auto ids = record_forward(tape, model, batch, mode, true);
  return collect(tape, ids);
}

ForwardResult forward(const MsnnModel& model, const Batch& batch) {
  GradTape tape;
  const auto ids = record_forward(tape, model, batch);
  return collect(tape, ids);
}

std::vector<std::vector<double>> predict_proba(const MsnnModel& model, const Batch& batch, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  std::vector<std::vector<double>> out;
  out.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const std::size_t stop = std::min(batch.size(), start + chunk);
    Batch part(batch.begin() + static_cast<std::ptrdiff_t>(start), batch.begin() + static_cast<std::ptrdiff_t>(stop));
    GradTape tape;
    const auto ids = record_forward(tape, model, part);
    for (const auto& z : tape.value(ids.logits)) out.push_back(nn::softmax(z.values()));
  }
  return out;
}

ParamCount param_count(const MsnnModel& model) {
  ParamCount pc;
  for (const Param* p : model.trainable_params()) {
    pc.layers.push_back({p->name, p->size()});
    pc.total += p->size();
  }
  const auto& cfg = model.config;
  pc.classifier_weights = model.classifier.weight.size();
  pc.no_gap_classifier_weights = cfg.n_T_prime() * pc.classifier_weights;
  pc.gap_reduction_factor = pc.no_gap_classifier_weights / pc.classifier_weights;
  for (std::size_t k = 0; k < cfg.N(); ++k) {
    const std::size_t Tk = cfg.T[k], Fi = cfg.F[k], Fo = cfg.F[k + 1];
    pc.separable_shared_depthwise.push_back(Tk + Fi * Fo);
    pc.separable_per_map.push_back(Tk * Fi + Fi * Fo);
    pc.conventional_conv.push_back(Tk * Fi * Fo);
  }
  return pc;
}

}  // namespace msnn
