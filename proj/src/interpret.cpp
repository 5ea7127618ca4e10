#include "msnn/interpret.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msnn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void add_into(Tensor& acc, const Tensor& x) {
  auto a = acc.values();
  const auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Epsilon rule through a linear map M followed by a per-map BN affine:
// z = scale * (M x) [+ scale * bias + shift]. `transpose` applies M^T.
template <class Transpose>
Tensor eps_rule(const Tensor& x, const Tensor& mx, const Tensor& r_out, const std::vector<double>& scale,
                const std::vector<double>& offset, double eps, Transpose&& transpose) {
  Tensor g(r_out.channels(), r_out.time(), r_out.maps());
  const std::size_t F = r_out.maps();
  const auto mz = mx.values();
  const auto r = r_out.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const std::size_t f = i % F;
    const double z = scale[f] * mz[i] + offset[f];
    gv[i] = scale[f] * r[i] / lrp_stabilize(z, eps);
  }
  Tensor back = transpose(g);
  auto bv = back.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < bv.size(); ++i) bv[i] *= xv[i];
  return back;
}

struct Affine {
  std::vector<double> scale;
  std::vector<double> offset;  // zero unless biases are included
};

Affine fold(const BatchNormParams& bn, const Param& bias, bool include_bias) {
  Affine a;
  std::vector<double> shift;
  nn::batch_norm_affine(bn, a.scale, shift);
  a.offset.assign(a.scale.size(), 0.0);
  if (include_bias) {
    for (std::size_t f = 0; f < a.scale.size(); ++f) a.offset[f] = a.scale[f] * bias.value[f] + shift[f];
  }
  return a;
}

}  // namespace

double RelevanceMap::conservation_error() const {
  return std::abs(total - contribution) / std::max(std::abs(logit), 1e-300);
}

std::vector<double> lrp_dense(std::span<const double> x, std::span<const double> weight, std::size_t n_out,
                              std::span<const double> relevance_out, double eps) {
  if (weight.size() != x.size() * n_out || relevance_out.size() != n_out) {
    throw std::invalid_argument("lrp_dense: dimension mismatch");
  }
  std::vector<double> z(n_out, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < n_out; ++j) z[j] += x[i] * weight[i * n_out + j];
  }
  std::vector<double> r(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < n_out; ++j) {
      r[i] += x[i] * weight[i * n_out + j] * relevance_out[j] / lrp_stabilize(z[j], eps);
    }
  }
  return r;
}

RelevanceMap lrp(const MsnnModel& model, const Tensor& epoch, int target_class, const LrpOptions& opt) {
  const auto& cfg = model.config;
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= cfg.n_o) {
    throw std::out_of_range("lrp: target class " + std::to_string(target_class) + " outside [0, " +
                            std::to_string(cfg.n_o) + ")");
  }
  if (!(opt.epsilon > 0.0)) throw std::invalid_argument("lrp: epsilon must be positive");
  const auto t = static_cast<std::size_t>(target_class);

  GradTape tape;
  const ForwardIds ids = record_forward(tape, model, Batch{epoch});
  const Tensor& gap = tape.value(ids.gap)[0];
  const Tensor& concat = tape.value(ids.concat)[0];

  RelevanceMap out;
  out.target_class = target_class;
  out.epsilon = opt.epsilon;
  out.logit = tape.value(ids.logits)[0](0, 0, t);
  out.contribution = out.logit - model.classifier.bias.value[t];

  // Classifier: the target logit decomposes exactly into gap_i * W[i, t].
  const std::size_t n_o = cfg.n_o;
  Tensor r_gap(1, 1, gap.maps());
  for (std::size_t i = 0; i < gap.maps(); ++i) {
    const double zi = gap(0, 0, i) * model.classifier.weight.value[i * n_o + t];
    r_gap(0, 0, i) = opt.include_bias ? zi * out.logit / lrp_stabilize(out.logit, opt.epsilon) : zi;
  }

  // GAP: average pooling is linear without bias.
  Tensor r_concat(1, concat.time(), concat.maps());
  const double inv_T = 1.0 / static_cast<double>(concat.time());
  for (std::size_t i = 0; i < concat.maps(); ++i) {
    const double g = r_gap(0, 0, i) / lrp_stabilize(gap(0, 0, i), opt.epsilon);
    for (std::size_t k = 0; k < concat.time(); ++k) r_concat(0, k, i) = concat(0, k, i) * inv_T * g;
  }

  std::vector<std::size_t> widths(cfg.F.begin() + 1, cfg.F.end());
  const auto r_sst = nn::split_featuremaps(r_concat, widths);

  std::vector<Tensor> r_fst;
  for (std::size_t k = 0; k < cfg.N(); ++k) {
    const Tensor& v = tape.value(ids.f_st[k])[0];
    r_fst.emplace_back(v.channels(), v.time(), v.maps());
  }
  Tensor r_stem;
  for (std::size_t kk = cfg.N(); kk-- > 0;) {
    const Branch& br = model.branches[kk];
    const Tensor& x_sp = tape.value(ids.f_st[kk])[0];
    const Affine sp = fold(br.spatial_bn, br.spatial.bias, opt.include_bias);
    add_into(r_fst[kk], eps_rule(x_sp, nn::spatial_conv_forward(x_sp, br.spatial, false), r_sst[kk], sp.scale,
                                 sp.offset, opt.epsilon, [&](const Tensor& g) {
                                   return nn::spatial_conv_backward(x_sp, g, br.spatial, nullptr);
                                 }));
    const Tensor& x_sep = kk == 0 ? tape.value(ids.stem)[0] : tape.value(ids.f_st[kk - 1])[0];
    const Affine se = fold(br.sep_bn, br.sep.bias, opt.include_bias);
    const Tensor u = nn::depthwise_forward(x_sep, br.sep.depthwise);
    Tensor r_in = eps_rule(x_sep, nn::pointwise_forward(u, br.sep.pointwise, nullptr), r_fst[kk], se.scale,
                           se.offset, opt.epsilon, [&](const Tensor& g) {
                             const Tensor gu = nn::pointwise_backward(u, g, br.sep.pointwise, nullptr, nullptr);
                             return nn::depthwise_backward(x_sep, gu, br.sep.depthwise, nullptr);
                           });
    if (kk == 0) {
      r_stem = std::move(r_in);
    } else {
      add_into(r_fst[kk - 1], r_in);
    }
  }
  const Affine st = fold(model.stem_bn, model.stem.bias, opt.include_bias);
  out.relevance = eps_rule(epoch, nn::temporal_conv_forward(epoch, model.stem, false), r_stem, st.scale, st.offset,
                           opt.epsilon, [&](const Tensor& g) {
                             return nn::temporal_conv_backward(epoch, g, model.stem, nullptr);
                           });
  const auto rv = out.relevance.values();
  out.total = std::accumulate(rv.begin(), rv.end(), 0.0);
  return out;
}

Spectrum relevance_spectrum(const RelevanceMap& map, double fs, const WelchOptions& opt) {
  const Tensor& r = map.relevance;
  std::vector<double> course(r.time(), 0.0);
  for (std::size_t c = 0; c < r.channels(); ++c) {
    for (std::size_t t = 0; t < r.time(); ++t) course[t] += r(c, t, 0);
  }
  return welch_psd(course, fs, opt);
}

bool normalize_pattern(std::span<const double> raw, std::vector<double>& out) {
  out.assign(raw.size(), 0.0);
  if (raw.empty()) return false;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return false;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - *lo) / range;
  // Exact endpoints regardless of rounding.
  out[static_cast<std::size_t>(lo - raw.begin())] = 0.0;
  out[static_cast<std::size_t>(hi - raw.begin())] = 1.0;
  return true;
}

namespace {

// A = C S^-1 with C = Cov(x, s) [n_c, m] and S = Cov(s) [m, m].
RowMat patterns_from_moments(const RowMat& cross, RowMat cov_s) {
  const Eigen::Index m = cov_s.rows();
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!(cov_s(j, j) > 0.0)) {
      throw std::runtime_error("activation patterns: filter output " + std::to_string(j) +
                               " has zero variance; covariance is singular");
    }
  }
  cov_s.diagonal().array() += 1e-8 * cov_s.trace() / static_cast<double>(m);
  const Eigen::LDLT<RowMat> ldlt(cov_s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
    throw std::runtime_error("activation patterns: filter-output covariance is singular after regularization");
  }
  return ldlt.solve(cross.transpose()).transpose();
}

}  // namespace

std::vector<double> haufe_patterns(std::span<const double> x, std::span<const double> s, std::size_t n_obs,
                                   std::size_t n_c, std::size_t m) {
  if (x.size() != n_obs * n_c || s.size() != n_obs * m) throw std::invalid_argument("haufe_patterns: size mismatch");
  if (n_obs < 2) throw std::invalid_argument("haufe_patterns: need at least 2 observations");
  const Eigen::Map<const RowMat> X(x.data(), static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(n_c));
  const Eigen::Map<const RowMat> S(s.data(), static_cast<Eigen::Index>(n_obs), static_cast<Eigen::Index>(m));
  const RowMat Xc = X.rowwise() - X.colwise().mean();
  const RowMat Sc = S.rowwise() - S.colwise().mean();
  const double inv = 1.0 / static_cast<double>(n_obs);
  const RowMat A = patterns_from_moments(inv * Xc.transpose() * Sc, inv * Sc.transpose() * Sc);
  return {A.data(), A.data() + A.size()};
}

std::vector<ActivationPattern> activation_patterns(const MsnnModel& model, const EpochSet& data, std::size_t branch) {
  const auto& cfg = model.config;
  if (branch < 1 || branch > cfg.N()) {
    throw std::out_of_range("activation_patterns: branch " + std::to_string(branch) + " outside 1.." +
                            std::to_string(cfg.N()));
  }
  if (data.size() == 0) throw std::invalid_argument("activation_patterns: empty data set");
  const std::size_t k = branch - 1;
  const auto& sp = model.branches[k].spatial;
  const auto n_c = static_cast<Eigen::Index>(cfg.n_c);
  const auto m = static_cast<Eigen::Index>(sp.out_maps());
  const std::size_t F = sp.in_maps();

  // Moments over observations (sample, t, f); s depends on (sample, t) only.
  Eigen::VectorXd sum_x = Eigen::VectorXd::Zero(n_c);
  Eigen::VectorXd sum_s = Eigen::VectorXd::Zero(m);
  RowMat sum_xs = RowMat::Zero(n_c, m);
  RowMat sum_ss = RowMat::Zero(m, m);
  double count = 0.0;
  const std::size_t chunk = 8;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
    Batch batch;
    for (auto i : idx) batch.push_back(data.trials[i]);
    GradTape tape;
    const ForwardIds ids = record_forward(tape, model, batch);
    for (const Tensor& x : tape.value(ids.f_st[k])) {
      const Tensor s = nn::spatial_conv_forward(x, sp, false);
      const auto T = static_cast<Eigen::Index>(x.time());
      RowMat xsum(n_c, T);  // channel vector summed over input maps, per time step
      for (Eigen::Index c = 0; c < n_c; ++c) {
        for (Eigen::Index t = 0; t < T; ++t) {
          const double* row = x.row(static_cast<std::size_t>(c), static_cast<std::size_t>(t));
          double acc = 0.0;
          for (std::size_t f = 0; f < F; ++f) acc += row[f];
          xsum(c, t) = acc;
        }
      }
      const Eigen::Map<const RowMat> S(s.values().data(), T, m);
      sum_x += xsum.rowwise().sum();
      sum_s += static_cast<double>(F) * S.colwise().sum().transpose();
      sum_xs += xsum * S;
      sum_ss += static_cast<double>(F) * (S.transpose() * S);
      count += static_cast<double>(T) * static_cast<double>(F);
    }
  }
  const Eigen::VectorXd mu_x = sum_x / count;
  const Eigen::VectorXd mu_s = sum_s / count;
  const RowMat cross = sum_xs / count - mu_x * mu_s.transpose();
  const RowMat cov_s = sum_ss / count - mu_s * mu_s.transpose();
  const RowMat A = patterns_from_moments(cross, cov_s);

  std::vector<ActivationPattern> out;
  for (Eigen::Index j = 0; j < m; ++j) {
    ActivationPattern p;
    p.branch = branch;
    p.filter = static_cast<std::size_t>(j);
    for (Eigen::Index c = 0; c < n_c; ++c) p.raw.push_back(A(c, j));
    p.normalized_ok = normalize_pattern(p.raw, p.normalized);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::string> feature_stages(const MsnnConfig& config) {
  std::vector<std::string> stages;
  for (std::size_t k = 1; k <= config.N(); ++k) stages.push_back("f" + std::to_string(k) + "_sst");
  stages.push_back("gap_concat");
  return stages;
}

FeatureMatrix export_features(const MsnnModel& model, const EpochSet& data, const std::string& stage) {
  const auto stages = feature_stages(model.config);
  const auto it = std::find(stages.begin(), stages.end(), stage);
  if (it == stages.end()) {
    std::string list;
    for (const auto& s : stages) list += (list.empty() ? "" : ", ") + s;
    throw std::invalid_argument("export_features: unknown stage '" + stage + "' (options: " + list + ")");
  }
  const bool is_gap = stage == "gap_concat";
  const std::size_t k = is_gap ? 0 : static_cast<std::size_t>(it - stages.begin());
  FeatureMatrix fm;
  fm.stage = stage;
  fm.labels = data.labels;
  const std::size_t chunk = 8;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    Batch batch;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) batch.push_back(data.trials[i]);
    GradTape tape;
    const ForwardIds ids = record_forward(tape, model, batch);
    if (is_gap) {
      for (const Tensor& g : tape.value(ids.gap)) fm.rows.emplace_back(g.values().begin(), g.values().end());
    } else {
      for (const Tensor& s : tape.value(ids.f_sst[k])) {
        const Tensor g = nn::gap_forward(s);
        fm.rows.emplace_back(g.values().begin(), g.values().end());
      }
    }
  }
  return fm;
}

}  // namespace msnn
