#include "msnn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msnn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const Tensor& x) {
  return {x.values().data(), static_cast<Eigen::Index>(x.channels() * x.time()),
          static_cast<Eigen::Index>(x.maps())};
}
MapMat as_matrix(Tensor& x) {
  return {x.values().data(), static_cast<Eigen::Index>(x.channels() * x.time()),
          static_cast<Eigen::Index>(x.maps())};
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Param Param::zeros(std::string name, std::vector<std::size_t> shape, ParamRole role) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  return Param{std::move(name), std::move(shape), std::vector<double>(n, 0.0), role};
}

std::vector<double>& Gradients::at(const Param& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end()) it = grads_.emplace(&p, std::vector<double>(p.size(), 0.0)).first;
  return it->second;
}

const std::vector<double>* Gradients::find(const Param& p) const {
  const auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double> Gradients::get(const Param& p) const {
  const auto* g = find(p);
  return g ? *g : std::vector<double>(p.size(), 0.0);
}

void Gradients::add(const Gradients& other) {
  for (const auto& [param, g] : other.grads_) {
    auto& mine = at(*param);
    for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
  }
}

bool Gradients::all_finite() const {
  for (const auto& [param, g] : grads_) {
    for (double v : g) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

namespace nn {

// ---------------------------------------------------------------------------
// Stem temporal convolution
// ---------------------------------------------------------------------------

Tensor temporal_conv_forward(const Tensor& x, const TemporalConvParams& p, bool with_bias) {
  require(x.maps() == 1, "temporal_conv: input must have one map, got " + x.shape_string());
  const std::size_t L = p.length(), F = p.maps();
  require(L <= x.time(), "temporal_conv: kernel length " + std::to_string(L) + " exceeds input length " +
                             std::to_string(x.time()));
  const std::size_t T = x.time() - L + 1;
  std::vector<double> kt(L * F);  // [L, F]
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < L; ++k) kt[k * F + f] = p.kernel.value[f * L + k];
  }
  Tensor y(x.channels(), T, F);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const double* xc = x.row(c, 0);
    for (std::size_t t = 0; t < T; ++t) {
      double* out = y.row(c, t);
      for (std::size_t f = 0; f < F; ++f) out[f] = with_bias ? p.bias.value[f] : 0.0;
      for (std::size_t k = 0; k < L; ++k) {
        const double xv = xc[t + k];
        const double* kr = &kt[k * F];
        for (std::size_t f = 0; f < F; ++f) out[f] += xv * kr[f];
      }
    }
  }
  return y;
}

Tensor temporal_conv_backward(const Tensor& x, const Tensor& grad_y, const TemporalConvParams& p,
                              Gradients* grads) {
  const std::size_t L = p.length(), F = p.maps();
  const std::size_t T = grad_y.time();
  std::vector<double> kt(L * F);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < L; ++k) kt[k * F + f] = p.kernel.value[f * L + k];
  }
  std::vector<double> dkt(grads ? L * F : 0, 0.0);
  std::vector<double> db(grads ? F : 0, 0.0);
  Tensor gx(x.channels(), x.time(), 1);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const double* xc = x.row(c, 0);
    double* gxc = gx.row(c, 0);
    for (std::size_t t = 0; t < T; ++t) {
      const double* g = grad_y.row(c, t);
      for (std::size_t k = 0; k < L; ++k) {
        const double* kr = &kt[k * F];
        double acc = 0.0;
        for (std::size_t f = 0; f < F; ++f) acc += g[f] * kr[f];
        gxc[t + k] += acc;
      }
      if (grads) {
        for (std::size_t k = 0; k < L; ++k) {
          const double xv = xc[t + k];
          double* dk = &dkt[k * F];
          for (std::size_t f = 0; f < F; ++f) dk[f] += g[f] * xv;
        }
        for (std::size_t f = 0; f < F; ++f) db[f] += g[f];
      }
    }
  }
  if (grads) {
    auto& gk = grads->at(p.kernel);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < L; ++k) gk[f * L + k] += dkt[k * F + f];
    }
    auto& gb = grads->at(p.bias);
    for (std::size_t f = 0; f < F; ++f) gb[f] += db[f];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Separable convolution: depthwise (same padding) then pointwise
// ---------------------------------------------------------------------------

Tensor depthwise_forward(const Tensor& x, const Param& depthwise) {
  const std::size_t F = depthwise.shape.at(0), L = depthwise.shape.at(1);
  require(x.maps() == F, "separable_conv: input has " + std::to_string(x.maps()) + " maps, kernel expects " +
                             std::to_string(F));
  const std::size_t T = x.time();
  const auto pad = static_cast<std::ptrdiff_t>(same_pad_left(L));
  std::vector<double> dt(L * F);  // [L, F]
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < L; ++k) dt[k * F + f] = depthwise.value[f * L + k];
  }
  Tensor u(x.channels(), T, F);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      double* out = u.row(c, t);
      const auto k_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, pad - static_cast<std::ptrdiff_t>(t)));
      const auto k_hi = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(L), static_cast<std::ptrdiff_t>(T) + pad - static_cast<std::ptrdiff_t>(t)));
      for (std::size_t k = k_lo; k < k_hi; ++k) {
        const double* in = x.row(c, t + k - static_cast<std::size_t>(pad));
        const double* kr = &dt[k * F];
        for (std::size_t f = 0; f < F; ++f) out[f] += in[f] * kr[f];
      }
    }
  }
  return u;
}

Tensor depthwise_backward(const Tensor& x, const Tensor& grad_u, const Param& depthwise,
                          std::vector<double>* grad_depthwise) {
  const std::size_t F = depthwise.shape.at(0), L = depthwise.shape.at(1);
  const std::size_t T = x.time();
  const auto pad = static_cast<std::ptrdiff_t>(same_pad_left(L));
  std::vector<double> dt(L * F);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < L; ++k) dt[k * F + f] = depthwise.value[f * L + k];
  }
  std::vector<double> ddt(grad_depthwise ? L * F : 0, 0.0);
  Tensor gx(x.channels(), T, F);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* g = grad_u.row(c, t);
      const auto k_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, pad - static_cast<std::ptrdiff_t>(t)));
      const auto k_hi = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(L), static_cast<std::ptrdiff_t>(T) + pad - static_cast<std::ptrdiff_t>(t)));
      for (std::size_t k = k_lo; k < k_hi; ++k) {
        const std::size_t src = t + k - static_cast<std::size_t>(pad);
        double* gin = gx.row(c, src);
        const double* kr = &dt[k * F];
        for (std::size_t f = 0; f < F; ++f) gin[f] += g[f] * kr[f];
        if (grad_depthwise) {
          const double* in = x.row(c, src);
          double* dk = &ddt[k * F];
          for (std::size_t f = 0; f < F; ++f) dk[f] += g[f] * in[f];
        }
      }
    }
  }
  if (grad_depthwise) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < L; ++k) (*grad_depthwise)[f * L + k] += ddt[k * F + f];
    }
  }
  return gx;
}

Tensor pointwise_forward(const Tensor& u, const Param& pointwise, const Param* bias) {
  const std::size_t Fo = pointwise.shape.at(0), Fi = pointwise.shape.at(1);
  require(u.maps() == Fi, "pointwise: input has " + std::to_string(u.maps()) + " maps, expected " +
                              std::to_string(Fi));
  Tensor y(u.channels(), u.time(), Fo);
  const ConstMapMat P(pointwise.value.data(), static_cast<Eigen::Index>(Fo), static_cast<Eigen::Index>(Fi));
  auto Y = as_matrix(y);
  Y.noalias() = as_matrix(u) * P.transpose();
  if (bias) {
    const Eigen::Map<const Eigen::RowVectorXd> b(bias->value.data(), static_cast<Eigen::Index>(Fo));
    Y.rowwise() += b;
  }
  return y;
}

Tensor pointwise_backward(const Tensor& u, const Tensor& grad_y, const Param& pointwise,
                          std::vector<double>* grad_pointwise, std::vector<double>* grad_bias) {
  const std::size_t Fo = pointwise.shape.at(0), Fi = pointwise.shape.at(1);
  const ConstMapMat P(pointwise.value.data(), static_cast<Eigen::Index>(Fo), static_cast<Eigen::Index>(Fi));
  const auto G = as_matrix(grad_y);
  Tensor gu(u.channels(), u.time(), Fi);
  as_matrix(gu).noalias() = G * P;
  if (grad_pointwise) {
    MapMat dP(grad_pointwise->data(), static_cast<Eigen::Index>(Fo), static_cast<Eigen::Index>(Fi));
    dP.noalias() += G.transpose() * as_matrix(u);
  }
  if (grad_bias) {
    Eigen::Map<Eigen::RowVectorXd> db(grad_bias->data(), static_cast<Eigen::Index>(Fo));
    db += G.colwise().sum();
  }
  return gu;
}

Tensor separable_conv_forward(const Tensor& x, const SeparableConvParams& p, bool with_bias) {
  require(p.in_maps() == p.pointwise.shape.at(1), "separable_conv: depthwise/pointwise map mismatch");
  return pointwise_forward(depthwise_forward(x, p.depthwise), p.pointwise, with_bias ? &p.bias : nullptr);
}

// ---------------------------------------------------------------------------
// Spatial convolution
// ---------------------------------------------------------------------------

Tensor spatial_conv_forward(const Tensor& x, const SpatialConvParams& p, bool with_bias) {
  require(x.channels() == p.channels(), "spatial_conv: input has " + std::to_string(x.channels()) +
                                            " channels, kernel spans " + std::to_string(p.channels()));
  require(x.maps() == p.in_maps(), "spatial_conv: input has " + std::to_string(x.maps()) +
                                       " maps, kernel expects " + std::to_string(p.in_maps()));
  const auto T = static_cast<Eigen::Index>(x.time());
  const auto Fi = static_cast<Eigen::Index>(p.in_maps());
  const auto Fo = static_cast<Eigen::Index>(p.out_maps());
  Tensor y(1, x.time(), p.out_maps());
  auto Y = as_matrix(y);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const ConstMapMat Xc(x.row(c, 0), T, Fi);
    const ConstMapMat Wc(p.kernel.value.data() + c * p.in_maps() * p.out_maps(), Fi, Fo);
    Y.noalias() += Xc * Wc;
  }
  if (with_bias) {
    const Eigen::Map<const Eigen::RowVectorXd> b(p.bias.value.data(), Fo);
    Y.rowwise() += b;
  }
  return y;
}

Tensor spatial_conv_backward(const Tensor& x, const Tensor& grad_y, const SpatialConvParams& p,
                             Gradients* grads) {
  const auto T = static_cast<Eigen::Index>(x.time());
  const auto Fi = static_cast<Eigen::Index>(p.in_maps());
  const auto Fo = static_cast<Eigen::Index>(p.out_maps());
  const auto G = as_matrix(grad_y);
  Tensor gx(x.channels(), x.time(), x.maps());
  std::vector<double>* gk = grads ? &grads->at(p.kernel) : nullptr;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const ConstMapMat Wc(p.kernel.value.data() + c * p.in_maps() * p.out_maps(), Fi, Fo);
    MapMat gXc(gx.row(c, 0), T, Fi);
    gXc.noalias() = G * Wc.transpose();
    if (gk) {
      const ConstMapMat Xc(x.row(c, 0), T, Fi);
      MapMat dWc(gk->data() + c * p.in_maps() * p.out_maps(), Fi, Fo);
      dWc.noalias() += Xc.transpose() * G;
    }
  }
  if (grads) {
    Eigen::Map<Eigen::RowVectorXd> db(grads->at(p.bias).data(), Fo);
    db += G.colwise().sum();
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

void batch_norm_affine(const BatchNormParams& p, std::vector<double>& scale, std::vector<double>& shift) {
  const std::size_t F = p.maps();
  scale.assign(F, 0.0);
  shift.assign(F, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    scale[f] = p.gamma.value[f] / std::sqrt(p.running_var[f] + p.eps);
    shift[f] = p.beta.value[f] - scale[f] * p.running_mean[f];
  }
}

Batch batch_norm_forward(const Batch& x, BatchNormParams& p, Mode mode, bool update_running,
                         BatchNormCache* cache) {
  require(!x.empty(), "batch_norm: empty batch");
  const std::size_t F = p.maps();
  for (const auto& s : x) {
    require(s.maps() == F, "batch_norm: input has " + std::to_string(s.maps()) + " maps, expected " +
                               std::to_string(F));
  }
  std::vector<double> mean(F, 0.0), inv_std(F, 0.0);
  if (mode == Mode::Train) {
    double count = 0.0;
    for (const auto& s : x) {
      const std::size_t rows = s.channels() * s.time();
      const double* d = s.values().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < F; ++f) mean[f] += d[r * F + f];
      }
      count += static_cast<double>(rows);
    }
    for (double& m : mean) m /= count;
    std::vector<double> var(F, 0.0);
    for (const auto& s : x) {
      const std::size_t rows = s.channels() * s.time();
      const double* d = s.values().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < F; ++f) {
          const double dv = d[r * F + f] - mean[f];
          var[f] += dv * dv;
        }
      }
    }
    for (std::size_t f = 0; f < F; ++f) {
      var[f] /= count;
      inv_std[f] = 1.0 / std::sqrt(var[f] + p.eps);
    }
    if (update_running) {
      const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
      for (std::size_t f = 0; f < F; ++f) {
        p.running_mean[f] = p.momentum * p.running_mean[f] + (1.0 - p.momentum) * mean[f];
        p.running_var[f] = p.momentum * p.running_var[f] + (1.0 - p.momentum) * var[f] * unbias;
      }
      p.ready = true;
    }
  } else {
    if (!p.ready) {
      throw std::logic_error("batch_norm: eval mode requested before any running-statistics update (" +
                             p.gamma.name + ")");
    }
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = p.running_mean[f];
      inv_std[f] = 1.0 / std::sqrt(p.running_var[f] + p.eps);
    }
  }

  Batch y;
  y.reserve(x.size());
  for (const auto& s : x) {
    Tensor out(s.channels(), s.time(), F);
    const std::size_t rows = s.channels() * s.time();
    const double* d = s.values().data();
    double* o = out.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < F; ++f) {
        o[r * F + f] = p.gamma.value[f] * (d[r * F + f] - mean[f]) * inv_std[f] + p.beta.value[f];
      }
    }
    y.push_back(std::move(out));
  }
  if (cache) *cache = BatchNormCache{mode, std::move(mean), std::move(inv_std)};
  return y;
}

Batch batch_norm_backward(const Batch& x, const Batch& grad_y, const BatchNormParams& p,
                          const BatchNormCache& cache, Gradients* grads) {
  const std::size_t F = p.maps();
  std::vector<double> sum_g(F, 0.0), sum_gx(F, 0.0);
  double count = 0.0;
  for (std::size_t b = 0; b < x.size(); ++b) {
    const std::size_t rows = x[b].channels() * x[b].time();
    const double* d = x[b].values().data();
    const double* g = grad_y[b].values().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < F; ++f) {
        const double xhat = (d[r * F + f] - cache.mean[f]) * cache.inv_std[f];
        sum_g[f] += g[r * F + f];
        sum_gx[f] += g[r * F + f] * xhat;
      }
    }
    count += static_cast<double>(rows);
  }
  if (grads) {
    auto& gg = grads->at(p.gamma);
    auto& gb = grads->at(p.beta);
    for (std::size_t f = 0; f < F; ++f) {
      gg[f] += sum_gx[f];
      gb[f] += sum_g[f];
    }
  }
  Batch gx;
  gx.reserve(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    Tensor out(x[b].channels(), x[b].time(), F);
    const std::size_t rows = x[b].channels() * x[b].time();
    const double* d = x[b].values().data();
    const double* g = grad_y[b].values().data();
    double* o = out.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < F; ++f) {
        const double k = p.gamma.value[f] * cache.inv_std[f];
        if (cache.mode == Mode::Train) {
          const double xhat = (d[r * F + f] - cache.mean[f]) * cache.inv_std[f];
          o[r * F + f] = k * (g[r * F + f] - sum_g[f] / count - xhat * sum_gx[f] / count);
        } else {
          o[r * F + f] = k * g[r * F + f];
        }
      }
    }
    gx.push_back(std::move(out));
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Elementwise, pooling, concatenation, classifier
// ---------------------------------------------------------------------------

Tensor leaky_relu_forward(const Tensor& x, double slope) {
  Tensor y = x;
  for (double& v : y.values()) {
    if (v < 0.0) v *= slope;
  }
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& grad_y, double slope) {
  Tensor g = grad_y;
  const auto xs = x.values();
  auto gs = g.values();
  for (std::size_t i = 0; i < gs.size(); ++i) {
    if (xs[i] < 0.0) gs[i] *= slope;
  }
  return g;
}

Tensor gap_forward(const Tensor& x) {
  require(x.channels() == 1, "gap: channel dimension must be 1, got " + x.shape_string());
  require(x.time() > 0, "gap: empty time dimension");
  Tensor y(1, 1, x.maps());
  for (std::size_t t = 0; t < x.time(); ++t) {
    const double* r = x.row(0, t);
    for (std::size_t f = 0; f < x.maps(); ++f) y(0, 0, f) += r[f];
  }
  const double inv = 1.0 / static_cast<double>(x.time());
  for (double& v : y.values()) v *= inv;
  return y;
}

Tensor gap_backward(const Tensor& x, const Tensor& grad_y) {
  Tensor g(x.channels(), x.time(), x.maps());
  const double inv = 1.0 / static_cast<double>(x.time());
  for (std::size_t t = 0; t < x.time(); ++t) {
    for (std::size_t f = 0; f < x.maps(); ++f) g(0, t, f) = grad_y(0, 0, f) * inv;
  }
  return g;
}

Tensor concat_featuremaps(std::span<const Tensor> xs) {
  require(!xs.empty(), "concat: no inputs");
  std::size_t total = 0;
  for (const auto& x : xs) {
    require(x.channels() == xs[0].channels() && x.time() == xs[0].time(),
            "concat: input " + x.shape_string() + " does not match " + xs[0].shape_string());
    total += x.maps();
  }
  Tensor y(xs[0].channels(), xs[0].time(), total);
  for (std::size_t c = 0; c < y.channels(); ++c) {
    for (std::size_t t = 0; t < y.time(); ++t) {
      double* out = y.row(c, t);
      for (const auto& x : xs) {
        std::copy_n(x.row(c, t), x.maps(), out);
        out += x.maps();
      }
    }
  }
  return y;
}

std::vector<Tensor> split_featuremaps(const Tensor& x, std::span<const std::size_t> widths) {
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  require(total == x.maps(), "split: widths sum to " + std::to_string(total) + ", tensor has " +
                                 std::to_string(x.maps()) + " maps");
  std::vector<Tensor> out;
  for (const std::size_t w : widths) out.emplace_back(x.channels(), x.time(), w);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t t = 0; t < x.time(); ++t) {
      const double* in = x.row(c, t);
      for (auto& part : out) {
        std::copy_n(in, part.maps(), part.row(c, t));
        in += part.maps();
      }
    }
  }
  return out;
}

std::vector<double> dense_forward(const Tensor& x, const DenseParams& p) {
  require(x.size() == p.in_features(), "dense: input has " + std::to_string(x.size()) +
                                           " features, weight expects " + std::to_string(p.in_features()));
  const std::size_t n_o = p.outputs();
  std::vector<double> z(p.bias.value.begin(), p.bias.value.end());
  const auto xs = x.values();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double* w = &p.weight.value[i * n_o];
    for (std::size_t j = 0; j < n_o; ++j) z[j] += xs[i] * w[j];
  }
  return z;
}

Tensor dense_backward(const Tensor& x, std::span<const double> grad_logits, const DenseParams& p,
                      Gradients* grads) {
  const std::size_t n_o = p.outputs();
  Tensor gx(x.channels(), x.time(), x.maps());
  const auto xs = x.values();
  auto gxs = gx.values();
  std::vector<double>* gw = grads ? &grads->at(p.weight) : nullptr;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double* w = &p.weight.value[i * n_o];
    double acc = 0.0;
    for (std::size_t j = 0; j < n_o; ++j) acc += w[j] * grad_logits[j];
    gxs[i] = acc;
    if (gw) {
      for (std::size_t j = 0; j < n_o; ++j) (*gw)[i * n_o + j] += xs[i] * grad_logits[j];
    }
  }
  if (grads) {
    auto& gb = grads->at(p.bias);
    for (std::size_t j = 0; j < n_o; ++j) gb[j] += grad_logits[j];
  }
  return gx;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] - m);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> dense_softmax_forward(const Tensor& x, const DenseParams& p) {
  return softmax(dense_forward(x, p));
}

}  // namespace nn
}  // namespace msnn
