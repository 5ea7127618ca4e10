#pragma once

#include "msnn/tensor.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace msnn {

enum class ParamRole { Weight, Bias, BnGamma, BnBeta };

// A named trainable array. Shapes are documented per layer below.
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  ParamRole role = ParamRole::Weight;

  static Param zeros(std::string name, std::vector<std::size_t> shape, ParamRole role);
  std::size_t size() const { return value.size(); }
};

// Stem convolution 𝒞₀: kernel [maps, length], bias [maps].
struct TemporalConvParams {
  Param kernel;
  Param bias;
  std::size_t maps() const { return kernel.shape.at(0); }
  std::size_t length() const { return kernel.shape.at(1); }
};

// Depthwise (multiplier 1) then pointwise convolution.
// depthwise [in_maps, length], pointwise [out_maps, in_maps], bias [out_maps].
struct SeparableConvParams {
  Param depthwise;
  Param pointwise;
  Param bias;
  std::size_t in_maps() const { return depthwise.shape.at(0); }
  std::size_t length() const { return depthwise.shape.at(1); }
  std::size_t out_maps() const { return pointwise.shape.at(0); }
};

// (n_c x 1) convolution over every input map with valid padding.
// kernel [channels, in_maps, out_maps], bias [out_maps].
struct SpatialConvParams {
  Param kernel;
  Param bias;
  std::size_t channels() const { return kernel.shape.at(0); }
  std::size_t in_maps() const { return kernel.shape.at(1); }
  std::size_t out_maps() const { return kernel.shape.at(2); }
};

struct BatchNormParams {
  Param gamma;
  Param beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  bool ready = false;     // set by the first running-statistics update
  std::size_t maps() const { return gamma.size(); }
};

// Classifier: weight [in_features, n_o], bias [n_o].
struct DenseParams {
  Param weight;
  Param bias;
  std::size_t in_features() const { return weight.shape.at(0); }
  std::size_t outputs() const { return weight.shape.at(1); }
};

enum class Mode { Train, Eval };

// Gradient buffers keyed by parameter identity, zero-initialized on first use.
class Gradients {
 public:
  std::vector<double>& at(const Param& p);
  const std::vector<double>* find(const Param& p) const;
  // Zeros when no gradient reached `p`.
  std::vector<double> get(const Param& p) const;
  void add(const Gradients& other);
  bool all_finite() const;

 private:
  std::map<const Param*, std::vector<double>> grads_;
};

namespace nn {

// Valid 1-D correlation along time, same kernels for every channel.
// [n_c, n_T, 1] -> [n_c, n_T - L + 1, F0].
Tensor temporal_conv_forward(const Tensor& x, const TemporalConvParams& p, bool with_bias = true);
// Accumulates parameter gradients into `grads` (if non-null); returns dL/dx.
Tensor temporal_conv_backward(const Tensor& x, const Tensor& grad_y, const TemporalConvParams& p,
                              Gradients* grads);

// Zero padding split (length-1)/2 on the left, the remainder on the right.
inline std::size_t same_pad_left(std::size_t length) { return (length - 1) / 2; }

Tensor depthwise_forward(const Tensor& x, const Param& depthwise);
Tensor depthwise_backward(const Tensor& x, const Tensor& grad_u, const Param& depthwise,
                          std::vector<double>* grad_depthwise);
Tensor pointwise_forward(const Tensor& u, const Param& pointwise, const Param* bias);
Tensor pointwise_backward(const Tensor& u, const Tensor& grad_y, const Param& pointwise,
                          std::vector<double>* grad_pointwise, std::vector<double>* grad_bias);

Tensor separable_conv_forward(const Tensor& x, const SeparableConvParams& p, bool with_bias = true);

// [n_c, T, F_in] -> [1, T, F_out].
Tensor spatial_conv_forward(const Tensor& x, const SpatialConvParams& p, bool with_bias = true);
Tensor spatial_conv_backward(const Tensor& x, const Tensor& grad_y, const SpatialConvParams& p,
                             Gradients* grads);

// Per-map statistics over (batch, channel, time).
struct BatchNormCache {
  Mode mode = Mode::Eval;
  std::vector<double> mean;
  std::vector<double> inv_std;
};

Batch batch_norm_forward(const Batch& x, BatchNormParams& p, Mode mode, bool update_running,
                         BatchNormCache* cache = nullptr);
Batch batch_norm_backward(const Batch& x, const Batch& grad_y, const BatchNormParams& p,
                          const BatchNormCache& cache, Gradients* grads);
// Eval-mode BN as y = scale * x + shift per map.
void batch_norm_affine(const BatchNormParams& p, std::vector<double>& scale, std::vector<double>& shift);

Tensor leaky_relu_forward(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& grad_y, double slope);

// [1, T, F] -> [1, 1, F].
Tensor gap_forward(const Tensor& x);
Tensor gap_backward(const Tensor& x, const Tensor& grad_y);

Tensor concat_featuremaps(std::span<const Tensor> xs);
std::vector<Tensor> split_featuremaps(const Tensor& x, std::span<const std::size_t> widths);

std::vector<double> dense_forward(const Tensor& x, const DenseParams& p);
Tensor dense_backward(const Tensor& x, std::span<const double> grad_logits, const DenseParams& p,
                      Gradients* grads);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> dense_softmax_forward(const Tensor& x, const DenseParams& p);

}  // namespace nn
}  // namespace msnn
