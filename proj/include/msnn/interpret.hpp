#pragma once

#include "msnn/dataset.hpp"
#include "msnn/model.hpp"
#include "msnn/spectrum.hpp"

#include <span>
#include <string>
#include <vector>

namespace msnn {

struct LrpOptions {
  double epsilon = 1e-6;
  // Include biases and BN shifts in the epsilon-rule denominators. Off by
  // default: bias-free denominators keep relevance conserved layer to layer.
  bool include_bias = false;
};

struct RelevanceMap {
  Tensor relevance;  // [n_c, n_T, 1], same layout as the input epoch
  int target_class = 0;
  double epsilon = 0.0;
  double logit = 0.0;         // target pre-softmax score
  double contribution = 0.0;  // logit minus the classifier bias, the amount distributed
  double total = 0.0;         // sum of input relevance

  // |total - contribution| / |logit|
  double conservation_error() const;
};

// Stabilized denominator z + eps * sign(z), sign(0) = +1.
inline double lrp_stabilize(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

// Epsilon rule through one dense layer y = W^T x with W [in, out] row-major.
std::vector<double> lrp_dense(std::span<const double> x, std::span<const double> weight, std::size_t n_out,
                              std::span<const double> relevance_out, double eps);

// Relevance of every input sample for `target_class`, eval mode.
RelevanceMap lrp(const MsnnModel& model, const Tensor& epoch, int target_class, const LrpOptions& opt = {});

// Welch spectrum of the channel-summed relevance time course, on the
// welch_psd grid.
Spectrum relevance_spectrum(const RelevanceMap& map, double fs, const WelchOptions& opt = {});

struct ActivationPattern {
  std::size_t branch = 0;  // 1-based
  std::size_t filter = 0;  // 0-based output map of the spatial convolution
  std::vector<double> raw;         // n_c
  std::vector<double> normalized;  // n_c, min-max scaled to [0, 1]
  bool normalized_ok = false;      // false when the raw pattern is constant
};

// Forward-model patterns A = Cov(x, s) Cov(s)^-1 from paired observations.
// x: [n_obs, n_c] row-major, s: [n_obs, m] row-major. Cov(s) gets
// 1e-8 trace/m added to its diagonal. Returns A as [n_c, m].
std::vector<double> haufe_patterns(std::span<const double> x, std::span<const double> s, std::size_t n_obs,
                                   std::size_t n_c, std::size_t m);

// Min-max scaling; returns false (and zeros) for a constant vector.
bool normalize_pattern(std::span<const double> raw, std::vector<double>& out);

// Patterns of every spatial filter of branch k (1-based). Observations pair
// the channel vector of the branch input at each (sample, time, input map)
// with the bias-free spatial outputs at that (sample, time).
std::vector<ActivationPattern> activation_patterns(const MsnnModel& model, const EpochSet& data, std::size_t branch);

struct FeatureMatrix {
  std::string stage;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }
};

// Stages: "gap_concat" or "f<k>_sst" (k 1-based). Spatial outputs are
// time-averaged per map.
FeatureMatrix export_features(const MsnnModel& model, const EpochSet& data, const std::string& stage);
std::vector<std::string> feature_stages(const MsnnConfig& config);

}  // namespace msnn
