#pragma once

#include "msnn/layers.hpp"
#include "msnn/preproc.hpp"
#include "msnn/tape.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace msnn {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::vector<std::string>& failures);
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::vector<std::string> failures_;
};

struct MsnnConfig {
  std::size_t n_c = 64;
  std::size_t n_T = 1024;
  std::size_t f_s = 512;
  std::size_t n_o = 2;
  std::vector<std::size_t> T{100, 60, 20};     // T_1..T_N
  std::vector<std::size_t> F{4, 16, 32, 64};   // F_0..F_N
  double leaky_slope = 0.01;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
  double effective_fs = 0.0;  // 0 means f_s
  std::uint64_t seed = 0;

  std::size_t N() const { return T.size(); }
  std::size_t stem_length() const { return f_s / 2; }
  std::size_t n_T_prime() const { return n_T + 1 - stem_length(); }
  std::size_t branch_maps() const;  // sum of F_1..F_N
  double branch_fs() const { return effective_fs > 0.0 ? effective_fs : static_cast<double>(f_s); }
  // Nominal frequency resolved by branch k (1-based): effective_fs / T_k.
  double branch_frequency(std::size_t k) const;

  // Throws ConfigError naming every failed field.
  void validate() const;

  bool operator==(const MsnnConfig&) const = default;
};

// Kernel-length presets.
inline const std::vector<std::size_t> kMotorImageryKernels{100, 60, 20};
inline const std::vector<std::size_t> kSsvepKernels{20, 10, 5};

struct Branch {
  SeparableConvParams sep;
  BatchNormParams sep_bn;
  SpatialConvParams spatial;
  BatchNormParams spatial_bn;
};

class MsnnModel {
 public:
  MsnnConfig config;
  TemporalConvParams stem;
  BatchNormParams stem_bn;
  std::vector<Branch> branches;
  DenseParams classifier;
  // Normalization fitted on the training data, carried with the checkpoint.
  std::optional<NormStats> norm;

  static MsnnModel build(const MsnnConfig& config);

  // Every trainable array in a fixed order.
  std::vector<Param*> trainable_params();
  std::vector<const Param*> trainable_params() const;
  std::vector<BatchNormParams*> batch_norms();
  std::vector<const BatchNormParams*> batch_norms() const;
  bool bn_ready() const;

  MsnnModel() = default;
  MsnnModel(const MsnnModel&) = default;
  MsnnModel& operator=(const MsnnModel&) = default;
};

struct ForwardIds {
  GradTape::Id input = 0;
  GradTape::Id stem = 0;            // stem output after BN and activation
  std::vector<GradTape::Id> f_st;   // tap after separable conv k (post BN and activation)
  std::vector<GradTape::Id> f_sst;  // spatial branch outputs
  GradTape::Id concat = 0;
  GradTape::Id gap = 0;
  GradTape::Id logits = 0;
};

// Records the full network on `tape`. Train mode updates BN running
// statistics when `update_running` is set.
ForwardIds record_forward(GradTape& tape, MsnnModel& model, const Batch& batch, Mode mode,
                          bool update_running = true);
// Eval-mode recording; never touches the model.
ForwardIds record_forward(GradTape& tape, const MsnnModel& model, const Batch& batch);

struct ForwardResult {
  std::vector<std::vector<double>> logits;  // [B][n_o]
  std::vector<std::vector<double>> probs;   // [B][n_o]
  std::vector<Batch> f_st;                  // [N] x [B] x [n_c, n_T', F_k]
  std::vector<Batch> f_sst;                 // [N] x [B] x [1, n_T', F_k]
  Batch concat;                             // [B] x [1, n_T', sum F]
  Batch gap;                                // [B] x [1, 1, sum F]
};

void check_batch(const MsnnConfig& config, const Batch& batch);
ForwardResult forward(MsnnModel& model, const Batch& batch, Mode mode);
ForwardResult forward(const MsnnModel& model, const Batch& batch);
// Eval-mode probabilities only, computed in chunks to bound memory.
std::vector<std::vector<double>> predict_proba(const MsnnModel& model, const Batch& batch,
                                               std::size_t chunk = 8);

struct LayerCount {
  std::string name;
  std::size_t count = 0;
};

struct ParamCount {
  std::vector<LayerCount> layers;  // one entry per trainable array
  std::size_t total = 0;
  std::size_t classifier_weights = 0;         // n_o * sum F
  std::size_t no_gap_classifier_weights = 0;  // n_T' * n_o * sum F
  std::size_t gap_reduction_factor = 0;       // ratio of the two, equals n_T'
  // Separable conv k under three conventions (weights only, no bias).
  std::vector<std::size_t> separable_shared_depthwise;  // T_k + F_{k-1} F_k
  std::vector<std::size_t> separable_per_map;           // T_k F_{k-1} + F_{k-1} F_k
  std::vector<std::size_t> conventional_conv;           // T_k F_{k-1} F_k
};

ParamCount param_count(const MsnnModel& model);

}  // namespace msnn
