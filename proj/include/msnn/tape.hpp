#pragma once

#include "msnn/layers.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace msnn {

// Records batch-level layer applications and replays them in reverse.
// Values are addressed by the ids returned from each call. A value may feed
// several later layers; gradients arriving from each consumer are summed.
class GradTape {
 public:
  using Id = std::size_t;

  GradTape();
  ~GradTape();
  GradTape(GradTape&&) noexcept;
  GradTape& operator=(GradTape&&) noexcept;

  Id input(Batch x);
  Id temporal_conv(Id x, const TemporalConvParams& p);
  Id separable_conv(Id x, const SeparableConvParams& p);
  Id spatial_conv(Id x, const SpatialConvParams& p);
  // With update_running the running statistics of `p` are updated (train mode only).
  Id batch_norm(Id x, BatchNormParams& p, Mode mode, bool update_running);
  Id batch_norm(Id x, const BatchNormParams& p, Mode mode);
  Id leaky_relu(Id x, double slope);
  Id concat(const std::vector<Id>& xs);
  Id gap(Id x);
  // Logits, one Tensor [1, 1, n_o] per sample.
  Id dense(Id x, const DenseParams& p);

  const Batch& value(Id id) const;
  std::size_t batch_size() const;

  // One byte per leaky-ReLU input element (1 where negative), concatenated in
  // recording order. Two forwards with equal signatures traverse the same
  // linear pieces.
  std::vector<std::uint8_t> activation_signs() const;

  struct Result {
    Gradients grads;
    Batch input_grad;
  };
  // Seeds d(loss)/d(value(out)) with `grad_out` and propagates to every
  // parameter and to the input. Throws std::logic_error on a second call.
  Result backward(Id out, Batch grad_out);
  bool consumed() const { return consumed_; }

 private:
  struct Record;
  Id push(Batch value);
  void check_id(Id id) const;

  std::vector<Batch> values_;
  std::vector<std::unique_ptr<Record>> records_;
  bool consumed_ = false;
};

}  // namespace msnn
