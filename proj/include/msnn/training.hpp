#pragma once

#include "msnn/dataset.hpp"
#include "msnn/model.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace msnn {

enum class LrSchedule { Geometric, Exponential };

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr0 = 0.03;
  double decay_per_epoch = 0.001;
  LrSchedule schedule = LrSchedule::Geometric;
  double l1 = 0.01;
  double l2 = 0.001;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Sum over the batch of -log p[label], with log floored at 1e-12.
double cross_entropy(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels);
// One-hot form.
double cross_entropy(const std::vector<std::vector<double>>& y, const std::vector<std::vector<double>>& probs);

// l1*sum|w| + l2*sum w^2 over one array; adds the (sub)gradient to `grad`
// when non-empty. The subgradient of |w| at 0 is 0.
double l1_l2_penalty(std::span<const double> w, double l1, double l2, std::span<double> grad = {});
// Over every Weight-role parameter of the model (biases and BN excluded).
double l1_l2_penalty(const MsnnModel& model, double l1, double l2, Gradients* grads = nullptr);

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam with moments keyed by parameter identity.
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}
  // Throws std::domain_error before touching anything if a gradient is NaN/Inf.
  void step(const std::vector<Param*>& params, const Gradients& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamOptions opt_;
  std::size_t t_ = 0;
  std::map<const Param*, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::string> warnings;
};

// Stratified holdout of round(n * val_fraction) samples, apportioned across
// classes by largest remainder. Classes with fewer than 2 samples stay in
// train with a warning.
TrainValSplit split_train_val(const std::vector<int>& labels, int n_classes, double val_fraction,
                              std::uint64_t seed);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean objective per mini-batch
  double val_loss = 0.0;    // mean cross-entropy per validation sample
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrainReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

struct FitResult {
  MsnnModel best;
  TrainReport report;
};

Batch make_batch(const EpochSet& data, const std::vector<std::size_t>& indices);

// One optimizer step on a mini-batch: train-mode forward, objective
// CE + penalty, backward, Adam. Returns the objective.
double train_step(MsnnModel& model, const Batch& batch, const std::vector<int>& labels, Adam& adam, double lr,
                  double l1, double l2);

// Mean cross-entropy and accuracy in eval mode.
struct EvalLoss {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalLoss evaluate_loss(const MsnnModel& model, const EpochSet& data);

// Splits `data` 9:1 internally and trains. Model selection: highest
// validation accuracy, ties to the lower validation loss, then the earlier
// epoch. Stops after `patience` epochs without a new best.
FitResult fit(MsnnModel model, const EpochSet& data, const TrainConfig& cfg);
// Same with an explicit validation set.
FitResult fit(MsnnModel model, const EpochSet& train, const EpochSet& val, const TrainConfig& cfg);

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t coordinates = 240;
  Mode mode = Mode::Train;
  double l1 = 0.0;
  double l2 = 0.0;
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks_skipped = 0;
  std::map<std::string, std::size_t> per_param;  // coordinates checked per array
  std::map<std::string, double> max_per_param;
};

// Central differences of CE + penalty against the tape gradient. BN uses
// batch statistics in Train mode (running statistics untouched) and running
// statistics in Eval mode. Coordinates whose perturbation flips a leaky-ReLU
// branch are replaced by fresh samples from the same array.
GradCheckReport grad_check(MsnnModel& model, const Batch& batch, const std::vector<int>& labels,
                           const GradCheckOptions& opt = {});

}  // namespace msnn
