#include "msnn/training.hpp"

#include "msnn/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msnn {

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (!(lr0 > 0.0)) bad.push_back("lr0 must be positive");
  if (!(decay_per_epoch >= 0.0 && decay_per_epoch < 1.0)) bad.push_back("decay_per_epoch must lie in [0, 1)");
  if (l1 < 0.0 || l2 < 0.0) bad.push_back("l1 and l2 must be non-negative");
  if (max_epochs < 1) bad.push_back("max_epochs must be >= 1");
  if (patience > max_epochs) bad.push_back("patience must not exceed max_epochs");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    bad.push_back("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) bad.push_back("adam_eps must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) bad.push_back("val_fraction must lie in (0, 1)");
  if (!bad.empty()) throw ConfigError(bad);
}

double cross_entropy(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("cross_entropy: batch size mismatch");
  double loss = 0.0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= probs[b].size()) {
      throw std::invalid_argument("cross_entropy: label out of range");
    }
    loss -= std::log(std::max(probs[b][static_cast<std::size_t>(labels[b])], 1e-12));
  }
  return loss;
}

double cross_entropy(const std::vector<std::vector<double>>& y, const std::vector<std::vector<double>>& probs) {
  if (y.size() != probs.size()) throw std::invalid_argument("cross_entropy: batch size mismatch");
  double loss = 0.0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    if (y[b].size() != probs[b].size()) throw std::invalid_argument("cross_entropy: class count mismatch");
    for (std::size_t j = 0; j < y[b].size(); ++j) {
      if (y[b][j] != 0.0) loss -= y[b][j] * std::log(std::max(probs[b][j], 1e-12));
    }
  }
  return loss;
}

double l1_l2_penalty(std::span<const double> w, double l1, double l2, std::span<double> grad) {
  double pen = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    pen += l1 * std::abs(w[i]) + l2 * w[i] * w[i];
    if (!grad.empty()) {
      const double sign = w[i] > 0.0 ? 1.0 : (w[i] < 0.0 ? -1.0 : 0.0);
      grad[i] += l1 * sign + 2.0 * l2 * w[i];
    }
  }
  return pen;
}

double l1_l2_penalty(const MsnnModel& model, double l1, double l2, Gradients* grads) {
  double pen = 0.0;
  for (const Param* p : model.trainable_params()) {
    if (p->role != ParamRole::Weight) continue;
    pen += l1_l2_penalty(p->value, l1, l2, grads ? std::span<double>(grads->at(*p)) : std::span<double>{});
  }
  return pen;
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  const double e = static_cast<double>(epoch);
  if (cfg.schedule == LrSchedule::Exponential) return cfg.lr0 * std::exp(-cfg.decay_per_epoch * e);
  return cfg.lr0 * std::pow(1.0 - cfg.decay_per_epoch, e);
}

void Adam::step(const std::vector<Param*>& params, const Gradients& grads, double lr) {
  if (!grads.all_finite()) throw std::domain_error("adam: non-finite gradient, step aborted");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (Param* p : params) {
    const auto* g = grads.find(*p);
    auto& [m, v] = moments_[p];
    if (m.empty()) {
      m.assign(p->size(), 0.0);
      v.assign(p->size(), 0.0);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
      p->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
    }
  }
}

TrainValSplit split_train_val(const std::vector<int>& labels, int n_classes, double val_fraction,
                              std::uint64_t seed) {
  if (labels.size() < 10) throw std::invalid_argument("split_train_val: need at least 10 samples");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("split_train_val: bad fraction");
  TrainValSplit out;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw std::invalid_argument("split_train_val: label out of range");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Rng rng(seed);
  for (auto& idx : by_class) rng.shuffle(idx);

  // Eligible classes share the validation budget in proportion to their size.
  std::size_t eligible_total = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() >= 2) {
      eligible_total += by_class[c].size();
    } else if (!by_class[c].empty()) {
      out.warnings.push_back("class " + std::to_string(c) + " has fewer than 2 samples; kept in train");
    }
  }
  const auto budget = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(labels.size())));
  std::vector<std::size_t> take(by_class.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < 2 || eligible_total == 0) continue;
    const double exact = static_cast<double>(budget) * static_cast<double>(by_class[c].size()) /
                         static_cast<double>(eligible_total);
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < budget && i < remainders.size(); ++i, ++assigned) ++take[remainders[i].second];
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    // Every class keeps at least one training sample.
    take[c] = std::min(take[c], by_class[c].empty() ? 0 : by_class[c].size() - 1);
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      (i < take[c] ? out.val : out.train).push_back(by_class[c][i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

std::string TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["best_epoch"] = best_epoch;
  j["stopped_early"] = stopped_early;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["warnings"] = warnings;
  auto& arr = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_loss", e.val_loss},
                   {"val_accuracy", e.val_accuracy},
                   {"lr", e.lr}});
  }
  return j.dump(2);
}

Batch make_batch(const EpochSet& data, const std::vector<std::size_t>& indices) {
  Batch b;
  b.reserve(indices.size());
  for (auto i : indices) b.push_back(data.trials.at(i));
  return b;
}

namespace {

// Objective and gradients for one batch; `signs` receives the activation pattern.
double objective(MsnnModel& model, const Batch& batch, const std::vector<int>& labels, Mode mode, bool update_running,
                 double l1, double l2, Gradients* grads, std::vector<std::uint8_t>* signs = nullptr) {
  GradTape tape;
  const ForwardIds ids = record_forward(tape, model, batch, mode, update_running);
  if (signs) *signs = tape.activation_signs();
  const Batch& logits = tape.value(ids.logits);
  double loss = 0.0;
  Batch grad_logits;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    const auto p = nn::softmax(logits[b].values());
    const auto y = static_cast<std::size_t>(labels.at(b));
    if (y >= p.size()) throw std::invalid_argument("label out of range for model outputs");
    loss -= std::log(std::max(p[y], 1e-12));
    Tensor g(1, 1, p.size());
    for (std::size_t j = 0; j < p.size(); ++j) g(0, 0, j) = p[j] - (j == y ? 1.0 : 0.0);
    grad_logits.push_back(std::move(g));
  }
  if (grads) {
    auto res = tape.backward(ids.logits, std::move(grad_logits));
    *grads = std::move(res.grads);
  }
  return loss + l1_l2_penalty(model, l1, l2, grads);
}

}  // namespace

double train_step(MsnnModel& model, const Batch& batch, const std::vector<int>& labels, Adam& adam, double lr,
                  double l1, double l2) {
  Gradients grads;
  const double obj = objective(model, batch, labels, Mode::Train, true, l1, l2, &grads);
  if (!std::isfinite(obj)) throw std::domain_error("training objective is not finite");
  adam.step(model.trainable_params(), grads, lr);
  return obj;
}

EvalLoss evaluate_loss(const MsnnModel& model, const EpochSet& data) {
  if (data.size() == 0) return {};
  const auto probs = predict_proba(model, data.trials);
  EvalLoss out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    out.loss -= std::log(std::max(probs[i][y], 1e-12));
    const auto pred = static_cast<std::size_t>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
    correct += pred == y;
  }
  out.loss /= static_cast<double>(probs.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(probs.size());
  return out;
}

FitResult fit(MsnnModel model, const EpochSet& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto split = split_train_val(data.labels, data.n_classes, cfg.val_fraction, Rng::derive(cfg.seed, 0));
  auto result = fit(std::move(model), data.subset(split.train), data.subset(split.val), cfg);
  result.report.warnings.insert(result.report.warnings.begin(), split.warnings.begin(), split.warnings.end());
  return result;
}

FitResult fit(MsnnModel model, const EpochSet& train, const EpochSet& val, const TrainConfig& cfg) {
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  if (val.size() == 0) throw std::invalid_argument("fit: empty validation set");
  if (train.n_channels() != model.config.n_c || train.n_samples() != model.config.n_T) {
    throw std::invalid_argument("fit: data shape does not match the model config");
  }

  TrainReport report;
  report.n_train = train.size();
  report.n_val = val.size();
  Adam adam(AdamOptions{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
  Rng rng(Rng::derive(cfg.seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::optional<MsnnModel> best;
  double best_acc = -1.0, best_loss = 0.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      double obj = 0.0;
      try {
        obj = train_step(model, make_batch(train, idx), labels, adam, lr, cfg.l1, cfg.l2);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), report);
      }
      total += obj;
      ++batches;
    }
    const EvalLoss v = evaluate_loss(model, val);
    report.epochs.push_back({epoch, total / static_cast<double>(batches), v.loss, v.accuracy, lr});
    if (!std::isfinite(v.loss)) {
      throw TrainingDiverged("validation loss is not finite at epoch " + std::to_string(epoch), report);
    }
    if (v.accuracy > best_acc || (v.accuracy == best_acc && v.loss < best_loss)) {
      best_acc = v.accuracy;
      best_loss = v.loss;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      report.stopped_early = true;
      break;
    }
  }
  return FitResult{std::move(*best), std::move(report)};
}

GradCheckReport grad_check(MsnnModel& model, const Batch& batch, const std::vector<int>& labels,
                           const GradCheckOptions& opt) {
  if (opt.mode == Mode::Train && batch.size() < 2) {
    throw std::invalid_argument("grad_check: train-mode batch norm needs a batch of at least 2");
  }
  Gradients grads;
  std::vector<std::uint8_t> base_signs;
  objective(model, batch, labels, opt.mode, false, opt.l1, opt.l2, &grads, &base_signs);

  const auto params = model.trainable_params();
  std::size_t total_size = 0;
  for (Param* p : params) total_size += p->size();

  GradCheckReport rep;
  Rng rng(opt.seed);
  const auto eval_at = [&](Param* p, std::size_t i, double w, std::vector<std::uint8_t>* signs) {
    p->value[i] = w;
    return objective(model, batch, labels, opt.mode, false, opt.l1, opt.l2, nullptr, signs);
  };
  for (Param* p : params) {
    // At least two coordinates per array, the remainder proportional to size.
    const std::size_t share = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::ceil(static_cast<double>(opt.coordinates) * static_cast<double>(p->size()) /
                                              static_cast<double>(total_size))));
    const std::size_t want = std::min(share, p->size());
    const auto analytic = grads.get(*p);
    std::size_t done = 0;
    for (std::size_t attempt = 0; done < want && attempt < 20 * want; ++attempt) {
      const std::size_t i = rng.index(p->size());
      const double w0 = p->value[i];
      std::vector<std::uint8_t> s_plus, s_minus;
      const double lp = eval_at(p, i, w0 + opt.h, &s_plus);
      const double lm = eval_at(p, i, w0 - opt.h, &s_minus);
      p->value[i] = w0;
      if (s_plus != base_signs || s_minus != base_signs) {
        ++rep.kinks_skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * opt.h);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      rep.max_per_param[p->name] = std::max(rep.max_per_param[p->name], err);
      ++rep.per_param[p->name];
      ++rep.checked;
      ++done;
    }
  }
  return rep;
}

}  // namespace msnn
