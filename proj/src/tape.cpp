#include "msnn/tape.hpp"

#include <stdexcept>
#include <string>
#include <variant>

namespace msnn {

namespace {

struct InputOp {};
struct TemporalOp {
  const TemporalConvParams* p;
};
struct SeparableOp {
  const SeparableConvParams* p;
  Batch u;  // depthwise output
};
struct SpatialOp {
  const SpatialConvParams* p;
};
struct BatchNormOp {
  BatchNormParams params;  // snapshot of gamma/beta values used in forward
  const BatchNormParams* origin;
  nn::BatchNormCache cache;
};
struct LeakyOp {
  double slope;
};
struct ConcatOp {
  std::vector<GradTape::Id> inputs;
  std::vector<std::size_t> widths;
};
struct GapOp {};
struct DenseOp {
  const DenseParams* p;
};

}  // namespace

struct GradTape::Record {
  Id in = 0;
  Id out = 0;
  std::variant<InputOp, TemporalOp, SeparableOp, SpatialOp, BatchNormOp, LeakyOp, ConcatOp, GapOp, DenseOp> op;
};

GradTape::GradTape() = default;
GradTape::~GradTape() = default;
GradTape::GradTape(GradTape&&) noexcept = default;
GradTape& GradTape::operator=(GradTape&&) noexcept = default;

GradTape::Id GradTape::push(Batch value) {
  if (consumed_) throw std::logic_error("tape: cannot record after backward");
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

void GradTape::check_id(Id id) const {
  if (id >= values_.size()) throw std::out_of_range("tape: unknown value id " + std::to_string(id));
}

const Batch& GradTape::value(Id id) const {
  check_id(id);
  return values_[id];
}

std::size_t GradTape::batch_size() const { return values_.empty() ? 0 : values_.front().size(); }

GradTape::Id GradTape::input(Batch x) {
  if (x.empty()) throw std::invalid_argument("tape: empty batch");
  const Id id = push(std::move(x));
  records_.push_back(std::make_unique<Record>(Record{id, id, InputOp{}}));
  return id;
}

GradTape::Id GradTape::temporal_conv(Id x, const TemporalConvParams& p) {
  check_id(x);
  Batch y;
  for (const auto& s : values_[x]) y.push_back(nn::temporal_conv_forward(s, p));
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, TemporalOp{&p}}));
  return id;
}

GradTape::Id GradTape::separable_conv(Id x, const SeparableConvParams& p) {
  check_id(x);
  Batch u, y;
  for (const auto& s : values_[x]) {
    u.push_back(nn::depthwise_forward(s, p.depthwise));
    y.push_back(nn::pointwise_forward(u.back(), p.pointwise, &p.bias));
  }
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, SeparableOp{&p, std::move(u)}}));
  return id;
}

GradTape::Id GradTape::spatial_conv(Id x, const SpatialConvParams& p) {
  check_id(x);
  Batch y;
  for (const auto& s : values_[x]) y.push_back(nn::spatial_conv_forward(s, p));
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, SpatialOp{&p}}));
  return id;
}

GradTape::Id GradTape::batch_norm(Id x, BatchNormParams& p, Mode mode, bool update_running) {
  check_id(x);
  BatchNormOp op{p, &p, {}};
  Batch y = nn::batch_norm_forward(values_[x], update_running ? p : op.params, mode,
                                   update_running && mode == Mode::Train, &op.cache);
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, std::move(op)}));
  return id;
}

GradTape::Id GradTape::batch_norm(Id x, const BatchNormParams& p, Mode mode) {
  check_id(x);
  BatchNormOp op{p, &p, {}};
  Batch y = nn::batch_norm_forward(values_[x], op.params, mode, false, &op.cache);
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, std::move(op)}));
  return id;
}

GradTape::Id GradTape::leaky_relu(Id x, double slope) {
  check_id(x);
  if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0, 1)");
  Batch y;
  for (const auto& s : values_[x]) y.push_back(nn::leaky_relu_forward(s, slope));
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, LeakyOp{slope}}));
  return id;
}

GradTape::Id GradTape::concat(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("tape: concat of nothing");
  for (Id x : xs) check_id(x);
  std::vector<std::size_t> widths;
  for (Id x : xs) widths.push_back(values_[x].front().maps());
  Batch y;
  for (std::size_t b = 0; b < values_[xs[0]].size(); ++b) {
    std::vector<Tensor> parts;
    for (Id x : xs) parts.push_back(values_[x][b]);
    y.push_back(nn::concat_featuremaps(parts));
  }
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{xs[0], id, ConcatOp{xs, std::move(widths)}}));
  return id;
}

GradTape::Id GradTape::gap(Id x) {
  check_id(x);
  Batch y;
  for (const auto& s : values_[x]) y.push_back(nn::gap_forward(s));
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, GapOp{}}));
  return id;
}

GradTape::Id GradTape::dense(Id x, const DenseParams& p) {
  check_id(x);
  Batch y;
  for (const auto& s : values_[x]) {
    auto z = nn::dense_forward(s, p);
    y.emplace_back(1, 1, z.size(), std::move(z));
  }
  const Id id = push(std::move(y));
  records_.push_back(std::make_unique<Record>(Record{x, id, DenseOp{&p}}));
  return id;
}

std::vector<std::uint8_t> GradTape::activation_signs() const {
  std::vector<std::uint8_t> signs;
  for (const auto& rec : records_) {
    if (!std::holds_alternative<LeakyOp>(rec->op)) continue;
    for (const auto& s : values_[rec->in]) {
      for (double v : s.values()) signs.push_back(v < 0.0 ? 1 : 0);
    }
  }
  return signs;
}

namespace {

void accumulate(Batch& into, Batch&& grad) {
  if (into.empty()) {
    into = std::move(grad);
    return;
  }
  for (std::size_t b = 0; b < into.size(); ++b) {
    auto dst = into[b].values();
    const auto src = grad[b].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

}  // namespace

GradTape::Result GradTape::backward(Id out, Batch grad_out) {
  if (consumed_) throw std::logic_error("tape: backward called twice on the same forward");
  check_id(out);
  if (grad_out.size() != values_[out].size()) {
    throw std::invalid_argument("tape: upstream gradient batch size mismatch");
  }
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    if (!grad_out[b].same_shape(values_[out][b])) {
      throw std::invalid_argument("tape: upstream gradient shape " + grad_out[b].shape_string() +
                                  " does not match value " + values_[out][b].shape_string());
    }
  }
  consumed_ = true;

  Result result;
  std::vector<Batch> grads(values_.size());
  grads[out] = std::move(grad_out);
  Gradients& pg = result.grads;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Record& rec = **it;
    if (grads[rec.out].empty()) continue;
    const Batch& gy = grads[rec.out];
    const Batch& x = values_[rec.in];

    std::visit(
        [&](auto& op) {
          using Op = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<Op, InputOp>) {
            result.input_grad = gy;
          } else if constexpr (std::is_same_v<Op, TemporalOp>) {
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) {
              gx.push_back(nn::temporal_conv_backward(x[b], gy[b], *op.p, &pg));
            }
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, SeparableOp>) {
            auto& gP = pg.at(op.p->pointwise);
            auto& gB = pg.at(op.p->bias);
            auto& gD = pg.at(op.p->depthwise);
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) {
              const Tensor gu = nn::pointwise_backward(op.u[b], gy[b], op.p->pointwise, &gP, &gB);
              gx.push_back(nn::depthwise_backward(x[b], gu, op.p->depthwise, &gD));
            }
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, SpatialOp>) {
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) {
              gx.push_back(nn::spatial_conv_backward(x[b], gy[b], *op.p, &pg));
            }
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, BatchNormOp>) {
            // Gradients are keyed by the live parameters, not the snapshot.
            Gradients local;
            Batch gx = nn::batch_norm_backward(x, gy, op.params, op.cache, &local);
            auto& gg = pg.at(op.origin->gamma);
            auto& gb = pg.at(op.origin->beta);
            const auto lg = local.get(op.params.gamma);
            const auto lb = local.get(op.params.beta);
            for (std::size_t f = 0; f < lg.size(); ++f) {
              gg[f] += lg[f];
              gb[f] += lb[f];
            }
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, LeakyOp>) {
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) gx.push_back(nn::leaky_relu_backward(x[b], gy[b], op.slope));
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, ConcatOp>) {
            std::vector<Batch> parts(op.inputs.size());
            for (std::size_t b = 0; b < gy.size(); ++b) {
              auto split = nn::split_featuremaps(gy[b], op.widths);
              for (std::size_t i = 0; i < split.size(); ++i) parts[i].push_back(std::move(split[i]));
            }
            for (std::size_t i = 0; i < op.inputs.size(); ++i) accumulate(grads[op.inputs[i]], std::move(parts[i]));
          } else if constexpr (std::is_same_v<Op, GapOp>) {
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) gx.push_back(nn::gap_backward(x[b], gy[b]));
            accumulate(grads[rec.in], std::move(gx));
          } else if constexpr (std::is_same_v<Op, DenseOp>) {
            Batch gx;
            for (std::size_t b = 0; b < x.size(); ++b) {
              gx.push_back(nn::dense_backward(x[b], gy[b].values(), *op.p, &pg));
            }
            accumulate(grads[rec.in], std::move(gx));
          }
        },
        rec.op);
    grads[rec.out].clear();
  }
  return result;
}

}  // namespace msnn
