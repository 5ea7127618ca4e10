#include "helpers.hpp"

#include "msnn/synth.hpp"
#include "msnn/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

using namespace msnn;
using msnn::test::random_tensor;

namespace {

MsnnConfig tiny_config() {
  MsnnConfig c;
  c.n_c = 2;
  c.n_T = 32;
  c.f_s = 16;
  c.n_o = 2;
  c.T = {8, 4};
  c.F = {2, 4, 4};
  c.seed = 3;
  return c;
}

EpochSet small_task(std::uint64_t seed, std::size_t n = 60) {
  BandpowerParams p;
  p.n_trials = n;
  p.n_c = 6;
  p.n_T = 64;
  p.fs = 32.0;
  p.classes = {{4.0, {2, 3}, 2.0}, {11.0, {2, 3}, 2.0}};
  p.seed = seed;
  return synth_bandpower(p).data;
}

MsnnConfig task_config() {
  MsnnConfig c;
  c.n_c = 6;
  c.n_T = 64;
  c.f_s = 16;
  c.n_o = 2;
  c.T = {8, 4};
  c.F = {2, 4, 4};
  c.seed = 11;
  return c;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.patience = 3;
  t.lr0 = 0.01;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("cross entropy values") {
  CHECK(cross_entropy({{0.0, 1.0}}, std::vector<int>{1}) == 0.0);
  CHECK(cross_entropy({{0.25, 0.25, 0.25, 0.25}}, std::vector<int>{2}) == doctest::Approx(std::log(4.0)));
  const double one = cross_entropy({{0.7, 0.3}}, std::vector<int>{1});
  CHECK(cross_entropy({{0.7, 0.3}, {0.7, 0.3}}, std::vector<int>{1, 1}) == doctest::Approx(2.0 * one).epsilon(1e-15));
  CHECK(cross_entropy({{1.0, 0.0}}, std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
  const std::vector<std::vector<double>> y{{0.0, 1.0}, {1.0, 0.0}};
  const std::vector<std::vector<double>> p{{0.4, 0.6}, {0.9, 0.1}};
  CHECK(cross_entropy(y, p) == doctest::Approx(cross_entropy(p, std::vector<int>{1, 0})).epsilon(1e-15));
}

TEST_CASE("elastic-net penalty") {
  std::vector<double> w{2.0}, g{0.0};
  CHECK(l1_l2_penalty(w, 0.01, 0.001, g) == doctest::Approx(0.024));
  CHECK(g[0] == doctest::Approx(0.01 + 2 * 0.001 * 2.0));
  std::vector<double> zero{0.0}, gz{0.0};
  l1_l2_penalty(zero, 0.01, 0.001, gz);
  CHECK(gz[0] == 0.0);

  Rng rng(1);
  std::vector<double> v(20);
  msnn::test::randomize(v, rng);
  std::vector<double> grad(20, 0.0);
  l1_l2_penalty(v, 0.3, 0.2, grad);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i], h = 1e-6;
    v[i] = keep + h;
    const double up = l1_l2_penalty(v, 0.3, 0.2);
    v[i] = keep - h;
    const double down = l1_l2_penalty(v, 0.3, 0.2);
    v[i] = keep;
    CHECK(grad[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("model penalty covers weights only") {
  MsnnModel m = MsnnModel::build(tiny_config());
  double expect = 0.0;
  for (const Param* p : std::as_const(m).trainable_params()) {
    if (p->role != ParamRole::Weight) continue;
    for (double w : p->value) expect += 0.01 * std::abs(w) + 0.001 * w * w;
  }
  const double before = l1_l2_penalty(m, 0.01, 0.001);
  CHECK(before == doctest::Approx(expect).epsilon(1e-13));
  for (double& b : m.classifier.bias.value) b = 100.0;
  for (double& g : m.stem_bn.gamma.value) g = 50.0;
  CHECK(l1_l2_penalty(m, 0.01, 0.001) == before);
}

TEST_CASE("adam steps") {
  SUBCASE("first step magnitude equals the learning rate") {
    Param p = Param::zeros("w", {3}, ParamRole::Weight);
    p.value = {1.0, -2.0, 0.5};
    Gradients g;
    g.at(p) = {1.0, 1.0, 1.0};
    Adam adam;
    adam.step({&p}, g, 0.1);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(p.value[1] == doctest::Approx(-2.1).epsilon(1e-9));
    CHECK(adam.steps() == 1);
  }
  SUBCASE("zero gradient leaves weights unchanged") {
    Param p = Param::zeros("w", {2}, ParamRole::Weight);
    p.value = {0.3, 0.4};
    Gradients g;
    g.at(p) = {0.0, 0.0};
    Adam adam;
    for (int i = 0; i < 5; ++i) adam.step({&p}, g, 0.1);
    CHECK(p.value[0] == 0.3);
    CHECK(p.value[1] == 0.4);
  }
  SUBCASE("quadratic bowl converges") {
    Param p = Param::zeros("w", {2}, ParamRole::Weight);
    p.value = {3.0, -4.0};
    Adam adam;
    for (int i = 0; i < 2000; ++i) {
      Gradients g;
      g.at(p) = {2.0 * (p.value[0] - 1.0), 2.0 * (p.value[1] + 2.0)};
      adam.step({&p}, g, 0.01);
    }
    CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(p.value[1] == doctest::Approx(-2.0).epsilon(1e-3));
  }
  SUBCASE("non-finite gradient aborts without changing weights") {
    Param p = Param::zeros("w", {2}, ParamRole::Weight);
    p.value = {1.0, 1.0};
    Gradients g;
    g.at(p) = {0.5, std::nan("")};
    Adam adam;
    CHECK_THROWS_AS(adam.step({&p}, g, 0.1), std::domain_error);
    CHECK(p.value[0] == 1.0);
    CHECK(adam.steps() == 0);
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  CHECK(lr_at_epoch(0, t) == 0.03);
  CHECK(lr_at_epoch(1, t) == doctest::Approx(0.02997).epsilon(1e-12));
  t.schedule = LrSchedule::Exponential;
  CHECK(lr_at_epoch(1, t) == doctest::Approx(0.03 * std::exp(-0.001)).epsilon(1e-14));
  CHECK(lr_at_epoch(100, t) < lr_at_epoch(99, t));
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS(t.validate());
  t = TrainConfig{};
  t.val_fraction = 1.0;
  CHECK_THROWS(t.validate());
  t = TrainConfig{};
  t.lr0 = -1.0;
  CHECK_THROWS(t.validate());
}

TEST_CASE("stratified train/validation split") {
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<int>(i % 2);
  const auto s = split_train_val(labels, 2, 0.1, 9);
  CHECK(s.train.size() == 90);
  CHECK(s.val.size() == 10);
  std::size_t val_ones = 0, train_ones = 0;
  for (auto i : s.val) val_ones += static_cast<std::size_t>(labels[i]);
  for (auto i : s.train) train_ones += static_cast<std::size_t>(labels[i]);
  CHECK(val_ones == 5);
  CHECK(train_ones == 45);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  CHECK(all.size() == 100);
  CHECK(s.warnings.empty());

  const auto again = split_train_val(labels, 2, 0.1, 9);
  CHECK(again.val == s.val);

  std::vector<int> lonely(20, 0);
  lonely[7] = 1;
  const auto w = split_train_val(lonely, 2, 0.1, 1);
  CHECK_FALSE(w.warnings.empty());
  CHECK(std::find(w.train.begin(), w.train.end(), 7) != w.train.end());
}

TEST_CASE("analytic gradients agree with central differences") {
  Rng rng(2);
  const MsnnConfig c = tiny_config();
  Batch b;
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) {
    b.push_back(random_tensor(c.n_c, c.n_T, 1, rng));
    labels.push_back(i % 2);
  }
  SUBCASE("train mode") {
    MsnnModel m = MsnnModel::build(c);
    GradCheckOptions opt;
    opt.coordinates = 240;
    const auto r = grad_check(m, b, labels, opt);
    CHECK(r.checked >= 200);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.per_param.size() == m.trainable_params().size());
  }
  SUBCASE("eval mode with penalty") {
    MsnnModel m = MsnnModel::build(c);
    forward(m, b, Mode::Train);
    GradCheckOptions opt;
    opt.mode = Mode::Eval;
    opt.l1 = 0.01;
    opt.l2 = 0.001;
    const auto r = grad_check(m, b, labels, opt);
    CHECK(r.checked >= 200);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("classifier bias gradient is the summed probability error") {
  Rng rng(3);
  const MsnnConfig c = tiny_config();
  MsnnModel m = MsnnModel::build(c);
  Batch b;
  for (int i = 0; i < 3; ++i) b.push_back(random_tensor(c.n_c, c.n_T, 1, rng));
  const std::vector<int> labels{0, 1, 1};
  forward(m, b, Mode::Train);
  GradTape tape;
  const auto ids = record_forward(tape, std::as_const(m), b);
  const auto probs = forward(std::as_const(m), b).probs;
  Batch seed;
  std::vector<double> expect(c.n_o, 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor g(1, 1, c.n_o);
    for (std::size_t o = 0; o < c.n_o; ++o) {
      g(0, 0, o) = probs[i][o] - (static_cast<int>(o) == labels[i] ? 1.0 : 0.0);
      expect[o] += g(0, 0, o);
    }
    seed.push_back(g);
  }
  const auto res = tape.backward(ids.logits, seed);
  const auto gb = res.grads.get(m.classifier.bias);
  for (std::size_t o = 0; o < c.n_o; ++o) {
    CHECK(gb[o] == doctest::Approx(expect[o]).epsilon(1e-13));
    // and against the loss directly
    const double h = 1e-6, keep = m.classifier.bias.value[o];
    m.classifier.bias.value[o] = keep + h;
    const double up = cross_entropy(forward(std::as_const(m), b).probs, labels);
    m.classifier.bias.value[o] = keep - h;
    const double down = cross_entropy(forward(std::as_const(m), b).probs, labels);
    m.classifier.bias.value[o] = keep;
    CHECK(gb[o] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(tape.backward(ids.logits, seed), std::logic_error);
}

TEST_CASE("training is deterministic and picks the best validation epoch") {
  const EpochSet data = small_task(21);
  const auto a = fit(MsnnModel::build(task_config()), data, quick_train(8));
  const auto b = fit(MsnnModel::build(task_config()), data, quick_train(8));
  CHECK(a.report.to_json() == b.report.to_json());
  const auto pa = a.best.trainable_params(), pb = b.best.trainable_params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  const auto& ep = a.report.epochs;
  REQUIRE_FALSE(ep.empty());
  CHECK(ep.size() <= 8);
  CHECK(a.report.n_train == 54);
  CHECK(a.report.n_val == 6);
  // best = highest accuracy, then lowest loss, then earliest
  std::size_t best = 0;
  for (std::size_t i = 1; i < ep.size(); ++i) {
    if (ep[i].val_accuracy > ep[best].val_accuracy ||
        (ep[i].val_accuracy == ep[best].val_accuracy && ep[i].val_loss < ep[best].val_loss)) {
      best = i;
    }
  }
  CHECK(a.report.best_epoch == ep[best].epoch);
  if (a.report.stopped_early) CHECK(ep.size() - 1 - a.report.best_epoch == 3);
  for (std::size_t i = 0; i < ep.size(); ++i) CHECK(ep[i].lr == lr_at_epoch(i, quick_train(8)));

  // the returned model reproduces its recorded validation loss
  const auto split = split_train_val(data.labels, data.n_classes, 0.1, Rng::derive(5, 0));
  const EvalLoss v = evaluate_loss(a.best, data.subset(split.val));
  CHECK(v.loss == doctest::Approx(ep[best].val_loss).epsilon(1e-12));
  CHECK(v.accuracy == ep[best].val_accuracy);
}

TEST_CASE("training objective decreases on a learnable task") {
  const EpochSet data = small_task(22, 80);
  TrainConfig t = quick_train(12);
  t.patience = 12;
  const auto r = fit(MsnnModel::build(task_config()), data, t);
  const auto& ep = r.report.epochs;
  REQUIRE(ep.size() == 12);
  CHECK(ep.back().train_loss < ep.front().train_loss);
  CHECK(r.report.stopped_early == false);
}

TEST_CASE("fit rejects mismatched data") {
  const EpochSet data = small_task(23, 20);
  CHECK_THROWS_AS(fit(MsnnModel::build(tiny_config()), data, quick_train(1)), std::invalid_argument);
}

TEST_CASE("report json lists every epoch") {
  TrainReport r;
  r.epochs = {{0, 1.0, 0.9, 0.5, 0.03}, {1, 0.8, 0.7, 0.75, 0.02997}};
  r.best_epoch = 1;
  const std::string j = r.to_json();
  CHECK(j.find("\"best_epoch\"") != std::string::npos);
  CHECK(j.find("0.75") != std::string::npos);
}

}  // TEST_SUITE
