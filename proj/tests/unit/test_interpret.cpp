#include "helpers.hpp"

#include "msnn/interpret.hpp"
#include "msnn/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

using namespace msnn;
using msnn::test::max_abs_diff;
using msnn::test::random_tensor;

namespace {

MsnnConfig small_config() {
  MsnnConfig c;
  c.n_c = 4;
  c.n_T = 64;
  c.f_s = 16;
  c.n_o = 2;
  c.T = {8, 4};
  c.F = {3, 4, 5};
  c.seed = 17;
  return c;
}

EpochSet random_set(const MsnnConfig& c, std::size_t n, Rng& rng) {
  EpochSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.trials.push_back(random_tensor(c.n_c, c.n_T, 1, rng));
    s.labels.push_back(static_cast<int>(i % c.n_o));
  }
  s.fs = 32.0;
  s.n_classes = static_cast<int>(c.n_o);
  s.channel_names = default_channel_names(c.n_c);
  return s;
}

MsnnModel warmed_model(const MsnnConfig& c, Rng& rng) {
  MsnnModel m = MsnnModel::build(c);
  forward(m, random_set(c, 6, rng).trials, Mode::Train);
  return m;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_SUITE("interpret") {

TEST_CASE("epsilon rule through one dense layer") {
  const std::vector<double> x{1.0, 2.0, -1.0};
  const std::vector<double> w{0.5, -1.0, 0.25, 2.0, 1.0, 0.5};  // [3, 2]
  const std::vector<double> r_out{1.0, 3.0};
  const double eps = 0.1;
  const auto r = lrp_dense(x, w, 2, r_out, eps);
  REQUIRE(r.size() == 3);
  const double z0 = 1.0 * 0.5 + 2.0 * 0.25 - 1.0 * 1.0;  // 0
  const double z1 = 1.0 * -1.0 + 2.0 * 2.0 - 1.0 * 0.5;  // 2.5
  for (std::size_t i = 0; i < 3; ++i) {
    const double e = x[i] * w[i * 2] / (z0 + eps) * r_out[0] + x[i] * w[i * 2 + 1] / (z1 + eps) * r_out[1];
    CHECK(r[i] == doctest::Approx(e).epsilon(1e-14));
  }
  CHECK(lrp_stabilize(0.0, eps) == eps);
  CHECK(lrp_stabilize(-2.0, eps) == doctest::Approx(-2.1));
  // vanishing epsilon conserves relevance
  const auto exact = lrp_dense(x, w, 2, std::vector<double>{0.0, 3.0}, 1e-12);
  double sum = 0.0;
  for (double v : exact) sum += v;
  CHECK(sum == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("relevance is conserved through the network") {
  Rng rng(1);
  const MsnnConfig c = small_config();
  const MsnnModel m = warmed_model(c, rng);
  for (int i = 0; i < 10; ++i) {
    const Tensor x = random_tensor(c.n_c, c.n_T, 1, rng);
    const auto map = lrp(m, x, i % 2);
    CHECK(map.relevance.same_shape(x));
    CHECK(map.relevance.all_finite());
    CHECK(map.epsilon == 1e-6);
    const auto probs = forward(m, Batch{x});
    CHECK(map.logit == doctest::Approx(probs.logits[0][static_cast<std::size_t>(i % 2)]).epsilon(1e-12));
    CHECK(map.contribution == doctest::Approx(map.logit - m.classifier.bias.value[static_cast<std::size_t>(i % 2)]));
    double total = 0.0;
    for (double v : map.relevance.values()) total += v;
    CHECK(total == doctest::Approx(map.total).epsilon(1e-12));
    CHECK(map.conservation_error() < 0.05);
  }
}

TEST_CASE("relevance scales with the target classifier column") {
  Rng rng(2);
  const MsnnConfig c = small_config();
  MsnnModel m = warmed_model(c, rng);
  const Tensor x = random_tensor(c.n_c, c.n_T, 1, rng);
  const auto base = lrp(m, x, 1);
  for (std::size_t d = 0; d < c.branch_maps(); ++d) m.classifier.weight.value[d * c.n_o + 1] *= 3.0;
  const auto scaled = lrp(m, x, 1);
  double scale = 0.0;
  for (double v : base.relevance.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(scaled.relevance.values()[i] - 3.0 * base.relevance.values()[i]) < 1e-6 * scale);
  }
  CHECK_THROWS(lrp(m, x, 2));
  CHECK_THROWS(lrp(m, Tensor(c.n_c, c.n_T + 1, 1), 0));
}

TEST_CASE("relevance spectrum peaks at the relevance rhythm") {
  const double fs = 64.0;
  RelevanceMap map;
  map.relevance = Tensor(2, 512, 1);
  const auto s = msnn::test::sine(512, 10.0, fs);
  for (std::size_t t = 0; t < 512; ++t) {
    map.relevance(0, t, 0) = s[t];
    map.relevance(1, t, 0) = 0.5 * s[t];
  }
  const Spectrum spec = relevance_spectrum(map, fs);
  CHECK(spec.freqs == welch_frequencies(fs, welch_window_length(fs)));
  const auto peak = std::max_element(spec.power.begin(), spec.power.end()) - spec.power.begin();
  CHECK(spec.freqs[static_cast<std::size_t>(peak)] == doctest::Approx(10.0));
}

TEST_CASE("forward-model patterns recover a planted mixing vector") {
  Rng rng(3);
  const std::size_t n = 2000, n_c = 6;
  const std::vector<double> a{1.0, -0.5, 0.0, 2.0, 0.3, -1.2};
  std::vector<double> x(n * n_c), s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.normal();
    for (std::size_t c = 0; c < n_c; ++c) x[i * n_c + c] = a[c] * s[i] + 0.3 * rng.normal();
  }
  const auto A = haufe_patterns(x, s, n, n_c, 1);
  REQUIRE(A.size() == n_c);
  CHECK(cosine(A, a) > 0.99);
  for (std::size_t c = 0; c < n_c; ++c) CHECK(A[c] == doctest::Approx(a[c]).epsilon(0.1).scale(1.0));

  // scaling the sources rescales the pattern and leaves the normalized form alone
  std::vector<double> s3 = s;
  for (double& v : s3) v *= 3.0;
  const auto A3 = haufe_patterns(x, s3, n, n_c, 1);
  for (std::size_t c = 0; c < n_c; ++c) CHECK(A3[c] == doctest::Approx(A[c] / 3.0).epsilon(1e-6));
  std::vector<double> na, na3;
  REQUIRE(normalize_pattern(A, na));
  REQUIRE(normalize_pattern(A3, na3));
  CHECK(max_abs_diff(na, na3) < 1e-9);
}

TEST_CASE("patterns of an identity readout are the identity") {
  Rng rng(4);
  const std::size_t n = 500, n_c = 3;
  std::vector<double> x(n * n_c);
  for (double& v : x) v = rng.normal();
  const auto A = haufe_patterns(x, x, n, n_c, n_c);
  for (std::size_t i = 0; i < n_c; ++i) {
    for (std::size_t j = 0; j < n_c; ++j) {
      CHECK(A[i * n_c + j] == doctest::Approx(i == j ? 1.0 : 0.0).scale(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("pattern normalization") {
  std::vector<double> out;
  CHECK(normalize_pattern(std::vector<double>{2.0, -1.0, 5.0}, out));
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 1.0);
  CHECK_FALSE(normalize_pattern(std::vector<double>{0.7, 0.7}, out));
  CHECK(out == std::vector<double>{0.0, 0.0});
}

TEST_CASE("activation patterns of a model") {
  Rng rng(5);
  const MsnnConfig c = small_config();
  const MsnnModel m = warmed_model(c, rng);
  const EpochSet data = random_set(c, 12, rng);
  for (std::size_t k = 1; k <= c.N(); ++k) {
    const auto pats = activation_patterns(m, data, k);
    REQUIRE(pats.size() == c.F[k]);
    for (const auto& p : pats) {
      CHECK(p.branch == k);
      CHECK(p.raw.size() == c.n_c);
      REQUIRE(p.normalized_ok);
      CHECK(*std::min_element(p.normalized.begin(), p.normalized.end()) == 0.0);
      CHECK(*std::max_element(p.normalized.begin(), p.normalized.end()) == 1.0);
    }
  }
  CHECK_THROWS(activation_patterns(m, data, 0));
  CHECK_THROWS(activation_patterns(m, data, c.N() + 1));
}

TEST_CASE("feature export") {
  Rng rng(6);
  const MsnnConfig c = small_config();
  const MsnnModel m = warmed_model(c, rng);
  const EpochSet data = random_set(c, 50, rng);
  const auto stages = feature_stages(c);
  CHECK(stages == std::vector<std::string>{"f1_sst", "f2_sst", "gap_concat"});

  const auto gap = export_features(m, data, "gap_concat");
  CHECK(gap.rows.size() == 50);
  CHECK(gap.dim() == c.branch_maps());
  CHECK(gap.labels == data.labels);
  const auto f1 = export_features(m, data, "f1_sst");
  CHECK(f1.dim() == c.F[1]);
  CHECK(f1.rows.size() == 50);
  // f1 rows are the first slice of the pooled concatenation
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t d = 0; d < c.F[1]; ++d) CHECK(f1.rows[i][d] == doctest::Approx(gap.rows[i][d]).epsilon(1e-12));
  }
  const auto probs = predict_proba(m, data.trials);
  for (std::size_t i = 0; i < 50; ++i) {
    std::vector<double> z(c.n_o);
    for (std::size_t o = 0; o < c.n_o; ++o) {
      z[o] = m.classifier.bias.value[o];
      for (std::size_t d = 0; d < gap.dim(); ++d) z[o] += gap.rows[i][d] * m.classifier.weight.value[d * c.n_o + o];
    }
    const auto p = nn::softmax(z);
    CHECK(max_abs_diff(p, probs[i]) < 1e-12);
  }
  CHECK_THROWS(export_features(m, data, "f3_sst"));
  CHECK_THROWS(export_features(m, data, "logits"));
}

}  // TEST_SUITE
