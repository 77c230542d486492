#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "techdet/checkpoint.hpp"
#include "techdet/error.hpp"
#include "techdet/fcn_model.hpp"
#include "test_support.hpp"

using namespace techdet;
using techdet::testing::miniature_config;
using techdet::testing::naive_forward;
using techdet::testing::random_matrix;
using techdet::testing::TempDir;

namespace {

Example random_example(const FcnConfig& cfg, std::uint64_t seed) {
  Example ex{{random_matrix(cfg.n_mels, cfg.n_frames, seed, -2.0, 2.0)}, {}};
  std::mt19937_64 rng(seed + 1000);
  std::uniform_int_distribution<int> label(0, static_cast<int>(cfg.n_classes) - 1);
  for (std::size_t f = 0; f < cfg.n_frames; ++f) ex.labels.push_back(label(rng));
  return ex;
}

// Biases get small random values too so no gradient path is trivially zero.
FcnParameters perturbed_params(const FcnConfig& cfg, std::uint64_t seed) {
  FcnParameters p = init_params(cfg, seed);
  std::mt19937_64 rng(seed * 7 + 3);
  std::uniform_real_distribution<double> d(-0.1, 0.1);
  for (const auto& spec : parameter_layout(cfg))
    if (spec.is_bias())
      for (double& v : p.tensor(spec)) v = d(rng);
  return p;
}

double batch_loss(const FcnParameters& p, std::span<const Example> batch) {
  double total = 0.0;
  for (const auto& ex : batch) total += loss(forward(p, ex.features), ex.labels);
  return total / static_cast<double>(batch.size());
}

void check_gradients(const FcnConfig& cfg, std::uint64_t seed) {
  const FcnParameters params = perturbed_params(cfg, seed);
  const std::vector<Example> batch{random_example(cfg, seed + 1), random_example(cfg, seed + 2)};
  const GradientResult g = gradients(params, std::span<const Example>(batch));
  CHECK(g.loss == doctest::Approx(batch_loss(params, batch)).epsilon(1e-12));

  constexpr double h = 1e-5;
  std::size_t worst = 0;
  double worst_err = 0.0;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    FcnParameters plus = params, minus = params;
    plus.values[i] += h;
    minus.values[i] -= h;
    const double numeric = (batch_loss(plus, batch) - batch_loss(minus, batch)) / (2 * h);
    const double analytic = g.gradient[i];
    const double err =
        std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    if (err > worst_err) {
      worst_err = err;
      worst = i;
    }
  }
  INFO("worst parameter " << worst << " of " << params.values.size());
  CHECK(worst_err < 1e-4);
}

}  // namespace

TEST_CASE("config validation") {
  FcnConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.upsampled_frames() == 200);
  cfg.n_frames = 201;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FcnConfig{};
  cfg.n_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FcnConfig{};
  cfg.upsample_kernel = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(FcnConfig::from_json(FcnConfig{}.to_json()) == FcnConfig{});
}

TEST_CASE("published upsampler settings are rejected by this stack") {
  for (std::size_t k : {4u, 7u, 11u}) {
    const auto ks = published_upsampler(k);
    REQUIRE(ks.has_value());
    FcnConfig cfg;
    cfg.n_classes = k;
    cfg.upsample_kernel = ks->first;
    cfg.upsample_stride = ks->second;
    // 25 pooled steps: (25 - 1) * stride + kernel is far from 200.
    CHECK(cfg.upsampled_frames() != 200);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  CHECK_FALSE(published_upsampler(5).has_value());
}

TEST_CASE("parameter layout covers the flat vector") {
  const FcnConfig cfg;
  const auto layout = parameter_layout(cfg);
  REQUIRE(layout.size() == 12);
  std::size_t expected = 0, in = 1;
  for (std::size_t w : cfg.widths) {
    expected += w * in * 9 + w;
    in = w;
  }
  expected += in * in * 8 + in + 4 * in + 4;
  CHECK(layout.back().offset + layout.back().size == expected);
  CHECK(expected == 93316);
  for (std::size_t i = 1; i < layout.size(); ++i)
    CHECK(layout[i].offset == layout[i - 1].offset + layout[i - 1].size);
  CHECK(layout[0].name == "conv1.weight");
  CHECK(layout[8].name == "upsample.weight");
  CHECK(layout[8].fan_in == 64);
  CHECK(layout[11].name == "head.bias");
}

TEST_CASE("He-uniform initialization") {
  const FcnConfig cfg;
  const auto a = init_params(cfg, 17);
  const auto b = init_params(cfg, 17);
  const auto c = init_params(cfg, 18);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (const auto& spec : parameter_layout(cfg)) {
    const auto t = a.tensor(spec);
    if (spec.is_bias()) {
      for (double v : t) CHECK(v == 0.0);
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
    double lo = 0.0, hi = 0.0, sum = 0.0;
    for (double v : t) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    CHECK(lo >= -bound);
    CHECK(hi < bound);
    // Spread close to the full interval, mean near zero.
    if (t.size() > 1000) {
      CHECK(hi > 0.9 * bound);
      CHECK(std::abs(sum / static_cast<double>(t.size())) < 0.05 * bound);
    }
  }
}

TEST_CASE("forward produces per-frame distributions") {
  const FcnConfig cfg;
  const auto params = init_params(cfg, 3);
  const MelSpectrogram x{random_matrix(128, 200, 4, -3.0, 3.0)};
  const auto pred = forward(params, x);
  CHECK(pred.n_classes() == 4);
  CHECK(pred.n_frames() == 200);
  CHECK((pred.probs.array() >= 0.0).all());
  for (Eigen::Index f = 0; f < 200; ++f)
    CHECK(std::abs(pred.probs.col(f).sum() - 1.0) < 1e-12);

  CHECK_THROWS_AS(forward(params, MelSpectrogram{Matrix::Zero(128, 199)}), InputError);
}

TEST_CASE("all-zero parameters predict the uniform distribution") {
  const FcnConfig cfg;
  auto params = init_params(cfg, 0);
  std::fill(params.values.begin(), params.values.end(), 0.0);
  const auto pred = forward(params, MelSpectrogram{random_matrix(128, 200, 1)});
  for (Eigen::Index i = 0; i < pred.probs.size(); ++i) CHECK(pred.probs.data()[i] == 0.25);
}

TEST_CASE("forward agrees with the nested-loop reference") {
  SUBCASE("full-size model") {
    const FcnConfig cfg;
    const auto params = perturbed_params(cfg, 21);
    const Matrix x = random_matrix(128, 200, 22, -2.0, 2.0);
    const Matrix ref = naive_forward(params, x);
    const auto got = forward(params, MelSpectrogram{x});
    CHECK((got.probs - ref).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("overlapping upsampler kernel") {
    FcnConfig cfg = miniature_config();
    cfg.widths = {3, 4, 2, 5};
    cfg.upsample_kernel = 12;
    cfg.upsample_stride = 4;
    const auto params = perturbed_params(cfg, 31);
    const Matrix x = random_matrix(8, 16, 32);
    const auto got = forward(params, MelSpectrogram{x});
    CHECK((got.probs - naive_forward(params, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("loss values") {
  FramePrediction uniform{Matrix::Constant(4, 10, 0.25)};
  const std::vector<int> labels(10, 2);
  CHECK(loss(uniform, labels) == doctest::Approx(std::log(4.0)));

  FramePrediction confident{Matrix::Constant(4, 2, 0.25 / 3)};
  confident.probs(1, 0) = 0.75;
  confident.probs(1, 1) = 0.75;
  CHECK(loss(confident, std::vector<int>{1, 1}) == doctest::Approx(0.2876820724517809));

  FramePrediction zero{Matrix::Zero(2, 1)};
  zero.probs(0, 0) = 1.0;
  CHECK(loss(zero, std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
  CHECK(loss(zero, std::vector<int>{0}) == 0.0);

  CHECK_THROWS_AS(loss(uniform, std::vector<int>(9, 0)), InputError);
  CHECK_THROWS_AS(loss(uniform, std::vector<int>(10, 4)), InputError);
}

TEST_CASE("analytic gradients match central differences") {
  SUBCASE("stride equals kernel") { check_gradients(miniature_config(), 5); }
  SUBCASE("overlapping upsampler") {
    FcnConfig cfg = miniature_config();
    cfg.widths = {2, 3, 2, 3};
    cfg.upsample_kernel = 12;
    cfg.upsample_stride = 4;
    check_gradients(cfg, 9);
  }
}

TEST_CASE("head bias gradient equals mean of p - onehot") {
  const FcnConfig cfg;
  const auto params = perturbed_params(cfg, 41);
  const std::vector<Example> batch{random_example(cfg, 42)};
  const auto g = gradients(params, std::span<const Example>(batch));
  const auto pred = forward(params, batch[0].features);
  const auto& spec = parameter_layout(cfg)[11];
  std::size_t floored = 0;
  for (std::size_t f = 0; f < 200; ++f)
    if (pred.probs(batch[0].labels[f], static_cast<Eigen::Index>(f)) < 1e-12) ++floored;
  REQUIRE(floored < 100);
  for (std::size_t k = 0; k < 4; ++k) {
    double expected = 0.0;
    for (std::size_t f = 0; f < 200; ++f) {
      const auto col = static_cast<Eigen::Index>(f);
      // The loss is constant in floored columns.
      if (pred.probs(batch[0].labels[f], col) < 1e-12) continue;
      expected += pred.probs(static_cast<Eigen::Index>(k), col) -
                  (batch[0].labels[f] == static_cast<int>(k) ? 1.0 : 0.0);
    }
    expected /= 200.0;
    CHECK(g.gradient[spec.offset + k] == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("batch gradients: duplication and thread invariance") {
  const FcnConfig cfg;
  const auto params = perturbed_params(cfg, 51);
  const Example e = random_example(cfg, 52);
  const std::vector<Example> one{e}, two{e, e};
  const auto g1 = gradients(params, std::span<const Example>(one));
  const auto g2 = gradients(params, std::span<const Example>(two));
  CHECK(g1.gradient == g2.gradient);
  CHECK(g1.loss == g2.loss);

  std::vector<Example> batch;
  for (std::uint64_t s = 0; s < 5; ++s) batch.push_back(random_example(cfg, 60 + s));
  const auto serial = gradients(params, std::span<const Example>(batch), 1);
  const auto parallel = gradients(params, std::span<const Example>(batch), 4);
  CHECK(serial.gradient == parallel.gradient);
  CHECK(serial.loss == parallel.loss);
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir;
  FcnParameters params = perturbed_params(miniature_config(), 71);
  params.vocabulary = TechniqueVocabulary({"a", "b", "other"}, 2);
  params.stats = {std::vector<double>(8, 0.5), std::vector<double>(8, 2.0)};
  save_checkpoint(params, dir / "m.ckpt");
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back == params);
  const Matrix x = random_matrix(8, 16, 72);
  CHECK(forward(back, MelSpectrogram{x}).probs == forward(params, MelSpectrogram{x}).probs);

  std::string bytes = encode_checkpoint(params);
  CHECK(bytes.substr(0, 4) == "FCN1");
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 10)), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), InputError);

  FcnParameters wrong = params;
  wrong.vocabulary = TechniqueVocabulary({"a", "other"}, 1);
  CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(wrong)), FormatError);
}
