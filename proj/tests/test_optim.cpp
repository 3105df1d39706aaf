#include <doctest.h>

#include "tssg/optim.hpp"

#include <cmath>

using namespace tssg;

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  TensorF p({3}, {1.0f, -2.0f, 0.5f});
  const TensorF before = p;
  TensorF g({3}, 0.0f);
  std::vector<AdamMoments<float>> moments;
  for (long t = 1; t <= 5; ++t) adam_step<float>({&p}, {&g}, moments, t, AdamConfig{});
  CHECK(p == before);
}

TEST_CASE("first adam step moves by lr * sign(g)") {
  TensorD p({4}, {0.0, 1.0, -1.0, 3.0});
  TensorD g({4}, {0.3, -5.0, 1e-2, -1e-3});
  std::vector<AdamMoments<double>> moments;
  AdamConfig cfg;
  adam_step<double>({&p}, {&g}, moments, 1, cfg);
  const double expected[4] = {-1e-3, 1.0 + 1e-3, -1.0 - 1e-3, 3.0 + 1e-3};
  for (std::size_t i = 0; i < 4; ++i) {
    // Step is lr * |g| / (|g| + eps); the smallest |g| here is 1e-3.
    CHECK(std::abs(p[i] - expected[i]) < 1e-8);
  }
}

TEST_CASE("adam trajectory on a quadratic matches a scalar reference") {
  // f(x) = 0.5 * a * (x - c)^2, gradient a * (x - c).
  const double a = 3.0, c = 0.7;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};

  double x_ref = 2.0, m = 0.0, v = 0.0;
  std::vector<double> reference;
  for (int t = 1; t <= 3; ++t) {
    const double g = a * (x_ref - c);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    x_ref -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    reference.push_back(x_ref);
  }

  TensorD x({1}, 2.0);
  std::vector<AdamMoments<double>> moments;
  for (int t = 1; t <= 3; ++t) {
    TensorD g({1}, a * (x[0] - c));
    adam_step<double>({&x}, {&g}, moments, t, cfg);
    CHECK(x[0] == doctest::Approx(reference[static_cast<std::size_t>(t - 1)]).epsilon(1e-14));
  }
}

TEST_CASE("adam rejects t < 1 and mismatched shapes") {
  TensorF p({2}), g({3});
  std::vector<AdamMoments<float>> moments;
  CHECK_THROWS(adam_step<float>({&p}, {&p}, moments, 0, AdamConfig{}));
  std::vector<AdamMoments<float>> fresh;
  CHECK_THROWS_AS(adam_step<float>({&p}, {&g}, fresh, 1, AdamConfig{}), ShapeError);
}

TEST_CASE("he_init is seeded, deterministic and correctly scaled") {
  const auto a = he_init<float>({8, 4, 3, 3}, 123);
  const auto b = he_init<float>({8, 4, 3, 3}, 123);
  const auto c = he_init<float>({8, 4, 3, 3}, 124);
  CHECK(a == b);
  CHECK_FALSE(a == c);

  // fan_in = 36 -> variance 2/36.
  const auto big = he_init<double>({100000 / 36 + 1, 4, 3, 3}, 7);
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < big.size(); ++i) sum += big[i];
  const double mean = sum / static_cast<double>(big.size());
  for (std::size_t i = 0; i < big.size(); ++i) sq += (big[i] - mean) * (big[i] - mean);
  const double var = sq / static_cast<double>(big.size() - 1);
  CHECK(big.size() >= 100000);
  CHECK(std::abs(var - 2.0 / 36.0) / (2.0 / 36.0) < 0.05);
  CHECK(std::abs(mean) < 0.01);
}
