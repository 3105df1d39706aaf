#include <doctest.h>

#include "gradcheck_suite.hpp"

using namespace tssg;
using namespace tssg::testing;

TEST_CASE("every differentiable op matches central differences over 20 seeds") {
  for (const auto& check : all_op_checks()) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) worst = std::max(worst, check.run(seed));
    INFO(check.name << " max relative error " << worst);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("maxpool backward routes gradient only to the argmax cell") {
  Rng rng(8);
  GradTape<double> tape;
  auto x = tape.leaf(random_distinct_tensor({1, 2, 6, 6}, rng), true);
  auto [y, idx] = maxpool2x2(tape, x);
  TensorD seed(tape.value(y).shape());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = static_cast<double>(i + 1);
  tape.backward(y, seed);
  const auto& g = tape.grad(x);
  std::size_t hits = 0;
  for (int c = 0; c < 2; ++c) {
    for (int h = 0; h < 6; ++h) {
      for (int w = 0; w < 6; ++w) {
        const int q = idx.argmax.at(0, c, h / 2, w / 2);
        const double expected = q == h * 6 + w ? seed.at(0, c, h / 2, w / 2) : 0.0;
        CHECK(g.at(0, c, h, w) == expected);
        hits += expected != 0.0;
      }
    }
  }
  CHECK(hits == seed.size());
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 1e-9) < 1e-4);
}
