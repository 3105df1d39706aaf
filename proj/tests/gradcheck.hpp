// Finite-difference gradient oracle. Runs in double precision and never
// looks at the backward implementations it checks.
#pragma once

#include "tssg/random.hpp"
#include "tssg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tssg::testing {

using GraphFn = std::function<Var(GradTape<double>&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// turning round-off into a huge ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Projects the graph output onto fixed random weights r and compares
/// d(sum r*out)/d(input) from the tape against central differences with step h.
/// `probes_per_input` < 0 checks every element; otherwise a seeded sample.
inline GradCheckResult check_gradients(const std::vector<TensorD>& inputs, const GraphFn& graph,
                                       std::uint64_t seed, double h = 1e-5, int probes_per_input = -1) {
  Rng rng(seed);
  GradTape<double> tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  const Var out = graph(tape, leaves);
  TensorD weights(tape.value(out).shape());
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal();
  tape.backward(out, weights);

  auto objective = [&](const std::vector<TensorD>& xs) {
    GradTape<double> t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.leaf(x, false));
    const auto& y = t.value(graph(t, vs));
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += weights[i] * y[i];
    return acc;
  };

  GradCheckResult result;
  std::vector<TensorD> work = inputs;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const TensorD analytic = tape.grad(leaves[which]);
    std::vector<std::size_t> positions;
    if (probes_per_input < 0 || static_cast<std::size_t>(probes_per_input) >= inputs[which].size()) {
      for (std::size_t i = 0; i < inputs[which].size(); ++i) positions.push_back(i);
    } else {
      for (int p = 0; p < probes_per_input; ++p) {
        positions.push_back(static_cast<std::size_t>(rng.next() % inputs[which].size()));
      }
    }
    for (std::size_t pos : positions) {
      const double original = work[which][pos];
      work[which][pos] = original + h;
      const double up = objective(work);
      work[which][pos] = original - h;
      const double down = objective(work);
      work[which][pos] = original;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[pos], numeric));
      ++result.probes;
    }
  }
  return result;
}

inline TensorD random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  TensorD t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

/// Values bounded away from zero (|v| >= margin), for kinked ops.
inline TensorD random_tensor_away_from_zero(const Shape& shape, Rng& rng, double margin = 1e-2) {
  TensorD t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(margin, 1.0);
    t[i] = rng.bernoulli(0.5) ? v : -v;
  }
  return t;
}

/// Distinct values spaced at least `gap` apart in random order, so max-pool
/// windows have no near-ties.
inline TensorD random_distinct_tensor(const Shape& shape, Rng& rng, double gap = 1e-2) {
  TensorD t(shape);
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
  for (std::size_t i = 0; i < order.size(); ++i) t[order[i]] = gap * static_cast<double>(i) - 0.5;
  return t;
}

}  // namespace tssg::testing
