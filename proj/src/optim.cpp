#include "tssg/optim.hpp"

#include "tssg/random.hpp"

#include <cmath>
#include <stdexcept>

namespace tssg {

template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const std::vector<const Tensor<Scalar>*>& grads,
               std::vector<AdamMoments<Scalar>>& moments, long t, const AdamConfig& cfg) {
  if (t < 1) throw std::invalid_argument("adam_step needs t >= 1, got " + std::to_string(t));
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step got " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (moments.empty()) {
    for (const auto* p : params) moments.push_back({Tensor<Scalar>(p->shape()), Tensor<Scalar>(p->shape())});
  }
  if (moments.size() != params.size()) throw ShapeError("adam_step moment count does not match parameters");

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = *params[i];
    const Tensor<Scalar>& g = *grads[i];
    auto& m = moments[i];
    if (g.shape() != p.shape() || m.first.shape() != p.shape()) {
      throw ShapeError("adam_step shape mismatch: parameter " + to_string(p.shape()) + " vs gradient " +
                       to_string(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      m.first[j] = b1 * m.first[j] + (1 - b1) * g[j];
      m.second[j] = b2 * m.second[j] + (1 - b2) * g[j] * g[j];
      const double mhat = m.first[j] / bc1;
      const double vhat = m.second[j] / bc2;
      p[j] -= static_cast<Scalar>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <typename Scalar>
Tensor<Scalar> he_init(const Shape& shape, std::uint64_t seed) {
  if (shape.empty()) throw ShapeError("he_init needs a non-empty shape");
  std::size_t fan_in = 1;
  if (shape.size() == 1) {
    fan_in = static_cast<std::size_t>(shape[0]);
  } else {
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<std::size_t>(shape[i]);
  }
  if (fan_in == 0) throw ShapeError("he_init fan-in is zero for shape " + to_string(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<Scalar> out(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(stddev * rng.normal());
  return out;
}

template void adam_step<float>(const std::vector<Tensor<float>*>&, const std::vector<const Tensor<float>*>&,
                               std::vector<AdamMoments<float>>&, long, const AdamConfig&);
template void adam_step<double>(const std::vector<Tensor<double>*>&, const std::vector<const Tensor<double>*>&,
                                std::vector<AdamMoments<double>>&, long, const AdamConfig&);
template Tensor<float> he_init<float>(const Shape&, std::uint64_t);
template Tensor<double> he_init<double>(const Shape&, std::uint64_t);

}  // namespace tssg
