#pragma once

#include "tssg/tensor.hpp"

#include <cstdint>
#include <vector>

namespace tssg {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
  Tensor<Scalar> first;
  Tensor<Scalar> second;
};

/// Bias-corrected Adam update at step t (t >= 1), element-wise over every
/// parameter tensor. Moments are created on first use.
template <typename Scalar>
void adam_step(const std::vector<Tensor<Scalar>*>& params, const std::vector<const Tensor<Scalar>*>& grads,
               std::vector<AdamMoments<Scalar>>& moments, long t, const AdamConfig& cfg);

/// Zero-mean Gaussian with variance 2 / fan_in, where fan_in is the product
/// of all dimensions after the first (the first dimension for rank-1 shapes).
template <typename Scalar>
Tensor<Scalar> he_init(const Shape& shape, std::uint64_t seed);

}  // namespace tssg
