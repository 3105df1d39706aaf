// Structure/texture decomposition by interval-gradient rescaling.
//
// Every row and then every column of the current estimate is processed as a
// 1-D signal: its forward differences are gated and rescaled against the
// interval gradient, re-integrated from the first sample, and the
// re-integrated signal is used as the guide of a 1-D guided filter over the
// current estimate. The structure S is the result after `iterations` rounds,
// clamped to [0, 1]; the texture is T = I - S.
#pragma once

#include "tssg/image.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace tssg {

struct DecompositionConfig {
  int window_radius = 3;
  double eps_s = 1e-4;
  /// Regularizer of the guided-filter step, within [0.01^2, 0.03^2].
  double smoothing_eps = 4e-4;
  int iterations = 4;

  static constexpr double kSmoothingEpsMin = 1e-4;
  static constexpr double kSmoothingEpsMax = 9e-4;

  void validate() const;
};

/// Structure plane snapped to the float grid 2^-24 and the exact residual.
/// For float inputs, structure + texture reproduces the input exactly in
/// double arithmetic.
struct DecompositionResult {
  Plane<double> structure;
  Plane<double> texture;
};

struct ColorDecompositionResult {
  std::array<DecompositionResult, 3> channels;
};

/// Observed range of the rescaling weight over every pixel and pass.
struct DecompositionStats {
  double min_weight = std::numeric_limits<double>::infinity();
  double max_weight = -std::numeric_limits<double>::infinity();
  std::size_t weights_evaluated = 0;
};

template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> forward_gradient(const Eigen::ArrayBase<Derived>& signal) {
  const Eigen::Index n = signal.size();
  if (n < 2) throw std::invalid_argument("gradient needs a signal of length >= 2");
  return signal.tail(n - 1) - signal.head(n - 1);
}

/// Interval gradient at each forward-difference position p (between samples
/// p and p+1): the Gaussian-weighted mean of the r samples to the right minus
/// that of the r samples to the left, sigma = r/2, windows clipped at the ends.
/// Result has length n-1; at r = 1 it equals the forward difference.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> interval_gradient(const Eigen::ArrayBase<Derived>& signal,
                                                                            int radius) {
  using Scalar = typename Derived::Scalar;
  if (radius < 1) throw std::invalid_argument("interval_gradient radius must be >= 1");
  const Eigen::Index n = signal.size();
  if (n < 2) throw std::invalid_argument("interval_gradient needs a signal of length >= 2");
  const double sigma = radius / 2.0;
  Eigen::Array<double, Eigen::Dynamic, 1> kernel(radius);
  for (int j = 0; j < radius; ++j) kernel[j] = std::exp(-(j * j) / (2.0 * sigma * sigma));

  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n - 1);
  for (Eigen::Index p = 0; p + 1 < n; ++p) {
    double right = 0.0, right_w = 0.0, left = 0.0, left_w = 0.0;
    for (int j = 0; j < radius; ++j) {
      if (p + 1 + j < n) {
        right += kernel[j] * static_cast<double>(signal[p + 1 + j]);
        right_w += kernel[j];
      }
      if (p - j >= 0) {
        left += kernel[j] * static_cast<double>(signal[p - j]);
        left_w += kernel[j];
      }
    }
    out[p] = static_cast<Scalar>(right / right_w - left / left_w);
  }
  return out;
}

/// min(1, (|interval| + eps_s) / (|gradient| + eps_s)).
template <typename Scalar>
Scalar rescale_weight(Scalar gradient, Scalar interval, double eps_s) {
  const Scalar e = static_cast<Scalar>(eps_s);
  return std::min(Scalar(1), (std::abs(interval) + e) / (std::abs(gradient) + e));
}

/// Shared weight of a multi-channel pixel from channel-averaged magnitudes,
/// so identical channels reproduce the single-channel weight exactly.
/// Requires exactly three channels.
double rescale_weight_color(std::span<const double> gradients, std::span<const double> intervals, double eps_s);

/// Gated gradient: g * w where sign(g) == sign(interval), else 0.
template <typename Scalar>
Scalar gate_gradient(Scalar gradient, Scalar interval, Scalar weight) {
  auto sign = [](Scalar v) { return (v > 0) - (v < 0); };
  return sign(gradient) == sign(interval) ? gradient * weight : Scalar(0);
}

/// Rescaled forward differences of a 1-D signal (length n-1).
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> rescale_gradients(const Eigen::ArrayBase<Derived>& signal,
                                                                            int radius, double eps_s) {
  const auto grad = forward_gradient(signal);
  const auto interval = interval_gradient(signal, radius);
  Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> out(grad.size());
  for (Eigen::Index p = 0; p < grad.size(); ++p) {
    out[p] = gate_gradient(grad[p], interval[p], rescale_weight(grad[p], interval[p], eps_s));
  }
  return out;
}

/// 1-D guided filter with a clipped box window of the given radius.
Eigen::ArrayXd guided_filter_1d(const Eigen::ArrayXd& guide, const Eigen::ArrayXd& input, int radius, double eps);

/// Grayscale decomposition. Input must be at least 4x4 with finite values.
DecompositionResult decompose(const ImagePlane& image, const DecompositionConfig& cfg = {},
                              DecompositionStats* stats = nullptr);

/// Color decomposition with one shared rescaling weight per pixel.
ColorDecompositionResult decompose(const RgbImage& image, const DecompositionConfig& cfg = {},
                                   DecompositionStats* stats = nullptr);

/// max |S + T - I| evaluated in double.
double reconstruction_residual(const ImagePlane& image, const DecompositionResult& result);

}  // namespace tssg
