// Differentiable primitives of the encoder-decoder network. Every op records
// itself on the tape and validates shapes up front.
#pragma once

#include "tssg/tape.hpp"
#include "tssg/tensor.hpp"

#include <utility>

namespace tssg {

enum class BnMode { train, infer };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Zero-padded 3x3 same-size convolution plus bias.
/// x: [N,C,H,W], kernels: [O,C,3,3], bias: [O] -> [N,O,H,W].
template <typename Scalar>
Var conv2d(GradTape<Scalar>& tape, Var x, Var kernels, Var bias);

/// 2x2 max-pool with stride 2. Ties go to the lowest flat index in the window.
template <typename Scalar>
std::pair<Var, PoolIndices> maxpool2x2(GradTape<Scalar>& tape, Var x);

/// Scatters x to the positions recorded in `indices`, zeros elsewhere.
/// x may carry a multiple of the index channel count; channel c reuses
/// index plane c mod C_idx.
template <typename Scalar>
Var max_unpool2x2(GradTape<Scalar>& tape, Var x, const PoolIndices& indices);

/// Per-channel batch normalization. In train mode the batch statistics are
/// used and the running statistics are updated in place
/// (running = momentum * running + (1 - momentum) * batch, unbiased variance).
template <typename Scalar>
Var batchnorm(GradTape<Scalar>& tape, Var x, Var gamma, Var beta, Tensor<Scalar>& running_mean,
              Tensor<Scalar>& running_var, BnMode mode);

/// max(x, 0) + slope_c * min(x, 0), channel axis 1.
template <typename Scalar>
Var prelu(GradTape<Scalar>& tape, Var x, Var slope);

/// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W], a's channels first.
template <typename Scalar>
Var concat_channels(GradTape<Scalar>& tape, Var a, Var b);

/// Mean over all N*H*W pixels of -log softmax(logits)[label]. Returns a
/// one-element tensor.
template <typename Scalar>
Var softmax_cross_entropy(GradTape<Scalar>& tape, Var logits, const LabelTensor& labels);

/// Per-pixel class probabilities, [N,k,H,W].
template <typename Scalar>
Tensor<Scalar> softmax_probabilities(const Tensor<Scalar>& logits);

/// Per-pixel argmax over the class axis; ties resolve to the lowest class.
template <typename Scalar>
LabelTensor argmax_classes(const Tensor<Scalar>& logits);

}  // namespace tssg
