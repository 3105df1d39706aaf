// Two-stream encoder-decoder segmentation network.
//
// Each stream runs its own five encoder blocks (conv + BN + PReLU, repeated,
// then a 2x2 max-pool). The two bottleneck maps are concatenated on the
// channel axis and decoded by five mirrored blocks, each of which unpools
// with stream A's indices from the same depth. The last convolution is a
// plain k-channel head.
#pragma once

#include "tssg/ops.hpp"
#include "tssg/tape.hpp"
#include "tssg/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tssg {

inline constexpr int kNetworkDepth = 5;
inline constexpr int kSpatialMultiple = 1 << kNetworkDepth;

struct NetworkConfig {
  int input_channels_a = 1;
  int input_channels_b = 1;
  int num_classes = 2;
  std::array<int, kNetworkDepth> encoder_widths{32, 64, 128, 256, 256};
  std::array<int, kNetworkDepth> convs_per_block{2, 2, 3, 3, 3};

  /// Widths [8,16,32,32,32], default block depths.
  static NetworkConfig miniature(int num_classes = 2);

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Closed-form count of trainable scalars (running statistics excluded).
std::size_t parameter_count(const NetworkConfig& cfg);

template <typename Scalar>
struct ConvLayerState {
  Tensor<Scalar> kernel;  // [O,C,3,3]
  Tensor<Scalar> bias;    // [O]
  bool normalized = true;  // false only for the head
  Tensor<Scalar> gamma, beta, slope, running_mean, running_var;  // [O] each
};

template <typename Scalar>
struct NetworkParams {
  NetworkConfig config;
  std::uint64_t seed = 0;
  /// encoders[stream][block] -> layers, stream 0 is A.
  std::array<std::array<std::vector<ConvLayerState<Scalar>>, kNetworkDepth>, 2> encoders;
  /// decoder[block] -> layers, indexed by depth (block 4 runs first).
  std::array<std::vector<ConvLayerState<Scalar>>, kNetworkDepth> decoder;

  /// Visits every stored tensor with a stable name, in a fixed order.
  void for_each_tensor(const std::function<void(const std::string&, Tensor<Scalar>&, bool trainable)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Tensor<Scalar>&, bool trainable)>& fn) const;

  std::vector<Tensor<Scalar>*> trainable();
  std::size_t trainable_count() const;

  template <typename Other>
  NetworkParams<Other> cast() const;

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (!(a.config == b.config) || a.seed != b.seed) return false;
    std::vector<const Tensor<Scalar>*> ta, tb;
    a.for_each_tensor([&](const std::string&, const Tensor<Scalar>& t, bool) { ta.push_back(&t); });
    b.for_each_tensor([&](const std::string&, const Tensor<Scalar>& t, bool) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (!(*ta[i] == *tb[i])) return false;
    }
    return true;
  }
};

template <typename Scalar>
NetworkParams<Scalar> build_network(const NetworkConfig& cfg, std::uint64_t seed);

template <typename Scalar>
struct NetworkGraph {
  Var logits;
  std::vector<Var> params;  // same order as NetworkParams::trainable()
  Shape bottleneck_shape;
};

/// Records the forward pass on `tape`. In train mode BN uses batch statistics
/// and updates the running statistics of `net`.
template <typename Scalar>
NetworkGraph<Scalar> forward(GradTape<Scalar>& tape, NetworkParams<Scalar>& net, const Tensor<Scalar>& stream_a,
                             const Tensor<Scalar>& stream_b, BnMode mode);

/// Inference-mode logits without gradient bookkeeping.
template <typename Scalar>
Tensor<Scalar> infer_logits(const NetworkParams<Scalar>& net, const Tensor<Scalar>& stream_a,
                            const Tensor<Scalar>& stream_b);

/// Per-pixel argmax, [N,H,W]; ties go to the lowest class.
template <typename Scalar>
LabelTensor predict_mask(const Tensor<Scalar>& logits);

/// Rows and columns needed to reach the next multiple of 32.
inline int padding_needed(int extent) { return (kSpatialMultiple - extent % kSpatialMultiple) % kSpatialMultiple; }

}  // namespace tssg
