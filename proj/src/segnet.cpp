#include "tssg/segnet.hpp"

#include "tssg/optim.hpp"
#include "tssg/random.hpp"

#include <stdexcept>
#include <string>

namespace tssg {

NetworkConfig NetworkConfig::miniature(int num_classes) {
  NetworkConfig cfg;
  cfg.num_classes = num_classes;
  cfg.encoder_widths = {8, 16, 32, 32, 32};
  return cfg;
}

void NetworkConfig::validate() const {
  if (input_channels_a < 1 || input_channels_b < 1) throw std::invalid_argument("input channel counts must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  for (int b = 0; b < kNetworkDepth; ++b) {
    if (encoder_widths[b] < 1) {
      throw std::invalid_argument("encoder width of block " + std::to_string(b) + " must be >= 1, got " +
                                  std::to_string(encoder_widths[b]));
    }
    if (convs_per_block[b] < 2 || convs_per_block[b] > 3) {
      throw std::invalid_argument("block " + std::to_string(b) + " needs 2 or 3 convolutions, got " +
                                  std::to_string(convs_per_block[b]));
    }
  }
}

namespace {

// (in, out, normalized) for every layer of one encoder stream.
struct LayerShape {
  int in, out;
  bool normalized;
};

std::array<std::vector<LayerShape>, kNetworkDepth> encoder_layout(const NetworkConfig& cfg, int in_channels) {
  std::array<std::vector<LayerShape>, kNetworkDepth> out;
  int c = in_channels;
  for (int b = 0; b < kNetworkDepth; ++b) {
    for (int l = 0; l < cfg.convs_per_block[b]; ++l) {
      out[b].push_back({c, cfg.encoder_widths[b], true});
      c = cfg.encoder_widths[b];
    }
  }
  return out;
}

std::array<std::vector<LayerShape>, kNetworkDepth> decoder_layout(const NetworkConfig& cfg) {
  std::array<std::vector<LayerShape>, kNetworkDepth> out;
  int c = 2 * cfg.encoder_widths[kNetworkDepth - 1];
  for (int b = kNetworkDepth - 1; b >= 0; --b) {
    const int w = cfg.encoder_widths[b];
    for (int l = 0; l < cfg.convs_per_block[b]; ++l) {
      const bool last = l + 1 == cfg.convs_per_block[b];
      const int o = !last ? w : (b > 0 ? cfg.encoder_widths[b - 1] : cfg.num_classes);
      out[b].push_back({c, o, !(last && b == 0)});
      c = o;
    }
  }
  return out;
}

template <typename Scalar>
ConvLayerState<Scalar> make_layer(const LayerShape& s, std::uint64_t seed) {
  ConvLayerState<Scalar> layer;
  layer.kernel = he_init<Scalar>({s.out, s.in, 3, 3}, seed);
  layer.bias = Tensor<Scalar>({s.out});
  layer.normalized = s.normalized;
  if (s.normalized) {
    layer.gamma = Tensor<Scalar>({s.out}, Scalar(1));
    layer.beta = Tensor<Scalar>({s.out});
    layer.slope = Tensor<Scalar>({s.out}, Scalar(0.25));
    layer.running_mean = Tensor<Scalar>({s.out});
    layer.running_var = Tensor<Scalar>({s.out}, Scalar(1));
  }
  return layer;
}

template <typename Layer, typename Fn>
void visit_layer(const std::string& prefix, Layer& layer, Fn&& fn) {
  fn(prefix + ".kernel", layer.kernel, true);
  fn(prefix + ".bias", layer.bias, true);
  if (layer.normalized) {
    fn(prefix + ".gamma", layer.gamma, true);
    fn(prefix + ".beta", layer.beta, true);
    fn(prefix + ".slope", layer.slope, true);
    fn(prefix + ".running_mean", layer.running_mean, false);
    fn(prefix + ".running_var", layer.running_var, false);
  }
}

template <typename Net, typename Fn>
void visit_network(Net& net, Fn&& fn) {
  for (int s = 0; s < 2; ++s) {
    for (int b = 0; b < kNetworkDepth; ++b) {
      auto& layers = net.encoders[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
      for (std::size_t l = 0; l < layers.size(); ++l) {
        visit_layer(std::string(s == 0 ? "a" : "b") + ".enc" + std::to_string(b) + ".conv" + std::to_string(l),
                    layers[l], fn);
      }
    }
  }
  for (int b = kNetworkDepth - 1; b >= 0; --b) {
    auto& layers = net.decoder[static_cast<std::size_t>(b)];
    for (std::size_t l = 0; l < layers.size(); ++l) {
      visit_layer("dec" + std::to_string(b) + ".conv" + std::to_string(l), layers[l], fn);
    }
  }
}

}  // namespace

std::size_t parameter_count(const NetworkConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  auto add = [&](const std::array<std::vector<LayerShape>, kNetworkDepth>& layout) {
    for (const auto& block : layout) {
      for (const auto& l : block) {
        total += static_cast<std::size_t>(l.in) * l.out * 9 + static_cast<std::size_t>(l.out) * (l.normalized ? 4 : 1);
      }
    }
  };
  add(encoder_layout(cfg, cfg.input_channels_a));
  add(encoder_layout(cfg, cfg.input_channels_b));
  add(decoder_layout(cfg));
  return total;
}

template <typename Scalar>
void NetworkParams<Scalar>::for_each_tensor(
    const std::function<void(const std::string&, Tensor<Scalar>&, bool)>& fn) {
  visit_network(*this, fn);
}

template <typename Scalar>
void NetworkParams<Scalar>::for_each_tensor(
    const std::function<void(const std::string&, const Tensor<Scalar>&, bool)>& fn) const {
  visit_network(*this, fn);
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> NetworkParams<Scalar>::trainable() {
  std::vector<Tensor<Scalar>*> out;
  for_each_tensor([&](const std::string&, Tensor<Scalar>& t, bool trainable) {
    if (trainable) out.push_back(&t);
  });
  return out;
}

template <typename Scalar>
std::size_t NetworkParams<Scalar>::trainable_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Tensor<Scalar>& t, bool trainable) {
    if (trainable) n += t.size();
  });
  return n;
}

template <typename Scalar>
template <typename Other>
NetworkParams<Other> NetworkParams<Scalar>::cast() const {
  NetworkParams<Other> out = build_network<Other>(config, seed);
  std::vector<const Tensor<Scalar>*> src;
  for_each_tensor([&](const std::string&, const Tensor<Scalar>& t, bool) { src.push_back(&t); });
  std::size_t i = 0;
  out.for_each_tensor([&](const std::string&, Tensor<Other>& t, bool) { t = src[i++]->template cast<Other>(); });
  return out;
}

template <typename Scalar>
NetworkParams<Scalar> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkParams<Scalar> net;
  net.config = cfg;
  net.seed = seed;
  std::uint64_t stream = 0;
  for (int s = 0; s < 2; ++s) {
    const auto layout = encoder_layout(cfg, s == 0 ? cfg.input_channels_a : cfg.input_channels_b);
    for (int b = 0; b < kNetworkDepth; ++b) {
      for (const auto& l : layout[static_cast<std::size_t>(b)]) {
        net.encoders[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)].push_back(
            make_layer<Scalar>(l, mix_seed(seed, stream++)));
      }
    }
  }
  const auto layout = decoder_layout(cfg);
  for (int b = kNetworkDepth - 1; b >= 0; --b) {
    for (const auto& l : layout[static_cast<std::size_t>(b)]) {
      net.decoder[static_cast<std::size_t>(b)].push_back(make_layer<Scalar>(l, mix_seed(seed, stream++)));
    }
  }
  return net;
}

namespace {

template <typename Scalar>
struct Binder {
  GradTape<Scalar>& tape;
  BnMode mode;
  bool track;
  std::vector<Var>& params;

  Var bind(Tensor<Scalar>& t) {
    Var v = tape.leaf(t, track);
    params.push_back(v);
    return v;
  }

  Var layer(Var x, ConvLayerState<Scalar>& l) {
    const Var k = bind(l.kernel);
    const Var b = bind(l.bias);
    Var y = conv2d(tape, x, k, b);
    if (!l.normalized) return y;
    const Var g = bind(l.gamma);
    const Var be = bind(l.beta);
    const Var sl = bind(l.slope);
    y = batchnorm(tape, y, g, be, l.running_mean, l.running_var, mode);
    return prelu(tape, y, sl);
  }
};

void check_inputs(const NetworkConfig& cfg, const Shape& a, const Shape& b) {
  require_rank4(a, "forward (stream A)");
  require_rank4(b, "forward (stream B)");
  if (a[1] != cfg.input_channels_a || b[1] != cfg.input_channels_b) {
    throw ShapeError("forward: stream channels " + std::to_string(a[1]) + "/" + std::to_string(b[1]) +
                     " do not match the config's " + std::to_string(cfg.input_channels_a) + "/" +
                     std::to_string(cfg.input_channels_b));
  }
  if (a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("forward: streams differ in batch or spatial size: " + to_string(a) + " vs " + to_string(b));
  }
  const int h = a[2], w = a[3];
  if (h == 0 || w == 0 || padding_needed(h) || padding_needed(w)) {
    throw ShapeError("forward: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be a nonzero multiple of 32; pad by " + std::to_string(padding_needed(h)) + " rows and " +
                     std::to_string(padding_needed(w)) + " columns to " + std::to_string(h + padding_needed(h)) + "x" +
                     std::to_string(w + padding_needed(w)));
  }
}

template <typename Scalar>
NetworkGraph<Scalar> forward_impl(GradTape<Scalar>& tape, NetworkParams<Scalar>& net, const Tensor<Scalar>& stream_a,
                                  const Tensor<Scalar>& stream_b, BnMode mode, bool track) {
  check_inputs(net.config, stream_a.shape(), stream_b.shape());
  NetworkGraph<Scalar> graph;
  Binder<Scalar> bind{tape, mode, track, graph.params};

  std::array<PoolIndices, kNetworkDepth> indices_a;
  std::array<Var, 2> features{tape.leaf(stream_a), tape.leaf(stream_b)};
  for (int s = 0; s < 2; ++s) {
    Var x = features[static_cast<std::size_t>(s)];
    for (int b = 0; b < kNetworkDepth; ++b) {
      for (auto& layer : net.encoders[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)]) {
        x = bind.layer(x, layer);
      }
      auto [pooled, idx] = maxpool2x2(tape, x);
      if (s == 0) indices_a[static_cast<std::size_t>(b)] = std::move(idx);
      x = pooled;
    }
    features[static_cast<std::size_t>(s)] = x;
  }
  Var x = concat_channels(tape, features[0], features[1]);
  graph.bottleneck_shape = tape.value(x).shape();
  for (int b = kNetworkDepth - 1; b >= 0; --b) {
    x = max_unpool2x2(tape, x, indices_a[static_cast<std::size_t>(b)]);
    for (auto& layer : net.decoder[static_cast<std::size_t>(b)]) x = bind.layer(x, layer);
  }
  graph.logits = x;
  return graph;
}

}  // namespace

template <typename Scalar>
NetworkGraph<Scalar> forward(GradTape<Scalar>& tape, NetworkParams<Scalar>& net, const Tensor<Scalar>& stream_a,
                             const Tensor<Scalar>& stream_b, BnMode mode) {
  return forward_impl(tape, net, stream_a, stream_b, mode, true);
}

template <typename Scalar>
Tensor<Scalar> infer_logits(const NetworkParams<Scalar>& net, const Tensor<Scalar>& stream_a,
                            const Tensor<Scalar>& stream_b) {
  GradTape<Scalar> tape;
  // Inference-mode BN only reads the running statistics.
  auto& mutable_net = const_cast<NetworkParams<Scalar>&>(net);
  const auto graph = forward_impl(tape, mutable_net, stream_a, stream_b, BnMode::infer, false);
  return tape.value(graph.logits);
}

template <typename Scalar>
LabelTensor predict_mask(const Tensor<Scalar>& logits) {
  return argmax_classes(logits);
}

#define TSSG_INSTANTIATE_NET(S)                                                                               \
  template struct NetworkParams<S>;                                                                           \
  template NetworkParams<S> build_network<S>(const NetworkConfig&, std::uint64_t);                            \
  template NetworkGraph<S> forward<S>(GradTape<S>&, NetworkParams<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                      BnMode);                                                                \
  template Tensor<S> infer_logits<S>(const NetworkParams<S>&, const Tensor<S>&, const Tensor<S>&);            \
  template LabelTensor predict_mask<S>(const Tensor<S>&);

TSSG_INSTANTIATE_NET(float)
TSSG_INSTANTIATE_NET(double)

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;

}  // namespace tssg
