#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace zoomdet::nn {

// Thrown when optimization produces non-finite values; the CLI maps it to a
// dedicated exit code.
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Double storage with double accumulation everywhere;
// the on-disk format narrows to 32-bit floats.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

struct DenseSpec {
  int in = 0, out = 0;
};
struct Conv2dSpec {
  int in_ch = 0, out_ch = 0, kh = 0, kw = 0, sh = 1, sw = 1;
};
struct ReluSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, ReluSpec>;

int param_tensor_count(const LayerSpec& spec);
std::string layer_name(const LayerSpec& spec, int index);

// Valid (unpadded) convolution geometry: out = floor((in - k) / s) + 1.
std::pair<int, int> conv_output_geometry(int in_h, int in_w, int kh, int kw, int sh,
                                         int sw);

// A feed-forward stack of dense / conv2d / relu layers. Parameters are stored
// flat in declaration order: dense -> {W[out,in], b[out]}, conv ->
// {K[oc,ic,kh,kw], b[oc]}.
struct Network {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> params;

  // Glorot-uniform initialization, deterministic for a given seed.
  static Network build(std::vector<LayerSpec> layers, std::uint64_t seed);

  int param_offset(int layer_index) const;
};

// Per-layer inputs captured during forward, consumed by backward.
struct Trace {
  std::vector<Tensor> layer_inputs;
  Tensor output;
};

Tensor forward(const Network& net, const Tensor& input, Trace* trace = nullptr);

struct Gradients {
  std::vector<Tensor> param_grads;  // aligned with Network::params
  Tensor input_grad;

  void accumulate(const Gradients& other);
};

Gradients backward(const Network& net, const Trace& trace, const Tensor& output_grad);

// p <- p - lr * g elementwise; throws on non-finite gradients (divergence).
void sgd_step(Network& net, const std::vector<Tensor>& grads, double learning_rate);

// Several networks in one self-describing binary file: magic + version +
// layer specs, then all parameters as little-endian 32-bit floats in
// declaration order.
void save_networks(const std::vector<const Network*>& nets, const std::string& path);
std::vector<Network> load_networks(const std::string& path);

void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace zoomdet::nn
