#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mtpeft/nn/parameter.hpp"

namespace mtpeft {

using ag::Index;
using ag::Tensor;

enum class PeftMethod { serial_adapter, parallel_adapter, lora, prefix };
enum class LoraTarget { query, key, value };

std::string to_string(PeftMethod m);
PeftMethod parse_peft_method(const std::string& s);
std::string to_string(LoraTarget t);
LoraTarget parse_lora_target(const std::string& s);

struct PeftConfig {
  PeftMethod method = PeftMethod::serial_adapter;
  Index bottleneck_r = 64;
  Index lora_rank = 16;
  std::vector<LoraTarget> lora_targets{LoraTarget::query, LoraTarget::value};
  double lora_scaling = 1.0;
  Index prefix_length = 20;
  Index prefix_reparam_width = 512;

  bool targets(LoraTarget t) const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Bottleneck block shared by the serial and parallel adapters:
// relu(x W_down + b_down) W_up + b_up, with W_down [d, r] and W_up [r, d].
template <typename Scalar>
struct BottleneckAdapter {
  Tensor<Scalar> w_down;
  Tensor<Scalar> b_down;
  Tensor<Scalar> w_up;
  Tensor<Scalar> b_up;

  // W_down ~ U(+-1/sqrt(d)); W_up and both biases zero, so the side path starts at exactly 0.
  static BottleneckAdapter make(nn::ParameterRegistry<Scalar>& reg, const std::string& name, Index d, Index r,
                                std::mt19937_64& engine) {
    BottleneckAdapter a;
    a.w_down = reg.add(name + ".down.weight", nn::uniform_tensor<Scalar>({d, r}, 1.0 / std::sqrt(double(d)), engine));
    a.b_down = reg.add(name + ".down.bias", Tensor<Scalar>::zeros({r}));
    a.w_up = reg.add(name + ".up.weight", Tensor<Scalar>::zeros({r, d}));
    a.b_up = reg.add(name + ".up.bias", Tensor<Scalar>::zeros({d}));
    return a;
  }

  Index dim() const { return w_down.dim(0); }
  Index bottleneck() const { return w_down.dim(1); }

  Tensor<Scalar> side_path(const Tensor<Scalar>& x) const {
    if (x.rank() < 1 || x.shape().back() != dim()) {
      throw ShapeError("adapter", x.shape(), w_down.shape(), "trailing dim must equal adapter width d");
    }
    return ag::add(ag::matmul(ag::relu(ag::add(ag::matmul(x, w_down), b_down)), w_up), b_up);
  }
};

// h + W_up(relu(W_down h + b_down)) + b_up
template <typename Scalar>
Tensor<Scalar> apply_serial_adapter(const Tensor<Scalar>& h, const BottleneckAdapter<Scalar>& module) {
  return ag::add(h, module.side_path(h));
}

// The side path reads the sublayer's input and is added to its output.
template <typename Scalar>
Tensor<Scalar> apply_parallel_adapter(const Tensor<Scalar>& sublayer_input, const Tensor<Scalar>& sublayer_output,
                                      const BottleneckAdapter<Scalar>& module) {
  if (sublayer_input.shape() != sublayer_output.shape()) {
    throw ShapeError("parallel_adapter", sublayer_input.shape(), sublayer_output.shape());
  }
  return ag::add(sublayer_output, module.side_path(sublayer_input));
}

// Low-rank update B A next to a frozen projection; A [rank, d_in], B [d_out, rank].
template <typename Scalar>
struct LoraModule {
  Tensor<Scalar> a;
  Tensor<Scalar> b;
  Scalar scaling = Scalar(1);

  static LoraModule make(nn::ParameterRegistry<Scalar>& reg, const std::string& name, Index d_in, Index d_out,
                         Index rank, double scaling, std::mt19937_64& engine) {
    if (rank < 1 || rank > std::min(d_in, d_out)) {
      throw ValueError("lora: rank " + std::to_string(rank) + " must lie in [1, " + std::to_string(std::min(d_in, d_out)) +
                       "]");
    }
    LoraModule m;
    m.a = reg.add(name + ".lora_A", nn::uniform_tensor<Scalar>({rank, d_in}, 1.0 / std::sqrt(double(d_in)), engine));
    m.b = reg.add(name + ".lora_B", Tensor<Scalar>::zeros({d_out, rank}));
    m.scaling = static_cast<Scalar>(scaling);
    return m;
  }

  Index rank() const { return a.dim(0); }
};

// x W^T + scaling * x A^T B^T
template <typename Scalar>
Tensor<Scalar> apply_lora(const Tensor<Scalar>& x, const Tensor<Scalar>& frozen_weight, const LoraModule<Scalar>& module) {
  if (module.a.dim(1) != frozen_weight.dim(1) || module.b.dim(0) != frozen_weight.dim(0)) {
    throw ShapeError("lora", frozen_weight.shape(), module.a.shape(), "low-rank factors do not match host projection");
  }
  if (module.rank() > std::min(frozen_weight.dim(0), frozen_weight.dim(1))) {
    throw ValueError("lora: rank exceeds host projection width (degenerate low-rank update)");
  }
  auto base = ag::matmul_nt(x, frozen_weight);
  auto update = ag::matmul_nt(ag::matmul_nt(x, module.a), module.b);
  return ag::add(base, ag::scale(update, module.scaling));
}

template <typename Scalar>
Tensor<Scalar> apply_lora(const Tensor<Scalar>& x, const nn::Linear<Scalar>& host, const LoraModule<Scalar>& module) {
  return ag::add(apply_lora(x, host.weight, module), host.bias);
}

// Learned prefix embeddings pushed through a two-layer reparameterisation
// network that emits every layer's key and value prefixes at once.
template <typename Scalar>
struct PrefixModule {
  Tensor<Scalar> embedding;  // [P, d]
  nn::Linear<Scalar> hidden;  // d -> width
  nn::Linear<Scalar> output;  // width -> n_layers * 2 * d
  Index n_layers = 0;
  Index d_model = 0;

  static PrefixModule make(nn::ParameterRegistry<Scalar>& reg, const std::string& name, Index prefix_length,
                           Index d_model, Index n_layers, Index width, std::mt19937_64& engine) {
    PrefixModule m;
    m.n_layers = n_layers;
    m.d_model = d_model;
    m.embedding = reg.add(name + ".embedding", nn::normal_tensor<Scalar>({prefix_length, d_model}, 0.02, engine));
    m.hidden = nn::Linear<Scalar>::make(reg, name + ".reparam.hidden", d_model, width, 0.02, engine);
    m.output = nn::Linear<Scalar>::make(reg, name + ".reparam.output", width, n_layers * 2 * d_model, 0.02, engine);
    return m;
  }

  Index length() const { return embedding.dim(0); }

  // [P, n_layers * 2 * d]; columns are grouped (layer, key|value, feature).
  Tensor<Scalar> compute() const { return output(ag::tanh(hidden(embedding))); }

  // Key (stream 0) or value (stream 1) prefix of one layer, [P, d].
  Tensor<Scalar> layer_prefix(const Tensor<Scalar>& all, Index layer, int stream) const {
    if (layer < 0 || layer >= n_layers) throw ValueError("prefix: layer index " + std::to_string(layer) + " out of range");
    const Index start = (layer * 2 + stream) * d_model;
    return ag::slice(all, 1, start, start + d_model);
  }
};

template <typename Scalar>
struct KeyValue {
  Tensor<Scalar> keys;
  Tensor<Scalar> values;
};

// keys/values [batch, heads, seq, d_head]; prefixes [P, heads * d_head].
// Returns [batch, heads, P + seq, d_head] with the prefixes in front.
template <typename Scalar>
KeyValue<Scalar> prepend_prefix(const Tensor<Scalar>& keys, const Tensor<Scalar>& values,
                                const Tensor<Scalar>& key_prefix, const Tensor<Scalar>& value_prefix) {
  if (keys.rank() != 4 || keys.shape() != values.shape()) throw ShapeError("prefix", keys.shape(), values.shape());
  const Index batch = keys.dim(0), heads = keys.dim(1), d_head = keys.dim(3);
  const Index p = key_prefix.dim(0);
  if (p == 0) return {keys, values};
  if (key_prefix.shape() != Shape{p, heads * d_head} || value_prefix.shape() != key_prefix.shape()) {
    throw ShapeError("prefix", keys.shape(), key_prefix.shape(), "prefix width must equal heads * d_head");
  }
  auto lift = [&](const Tensor<Scalar>& pre) {
    auto per_head = ag::permute(ag::reshape(pre, {p, heads, d_head}), {1, 0, 2});  // [H, P, dh]
    return ag::expand(per_head, 0, batch);                                        // [B, H, P, dh]
  };
  return {ag::concat<Scalar>({lift(key_prefix), keys}, 2), ag::concat<Scalar>({lift(value_prefix), values}, 2)};
}

template <typename Scalar>
KeyValue<Scalar> apply_prefix(const Tensor<Scalar>& keys, const Tensor<Scalar>& values, const PrefixModule<Scalar>& module,
                              Index layer_index) {
  if (module.length() == 0) return {keys, values};
  auto all = module.compute();
  return prepend_prefix(keys, values, module.layer_prefix(all, layer_index, 0), module.layer_prefix(all, layer_index, 1));
}

}  // namespace mtpeft
