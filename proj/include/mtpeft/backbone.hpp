#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtpeft/nn/parameter.hpp"
#include "mtpeft/peft.hpp"
#include "mtpeft/rng.hpp"

namespace mtpeft {

enum class Architecture { encoder_only, decoder_only };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

struct BackboneConfig {
  Architecture architecture = Architecture::encoder_only;
  Index n_layers = 4;
  Index d_model = 128;
  Index n_heads = 4;
  Index d_ffn = 512;
  Index vocab_size = 259;
  Index max_seq_len = 128;
  Index pad_id = 256;
  double dropout = 0.1;
  double init_std = 0.02;

  // Throws ConfigError naming the field.
  void validate() const;

  // Embeddings + per-layer attention/FFN/norm parameters, no PEFT or heads.
  Index closed_form_parameter_count() const;

  // 12 layers, d = 768, 12 heads, ffn 3072, 50265-token vocabulary, 514 positions.
  static BackboneConfig reference_base();
};

// Row-major [batch, seq] token ids.
struct TokenBatch {
  Index batch = 0;
  Index seq = 0;
  std::vector<Index> ids;

  Index at(Index b, Index s) const { return ids[static_cast<std::size_t>(b * seq + s)]; }
};

template <typename Scalar>
struct TransformerBlock {
  nn::Linear<Scalar> q_proj, k_proj, v_proj, o_proj;
  nn::LayerNorm<Scalar> attn_norm;
  nn::Linear<Scalar> fc_in, fc_out;
  nn::LayerNorm<Scalar> ffn_norm;

  // Injected modules; absent unless inject_peft put them there.
  std::optional<BottleneckAdapter<Scalar>> attn_adapter;
  std::optional<BottleneckAdapter<Scalar>> ffn_adapter;
  std::optional<BottleneckAdapter<Scalar>> parallel_adapter;
  std::optional<LoraModule<Scalar>> lora_q, lora_k, lora_v;
};

template <typename Scalar>
struct EncodeOutput {
  Tensor<Scalar> hidden;  // [batch, seq, d_model]
  Tensor<Scalar> pooled;  // [batch, d_model]
};

// Desk-scale transformer. Owns the model-wide parameter registry; PEFT modules
// and task heads register into the same registry.
template <typename Scalar>
class Backbone {
 public:
  static constexpr const char* kPrefix = "backbone.";

  Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config), engine_(seed) {
    config_.validate();
    const Index d = config_.d_model;
    const double s = config_.init_std;
    token_embedding_ = registry_.add("backbone.embeddings.token.weight",
                                     nn::normal_tensor<Scalar>({config_.vocab_size, d}, s, engine_));
    position_embedding_ = registry_.add("backbone.embeddings.position.weight",
                                        nn::normal_tensor<Scalar>({config_.max_seq_len, d}, s, engine_));
    if (config_.architecture == Architecture::encoder_only) {
      edge_norm_ = nn::LayerNorm<Scalar>::make(registry_, "backbone.embeddings.norm", d);
    }
    for (Index i = 0; i < config_.n_layers; ++i) {
      const std::string p = "backbone.layer" + std::to_string(i);
      TransformerBlock<Scalar> blk;
      blk.q_proj = nn::Linear<Scalar>::make(registry_, p + ".attn.q_proj", d, d, s, engine_);
      blk.k_proj = nn::Linear<Scalar>::make(registry_, p + ".attn.k_proj", d, d, s, engine_);
      blk.v_proj = nn::Linear<Scalar>::make(registry_, p + ".attn.v_proj", d, d, s, engine_);
      blk.o_proj = nn::Linear<Scalar>::make(registry_, p + ".attn.o_proj", d, d, s, engine_);
      blk.attn_norm = nn::LayerNorm<Scalar>::make(registry_, p + ".attn_norm", d);
      blk.fc_in = nn::Linear<Scalar>::make(registry_, p + ".ffn.fc_in", d, config_.d_ffn, s, engine_);
      blk.fc_out = nn::Linear<Scalar>::make(registry_, p + ".ffn.fc_out", config_.d_ffn, d, s, engine_);
      blk.ffn_norm = nn::LayerNorm<Scalar>::make(registry_, p + ".ffn_norm", d);
      blocks_.push_back(std::move(blk));
    }
    if (config_.architecture == Architecture::decoder_only) {
      edge_norm_ = nn::LayerNorm<Scalar>::make(registry_, "backbone.final_norm", d);
    }
  }

  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;
  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;

  const BackboneConfig& config() const { return config_; }
  nn::ParameterRegistry<Scalar>& registry() { return registry_; }
  const nn::ParameterRegistry<Scalar>& registry() const { return registry_; }
  std::vector<TransformerBlock<Scalar>>& blocks() { return blocks_; }
  const std::vector<TransformerBlock<Scalar>>& blocks() const { return blocks_; }
  std::optional<PrefixModule<Scalar>>& prefix() { return prefix_; }
  const std::optional<PrefixModule<Scalar>>& prefix() const { return prefix_; }
  // Continues the construction stream so injected modules are seed-deterministic too.
  std::mt19937_64& init_engine() { return engine_; }

  // hidden [batch, seq, d] and the pooled row per sequence. `rng` is required
  // only when train is true and dropout > 0.
  EncodeOutput<Scalar> encode(const TokenBatch& tokens, bool train, CounterRng* rng = nullptr) const {
    const Index B = tokens.batch, S = tokens.seq, d = config_.d_model;
    if (S > config_.max_seq_len) {
      throw ValueError("encode: sequence length " + std::to_string(S) + " exceeds max_seq_len " +
                       std::to_string(config_.max_seq_len));
    }
    if (static_cast<Index>(tokens.ids.size()) != B * S) {
      throw ShapeError("encode", Shape{B, S}, Shape{static_cast<Index>(tokens.ids.size())}, "id count");
    }
    if (B == 0 || S == 0) throw ValueError("encode: empty token batch");
    const bool drop = train && config_.dropout > 0.0;
    if (drop && rng == nullptr) throw ValueError("encode: training with dropout needs an rng");
    auto stream = [&]() { return drop ? rng->next_stream() : std::uint64_t{0}; };

    std::vector<Index> ids(tokens.ids.begin(), tokens.ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= config_.vocab_size) {
        throw ValueError("encode: token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                         " outside vocabulary");
      }
    }
    std::vector<Index> positions(static_cast<std::size_t>(S));
    for (Index s = 0; s < S; ++s) positions[static_cast<std::size_t>(s)] = s;

    auto tok = ag::reshape(ag::embedding_lookup(token_embedding_, ids), {B, S, d});
    auto pos = ag::embedding_lookup(position_embedding_, positions);  // [S, d], broadcast over batch
    auto x = ag::add(tok, pos);
    const bool encoder = config_.architecture == Architecture::encoder_only;
    if (encoder) x = (*edge_norm_)(x);
    x = ag::dropout(x, config_.dropout, drop, stream());

    const Index prefix_len = prefix_ ? prefix_->length() : 0;
    const auto mask = attention_mask(tokens, prefix_len);
    std::optional<Tensor<Scalar>> prefix_states;
    if (prefix_ && prefix_len > 0) prefix_states = prefix_->compute();

    for (Index l = 0; l < config_.n_layers; ++l) {
      const auto& blk = blocks_[static_cast<std::size_t>(l)];
      auto attn_in = encoder ? x : blk.attn_norm(x);
      auto a = attention(blk, l, attn_in, mask, prefix_states, drop, stream);
      a = ag::dropout(a, config_.dropout, drop, stream());
      if (blk.attn_adapter) a = apply_serial_adapter(a, *blk.attn_adapter);
      x = ag::add(x, a);
      if (encoder) x = blk.attn_norm(x);

      auto ffn_in = encoder ? x : blk.ffn_norm(x);
      auto f = blk.fc_out(ag::gelu(blk.fc_in(ffn_in)));
      f = ag::dropout(f, config_.dropout, drop, stream());
      if (blk.parallel_adapter) f = apply_parallel_adapter(ffn_in, f, *blk.parallel_adapter);
      if (blk.ffn_adapter) f = apply_serial_adapter(f, *blk.ffn_adapter);
      x = ag::add(x, f);
      if (encoder) x = blk.ffn_norm(x);
    }
    if (!encoder) x = (*edge_norm_)(x);

    std::vector<Index> rows(static_cast<std::size_t>(B));
    for (Index b = 0; b < B; ++b) rows[static_cast<std::size_t>(b)] = b * S + pooling_position(tokens, b);
    auto pooled = ag::gather_rows(ag::reshape(x, {B * S, d}), rows);
    return {x, pooled};
  }

  // First token for encoders; last non-pad token for decoders.
  Index pooling_position(const TokenBatch& tokens, Index b) const {
    if (config_.architecture == Architecture::encoder_only) return 0;
    Index last = 0;
    for (Index s = 0; s < tokens.seq; ++s) {
      if (tokens.at(b, s) != config_.pad_id) last = s;
    }
    return last;
  }

 private:
  // Additive mask [B * S, P + S]: prefixes always visible, pad keys hidden,
  // future keys hidden for decoders.
  ag::RowMat<Scalar> attention_mask(const TokenBatch& tokens, Index prefix_len) const {
    const Index B = tokens.batch, S = tokens.seq;
    const Scalar neg = Scalar(-1e9);
    ag::RowMat<Scalar> mask = ag::RowMat<Scalar>::Zero(B * S, prefix_len + S);
    const bool causal = config_.architecture == Architecture::decoder_only;
    for (Index b = 0; b < B; ++b) {
      for (Index j = 0; j < S; ++j) {
        const bool pad = tokens.at(b, j) == config_.pad_id;
        for (Index i = 0; i < S; ++i) {
          if (pad || (causal && j > i)) mask(b * S + i, prefix_len + j) = neg;
        }
      }
    }
    return mask;
  }

  template <typename StreamFn>
  Tensor<Scalar> attention(const TransformerBlock<Scalar>& blk, Index layer, const Tensor<Scalar>& x,
                           const ag::RowMat<Scalar>& mask, const std::optional<Tensor<Scalar>>& prefix_states,
                           bool drop, StreamFn& stream) const {
    const Index B = x.dim(0), S = x.dim(1), d = config_.d_model, H = config_.n_heads, dh = d / H;
    auto project = [&](const nn::Linear<Scalar>& host, const std::optional<LoraModule<Scalar>>& lora) {
      return lora ? apply_lora(x, host, *lora) : host(x);
    };
    auto heads = [&](const Tensor<Scalar>& t) { return ag::permute(ag::reshape(t, {B, S, H, dh}), {0, 2, 1, 3}); };
    auto q = heads(project(blk.q_proj, blk.lora_q));
    auto k = heads(project(blk.k_proj, blk.lora_k));
    auto v = heads(project(blk.v_proj, blk.lora_v));
    if (prefix_states) {
      auto kv = prepend_prefix(k, v, prefix_->layer_prefix(*prefix_states, layer, 0),
                               prefix_->layer_prefix(*prefix_states, layer, 1));
      k = kv.keys;
      v = kv.values;
    }
    auto scores = ag::scale(ag::matmul_nt(q, k), Scalar(1.0 / std::sqrt(double(dh))));
    auto probs = ag::masked_softmax(scores, mask);
    probs = ag::dropout(probs, config_.dropout, drop, stream());
    auto ctx = ag::reshape(ag::permute(ag::matmul(probs, v), {0, 2, 1, 3}), {B, S, d});
    return blk.o_proj(ctx);
  }

  BackboneConfig config_;
  std::mt19937_64 engine_;
  nn::ParameterRegistry<Scalar> registry_;
  Tensor<Scalar> token_embedding_;
  Tensor<Scalar> position_embedding_;
  std::optional<nn::LayerNorm<Scalar>> edge_norm_;  // embedding norm (encoder) or final norm (decoder)
  std::vector<TransformerBlock<Scalar>> blocks_;
  std::optional<PrefixModule<Scalar>> prefix_;
};

// "peft." is the namespace of every injected module.
inline constexpr const char* kPeftPrefix = "peft.";

struct FreezeResult {
  std::size_t matched = 0;
  std::size_t changed = 0;
};

void warn(const std::string& message);

// Zero matches is reported through warn() but is not an error.
template <typename Scalar>
FreezeResult set_frozen(Backbone<Scalar>& model, const std::function<bool(const std::string&)>& filter, bool frozen) {
  FreezeResult r;
  r.matched = model.registry().count_matching(filter);
  r.changed = model.registry().set_frozen(filter, frozen);
  if (r.matched == 0) warn("set_frozen: filter matched no parameters");
  return r;
}

}  // namespace mtpeft
