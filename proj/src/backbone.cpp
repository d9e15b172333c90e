#include "mtpeft/backbone.hpp"

#include <iostream>

namespace mtpeft {

std::string to_string(Architecture a) {
  return a == Architecture::encoder_only ? "encoder_only" : "decoder_only";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "encoder_only") return Architecture::encoder_only;
  if (s == "decoder_only") return Architecture::decoder_only;
  throw ConfigError("backbone.architecture", "expected encoder_only or decoder_only, got '" + s + "'");
}

void BackboneConfig::validate() const {
  auto positive = [](Index v, const char* field) {
    if (v < 1) throw ConfigError(std::string("backbone.") + field, "must be >= 1, got " + std::to_string(v));
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ffn, "d_ffn");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) {
    throw ConfigError("backbone.n_heads", "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                              std::to_string(n_heads));
  }
  if (pad_id < 0 || pad_id >= vocab_size) throw ConfigError("backbone.pad_id", "must lie inside the vocabulary");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("backbone.dropout", "must be in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("backbone.init_std", "must be positive");
}

Index BackboneConfig::closed_form_parameter_count() const {
  const Index d = d_model;
  const Index embeddings = vocab_size * d + max_seq_len * d;
  const Index edge_norm = 2 * d;  // embedding norm or final norm
  const Index attention = 4 * (d * d + d);
  const Index ffn = d * d_ffn + d_ffn + d_ffn * d + d;
  const Index norms = 2 * 2 * d;
  return embeddings + edge_norm + n_layers * (attention + ffn + norms);
}

BackboneConfig BackboneConfig::reference_base() {
  BackboneConfig c;
  c.architecture = Architecture::encoder_only;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ffn = 3072;
  c.vocab_size = 50265;
  c.max_seq_len = 514;
  c.pad_id = 1;
  return c;
}

void warn(const std::string& message) { std::clog << "warning: " << message << '\n'; }

}  // namespace mtpeft
