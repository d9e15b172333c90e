#include "mtpeft/peft.hpp"

#include <algorithm>

namespace mtpeft {

std::string to_string(PeftMethod m) {
  switch (m) {
    case PeftMethod::serial_adapter: return "serial_adapter";
    case PeftMethod::parallel_adapter: return "parallel_adapter";
    case PeftMethod::lora: return "lora";
    case PeftMethod::prefix: return "prefix";
  }
  return "unknown";
}

PeftMethod parse_peft_method(const std::string& s) {
  for (auto m : {PeftMethod::serial_adapter, PeftMethod::parallel_adapter, PeftMethod::lora, PeftMethod::prefix}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("peft.method", "unknown method '" + s + "'");
}

std::string to_string(LoraTarget t) {
  switch (t) {
    case LoraTarget::query: return "query";
    case LoraTarget::key: return "key";
    case LoraTarget::value: return "value";
  }
  return "unknown";
}

LoraTarget parse_lora_target(const std::string& s) {
  for (auto t : {LoraTarget::query, LoraTarget::key, LoraTarget::value}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("peft.lora_targets", "unknown projection '" + s + "'");
}

bool PeftConfig::targets(LoraTarget t) const {
  return std::find(lora_targets.begin(), lora_targets.end(), t) != lora_targets.end();
}

void PeftConfig::validate() const {
  if (bottleneck_r < 1) throw ConfigError("peft.bottleneck_r", "must be >= 1");
  if (lora_rank < 1) throw ConfigError("peft.lora_rank", "must be >= 1");
  // Zero-length prefixes are accepted so the identity case can be exercised.
  if (prefix_length < 0) throw ConfigError("peft.prefix_length", "must be >= 0");
  if (prefix_reparam_width < 1) throw ConfigError("peft.prefix_reparam_width", "must be >= 1");
  if (method == PeftMethod::lora && lora_targets.empty()) throw ConfigError("peft.lora_targets", "must not be empty");
}

}  // namespace mtpeft
