#pragma once

#include <string>

#include "mtpeft/backbone.hpp"
#include "mtpeft/peft.hpp"

namespace mtpeft {

struct InjectionSummary {
  PeftMethod method = PeftMethod::serial_adapter;
  std::size_t modules = 0;
  Index parameters = 0;
};

// Adds the configured modules under "peft.", then freezes every backbone
// parameter. Serial: two adapters per block (after attention, after FFN).
// Parallel: one adapter per block beside the FFN. LoRA: the configured
// attention projections of every block. Prefix: one shared module.
template <typename Scalar>
InjectionSummary inject_peft(Backbone<Scalar>& model, const PeftConfig& config) {
  config.validate();
  auto& reg = model.registry();
  if (reg.count_matching([](const std::string& n) { return nn::starts_with(n, kPeftPrefix); }) > 0) {
    throw ValueError("inject_peft: model already carries PEFT modules");
  }
  const Index before = reg.total_elements();
  const Index d = model.config().d_model;
  auto& engine = model.init_engine();
  InjectionSummary summary;
  summary.method = config.method;
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    auto& blk = model.blocks()[i];
    const std::string p = std::string(kPeftPrefix) + "layer" + std::to_string(i);
    switch (config.method) {
      case PeftMethod::serial_adapter:
        blk.attn_adapter = BottleneckAdapter<Scalar>::make(reg, p + ".attn_adapter", d, config.bottleneck_r, engine);
        blk.ffn_adapter = BottleneckAdapter<Scalar>::make(reg, p + ".ffn_adapter", d, config.bottleneck_r, engine);
        summary.modules += 2;
        break;
      case PeftMethod::parallel_adapter:
        blk.parallel_adapter = BottleneckAdapter<Scalar>::make(reg, p + ".parallel_adapter", d, config.bottleneck_r, engine);
        summary.modules += 1;
        break;
      case PeftMethod::lora:
        if (config.targets(LoraTarget::query)) {
          blk.lora_q = LoraModule<Scalar>::make(reg, p + ".attn.q_proj", d, d, config.lora_rank, config.lora_scaling, engine);
          ++summary.modules;
        }
        if (config.targets(LoraTarget::key)) {
          blk.lora_k = LoraModule<Scalar>::make(reg, p + ".attn.k_proj", d, d, config.lora_rank, config.lora_scaling, engine);
          ++summary.modules;
        }
        if (config.targets(LoraTarget::value)) {
          blk.lora_v = LoraModule<Scalar>::make(reg, p + ".attn.v_proj", d, d, config.lora_rank, config.lora_scaling, engine);
          ++summary.modules;
        }
        break;
      case PeftMethod::prefix:
        break;
    }
  }
  if (config.method == PeftMethod::prefix) {
    model.prefix() = PrefixModule<Scalar>::make(reg, std::string(kPeftPrefix) + "prefix", config.prefix_length, d,
                                                model.config().n_layers, config.prefix_reparam_width, engine);
    summary.modules = 1;
  }
  reg.set_frozen([](const std::string& n) { return nn::starts_with(n, Backbone<Scalar>::kPrefix); }, true);
  summary.parameters = reg.total_elements() - before;
  return summary;
}

}  // namespace mtpeft
