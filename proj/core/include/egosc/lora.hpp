#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egosc/backbone.hpp"

namespace egosc {

struct LoraSpec {
  enum class Variant { none, ff, qv };
  Variant variant = Variant::none;
  int rank = 8;
  double alpha = 16.0;
};

const char* lora_variant_name(LoraSpec::Variant v);
LoraSpec::Variant parse_lora_variant(const std::string& s);

// Base weight names the variant wraps: ff covers both feedforward linears
// per transformer layer, qv the query and value projections.
std::vector<std::string> lora_targets(const BackboneConfig& cfg, LoraSpec::Variant variant);

// Adapter tensors, named lora.<target>.{a,b}. A is small random, B zero, so
// the initial delta vanishes and the wrapped model matches the base exactly.
std::vector<std::pair<std::string, TensorF>> lora_init(const BackboneConfig& cfg,
                                                       const LoraSpec& spec, std::uint64_t seed);

std::int64_t lora_param_count(const BackboneConfig& cfg, const LoraSpec& spec);

// Registers adapter pairs on a bound backbone; base weights stay whatever
// they were bound as (constants when frozen).
template <typename T>
void attach_lora(Bound<T>& bound, const LoraSpec& spec,
                 const std::vector<std::pair<std::string, ad::Var<T>>>& lora_vars) {
  if (spec.variant == LoraSpec::Variant::none) return;
  for (const auto& target : lora_targets(*bound.cfg, spec.variant)) {
    const ad::Var<T>* a = nullptr;
    const ad::Var<T>* b = nullptr;
    for (const auto& [name, v] : lora_vars) {
      if (name == "lora." + target + ".a") a = &v;
      if (name == "lora." + target + ".b") b = &v;
    }
    if (!a || !b) throw ContractError("lora: missing adapter tensors for " + target);
    bound.lora[target] = {*a, *b, spec.alpha / static_cast<double>(spec.rank)};
  }
}

}  // namespace egosc
