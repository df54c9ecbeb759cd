#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "egosc/backbone.hpp"
#include "egosc/lora.hpp"

namespace egosc {

struct ClassifierConfig {
  int conv_channels = 256;
  int conv_layers = 2;
  std::vector<int> mlp_hidden = {128};
  int num_classes = 2;
  enum class Mode { mono, dual };
  Mode input_mode = Mode::mono;
  bool backbone_trainable = true;
  double lr = 5e-4;
  std::vector<double> lr_grid = {2e-4, 5e-4};
  double max_segment_s = 0.6;  // center-crop bound applied to every segment
  int batch_size = 8;
  int max_steps = 80;
  std::uint64_t seed = 1;
};

std::string classifier_config_to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const std::string& text);

// One labeled classification example: a slice of a session channel (plus the
// time-aligned slice of the other device in dual mode).
struct SegmentRef {
  std::string session_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int label = 0;  // 0 adult, 1 child
  std::string path_a;
  std::string path_b;  // empty in mono mode
};

template <typename T>
struct ClassifierModel {
  ClassifierConfig head_cfg;
  LoraSpec lora_spec;
  BackboneModel<T> backbone;
  std::vector<std::pair<std::string, Tensor<T>>> head;
  std::vector<std::pair<std::string, Tensor<T>>> lora;

  Tensor<T>& hp(const std::string& name) {
    for (auto& [n, t] : head)
      if (n == name) return t;
    throw ContractError("classifier: unknown head parameter " + name);
  }
};

template <typename T>
ClassifierModel<T> init_classifier(const ClassifierConfig& ccfg, BackboneModel<T> backbone,
                                   const LoraSpec& peft, std::uint64_t seed);

Checkpoint classifier_to_checkpoint(const ClassifierModel<float>& model);
ClassifierModel<float> classifier_from_checkpoint(const Checkpoint& ck);

// LoRA deltas alone; combined with a base backbone checkpoint this rebuilds
// the wrapped model.
Checkpoint lora_delta_checkpoint(const ClassifierModel<float>& model);
ClassifierModel<float> classifier_from_base_and_delta(const Checkpoint& base_ck,
                                                      const Checkpoint& delta_ck);

template <typename T>
struct BoundClassifier {
  Bound<T> bb;
  std::unordered_map<std::string, ad::Var<T>> head;
  std::vector<std::pair<std::string, ad::Var<T>>> lora_vars;
  const ClassifierConfig* cfg = nullptr;

  const ad::Var<T>& get(const std::string& name) const {
    auto it = head.find(name);
    if (it == head.end()) throw ContractError("bound classifier: unknown " + name);
    return it->second;
  }
};

// `training` binds head (and lora, or the backbone when it is trainable and
// unwrapped) as differentiable parameters; otherwise everything is constant.
template <typename T>
BoundClassifier<T> bind_classifier(const ClassifierModel<T>& model, bool training) {
  BoundClassifier<T> bc;
  bc.cfg = &model.head_cfg;
  const bool lora_on = model.lora_spec.variant != LoraSpec::Variant::none;
  const bool bb_trainable = training && !lora_on && model.head_cfg.backbone_trainable;
  bc.bb = bind_backbone(model.backbone, bb_trainable);
  for (const auto& [name, t] : model.head)
    bc.head.emplace(name, training ? ad::param(t) : ad::constant(t));
  if (lora_on) {
    std::vector<std::pair<std::string, ad::Var<T>>> lv;
    for (const auto& [name, t] : model.lora)
      lv.emplace_back(name, training ? ad::param(t) : ad::constant(t));
    attach_lora(bc.bb, model.lora_spec, lv);
    bc.lora_vars = std::move(lv);
  }
  return bc;
}

// Softmax-weighted combination of all L+1 hidden states.
template <typename T>
ad::Var<T> layer_weighted_sum(const std::vector<ad::Var<T>>& hidden, const ad::Var<T>& weights) {
  if (hidden.empty()) throw ContractError("layer_weighted_sum: no states");
  if (weights->value.numel() != static_cast<std::int64_t>(hidden.size()))
    throw ContractError("layer_weighted_sum: weight count mismatch");
  auto w = ad::softmax_rows(weights);
  ad::Var<T> out;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    hidden[0]->value.require_same_shape(hidden[l]->value, "layer_weighted_sum");
    auto term = ad::scale_by_element(hidden[l], w, static_cast<std::int64_t>(l));
    out = out ? ad::add(out, term) : term;
  }
  return out;
}

template <typename T>
ad::Var<T> classifier_features(const BoundClassifier<T>& bc, const std::vector<float>& samples) {
  auto z = conv_encode(bc.bb, samples);
  auto hidden = contextualize(bc.bb, z, {});
  return layer_weighted_sum(hidden, bc.get("head.layer_logits"));
}

// Backbone features -> kernel-1 conv stack with ReLU -> mean over frames ->
// MLP -> 2 logits. Dual mode concatenates per-channel features frame-wise.
template <typename T>
ad::Var<T> classifier_logits(const BoundClassifier<T>& bc, const std::vector<float>& a,
                             const std::vector<float>* b) {
  const auto& cfg = *bc.cfg;
  if (cfg.input_mode == ClassifierConfig::Mode::dual) {
    if (!b) throw ContractError("dual mode needs two segments");
    if (a.size() != b->size()) throw ContractError("dual mode: channel length mismatch");
  } else if (b) {
    throw ContractError("mono mode got two segments");
  }
  auto feats = classifier_features(bc, a);
  if (b) feats = ad::concat_cols(feats, classifier_features(bc, *b));
  for (int i = 0; i < cfg.conv_layers; ++i)
    feats = ad::relu(ad::linear(feats, bc.get("head.conv." + std::to_string(i) + ".weight"),
                                bc.get("head.conv." + std::to_string(i) + ".bias")));
  auto x = ad::mean_rows(feats);
  for (std::size_t i = 0; i < cfg.mlp_hidden.size(); ++i)
    x = ad::relu(ad::linear(x, bc.get("head.mlp." + std::to_string(i) + ".weight"),
                            bc.get("head.mlp." + std::to_string(i) + ".bias")));
  const std::string last = "head.mlp." + std::to_string(cfg.mlp_hidden.size());
  return ad::linear(x, bc.get(last + ".weight"), bc.get(last + ".bias"));
}

template <typename T>
ad::Var<T> cross_entropy(const ad::Var<T>& logits, int label) {
  if (label < 0 || label >= logits->value.dim(1)) throw ContractError("cross_entropy: bad label");
  return ad::neg(ad::slice_cols(ad::log_softmax_rows(logits), label, label + 1));
}

struct Prediction {
  int label = 0;
  double p_adult = 0.0;
  double p_child = 0.0;
};

Prediction predict(const ClassifierModel<float>& model, const std::vector<float>& a,
                   const std::vector<float>* b = nullptr);

// Center-cropped samples for a segment (and its paired channel in dual
// mode), loaded straight from the session WAVs.
std::pair<std::vector<float>, std::vector<float>> load_segment_samples(const SegmentRef& ref,
                                                                       double max_segment_s);

struct FinetuneLogEntry {
  int step = 0;
  double loss = 0.0;
};

// Cross-entropy fine-tuning with Adam. LoRA and frozen-backbone modes leave
// the base backbone weights byte-identical.
ClassifierModel<float> finetune(const std::vector<SegmentRef>& train, const ClassifierConfig& ccfg,
                                const BackboneModel<float>& backbone, const LoraSpec& peft,
                                std::vector<FinetuneLogEntry>* log = nullptr);

std::vector<Prediction> predict_segments(const ClassifierModel<float>& model,
                                         const std::vector<SegmentRef>& refs);

}  // namespace egosc
