#include "egosc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "egosc/adam.hpp"
#include "egosc/audio.hpp"
#include "egosc/rng.hpp"

namespace egosc {

using nlohmann::json;

// ---- LoRA plumbing ----

const char* lora_variant_name(LoraSpec::Variant v) {
  switch (v) {
    case LoraSpec::Variant::none: return "none";
    case LoraSpec::Variant::ff: return "ff";
    case LoraSpec::Variant::qv: return "qv";
  }
  return "none";
}

LoraSpec::Variant parse_lora_variant(const std::string& s) {
  if (s == "none") return LoraSpec::Variant::none;
  if (s == "ff" || s == "ff-lora") return LoraSpec::Variant::ff;
  if (s == "qv" || s == "qv-lora") return LoraSpec::Variant::qv;
  throw ContractError("unknown lora variant: " + s);
}

std::vector<std::string> lora_targets(const BackboneConfig& cfg, LoraSpec::Variant variant) {
  std::vector<std::string> out;
  if (variant == LoraSpec::Variant::none) return out;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer." + std::to_string(l);
    if (variant == LoraSpec::Variant::ff) {
      out.push_back(pre + ".ffn.w1.weight");
      out.push_back(pre + ".ffn.w2.weight");
    } else {
      out.push_back(pre + ".attn.wq.weight");
      out.push_back(pre + ".attn.wv.weight");
    }
  }
  return out;
}

namespace {

// (out, in) of the wrapped base matrix.
std::pair<std::int64_t, std::int64_t> target_shape(const BackboneConfig& cfg,
                                                   const std::string& target) {
  if (target.find(".ffn.w1.") != std::string::npos) return {cfg.ffn_dim, cfg.d_model};
  if (target.find(".ffn.w2.") != std::string::npos) return {cfg.d_model, cfg.ffn_dim};
  return {cfg.d_model, cfg.d_model};
}

}  // namespace

std::vector<std::pair<std::string, TensorF>> lora_init(const BackboneConfig& cfg,
                                                       const LoraSpec& spec, std::uint64_t seed) {
  if (spec.rank < 1) throw ContractError("lora: rank must be >= 1");
  if (spec.alpha <= 0.0) throw ContractError("lora: alpha must be > 0");
  std::vector<std::pair<std::string, TensorF>> out;
  Pcg32 rng(hash_seed(seed, 0x10AAu));
  for (const auto& target : lora_targets(cfg, spec.variant)) {
    const auto [m, n] = target_shape(cfg, target);
    out.emplace_back("lora." + target + ".a",
                     TensorF::randn({spec.rank, n}, rng, 0.02));
    out.emplace_back("lora." + target + ".b", TensorF({m, spec.rank}));
  }
  return out;
}

std::int64_t lora_param_count(const BackboneConfig& cfg, const LoraSpec& spec) {
  std::int64_t total = 0;
  for (const auto& target : lora_targets(cfg, spec.variant)) {
    const auto [m, n] = target_shape(cfg, target);
    total += spec.rank * n + m * spec.rank;
  }
  return total;
}

// ---- config (de)serialization ----

std::string classifier_config_to_json(const ClassifierConfig& cfg) {
  json j = {{"conv_channels", cfg.conv_channels},
            {"conv_layers", cfg.conv_layers},
            {"mlp_hidden", cfg.mlp_hidden},
            {"num_classes", cfg.num_classes},
            {"input_mode", cfg.input_mode == ClassifierConfig::Mode::dual ? "dual" : "mono"},
            {"backbone_trainable", cfg.backbone_trainable},
            {"lr", cfg.lr},
            {"lr_grid", cfg.lr_grid},
            {"max_segment_s", cfg.max_segment_s},
            {"batch_size", cfg.batch_size},
            {"max_steps", cfg.max_steps},
            {"seed", cfg.seed}};
  return j.dump();
}

ClassifierConfig classifier_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ClassifierConfig cfg;
  cfg.conv_channels = j.at("conv_channels").get<int>();
  cfg.conv_layers = j.at("conv_layers").get<int>();
  cfg.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  cfg.num_classes = j.at("num_classes").get<int>();
  const std::string mode = j.at("input_mode").get<std::string>();
  if (mode == "mono")
    cfg.input_mode = ClassifierConfig::Mode::mono;
  else if (mode == "dual")
    cfg.input_mode = ClassifierConfig::Mode::dual;
  else
    throw ContractError("classifier config: unknown input_mode " + mode);
  cfg.backbone_trainable = j.at("backbone_trainable").get<bool>();
  cfg.lr = j.at("lr").get<double>();
  cfg.lr_grid = j.at("lr_grid").get<std::vector<double>>();
  cfg.max_segment_s = j.at("max_segment_s").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.max_steps = j.at("max_steps").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

// ---- model construction ----

namespace {

struct HeadSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  bool zero = false;
  double scale = 0.0;  // gaussian stddev when not zero
};

std::vector<HeadSpec> head_specs(const ClassifierConfig& cfg, const BackboneConfig& bb) {
  if (cfg.num_classes != 2) throw ContractError("classifier: num_classes must be 2");
  if (cfg.conv_layers < 1) throw ContractError("classifier: need at least one conv layer");
  if (cfg.conv_channels < 1) throw ContractError("classifier: conv_channels must be >= 1");
  std::vector<HeadSpec> specs;
  specs.push_back({"head.layer_logits", {1, static_cast<std::int64_t>(bb.layers) + 1}, true, 0.0});
  std::int64_t in = cfg.input_mode == ClassifierConfig::Mode::dual ? 2 * bb.d_model : bb.d_model;
  for (int i = 0; i < cfg.conv_layers; ++i) {
    const std::string pre = "head.conv." + std::to_string(i);
    specs.push_back({pre + ".weight", {cfg.conv_channels, in}, false,
                     std::sqrt(2.0 / static_cast<double>(in))});
    specs.push_back({pre + ".bias", {cfg.conv_channels}, true, 0.0});
    in = cfg.conv_channels;
  }
  std::vector<std::int64_t> dims = {in};
  for (int h : cfg.mlp_hidden) dims.push_back(h);
  dims.push_back(cfg.num_classes);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string pre = "head.mlp." + std::to_string(i);
    specs.push_back({pre + ".weight", {dims[i + 1], dims[i]}, false,
                     std::sqrt(2.0 / static_cast<double>(dims[i]))});
    specs.push_back({pre + ".bias", {dims[i + 1]}, true, 0.0});
  }
  return specs;
}

void validate_lr(const ClassifierConfig& cfg) {
  if (cfg.lr_grid.empty()) return;
  for (double g : cfg.lr_grid)
    if (std::abs(cfg.lr - g) <= 1e-12 * std::max(1.0, std::abs(g))) return;
  throw ContractError("classifier: lr " + std::to_string(cfg.lr) + " not in configured grid");
}

}  // namespace

template <typename T>
ClassifierModel<T> init_classifier(const ClassifierConfig& ccfg, BackboneModel<T> backbone,
                                   const LoraSpec& peft, std::uint64_t seed) {
  validate_lr(ccfg);
  ClassifierModel<T> m;
  m.head_cfg = ccfg;
  m.lora_spec = peft;
  m.backbone = std::move(backbone);
  Pcg32 rng(hash_seed(seed, 0xC1A5u));
  for (const auto& spec : head_specs(ccfg, m.backbone.cfg)) {
    Tensor<T> t = spec.zero ? Tensor<T>(spec.shape) : Tensor<T>::randn(spec.shape, rng, spec.scale);
    m.head.emplace_back(spec.name, std::move(t));
  }
  for (auto& [name, t] : lora_init(m.backbone.cfg, peft, seed))
    m.lora.emplace_back(name, t.template cast<T>());
  return m;
}

template ClassifierModel<float> init_classifier<float>(const ClassifierConfig&,
                                                       BackboneModel<float>, const LoraSpec&,
                                                       std::uint64_t);
template ClassifierModel<double> init_classifier<double>(const ClassifierConfig&,
                                                         BackboneModel<double>, const LoraSpec&,
                                                         std::uint64_t);

// ---- checkpoint round-trips ----

namespace {

void put_lora_meta(Checkpoint& ck, const LoraSpec& spec) {
  ck.meta["lora_variant"] = lora_variant_name(spec.variant);
  ck.meta["lora_rank"] = std::to_string(spec.rank);
  ck.meta["lora_alpha"] = std::to_string(spec.alpha);
}

LoraSpec lora_meta(const Checkpoint& ck) {
  LoraSpec spec;
  auto v = ck.meta.find("lora_variant");
  if (v == ck.meta.end()) return spec;
  spec.variant = parse_lora_variant(v->second);
  spec.rank = std::stoi(ck.meta.at("lora_rank"));
  spec.alpha = std::stod(ck.meta.at("lora_alpha"));
  return spec;
}

void load_head_and_lora(ClassifierModel<float>& m, const Checkpoint& ck) {
  for (const auto& spec : head_specs(m.head_cfg, m.backbone.cfg)) {
    const TensorF& t = ck.require(spec.name);
    if (t.shape() != spec.shape) throw IoError("checkpoint: shape mismatch for " + spec.name);
    m.head.emplace_back(spec.name, t);
  }
  for (const auto& target : lora_targets(m.backbone.cfg, m.lora_spec.variant)) {
    for (const char* part : {".a", ".b"}) {
      const std::string name = "lora." + target + part;
      m.lora.emplace_back(name, ck.require(name));
    }
  }
}

}  // namespace

Checkpoint classifier_to_checkpoint(const ClassifierModel<float>& model) {
  Checkpoint ck;
  ck.meta["kind"] = "classifier";
  ck.meta["config"] = backbone_config_to_json(model.backbone.cfg);
  ck.meta["head_config"] = classifier_config_to_json(model.head_cfg);
  put_lora_meta(ck, model.lora_spec);
  for (const auto& [name, t] : model.backbone.params) ck.add(name, t);
  for (const auto& [name, t] : model.head) ck.add(name, t);
  for (const auto& [name, t] : model.lora) ck.add(name, t);
  return ck;
}

ClassifierModel<float> classifier_from_checkpoint(const Checkpoint& ck) {
  auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "classifier")
    throw IoError("checkpoint: not a classifier checkpoint");
  auto hc = ck.meta.find("head_config");
  if (hc == ck.meta.end()) throw IoError("checkpoint: missing classifier config");
  ClassifierModel<float> m;
  m.head_cfg = classifier_config_from_json(hc->second);
  m.lora_spec = lora_meta(ck);
  m.backbone = backbone_from_checkpoint(ck);
  load_head_and_lora(m, ck);
  return m;
}

Checkpoint lora_delta_checkpoint(const ClassifierModel<float>& model) {
  Checkpoint ck;
  ck.meta["kind"] = "lora_delta";
  ck.meta["head_config"] = classifier_config_to_json(model.head_cfg);
  put_lora_meta(ck, model.lora_spec);
  for (const auto& [name, t] : model.head) ck.add(name, t);
  for (const auto& [name, t] : model.lora) ck.add(name, t);
  return ck;
}

ClassifierModel<float> classifier_from_base_and_delta(const Checkpoint& base_ck,
                                                      const Checkpoint& delta_ck) {
  auto kind = delta_ck.meta.find("kind");
  if (kind == delta_ck.meta.end() || kind->second != "lora_delta")
    throw IoError("checkpoint: not a lora delta");
  auto hc = delta_ck.meta.find("head_config");
  if (hc == delta_ck.meta.end()) throw IoError("delta checkpoint: missing classifier config");
  ClassifierModel<float> m;
  m.head_cfg = classifier_config_from_json(hc->second);
  m.lora_spec = lora_meta(delta_ck);
  m.backbone = backbone_from_checkpoint(base_ck);
  load_head_and_lora(m, delta_ck);
  return m;
}

// ---- data access ----

std::pair<std::vector<float>, std::vector<float>> load_segment_samples(const SegmentRef& ref,
                                                                       double max_segment_s) {
  if (ref.end_s <= ref.start_s) throw ContractError("segment: end before start");
  if (max_segment_s <= 0.0) throw ContractError("segment: max_segment_s must be > 0");
  double start = ref.start_s, end = ref.end_s;
  if (end - start > max_segment_s) {
    const double mid = 0.5 * (start + end);
    start = mid - 0.5 * max_segment_s;
    end = start + max_segment_s;
  }
  const auto s0 = static_cast<std::int64_t>(std::llround(start * kPipelineRateHz));
  const auto count =
      static_cast<std::int64_t>(std::llround((end - start) * kPipelineRateHz));
  auto load = [&](const std::string& path) {
    Waveform w = read_wav_window(path, s0, count);
    if (w.sample_rate != kPipelineRateHz)
      throw AudioError(AudioError::Kind::unsupported_encoding,
                       "segment source not at pipeline rate: " + path);
    return std::move(w.samples);
  };
  std::pair<std::vector<float>, std::vector<float>> out;
  out.first = load(ref.path_a);
  if (!ref.path_b.empty()) {
    out.second = load(ref.path_b);
    if (out.first.size() != out.second.size())
      throw ContractError("segment: dual channels differ in length");
  }
  return out;
}

// ---- inference ----

namespace {

Prediction predict_logits(double l0, double l1) {
  Prediction p;
  const double mx = std::max(l0, l1);
  const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
  p.p_adult = e0 / (e0 + e1);
  p.p_child = e1 / (e0 + e1);
  p.label = l1 > l0 ? 1 : 0;  // ties go to adult
  return p;
}

}  // namespace

Prediction predict(const ClassifierModel<float>& model, const std::vector<float>& a,
                   const std::vector<float>* b) {
  auto bc = bind_classifier(model, false);
  auto logits = classifier_logits(bc, a, b);
  return predict_logits(logits->value[0], logits->value[1]);
}

std::vector<Prediction> predict_segments(const ClassifierModel<float>& model,
                                         const std::vector<SegmentRef>& refs) {
  auto bc = bind_classifier(model, false);
  std::vector<Prediction> out;
  out.reserve(refs.size());
  for (const auto& ref : refs) {
    auto [a, b] = load_segment_samples(ref, model.head_cfg.max_segment_s);
    auto logits = classifier_logits(bc, a, b.empty() ? nullptr : &b);
    out.push_back(predict_logits(logits->value[0], logits->value[1]));
  }
  return out;
}

// ---- training ----

namespace {

struct ClsTrainables {
  std::vector<ad::Var<float>> vars;
  std::vector<Tensor<float>*> storage;

  void take_from(const std::unordered_map<std::string, ad::Var<float>>& bound,
                 std::vector<std::pair<std::string, TensorF>>& params) {
    for (auto& [name, t] : params) {
      auto it = bound.find(name);
      if (it != bound.end() && it->second->requires_grad) {
        vars.push_back(it->second);
        storage.push_back(&t);
      }
    }
  }
  void take_pairs(const std::vector<std::pair<std::string, ad::Var<float>>>& bound,
                  std::vector<std::pair<std::string, TensorF>>& params) {
    for (std::size_t i = 0; i < bound.size(); ++i) {
      if (bound[i].first != params[i].first)
        throw ContractError("trainables: parameter order mismatch");
      if (bound[i].second->requires_grad) {
        vars.push_back(bound[i].second);
        storage.push_back(&params[i].second);
      }
    }
  }
};

}  // namespace

ClassifierModel<float> finetune(const std::vector<SegmentRef>& train, const ClassifierConfig& ccfg,
                                const BackboneModel<float>& backbone, const LoraSpec& peft,
                                std::vector<FinetuneLogEntry>* log) {
  if (train.empty()) throw ContractError("finetune: empty training set");
  bool seen[2] = {false, false};
  for (const auto& s : train) {
    if (s.label != 0 && s.label != 1) throw ContractError("finetune: label outside {0,1}");
    seen[s.label] = true;
    const bool dual = ccfg.input_mode == ClassifierConfig::Mode::dual;
    if (dual != !s.path_b.empty())
      throw ContractError("finetune: segment channels do not match input mode");
  }
  if (!seen[0] || !seen[1]) throw ContractError("degenerate labels");
  if (ccfg.batch_size < 1 || ccfg.max_steps < 1)
    throw ContractError("finetune: batch_size and max_steps must be >= 1");
  validate_lr(ccfg);

  auto model = init_classifier<float>(ccfg, backbone, peft, ccfg.seed);

  // All crops are fixed-position, so cache them up front.
  std::vector<std::pair<std::vector<float>, std::vector<float>>> cache;
  cache.reserve(train.size());
  for (const auto& s : train) cache.push_back(load_segment_samples(s, ccfg.max_segment_s));

  Adam<float> adam({ccfg.lr});
  Pcg32 rng(hash_seed(ccfg.seed, 0xF17Eu));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  int step = 0;
  while (step < ccfg.max_steps) {
    rng.shuffle(order);
    for (std::size_t at = 0; at < order.size() && step < ccfg.max_steps;
         at += static_cast<std::size_t>(ccfg.batch_size)) {
      auto bc = bind_classifier(model, true);
      ClsTrainables tr;
      tr.take_from(bc.bb.vars, model.backbone.params);
      tr.take_from(bc.head, model.head);
      tr.take_pairs(bc.lora_vars, model.lora);

      ad::Var<float> total;
      int in_batch = 0;
      const std::size_t stop =
          std::min(order.size(), at + static_cast<std::size_t>(ccfg.batch_size));
      for (std::size_t k = at; k < stop; ++k) {
        const auto& [a, b] = cache[order[k]];
        auto logits = classifier_logits(bc, a, b.empty() ? nullptr : &b);
        auto item = cross_entropy(logits, train[order[k]].label);
        total = total ? ad::add(total, item) : item;
        ++in_batch;
      }
      auto loss = ad::scale(total, 1.0 / in_batch);
      const double loss_v = loss->value[0];
      if (!std::isfinite(loss_v)) throw NumericalError("finetune: non-finite loss");
      auto grads = ad::forward_backward(loss, tr.vars);
      adam.update(tr.storage, grads);
      ++step;
      if (log) log->push_back({step, loss_v});
    }
  }
  return model;
}

}  // namespace egosc
