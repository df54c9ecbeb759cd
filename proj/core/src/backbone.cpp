#include "egosc/backbone.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "egosc/adam.hpp"
#include "egosc/audio.hpp"

namespace egosc {

using nlohmann::json;

namespace {

enum class Init { zeros, ones, gauss };

struct ParamSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  Init init = Init::gauss;
  double scale = 0.02;
};

std::vector<ParamSpec> param_specs(const BackboneConfig& cfg) {
  if (cfg.conv.empty()) throw ContractError("backbone: need at least one conv layer");
  if (cfg.d_model % cfg.heads != 0) throw ContractError("backbone: d_model must divide by heads");
  if (cfg.d_model % cfg.pos_groups != 0)
    throw ContractError("backbone: d_model must divide by pos_groups");
  if (cfg.codevector_dim % cfg.groups != 0)
    throw ContractError("backbone: codevector_dim must divide by groups");

  std::vector<ParamSpec> specs;
  auto norm = [&specs](const std::string& pre, std::int64_t n) {
    specs.push_back({pre + ".gamma", {n}, Init::ones, 0.0});
    specs.push_back({pre + ".beta", {n}, Init::zeros, 0.0});
  };

  std::int64_t cin = 1;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const auto& c = cfg.conv[i];
    const std::string pre = "conv." + std::to_string(i);
    specs.push_back({pre + ".weight", {c.channels, c.kernel * cin}, Init::gauss,
                     std::sqrt(2.0 / static_cast<double>(c.kernel * cin))});
    specs.push_back({pre + ".bias", {c.channels}, Init::zeros, 0.0});
    norm(pre + ".norm", c.channels);
    cin = c.channels;
  }
  const std::int64_t cz = cin;
  const std::int64_t d = cfg.d_model;
  norm("extractor_norm", cz);
  specs.push_back({"proj.weight", {d, cz}, Init::gauss, 0.02});
  specs.push_back({"proj.bias", {d}, Init::zeros, 0.0});
  specs.push_back({"mask_embed", {1, d}, Init::gauss, 0.1});
  const std::int64_t dg = d / cfg.pos_groups;
  for (int g = 0; g < cfg.pos_groups; ++g) {
    const std::string pre = "pos_conv." + std::to_string(g);
    specs.push_back({pre + ".weight", {dg, cfg.pos_kernel * dg}, Init::gauss,
                     std::sqrt(2.0 / static_cast<double>(cfg.pos_kernel * dg))});
    specs.push_back({pre + ".bias", {dg}, Init::zeros, 0.0});
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer." + std::to_string(l);
    norm(pre + ".norm1", d);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      specs.push_back({pre + ".attn." + std::string(w) + ".weight", {d, d}, Init::gauss, 0.02});
      specs.push_back({pre + ".attn." + std::string(w) + ".bias", {d}, Init::zeros, 0.0});
    }
    norm(pre + ".norm2", d);
    specs.push_back({pre + ".ffn.w1.weight", {cfg.ffn_dim, d}, Init::gauss, 0.02});
    specs.push_back({pre + ".ffn.w1.bias", {cfg.ffn_dim}, Init::zeros, 0.0});
    specs.push_back({pre + ".ffn.w2.weight", {d, cfg.ffn_dim}, Init::gauss, 0.02});
    specs.push_back({pre + ".ffn.w2.bias", {d}, Init::zeros, 0.0});
  }
  norm("final_norm", d);
  const std::int64_t gv = static_cast<std::int64_t>(cfg.groups) * cfg.entries;
  // Unit-variance projection so code choice is a content hash from step 0;
  // at 0.02 the logits drown in the Gumbel noise (std ~1.28) and the
  // contrastive task never gets off the ground.
  specs.push_back({"quant.logits.weight", {gv, cz}, Init::gauss, 1.0});
  specs.push_back({"quant.logits.bias", {gv}, Init::zeros, 0.0});
  const std::int64_t dcg = cfg.codevector_dim / cfg.groups;
  for (int g = 0; g < cfg.groups; ++g)
    specs.push_back({"quant.codebook." + std::to_string(g), {cfg.entries, dcg}, Init::gauss,
                     1.0 / std::sqrt(static_cast<double>(dcg))});
  specs.push_back({"quant.out.weight", {d, cfg.codevector_dim}, Init::gauss, 0.02});
  specs.push_back({"quant.out.bias", {d}, Init::zeros, 0.0});
  return specs;
}

}  // namespace

template <typename T>
BackboneModel<T> init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  BackboneModel<T> m;
  m.cfg = cfg;
  Pcg32 rng(hash_seed(seed, 0xB0B0));
  for (const auto& spec : param_specs(cfg)) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case Init::zeros: break;
      case Init::ones: t.fill(T(1)); break;
      case Init::gauss:
        for (std::int64_t i = 0; i < t.numel(); ++i)
          t[i] = static_cast<T>(rng.gaussian() * spec.scale);
        break;
    }
    m.params.emplace_back(spec.name, std::move(t));
  }
  return m;
}

template BackboneModel<float> init_backbone<float>(const BackboneConfig&, std::uint64_t);
template BackboneModel<double> init_backbone<double>(const BackboneConfig&, std::uint64_t);

std::string backbone_config_to_json(const BackboneConfig& cfg) {
  json conv = json::array();
  for (const auto& c : cfg.conv) conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  json j = {{"conv", conv},
            {"layers", cfg.layers},
            {"d_model", cfg.d_model},
            {"heads", cfg.heads},
            {"ffn_dim", cfg.ffn_dim},
            {"pos_kernel", cfg.pos_kernel},
            {"pos_groups", cfg.pos_groups},
            {"groups", cfg.groups},
            {"entries", cfg.entries},
            {"codevector_dim", cfg.codevector_dim},
            {"mask_ratio", cfg.mask_ratio},
            {"mask_span", cfg.mask_span},
            {"kappa", cfg.kappa},
            {"tau_start", cfg.tau_start},
            {"tau_end", cfg.tau_end},
            {"tau_decay", cfg.tau_decay},
            {"num_negatives", cfg.num_negatives},
            {"diversity_weight", cfg.diversity_weight},
            {"crop_s", cfg.crop_s}};
  return j.dump();
}

BackboneConfig backbone_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  BackboneConfig cfg;
  cfg.conv.clear();
  for (const auto& c : j.at("conv"))
    cfg.conv.push_back({c.at("channels").get<int>(), c.at("kernel").get<int>(), c.at("stride").get<int>()});
  cfg.layers = j.at("layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.pos_kernel = j.at("pos_kernel").get<int>();
  cfg.pos_groups = j.at("pos_groups").get<int>();
  cfg.groups = j.at("groups").get<int>();
  cfg.entries = j.at("entries").get<int>();
  cfg.codevector_dim = j.at("codevector_dim").get<int>();
  cfg.mask_ratio = j.at("mask_ratio").get<double>();
  cfg.mask_span = j.at("mask_span").get<int>();
  cfg.kappa = j.at("kappa").get<double>();
  cfg.tau_start = j.at("tau_start").get<double>();
  cfg.tau_end = j.at("tau_end").get<double>();
  cfg.tau_decay = j.at("tau_decay").get<double>();
  cfg.num_negatives = j.at("num_negatives").get<int>();
  cfg.diversity_weight = j.at("diversity_weight").get<double>();
  cfg.crop_s = j.at("crop_s").get<double>();
  return cfg;
}

Checkpoint backbone_to_checkpoint(const BackboneModel<float>& model) {
  Checkpoint ck;
  ck.meta["kind"] = "backbone";
  ck.meta["config"] = backbone_config_to_json(model.cfg);
  for (const auto& [name, t] : model.params) ck.add(name, t);
  return ck;
}

BackboneModel<float> backbone_from_checkpoint(const Checkpoint& ck) {
  auto it = ck.meta.find("config");
  if (it == ck.meta.end()) throw IoError("checkpoint: missing backbone config");
  const BackboneConfig cfg = backbone_config_from_json(it->second);
  BackboneModel<float> m;
  m.cfg = cfg;
  for (const auto& spec : param_specs(cfg)) {
    const TensorF& t = ck.require(spec.name);
    if (t.shape() != spec.shape)
      throw IoError("checkpoint: shape mismatch for " + spec.name);
    m.params.emplace_back(spec.name, t);
  }
  return m;
}

std::vector<std::uint8_t> sample_mask(std::int64_t t_frames, double mask_ratio, int span,
                                      Pcg32& rng) {
  if (t_frames < span) throw ContractError("sample_mask: need T >= span");
  if (mask_ratio < 0.0 || mask_ratio > 1.0) throw ContractError("sample_mask: ratio in [0,1]");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_frames), 0);
  std::int64_t covered = 0;
  while (static_cast<double>(covered) < mask_ratio * static_cast<double>(t_frames)) {
    const std::int64_t start = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t_frames)));
    const std::int64_t end = std::min<std::int64_t>(start + span, t_frames);
    for (std::int64_t i = start; i < end; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) {
        mask[static_cast<std::size_t>(i)] = 1;
        ++covered;
      }
    }
  }
  return mask;
}

std::vector<std::int64_t> sample_negatives(std::int64_t n_masked, int k, Pcg32& rng) {
  if (n_masked < 2 || k < 1 || k > n_masked - 1)
    throw ContractError("sample_negatives: need 1 <= K <= masked-1");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(n_masked * k));
  for (std::int64_t m = 0; m < n_masked; ++m) {
    for (int j = 0; j < k; ++j) {
      std::int64_t idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_masked - 1)));
      if (idx >= m) ++idx;
      out.push_back(idx);
    }
  }
  return out;
}

PretrainStats pretrain(const std::vector<std::string>& utterance_paths, const BackboneConfig& cfg,
                       const PretrainConfig& train, const std::string& checkpoint_path,
                       const std::string& log_csv_path) {
  if (utterance_paths.empty()) throw ContractError("pretrain: empty corpus");
  auto model = init_backbone<float>(cfg, train.seed);
  Adam<float> adam({train.lr, 0.9, 0.999, 1e-8});
  Pcg32 rng(hash_seed(train.seed, 0x9E1));
  std::ofstream log(log_csv_path);
  if (!log) throw ContractError("pretrain: cannot write log: " + log_csv_path);
  log << "epoch,contrastive_loss,diversity_loss,codebook_perplexity\n";

  const std::int64_t crop = std::llround(cfg.crop_s * kPipelineRateHz);
  const std::int64_t gv = static_cast<std::int64_t>(cfg.groups) * cfg.entries;
  std::int64_t step = 0;
  PretrainStats last;

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::vector<std::size_t> order(utterance_paths.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double sum_con = 0.0, sum_div = 0.0;
    std::int64_t n_items = 0;
    for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(train.batch_size)) {
      auto bound = bind_backbone(model, true);
      TrainableSet<float> ts;
      ts.take(bound, model);

      ad::Var<float> total;
      int in_batch = 0;
      const std::size_t batch_end = std::min(order.size(), base + static_cast<std::size_t>(train.batch_size));
      for (std::size_t bi = base; bi < batch_end; ++bi) {
        Waveform w = read_wav(utterance_paths[order[bi]]);
        if (w.sample_rate != kPipelineRateHz) w = resample_linear(w, kPipelineRateHz);
        std::vector<float> samples = std::move(w.samples);
        if (static_cast<std::int64_t>(samples.size()) > crop) {
          const std::int64_t start = static_cast<std::int64_t>(
              rng.below(static_cast<std::uint64_t>(samples.size() - crop + 1)));
          samples = std::vector<float>(samples.begin() + start, samples.begin() + start + crop);
        }
        if (cfg.out_frames(static_cast<std::int64_t>(samples.size())) < cfg.mask_span) continue;

        auto z = conv_encode(bound, samples);
        const std::int64_t t_frames = z->value.dim(0);
        const auto mask = sample_mask(t_frames, cfg.mask_ratio, cfg.mask_span, rng);
        std::vector<std::int64_t> masked;
        for (std::int64_t i = 0; i < t_frames; ++i)
          if (mask[static_cast<std::size_t>(i)]) masked.push_back(i);
        if (masked.size() < 2) continue;
        const int k_eff = std::min<int>(cfg.num_negatives, static_cast<int>(masked.size()) - 1);

        auto hidden = contextualize(bound, z, mask);
        auto c = final_context(bound, hidden.back());
        auto zm = ad::gather_rows(z, masked);
        Tensor<float> noise({static_cast<std::int64_t>(masked.size()), gv});
        for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = static_cast<float>(rng.gumbel());
        auto quant = quantize(bound, zm, cfg.tau_at(step), &noise, true);
        const auto negs = sample_negatives(static_cast<std::int64_t>(masked.size()), k_eff, rng);
        auto lc = contrastive_loss(c, quant.q, masked, negs, k_eff, cfg.kappa);
        auto ld = diversity_loss(quant.probs);
        sum_con += lc->value[0];
        sum_div += ld->value[0];
        ++n_items;
        auto item = ad::add(lc, ad::scale(ld, cfg.diversity_weight));
        total = total ? ad::add(total, item) : item;
        ++in_batch;
      }
      if (!total) continue;
      total = ad::scale(total, 1.0 / in_batch);
      if (!std::isfinite(static_cast<double>(total->value[0])))
        throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step));
      auto grads = ad::forward_backward(total, ts.vars);
      adam.update(ts.storage, grads);
      ++step;
    }
    if (n_items > 0) {
      last.contrastive = sum_con / static_cast<double>(n_items);
      last.diversity = sum_div / static_cast<double>(n_items);
      last.perplexity = static_cast<double>(cfg.entries) * (1.0 - last.diversity);
      char buf[128];
      std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", epoch, last.contrastive, last.diversity,
                    last.perplexity);
      log << buf;
      log.flush();
    }
  }

  Checkpoint ck = backbone_to_checkpoint(model);
  ck.meta["seed"] = std::to_string(train.seed);
  ck.meta["epochs"] = std::to_string(train.epochs);
  ck.meta["lr"] = std::to_string(train.lr);
  ck.save(checkpoint_path);
  return last;
}

}  // namespace egosc
