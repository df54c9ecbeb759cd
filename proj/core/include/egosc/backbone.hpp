#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "egosc/autodiff.hpp"
#include "egosc/checkpoint.hpp"
#include "egosc/rng.hpp"
#include "egosc/tensor.hpp"

namespace egosc {

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvLayerSpec {
  int channels = 64;
  int kernel = 3;
  int stride = 2;
};

struct BackboneConfig {
  std::vector<ConvLayerSpec> conv = {{64, 10, 5}, {64, 3, 2}, {64, 3, 2}, {64, 3, 2}, {64, 2, 2}};
  int layers = 4;
  int d_model = 128;
  int heads = 4;
  int ffn_dim = 512;
  int pos_kernel = 9;
  int pos_groups = 4;
  int groups = 2;           // quantizer codebook groups G
  int entries = 8;          // entries per group V
  int codevector_dim = 128; // concatenated codeword width before the output projection
  double mask_ratio = 0.5;
  int mask_span = 10;
  double kappa = 0.1;            // contrastive temperature
  double tau_start = 2.0;
  double tau_end = 0.5;
  double tau_decay = 0.997;      // per-step exponential decay
  int num_negatives = 10;        // clamped to available masked frames
  double diversity_weight = 0.1;
  double crop_s = 1.5;           // pre-training utterance crop

  int stride_total() const {
    int s = 1;
    for (const auto& c : conv) s *= c.stride;
    return s;
  }
  // Samples one output frame depends on.
  int receptive_field() const {
    int rf = 1, stride = 1;
    for (const auto& c : conv) {
      rf += (c.kernel - 1) * stride;
      stride *= c.stride;
    }
    return rf;
  }
  std::int64_t out_frames(std::int64_t len) const {
    if (len < receptive_field()) return 0;
    return (len - receptive_field()) / stride_total() + 1;
  }
  double tau_at(std::int64_t step) const {
    return std::max(tau_end, tau_start * std::pow(tau_decay, static_cast<double>(step)));
  }
};

std::string backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const std::string& text);

template <typename T>
struct BackboneModel {
  BackboneConfig cfg;
  std::vector<std::pair<std::string, Tensor<T>>> params;

  Tensor<T>& p(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw ContractError("backbone: unknown parameter " + name);
  }
  const Tensor<T>& p(const std::string& name) const {
    return const_cast<BackboneModel*>(this)->p(name);
  }
  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }
  template <typename U>
  BackboneModel<U> cast() const {
    BackboneModel<U> out;
    out.cfg = cfg;
    for (const auto& [n, t] : params) out.params.emplace_back(n, t.template cast<U>());
    return out;
  }
};

template <typename T>
BackboneModel<T> init_backbone(const BackboneConfig& cfg, std::uint64_t seed);

Checkpoint backbone_to_checkpoint(const BackboneModel<float>& model);
BackboneModel<float> backbone_from_checkpoint(const Checkpoint& ck);

// Parameter variables for one training step; LoRA pairs ride alongside the
// frozen base weights they wrap.
template <typename T>
struct Bound {
  const BackboneConfig* cfg = nullptr;
  std::unordered_map<std::string, ad::Var<T>> vars;
  struct LoraPair {
    ad::Var<T> a;  // (r, in)
    ad::Var<T> b;  // (out, r)
    double scaling = 1.0;
  };
  std::unordered_map<std::string, LoraPair> lora;

  const ad::Var<T>& get(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ContractError("bound: unknown parameter " + name);
    return it->second;
  }
};

template <typename T>
Bound<T> bind_backbone(const BackboneModel<T>& model, bool trainable) {
  Bound<T> b;
  b.cfg = &model.cfg;
  for (const auto& [name, t] : model.params)
    b.vars.emplace(name, trainable ? ad::param(t) : ad::constant(t));
  return b;
}

// Collects gradients in the model's canonical parameter order, so optimizer
// state lines up across steps regardless of graph shape.
template <typename T>
struct TrainableSet {
  std::vector<std::string> names;
  std::vector<ad::Var<T>> vars;
  std::vector<Tensor<T>*> storage;

  void take(Bound<T>& bound, BackboneModel<T>& model) {
    for (auto& [name, t] : model.params) {
      auto it = bound.vars.find(name);
      if (it != bound.vars.end() && it->second->requires_grad) {
        names.push_back(name);
        vars.push_back(it->second);
        storage.push_back(&t);
      }
    }
  }
};

template <typename T>
ad::Var<T> apply_linear(const Bound<T>& b, const std::string& prefix, const ad::Var<T>& x) {
  auto y = ad::linear(x, b.get(prefix + ".weight"), b.get(prefix + ".bias"));
  auto it = b.lora.find(prefix + ".weight");
  if (it != b.lora.end()) {
    auto delta = ad::linear_nobias(ad::linear_nobias(x, it->second.a), it->second.b);
    y = ad::add(y, ad::scale(delta, it->second.scaling));
  }
  return y;
}

// X -> Z: strided valid convolutions with per-layer layernorm and GELU.
template <typename T>
ad::Var<T> conv_encode(const Bound<T>& b, const std::vector<float>& samples) {
  const auto& cfg = *b.cfg;
  if (static_cast<std::int64_t>(samples.size()) < cfg.receptive_field())
    throw ContractError("segment too short: " + std::to_string(samples.size()) + " samples, need " +
                        std::to_string(cfg.receptive_field()));
  Tensor<T> x0({static_cast<std::int64_t>(samples.size()), 1});
  for (std::size_t i = 0; i < samples.size(); ++i) x0[static_cast<std::int64_t>(i)] = static_cast<T>(samples[i]);
  auto x = ad::constant(std::move(x0));
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string pre = "conv." + std::to_string(i);
    x = ad::conv1d_valid(x, b.get(pre + ".weight"), b.get(pre + ".bias"), cfg.conv[i].kernel,
                         cfg.conv[i].stride);
    x = ad::layernorm_rows(x, b.get(pre + ".norm.gamma"), b.get(pre + ".norm.beta"));
    x = ad::gelu(x);
  }
  return x;
}

template <typename T>
ad::Var<T> positional_conv(const Bound<T>& b, const ad::Var<T>& x) {
  const auto& cfg = *b.cfg;
  const std::int64_t dg = cfg.d_model / cfg.pos_groups;
  const std::int64_t pad = (cfg.pos_kernel - 1) / 2;
  auto padded = ad::pad_rows(x, pad, cfg.pos_kernel - 1 - pad);
  ad::Var<T> out;
  for (int g = 0; g < cfg.pos_groups; ++g) {
    const std::string pre = "pos_conv." + std::to_string(g);
    auto xg = ad::slice_cols(padded, g * dg, (g + 1) * dg);
    auto yg = ad::conv1d_valid(xg, b.get(pre + ".weight"), b.get(pre + ".bias"), cfg.pos_kernel,
                               std::int64_t{1});
    out = g == 0 ? yg : ad::concat_cols(out, yg);
  }
  return ad::gelu(out);
}

// Z -> all hidden states (L+1 of them, each (T, d)): projection, optional
// mask-embedding replacement, positional conv, pre-norm transformer stack.
template <typename T>
std::vector<ad::Var<T>> contextualize(const Bound<T>& b, const ad::Var<T>& z,
                                      const std::vector<std::uint8_t>& mask) {
  const auto& cfg = *b.cfg;
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != z->value.dim(0))
    throw ContractError("contextualize: mask length mismatch");
  auto zn = ad::layernorm_rows(z, b.get("extractor_norm.gamma"), b.get("extractor_norm.beta"));
  auto x = apply_linear(b, "proj", zn);
  if (!mask.empty()) x = ad::mask_rows(x, mask, b.get("mask_embed"));
  x = ad::add(x, positional_conv(b, x));

  std::vector<ad::Var<T>> hidden;
  hidden.reserve(static_cast<std::size_t>(cfg.layers) + 1);
  hidden.push_back(x);
  const std::int64_t dh = cfg.d_model / cfg.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer." + std::to_string(l);
    auto xn = ad::layernorm_rows(x, b.get(pre + ".norm1.gamma"), b.get(pre + ".norm1.beta"));
    auto q = apply_linear(b, pre + ".attn.wq", xn);
    auto k = apply_linear(b, pre + ".attn.wk", xn);
    auto v = apply_linear(b, pre + ".attn.wv", xn);
    ad::Var<T> ctx;
    for (int h = 0; h < cfg.heads; ++h) {
      auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
      auto att = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), att_scale));
      auto ch = ad::matmul(att, vh);
      ctx = h == 0 ? ch : ad::concat_cols(ctx, ch);
    }
    x = ad::add(x, apply_linear(b, pre + ".attn.wo", ctx));
    auto xn2 = ad::layernorm_rows(x, b.get(pre + ".norm2.gamma"), b.get(pre + ".norm2.beta"));
    auto f = apply_linear(b, pre + ".ffn.w2", ad::gelu(apply_linear(b, pre + ".ffn.w1", xn2)));
    x = ad::add(x, f);
    hidden.push_back(x);
  }
  return hidden;
}

// Final-layernormed contextual representation used by the contrastive loss.
template <typename T>
ad::Var<T> final_context(const Bound<T>& b, const ad::Var<T>& h_last) {
  return ad::layernorm_rows(h_last, b.get("final_norm.gamma"), b.get("final_norm.beta"));
}

template <typename T>
struct QuantizeResult {
  ad::Var<T> q;                     // (rows, codevector projection dim)
  std::vector<ad::Var<T>> probs;    // per group, pre-noise softmax (rows, V)
};

// Gumbel-softmax quantizer. `noise` is (rows, G·V) standard Gumbel samples
// (or null for noiseless); `hard` selects straight-through one-hots in the
// forward pass while gradients follow the soft relaxation.
template <typename T>
QuantizeResult<T> quantize(const Bound<T>& b, const ad::Var<T>& z, double tau,
                           const Tensor<T>* noise, bool hard = true) {
  if (tau <= 0.0) throw ContractError("quantize: tau must be > 0");
  const auto& cfg = *b.cfg;
  const std::int64_t rows = z->value.dim(0);
  const std::int64_t V = cfg.entries;
  auto logits = apply_linear(b, "quant.logits", z);
  QuantizeResult<T> out;
  ad::Var<T> cat;
  for (int g = 0; g < cfg.groups; ++g) {
    auto lg = ad::slice_cols(logits, g * V, (g + 1) * V);
    out.probs.push_back(ad::softmax_rows(lg));
    auto y = lg;
    if (noise) {
      Tensor<T> ng({rows, V});
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < V; ++j) ng.at(i, j) = noise->at(i, g * V + j);
      y = ad::add(y, ad::constant(std::move(ng)));
    }
    auto soft = ad::softmax_rows(ad::scale(y, 1.0 / tau));
    ad::Var<T> sel = soft;
    if (hard) {
      Tensor<T> onehot({rows, V});
      for (std::int64_t i = 0; i < rows; ++i) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < V; ++j)
          if (soft->value.at(i, j) > soft->value.at(i, best)) best = j;
        onehot.at(i, best) = T(1);
      }
      sel = ad::straight_through(soft, std::move(onehot));
    }
    auto qg = ad::matmul(sel, b.get("quant.codebook." + std::to_string(g)));
    cat = g == 0 ? qg : ad::concat_cols(cat, qg);
  }
  out.q = apply_linear(b, "quant.out", cat);
  return out;
}

// Span mask over T frames: spans of fixed length at uniform starts are added
// until the masked fraction reaches mask_ratio; spans truncate at T.
std::vector<std::uint8_t> sample_mask(std::int64_t t_frames, double mask_ratio, int span,
                                      Pcg32& rng);

// K indices per masked frame, drawn uniformly (with replacement) from the
// other masked frames. Index space is the masked-frame list, not raw frames.
std::vector<std::int64_t> sample_negatives(std::int64_t n_masked, int k, Pcg32& rng);

// Mean over masked frames m of -log softmax over {positive, negatives} of
// cos(c_m, q)/kappa. `c_rows` indexes frames of C; q holds masked rows only.
template <typename T>
ad::Var<T> contrastive_loss(const ad::Var<T>& c, const ad::Var<T>& q,
                            const std::vector<std::int64_t>& masked_frames,
                            const std::vector<std::int64_t>& negatives, int k, double kappa) {
  const std::int64_t m = static_cast<std::int64_t>(masked_frames.size());
  if (m < k + 1) throw ContractError("insufficient negatives: " + std::to_string(m) +
                                     " masked frames for K=" + std::to_string(k));
  if (static_cast<std::int64_t>(negatives.size()) != m * k)
    throw ContractError("contrastive: negative index shape");
  std::vector<std::int64_t> rows_c, rows_q;
  rows_c.reserve(static_cast<std::size_t>(m * (k + 1)));
  rows_q.reserve(static_cast<std::size_t>(m * (k + 1)));
  for (std::int64_t i = 0; i < m; ++i) {
    for (int j = 0; j < k + 1; ++j) rows_c.push_back(masked_frames[static_cast<std::size_t>(i)]);
    rows_q.push_back(i);  // positive: the frame's own quantized latent
    for (int j = 0; j < k; ++j) rows_q.push_back(negatives[static_cast<std::size_t>(i * k + j)]);
  }
  auto cm = ad::gather_rows(c, rows_c);
  auto qm = ad::gather_rows(q, rows_q);
  auto cos = ad::reshape(ad::cosine_rows(cm, qm), {m, static_cast<std::int64_t>(k) + 1});
  auto logp = ad::log_softmax_rows(ad::scale(cos, 1.0 / kappa));
  return ad::neg(ad::mean_all(ad::slice_cols(logp, 0, 1)));
}

// (G·V - sum_g perplexity(p̄_g)) / (G·V), in [0, 1].
template <typename T>
ad::Var<T> diversity_loss(const std::vector<ad::Var<T>>& probs) {
  if (probs.empty()) throw ContractError("diversity: no groups");
  const std::int64_t g_count = static_cast<std::int64_t>(probs.size());
  const std::int64_t v = probs[0]->value.dim(1);
  ad::Var<T> ppl_sum;
  for (const auto& pg : probs) {
    auto pbar = ad::mean_rows(pg);
    auto ent = ad::neg(ad::sum_all(ad::mul(pbar, ad::log_(ad::add_scalar(pbar, 1e-10)))));
    auto ppl = ad::exp_(ent);
    ppl_sum = ppl_sum ? ad::add(ppl_sum, ppl) : ppl;
  }
  const double gv = static_cast<double>(g_count * v);
  return ad::scale(ad::add_scalar(ad::neg(ppl_sum), gv), 1.0 / gv);
}

struct PretrainConfig {
  int epochs = 40;
  double lr = 1e-4;
  int batch_size = 8;
  std::uint64_t seed = 1;
};

struct PretrainStats {
  double contrastive = 0.0;
  double diversity = 0.0;
  double perplexity = 0.0;  // mean per-group codebook perplexity
};

// Self-supervised training over a directory of utterance WAVs. Writes the
// checkpoint and a per-epoch CSV log; returns final-epoch averages.
PretrainStats pretrain(const std::vector<std::string>& utterance_paths, const BackboneConfig& cfg,
                       const PretrainConfig& train, const std::string& checkpoint_path,
                       const std::string& log_csv_path);

}  // namespace egosc
