#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "egosc/audio.hpp"
#include "egosc/backbone.hpp"
#include "egosc/checkpoint.hpp"
#include "egosc/rng.hpp"
#include "egosc/synth.hpp"

using namespace egosc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("egosc_bb_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small stack that still exercises every parameter group.
BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.conv = {{4, 4, 2}, {4, 3, 2}};
  cfg.layers = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.pos_kernel = 3;
  cfg.pos_groups = 2;
  cfg.groups = 2;
  cfg.entries = 4;
  cfg.codevector_dim = 8;
  cfg.mask_span = 2;
  cfg.num_negatives = 2;
  return cfg;
}

template <typename T>
ad::Var<T> wsum(const ad::Var<T>& x, std::uint64_t seed) {
  Pcg32 rng(seed);
  auto w = Tensor<T>::randn(x->value.shape(), rng);
  return ad::sum_all(ad::mul(x, ad::constant(std::move(w))));
}

template <typename T>
Tensor<T> rows_of(std::vector<std::vector<T>> rows) {
  Tensor<T> t({static_cast<std::int64_t>(rows.size()),
               static_cast<std::int64_t>(rows[0].size())});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      t.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
  return t;
}

}  // namespace

TEST_CASE("conv stack frame arithmetic matches the strides") {
  BackboneConfig cfg;
  CHECK(cfg.receptive_field() == 120);
  CHECK(cfg.stride_total() == 80);
  CHECK(cfg.out_frames(16000) == 199);
  CHECK(cfg.out_frames(120) == 1);
  CHECK(cfg.out_frames(119) == 0);

  auto model = init_backbone<float>(cfg, 1);
  auto b = bind_backbone(model, false);
  Pcg32 rng(4);
  auto samples = synth_utterance(default_profiles().adult, 16000, 16000, rng);
  auto z = conv_encode(b, samples);
  CHECK(z->value.dim(0) == 199);
  CHECK(z->value.dim(1) == cfg.conv.back().channels);
  CHECK_THROWS_AS(conv_encode(b, std::vector<float>(119, 0.0f)), ContractError);
}

TEST_CASE("span masking reaches the requested coverage") {
  Pcg32 rng(5);
  auto m = sample_mask(100, 0.5, 10, rng);
  REQUIRE(m.size() == 100);
  std::int64_t count = 0;
  for (auto v : m) {
    CHECK((v == 0 || v == 1));
    count += v;
  }
  // Coverage stops at the first span crossing 50, which adds at most 9 extra.
  CHECK(count >= 50);
  CHECK(count <= 59);

  Pcg32 r0(9);
  CHECK(sample_mask(100, 0.0, 10, r0) == std::vector<std::uint8_t>(100, 0));

  Pcg32 ra(11), rb(11);
  CHECK(sample_mask(80, 0.4, 7, ra) == sample_mask(80, 0.4, 7, rb));

  Pcg32 rc(13);
  auto full = sample_mask(10, 1.0, 3, rc);
  CHECK(full == std::vector<std::uint8_t>(10, 1));

  CHECK_THROWS_AS(sample_mask(5, 1.0, 10, rc), ContractError);
}

TEST_CASE("negative sampling never returns the positive") {
  Pcg32 rng(21);
  auto negs = sample_negatives(6, 3, rng);
  REQUIRE(negs.size() == 18);
  for (std::int64_t i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) {
      const auto n = negs[static_cast<std::size_t>(i * 3 + j)];
      CHECK(n >= 0);
      CHECK(n < 6);
      CHECK(n != i);
    }
  Pcg32 ra(22), rb(22);
  CHECK(sample_negatives(9, 4, ra) == sample_negatives(9, 4, rb));
}

TEST_CASE("quantizer probabilities come from the raw logits") {
  BackboneConfig cfg = tiny_config();
  cfg.groups = 1;
  cfg.entries = 3;
  cfg.codevector_dim = 3;
  cfg.d_model = 4;
  cfg.ffn_dim = 8;
  auto model = init_backbone<double>(cfg, 3);
  const Tensor<double>* no_noise = nullptr;
  auto& bias = model.p("quant.logits.bias");
  bias[0] = 1.0;
  bias[1] = 0.0;
  bias[2] = -1.0;
  auto b = bind_backbone(model, false);

  // Zero input leaves only the bias, so each row scores (1, 0, -1).
  auto z = ad::constant(Tensor<double>({2, 4}));
  auto res = quantize(b, z, 1.0, no_noise, false);
  REQUIRE(res.probs.size() == 1);
  const double e = std::exp(1.0), einv = std::exp(-1.0);
  const double denom = e + 1.0 + einv;
  for (std::int64_t i = 0; i < 2; ++i) {
    CHECK(res.probs[0]->value.at(i, 0) == doctest::Approx(e / denom).epsilon(1e-12));
    CHECK(res.probs[0]->value.at(i, 1) == doctest::Approx(1.0 / denom).epsilon(1e-12));
    CHECK(res.probs[0]->value.at(i, 2) == doctest::Approx(einv / denom).epsilon(1e-12));
  }

  // Near-zero temperature with hard selection picks the argmax codeword.
  auto hardres = quantize(b, z, 1e-6, no_noise, true);
  const auto& cb = model.p("quant.codebook.0");
  const auto& w = model.p("quant.out.weight");
  const auto& ob = model.p("quant.out.bias");
  for (std::int64_t j = 0; j < 4; ++j) {
    double expect = ob[j];
    for (std::int64_t k = 0; k < 3; ++k) expect += w.at(j, k) * cb.at(0, k);
    CHECK(hardres.q->value.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(hardres.q->value.at(1, j) == doctest::Approx(expect).epsilon(1e-12));
  }

  // Reported usage probabilities ignore the Gumbel noise entirely.
  Pcg32 rng(7);
  auto zr = ad::constant(Tensor<double>::randn({2, 4}, rng));
  Tensor<double> noise({2, 3});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gumbel();
  auto with_noise = quantize(b, zr, 1.0, &noise, true);
  auto without = quantize(b, zr, 1.0, no_noise, false);
  for (std::int64_t i = 0; i < 6; ++i)
    CHECK(with_noise.probs[0]->value[i] == without.probs[0]->value[i]);

  CHECK_THROWS_AS(quantize(b, z, 0.0, no_noise, true), ContractError);
}

TEST_CASE("straight-through selection backpropagates the soft relaxation") {
  BackboneConfig cfg = tiny_config();
  auto model = init_backbone<double>(cfg, 11);
  Pcg32 rng(31);
  Tensor<double> zval = Tensor<double>::randn({5, 4}, rng);
  Tensor<double> noise({5, 8});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gumbel();

  auto run = [&](bool hard) {
    Bound<double> b;
    b.cfg = &cfg;
    ad::Var<double> wlogits;
    for (const auto& [name, t] : model.params) {
      if (name == "quant.logits.weight") {
        wlogits = ad::param(t);
        b.vars.emplace(name, wlogits);
      } else {
        b.vars.emplace(name, ad::constant(t));
      }
    }
    auto res = quantize(b, ad::constant(zval), 0.8, &noise, hard);
    auto grads = ad::forward_backward(wsum(res.q, 77), {wlogits});
    return std::make_pair(res.q->value, grads[0]);
  };

  auto [q_hard, g_hard] = run(true);
  auto [q_soft, g_soft] = run(false);

  // Forward values differ (one-hot versus mixture) but the loss here is
  // linear in q, so the straight-through gradient equals the soft one.
  double fwd_diff = 0.0;
  for (std::int64_t i = 0; i < q_hard.numel(); ++i)
    fwd_diff = std::max(fwd_diff, std::abs(q_hard[i] - q_soft[i]));
  CHECK(fwd_diff > 1e-4);
  for (std::int64_t i = 0; i < g_hard.numel(); ++i) CHECK(g_hard[i] == g_soft[i]);
}

TEST_CASE("soft quantizer path passes a finite-difference check") {
  BackboneConfig cfg = tiny_config();
  auto model = init_backbone<double>(cfg, 13);
  Pcg32 rng(41);
  Tensor<double> noise({3, 8});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gumbel();

  const std::vector<std::string> checked = {"quant.logits.weight", "quant.codebook.0",
                                            "quant.out.weight"};
  std::vector<Tensor<double>> pts{Tensor<double>::randn({3, 4}, rng)};
  for (const auto& n : checked) pts.push_back(model.p(n));

  auto rep = ad::grad_check<double>(
      [&](const std::vector<ad::Var<double>>& p) {
        Bound<double> b;
        b.cfg = &cfg;
        for (const auto& [name, t] : model.params) b.vars.emplace(name, ad::constant(t));
        for (std::size_t i = 0; i < checked.size(); ++i) b.vars[checked[i]] = p[i + 1];
        return wsum(quantize(b, p[0], 0.7, &noise, false).q, 78);
      },
      pts, 1e-5);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("contextualizer returns every layer state and honors the mask") {
  BackboneConfig cfg = tiny_config();
  auto model = init_backbone<float>(cfg, 17);
  auto b = bind_backbone(model, false);
  Pcg32 rng(51);
  Tensor<float> z1 = Tensor<float>::randn({11, 4}, rng);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 1, 1, 0, 1, 0, 0};

  auto hidden = contextualize(b, ad::constant(z1), mask);
  CHECK(hidden.size() == static_cast<std::size_t>(cfg.layers) + 1);
  auto out1 = final_context(b, hidden.back())->value;
  CHECK(out1.dim(0) == 11);
  CHECK(out1.dim(1) == cfg.d_model);

  // Masked rows are replaced by the learned embedding, so their original
  // content cannot reach the output.
  Tensor<float> z2 = z1;
  for (std::int64_t i = 0; i < 11; ++i)
    if (mask[static_cast<std::size_t>(i)])
      for (std::int64_t j = 0; j < 4; ++j) z2.at(i, j) += 3.0f;
  auto out2 = final_context(b, contextualize(b, ad::constant(z2), mask).back())->value;
  for (std::int64_t i = 0; i < out1.numel(); ++i) CHECK(out1[i] == out2[i]);

  // Unmasked rows still matter.
  Tensor<float> z3 = z1;
  z3.at(2, 0) += 1.0f;
  auto out3 = final_context(b, contextualize(b, ad::constant(z3), mask).back())->value;
  double diff = 0.0;
  for (std::int64_t i = 0; i < out1.numel(); ++i)
    diff = std::max(diff, static_cast<double>(std::abs(out1[i] - out3[i])));
  CHECK(diff > 0.0);

  CHECK_THROWS_AS(contextualize(b, ad::constant(z1), std::vector<std::uint8_t>(5, 0)),
                  ContractError);
}

TEST_CASE("positional convolution injects frame order") {
  BackboneConfig cfg = tiny_config();
  auto model = init_backbone<float>(cfg, 19);
  auto b = bind_backbone(model, false);
  Pcg32 rng(61);
  Tensor<float> z = Tensor<float>::randn({12, 4}, rng);
  auto out = final_context(b, contextualize(b, ad::constant(z), {}).back())->value;

  Tensor<float> zrot({12, 4});
  for (std::int64_t i = 0; i < 12; ++i)
    for (std::int64_t j = 0; j < 4; ++j) zrot.at(i, j) = z.at((i + 3) % 12, j);
  auto outrot = final_context(b, contextualize(b, ad::constant(zrot), {}).back())->value;

  // A purely permutation-equivariant stack would make these equal.
  double diff = 0.0;
  for (std::int64_t i = 0; i < 12; ++i)
    for (std::int64_t j = 0; j < cfg.d_model; ++j)
      diff = std::max(diff, static_cast<double>(
                                std::abs(out.at((i + 3) % 12, j) - outrot.at(i, j))));
  CHECK(diff > 1e-4);
}

TEST_CASE("contrastive loss identities") {
  const std::vector<double> v = {1, 0, 0, 0, 0, 0};
  const std::vector<double> nv = {-1, 0, 0, 0, 0, 0};

  // All similarities equal: the softmax is uniform over K+1 candidates.
  {
    auto c = ad::constant(rows_of<double>({v, v, v, v}));
    auto q = ad::constant(rows_of<double>({v, v, v}));
    auto loss = contrastive_loss(c, q, {0, 1, 2}, {1, 2, 0, 2, 0, 1}, 2, 0.1);
    CHECK(loss->value[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  }

  // Positive at cosine +1, both negatives at -1.
  {
    auto c = ad::constant(rows_of<double>({v, nv, nv}));
    auto q = ad::constant(rows_of<double>({v, nv, nv}));
    auto loss = contrastive_loss(c, q, {0, 1, 2}, {1, 2, 0, 0, 0, 0}, 2, 0.1);
    const double expect = std::log1p(2.0 * std::exp(-20.0));
    CHECK(loss->value[0] > 0.0);
    CHECK(std::abs(loss->value[0] - expect) < 1e-12);
  }

  // Frames outside the masked set cannot influence the loss.
  {
    Pcg32 rng(71);
    Tensor<double> cval = Tensor<double>::randn({5, 6}, rng);
    Tensor<double> qval = Tensor<double>::randn({2, 6}, rng);
    auto loss0 =
        contrastive_loss(ad::constant(cval), ad::constant(qval), {1, 3}, {1, 0}, 1, 0.1);
    Tensor<double> cpert = cval;
    for (std::int64_t i : {std::int64_t{0}, std::int64_t{2}, std::int64_t{4}})
      for (std::int64_t j = 0; j < 6; ++j) cpert.at(i, j) += 0.7;
    auto loss1 =
        contrastive_loss(ad::constant(cpert), ad::constant(qval), {1, 3}, {1, 0}, 1, 0.1);
    CHECK(loss0->value[0] == loss1->value[0]);
  }

  // Too few masked frames to draw K distinct negatives.
  {
    auto c = ad::constant(rows_of<double>({v, v}));
    auto q = ad::constant(rows_of<double>({v, v}));
    CHECK_THROWS_AS(contrastive_loss(c, q, {0, 1}, {1, 1, 0, 0}, 2, 0.1), ContractError);
    CHECK_THROWS_AS(contrastive_loss(c, q, {0, 1}, {1}, 1, 0.1), ContractError);
  }
}

TEST_CASE("diversity loss identities") {
  auto probs_of = [](double alpha) {
    // Interpolates one-hot usage (alpha 0) toward uniform usage (alpha 1).
    std::vector<ad::Var<double>> probs;
    for (int g = 0; g < 2; ++g) {
      Tensor<double> p({4, 8});
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 8; ++j)
          p.at(i, j) = alpha / 8.0 + (j == 0 ? 1.0 - alpha : 0.0);
      probs.push_back(ad::constant(std::move(p)));
    }
    return probs;
  };

  CHECK(std::abs(diversity_loss(probs_of(1.0))->value[0]) <= 1e-9);
  CHECK(std::abs(diversity_loss(probs_of(0.0))->value[0] - 0.875) <= 1e-9);

  double prev = 2.0;
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double d = diversity_loss(probs_of(alpha))->value[0];
    CHECK(d < prev);
    prev = d;
  }

  CHECK_THROWS_AS(diversity_loss(std::vector<ad::Var<double>>{}), ContractError);
}

TEST_CASE("gumbel temperature decays to its floor") {
  BackboneConfig cfg;
  CHECK(cfg.tau_at(0) == doctest::Approx(2.0));
  double prev = cfg.tau_at(0);
  for (std::int64_t s = 1; s <= 3000; s += 7) {
    const double t = cfg.tau_at(s);
    CHECK(t <= prev);
    prev = t;
  }
  CHECK(cfg.tau_at(1000000) == doctest::Approx(0.5));
}

TEST_CASE("composed pre-training objective passes a finite-difference check") {
  BackboneConfig cfg = tiny_config();
  auto model = init_backbone<double>(cfg, 23);
  Pcg32 rng(81);

  std::vector<float> samples(48);
  for (auto& s : samples) s = static_cast<float>(rng.gaussian() * 0.3);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0, 1, 1, 0, 1, 0, 0};
  std::vector<std::int64_t> masked;
  for (std::int64_t i = 0; i < 11; ++i)
    if (mask[static_cast<std::size_t>(i)]) masked.push_back(i);
  const int k = 2;
  const auto negs = sample_negatives(static_cast<std::int64_t>(masked.size()), k, rng);
  Tensor<double> noise({static_cast<std::int64_t>(masked.size()), 8});
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = rng.gumbel();

  std::vector<std::string> names;
  std::vector<Tensor<double>> pts;
  for (const auto& [name, t] : model.params) {
    names.push_back(name);
    pts.push_back(t);
  }

  auto rep = ad::grad_check<double>(
      [&](const std::vector<ad::Var<double>>& p) {
        Bound<double> b;
        b.cfg = &cfg;
        for (std::size_t i = 0; i < names.size(); ++i) b.vars.emplace(names[i], p[i]);
        auto z = conv_encode(b, samples);
        auto c = final_context(b, contextualize(b, z, mask).back());
        auto zm = ad::gather_rows(z, masked);
        auto quant = quantize(b, zm, 1.2, &noise, false);
        auto lc = contrastive_loss(c, quant.q, masked, negs, k, cfg.kappa);
        return ad::add(lc, ad::scale(diversity_loss(quant.probs), cfg.diversity_weight));
      },
      pts, 1e-5);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("pre-training runs, logs, and reproduces bit-for-bit") {
  auto dir = fresh_dir("pretrain");
  BackboneConfig cfg;
  cfg.conv = {{8, 10, 5}, {8, 3, 2}, {8, 3, 2}, {8, 2, 2}};
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.pos_kernel = 3;
  cfg.pos_groups = 2;
  cfg.groups = 2;
  cfg.entries = 4;
  cfg.codevector_dim = 8;
  cfg.mask_span = 5;
  cfg.num_negatives = 5;
  cfg.crop_s = 0.25;

  const auto profiles = default_profiles();
  std::vector<std::string> paths;
  Pcg32 rng(91);
  for (int i = 0; i < 6; ++i) {
    const auto& prof = i % 2 == 0 ? profiles.adult : profiles.child;
    Waveform w{synth_utterance(prof, 8000, kPipelineRateHz, rng), kPipelineRateHz};
    auto p = (dir / ("utt" + std::to_string(i) + ".wav")).string();
    write_wav(p, w);
    paths.push_back(p);
  }

  PretrainConfig train;
  train.epochs = 2;
  train.lr = 1e-3;
  train.batch_size = 3;
  train.seed = 5;

  const auto ckpt_a = (dir / "a.ckpt").string();
  auto stats = pretrain(paths, cfg, train, ckpt_a, (dir / "a.csv").string());
  CHECK(std::isfinite(stats.contrastive));
  CHECK(stats.contrastive > 0.0);
  CHECK(stats.perplexity > 1.0);
  CHECK(stats.perplexity <= cfg.entries + 1e-9);

  std::ifstream log(dir / "a.csv");
  std::string line;
  REQUIRE(std::getline(log, line));
  CHECK(line == "epoch,contrastive_loss,diversity_loss,codebook_perplexity");
  int rows = 0;
  while (std::getline(log, line)) {
    int epoch = -1;
    double c, d, p;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &epoch, &c, &d, &p) == 4);
    CHECK(epoch == rows);
    ++rows;
  }
  CHECK(rows == train.epochs);

  auto loaded = backbone_from_checkpoint(Checkpoint::load(ckpt_a));
  auto fresh = init_backbone<float>(cfg, train.seed);
  REQUIRE(loaded.params.size() == fresh.params.size());
  for (std::size_t i = 0; i < loaded.params.size(); ++i)
    CHECK(loaded.params[i].first == fresh.params[i].first);

  // Same seed, same corpus, same bytes.
  const auto ckpt_b = (dir / "b.ckpt").string();
  pretrain(paths, cfg, train, ckpt_b, (dir / "b.csv").string());
  auto again = backbone_from_checkpoint(Checkpoint::load(ckpt_b));
  for (std::size_t i = 0; i < loaded.params.size(); ++i) {
    const auto& ta = loaded.params[i].second;
    const auto& tb = again.params[i].second;
    REQUIRE(ta.numel() == tb.numel());
    for (std::int64_t j = 0; j < ta.numel(); ++j) CHECK(ta[j] == tb[j]);
  }

  // Zero learning rate leaves parameters untouched no matter how long we run.
  PretrainConfig frozen = train;
  frozen.lr = 0.0;
  frozen.epochs = 1;
  pretrain(paths, cfg, frozen, (dir / "z1.ckpt").string(), (dir / "z1.csv").string());
  frozen.epochs = 2;
  pretrain(paths, cfg, frozen, (dir / "z2.ckpt").string(), (dir / "z2.csv").string());
  auto z1 = backbone_from_checkpoint(Checkpoint::load((dir / "z1.ckpt").string()));
  auto z2 = backbone_from_checkpoint(Checkpoint::load((dir / "z2.ckpt").string()));
  for (std::size_t i = 0; i < z1.params.size(); ++i)
    for (std::int64_t j = 0; j < z1.params[i].second.numel(); ++j)
      CHECK(z1.params[i].second[j] == z2.params[i].second[j]);

  CHECK_THROWS_AS(pretrain({}, cfg, train, (dir / "x.ckpt").string(), (dir / "x.csv").string()),
                  ContractError);
  fs::remove_all(dir);
}

TEST_CASE("backbone checkpoint and config round-trip") {
  BackboneConfig cfg = tiny_config();
  cfg.kappa = 0.25;
  cfg.mask_ratio = 0.4;
  auto model = init_backbone<float>(cfg, 29);

  auto dir = fresh_dir("ckpt");
  const auto path = (dir / "m.ckpt").string();
  backbone_to_checkpoint(model).save(path);
  auto back = backbone_from_checkpoint(Checkpoint::load(path));

  CHECK(backbone_config_to_json(back.cfg) == backbone_config_to_json(cfg));
  REQUIRE(back.params.size() == model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    CHECK(back.params[i].first == model.params[i].first);
    const auto& ta = model.params[i].second;
    const auto& tb = back.params[i].second;
    REQUIRE(ta.shape() == tb.shape());
    for (std::int64_t j = 0; j < ta.numel(); ++j) CHECK(ta[j] == tb[j]);
  }

  auto cfg2 = backbone_config_from_json(backbone_config_to_json(cfg));
  CHECK(cfg2.conv.size() == cfg.conv.size());
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    CHECK(cfg2.conv[i].channels == cfg.conv[i].channels);
    CHECK(cfg2.conv[i].kernel == cfg.conv[i].kernel);
    CHECK(cfg2.conv[i].stride == cfg.conv[i].stride);
  }
  CHECK(cfg2.layers == cfg.layers);
  CHECK(cfg2.d_model == cfg.d_model);
  CHECK(cfg2.heads == cfg.heads);
  CHECK(cfg2.ffn_dim == cfg.ffn_dim);
  CHECK(cfg2.groups == cfg.groups);
  CHECK(cfg2.entries == cfg.entries);
  CHECK(cfg2.codevector_dim == cfg.codevector_dim);
  CHECK(cfg2.kappa == doctest::Approx(cfg.kappa));
  CHECK(cfg2.mask_ratio == doctest::Approx(cfg.mask_ratio));
  CHECK(cfg2.mask_span == cfg.mask_span);
  fs::remove_all(dir);
}
