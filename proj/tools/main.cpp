// egosc: synthetic dyadic-audio corpus generation, self-supervised backbone
// pre-training and child/adult classifier experiments, end to end.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "egosc/audio.hpp"
#include "egosc/backbone.hpp"
#include "egosc/checkpoint.hpp"
#include "egosc/classifier.hpp"
#include "egosc/eval.hpp"
#include "egosc/report.hpp"
#include "egosc/synth.hpp"
#include "egosc/vad.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egosc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

// ---- config file ----
// One JSON document with a section per pipeline stage; CLI flags override
// file values. Unknown keys anywhere are rejected.

struct RunConfig {
  CorpusConfig corpus;
  PretrainCorpusConfig pretrain_corpus;
  BackboneConfig backbone;
  PretrainConfig pretrain;
  ClassifierConfig classifier;
  VadParams vad;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int folds = 5;
  int sessions_per_fold = 2;
  int threads = 1;
};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ContractError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_corpus(const json& j, CorpusConfig& c) {
  check_keys(j, {"n_sessions", "session_duration_s", "seed"}, "corpus");
  get_if(j, "n_sessions", c.n_sessions);
  get_if(j, "session_duration_s", c.session_duration_s);
  get_if(j, "seed", c.seed);
}

void parse_pretrain_corpus(const json& j, PretrainCorpusConfig& c) {
  check_keys(j, {"n_utterances", "seed", "adult_fraction", "min_duration_s", "max_duration_s"},
             "pretrain_corpus");
  get_if(j, "n_utterances", c.n_utterances);
  get_if(j, "seed", c.seed);
  get_if(j, "adult_fraction", c.adult_fraction);
  get_if(j, "min_duration_s", c.min_duration_s);
  get_if(j, "max_duration_s", c.max_duration_s);
}

void parse_backbone(const json& j, BackboneConfig& c) {
  check_keys(j,
             {"layers", "d_model", "heads", "ffn_dim", "pos_kernel", "pos_groups", "groups",
              "entries", "codevector_dim", "mask_ratio", "mask_span", "kappa", "tau_start",
              "tau_end", "tau_decay", "num_negatives", "diversity_weight", "crop_s"},
             "backbone");
  get_if(j, "layers", c.layers);
  get_if(j, "d_model", c.d_model);
  get_if(j, "heads", c.heads);
  get_if(j, "ffn_dim", c.ffn_dim);
  get_if(j, "pos_kernel", c.pos_kernel);
  get_if(j, "pos_groups", c.pos_groups);
  get_if(j, "groups", c.groups);
  get_if(j, "entries", c.entries);
  get_if(j, "codevector_dim", c.codevector_dim);
  get_if(j, "mask_ratio", c.mask_ratio);
  get_if(j, "mask_span", c.mask_span);
  get_if(j, "kappa", c.kappa);
  get_if(j, "tau_start", c.tau_start);
  get_if(j, "tau_end", c.tau_end);
  get_if(j, "tau_decay", c.tau_decay);
  get_if(j, "num_negatives", c.num_negatives);
  get_if(j, "diversity_weight", c.diversity_weight);
  get_if(j, "crop_s", c.crop_s);
}

void parse_pretrain(const json& j, PretrainConfig& c) {
  check_keys(j, {"epochs", "lr", "batch_size", "seed"}, "pretrain");
  get_if(j, "epochs", c.epochs);
  get_if(j, "lr", c.lr);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "seed", c.seed);
}

void parse_classifier(const json& j, ClassifierConfig& c) {
  check_keys(j,
             {"conv_channels", "conv_layers", "mlp_hidden", "lr", "lr_grid", "max_segment_s",
              "batch_size", "max_steps", "backbone_trainable"},
             "classifier");
  get_if(j, "conv_channels", c.conv_channels);
  get_if(j, "conv_layers", c.conv_layers);
  get_if(j, "mlp_hidden", c.mlp_hidden);
  get_if(j, "lr", c.lr);
  get_if(j, "lr_grid", c.lr_grid);
  get_if(j, "max_segment_s", c.max_segment_s);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "max_steps", c.max_steps);
  get_if(j, "backbone_trainable", c.backbone_trainable);
}

void parse_vad(const json& j, VadParams& c) {
  check_keys(j,
             {"energy_threshold_db", "flatness_threshold", "min_speech_ms", "min_gap_ms",
              "frame_ms", "hop_ms"},
             "vad");
  get_if(j, "energy_threshold_db", c.energy_threshold_db);
  get_if(j, "flatness_threshold", c.flatness_threshold);
  get_if(j, "min_speech_ms", c.min_speech_ms);
  get_if(j, "min_gap_ms", c.min_gap_ms);
  get_if(j, "frame_ms", c.frame_ms);
  get_if(j, "hop_ms", c.hop_ms);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream is(path);
  if (!is) throw ContractError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ContractError("config: parse error in " + path + ": " + e.what());
  }
  check_keys(j,
             {"corpus", "pretrain_corpus", "backbone", "pretrain", "classifier", "vad", "seeds",
              "folds", "sessions_per_fold", "threads"},
             "top level");
  if (j.contains("corpus")) parse_corpus(j.at("corpus"), rc.corpus);
  if (j.contains("pretrain_corpus")) parse_pretrain_corpus(j.at("pretrain_corpus"), rc.pretrain_corpus);
  if (j.contains("backbone")) parse_backbone(j.at("backbone"), rc.backbone);
  if (j.contains("pretrain")) parse_pretrain(j.at("pretrain"), rc.pretrain);
  if (j.contains("classifier")) parse_classifier(j.at("classifier"), rc.classifier);
  if (j.contains("vad")) parse_vad(j.at("vad"), rc.vad);
  get_if(j, "seeds", rc.seeds);
  get_if(j, "folds", rc.folds);
  get_if(j, "sessions_per_fold", rc.sessions_per_fold);
  get_if(j, "threads", rc.threads);
  return rc;
}

json run_config_json(const RunConfig& rc) {
  json j;
  j["corpus"] = {{"n_sessions", rc.corpus.n_sessions},
                 {"session_duration_s", rc.corpus.session_duration_s},
                 {"seed", rc.corpus.seed}};
  j["pretrain_corpus"] = {{"n_utterances", rc.pretrain_corpus.n_utterances},
                          {"seed", rc.pretrain_corpus.seed},
                          {"adult_fraction", rc.pretrain_corpus.adult_fraction},
                          {"min_duration_s", rc.pretrain_corpus.min_duration_s},
                          {"max_duration_s", rc.pretrain_corpus.max_duration_s}};
  j["backbone"] = json::parse(backbone_config_to_json(rc.backbone));
  j["pretrain"] = {{"epochs", rc.pretrain.epochs},
                   {"lr", rc.pretrain.lr},
                   {"batch_size", rc.pretrain.batch_size},
                   {"seed", rc.pretrain.seed}};
  j["classifier"] = json::parse(classifier_config_to_json(rc.classifier));
  j["vad"] = {{"energy_threshold_db", rc.vad.energy_threshold_db},
              {"flatness_threshold", rc.vad.flatness_threshold},
              {"min_speech_ms", rc.vad.min_speech_ms},
              {"min_gap_ms", rc.vad.min_gap_ms},
              {"frame_ms", rc.vad.frame_ms},
              {"hop_ms", rc.vad.hop_ms}};
  j["seeds"] = rc.seeds;
  j["folds"] = rc.folds;
  j["sessions_per_fold"] = rc.sessions_per_fold;
  j["threads"] = rc.threads;
  return j;
}

// ---- output plumbing ----

// --out is taken relative to $EGOSC_OUT_ROOT when that is set and the path
// is not absolute.
fs::path resolve_out_dir(const std::string& out) {
  fs::path p(out);
  if (const char* root = std::getenv("EGOSC_OUT_ROOT"); root && *root && !p.is_absolute())
    p = fs::path(root) / p;
  return p;
}

void write_resolved_config(const fs::path& dir, const RunConfig& rc, const json& extra) {
  json j = run_config_json(rc);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream os(dir / "resolved_config.json");
  if (!os) throw IoError("cannot write resolved config in " + dir.string());
  os << j.dump(2) << '\n';
}

void require_exists(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw ContractError(what + " not found: " + path);
}

std::vector<std::string> load_pretrain_listing(const std::string& corpus_dir) {
  const fs::path listing = fs::path(corpus_dir) / "listing.jsonl";
  if (!fs::exists(listing)) throw ContractError("pretrain corpus listing not found: " + listing.string());
  std::ifstream is(listing);
  std::vector<std::string> paths;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    paths.push_back((fs::path(corpus_dir) / j.at("path").get<std::string>()).string());
  }
  if (paths.empty()) throw ContractError("pretrain corpus listing is empty");
  return paths;
}

// ---- shared experiment plumbing ----

RunContext make_context(const RunConfig& rc, const std::string& manifest_path,
                        const std::string& pretrained_ckpt) {
  require_exists(manifest_path, "corpus manifest");
  RunContext ctx;
  ctx.manifest = load_corpus_manifest(manifest_path);
  ctx.backbone_cfg = rc.backbone;
  ctx.pretrained_checkpoint = pretrained_ckpt;
  ctx.head = rc.classifier;
  ctx.threads = rc.threads;
  return ctx;
}

void emit_run_outputs(const fs::path& out, const std::vector<ExperimentResult>& results) {
  write_results_csv((out / "results.csv").string(), results);
  write_results_by_seed_csv((out / "results_by_seed.csv").string(), results);
}

// ---- subcommand bodies ----

int cmd_gen_corpus(const RunConfig& rc, const std::string& out, int pretrain_utts) {
  const fs::path dir = resolve_out_dir(out);
  fs::create_directories(dir);
  auto manifest = generate_corpus(dir.string(), rc.corpus);
  std::printf("wrote %zu sessions under %s\n", manifest.size(), dir.string().c_str());
  if (pretrain_utts > 0) {
    PretrainCorpusConfig pc = rc.pretrain_corpus;
    pc.n_utterances = pretrain_utts;
    const fs::path pdir = dir / "pretrain";
    fs::create_directories(pdir);
    auto paths = generate_pretrain_corpus(pdir.string(), pc);
    std::printf("wrote %zu pre-training utterances under %s\n", paths.size(),
                pdir.string().c_str());
  }
  json extra;
  extra["command"] = "gen-corpus";
  write_resolved_config(dir, rc, extra);
  return kExitOk;
}

int cmd_vad(const RunConfig& rc, const std::string& in, const std::string& out,
            double min_duration_s) {
  require_exists(in, "input WAV");
  const fs::path out_path = resolve_out_dir(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  Waveform w = read_wav(in);
  auto segments = detect_speech(w, rc.vad);
  auto kept = apply_exclusion(std::move(segments), w.duration_s(), min_duration_s);
  std::ofstream os(out_path);
  if (!os) throw IoError("cannot write " + out_path.string());
  os << "start_s,end_s\n";
  if (!kept) {
    std::printf("recording excluded: %.1f s is shorter than %.1f s\n", w.duration_s(),
                min_duration_s);
    return kExitOk;
  }
  char buf[64];
  for (const auto& seg : *kept) {
    std::snprintf(buf, sizeof buf, "%.3f,%.3f\n", seg.start_s, seg.end_s);
    os << buf;
  }
  std::printf("%zu speech segments -> %s\n", kept->size(), out_path.string().c_str());
  return kExitOk;
}

int cmd_pretrain(const RunConfig& rc, const std::string& corpus, const std::string& out) {
  auto paths = load_pretrain_listing(corpus);
  const fs::path dir = resolve_out_dir(out);
  fs::create_directories(dir);
  const std::string ckpt = (dir / "backbone.ckpt").string();
  const std::string log = (dir / "pretrain_log.csv").string();
  PretrainStats stats = pretrain(paths, rc.backbone, rc.pretrain, ckpt, log);
  json extra;
  extra["command"] = "pretrain";
  extra["n_utterances"] = paths.size();
  write_resolved_config(dir, rc, extra);
  std::printf("final epoch: contrastive %.4f diversity %.4f perplexity %.2f\n", stats.contrastive,
              stats.diversity, stats.perplexity);
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return kExitOk;
}

ExperimentSpec spec_from_flags(const RunConfig& rc, const std::string& name,
                               const std::string& train_source, const std::string& test_source,
                               const std::string& backbone, const std::string& peft, double ratio,
                               std::vector<std::uint64_t> seeds) {
  ExperimentSpec spec;
  spec.name = name;
  spec.train_source = parse_source(train_source);
  spec.test_sources = {parse_source(test_source)};
  if (backbone != "scratch" && backbone != "pretrained")
    throw ContractError("backbone must be 'scratch' or a checkpoint path (got '" + backbone + "')");
  spec.pretrained = backbone == "pretrained";
  spec.peft.variant = parse_lora_variant(peft);
  spec.train_ratio = ratio;
  spec.seeds = std::move(seeds);
  spec.folds = rc.folds;
  spec.sessions_per_fold = rc.sessions_per_fold;
  return spec;
}

int cmd_finetune(const RunConfig& rc, const std::string& corpus, const std::string& backbone,
                 const std::string& train_source, const std::string& test_source,
                 const std::string& peft, double ratio, std::uint64_t seed,
                 const std::string& out) {
  const bool scratch = backbone == "scratch";
  std::string ckpt_path;
  if (!scratch) {
    require_exists(backbone, "backbone checkpoint");
    ckpt_path = backbone;
  }
  ExperimentSpec spec = spec_from_flags(rc, "finetune", train_source, test_source,
                                        scratch ? "scratch" : "pretrained", peft, ratio, {seed});
  RunContext ctx = make_context(rc, corpus, ckpt_path);

  const fs::path dir = resolve_out_dir(out);
  fs::create_directories(dir);
  ctx.model_dir = dir.string();
  auto result = run_experiment(spec, ctx);
  emit_run_outputs(dir, {result});
  json extra;
  extra["command"] = "finetune";
  extra["seed"] = seed;
  extra["backbone"] = scratch ? "scratch" : ckpt_path;
  extra["train_source"] = train_source;
  extra["test_source"] = test_source;
  extra["peft"] = peft;
  extra["ratio"] = ratio;
  write_resolved_config(dir, rc, extra);
  const auto& m = result.summary(spec.test_sources[0]).mean;
  std::printf("mean over %d folds: acc %.4f macro-F1 %.4f recall %.4f specificity %.4f\n",
              spec.folds, m.accuracy, m.macro_f1, m.recall, m.specificity);
  return kExitOk;
}

int cmd_evaluate(const RunConfig& rc, const std::string& model_path, const std::string& corpus,
                 int folds, const std::string& source, const std::string& out) {
  require_exists(model_path, "model checkpoint");
  RunContext ctx = make_context(rc, corpus, "");
  auto model = classifier_from_checkpoint(Checkpoint::load(model_path));

  const Source src = source.empty()
                         ? (model.head_cfg.input_mode == ClassifierConfig::Mode::dual
                                ? Source::dual
                                : Source::child)
                         : parse_source(source);
  if ((model.head_cfg.input_mode == ClassifierConfig::Mode::dual) != (src == Source::dual))
    throw ContractError("evaluate: model input mode does not match --source");

  std::vector<std::string> ids;
  for (const auto& m : ctx.manifest) ids.push_back(m.session_id);
  if (folds < 1 || ids.size() % static_cast<std::size_t>(folds) != 0)
    throw ContractError("evaluate: session count not divisible into --folds");
  auto splits = kfold_split(ids, folds, static_cast<int>(ids.size()) / folds, rc.seeds.front());

  const fs::path dir = resolve_out_dir(out);
  fs::create_directories(dir);
  std::ofstream pred_csv(dir / "predictions.csv");
  pred_csv << "session_id,start_s,end_s,true_label,pred_label,p_child\n";

  std::ofstream metrics_csv(dir / "metrics.csv");
  metrics_csv << "fold,acc,macro_f1,recall,specificity\n";
  std::vector<Metrics> fold_ms;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    auto segs = collect_segments(ctx.manifest, splits[f].test_sessions, src);
    auto preds = predict_segments(model, segs);
    std::vector<int> p, y;
    char buf[160];
    for (std::size_t i = 0; i < segs.size(); ++i) {
      p.push_back(preds[i].label);
      y.push_back(segs[i].label);
      std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%d,%d,%.6f\n", segs[i].session_id.c_str(),
                    segs[i].start_s, segs[i].end_s, segs[i].label, preds[i].label,
                    preds[i].p_child);
      pred_csv << buf;
    }
    Metrics m = compute_metrics(p, y);
    fold_ms.push_back(m);
    char row[160];
    std::snprintf(row, sizeof row, "%zu,%.6f,%.6f,%.6f,%.6f\n", f, m.accuracy, m.macro_f1,
                  m.recall, m.specificity);
    metrics_csv << row;
  }
  Metrics mean;
  for (const auto& m : fold_ms) {
    mean.accuracy += m.accuracy / static_cast<double>(fold_ms.size());
    mean.macro_f1 += m.macro_f1 / static_cast<double>(fold_ms.size());
    mean.recall += m.recall / static_cast<double>(fold_ms.size());
    mean.specificity += m.specificity / static_cast<double>(fold_ms.size());
  }
  char row[160];
  std::snprintf(row, sizeof row, "mean,%.6f,%.6f,%.6f,%.6f\n", mean.accuracy, mean.macro_f1,
                mean.recall, mean.specificity);
  metrics_csv << row;
  json extra;
  extra["command"] = "evaluate";
  extra["model"] = model_path;
  extra["source"] = source_name(src);
  extra["folds"] = folds;
  write_resolved_config(dir, rc, extra);
  std::printf("mean over %d folds: acc %.4f macro-F1 %.4f\n", folds, mean.accuracy, mean.macro_f1);
  return kExitOk;
}

int cmd_reproduce(RunConfig rc, const std::string& corpus, const std::string& backbone_ckpt,
                  std::optional<std::uint64_t> seed_override, const std::string& out) {
  if (seed_override) {
    rc.seeds.clear();
    for (std::uint64_t i = 0; i < 3; ++i) rc.seeds.push_back(*seed_override + i);
  }
  const fs::path dir = resolve_out_dir(out);
  fs::create_directories(dir);

  // the backbone checkpoint: given, or pre-trained here from the corpus's
  // pretrain/ listing
  std::string ckpt = backbone_ckpt;
  if (ckpt.empty()) {
    const fs::path corpus_dir = fs::path(corpus).parent_path();
    auto paths = load_pretrain_listing((corpus_dir / "pretrain").string());
    ckpt = (dir / "backbone.ckpt").string();
    std::printf("pre-training backbone on %zu utterances...\n", paths.size());
    pretrain(paths, rc.backbone, rc.pretrain, ckpt, (dir / "pretrain_log.csv").string());
  } else {
    require_exists(ckpt, "backbone checkpoint");
  }
  RunContext ctx = make_context(rc, corpus, ckpt);

  auto spec = [&](const std::string& name, Source train, std::vector<Source> tests,
                  bool pretrained) {
    ExperimentSpec s;
    s.name = name;
    s.train_source = train;
    s.test_sources = std::move(tests);
    s.pretrained = pretrained;
    s.seeds = rc.seeds;
    s.folds = rc.folds;
    s.sessions_per_fold = rc.sessions_per_fold;
    return s;
  };

  std::vector<ExperimentResult> all;
  auto run = [&](ExperimentSpec s) -> const ExperimentResult& {
    std::printf("[%zu] running %s...\n", all.size() + 1, s.name.c_str());
    std::fflush(stdout);
    all.push_back(run_experiment(s, ctx));
    return all.back();
  };

  // backbone comparison, also reused as the source-condition matrix rows
  // for train=both and as the ratio-1.0 sweep points
  const auto& scratch_both = run(spec("scratch_both", Source::both, {Source::child, Source::exam}, false));
  const auto& pre_both = run(spec("pretrained_both", Source::both, {Source::child, Source::exam}, true));
  const auto& pre_child = run(spec("pretrained_child", Source::child, {Source::child, Source::exam}, true));
  const auto& pre_exam = run(spec("pretrained_exam", Source::exam, {Source::child, Source::exam}, true));

  // training-set size sweep
  std::vector<const ExperimentResult*> sweep_scratch{nullptr, nullptr, &scratch_both};
  std::vector<const ExperimentResult*> sweep_pre{nullptr, nullptr, &pre_both};
  const double ratios[] = {0.1, 0.5};
  for (int i = 0; i < 2; ++i) {
    auto s = spec("scratch_both_r" + std::to_string(i), Source::both, {Source::child}, false);
    s.train_ratio = ratios[i];
    sweep_scratch[static_cast<std::size_t>(i)] = &run(std::move(s));
    auto p = spec("pretrained_both_r" + std::to_string(i), Source::both, {Source::child}, true);
    p.train_ratio = ratios[i];
    sweep_pre[static_cast<std::size_t>(i)] = &run(std::move(p));
  }

  // adapter placements
  auto ff = spec("ff_lora", Source::both, {Source::child}, true);
  ff.peft.variant = LoraSpec::Variant::ff;
  const auto& ff_res = run(std::move(ff));
  auto qv = spec("qv_lora", Source::both, {Source::child}, true);
  qv.peft.variant = LoraSpec::Variant::qv;
  const auto& qv_res = run(std::move(qv));

  // single-channel vs dual-channel conditions
  const auto& mono_child = run(spec("mono_child", Source::child, {Source::child}, true));
  const auto& mono_exam = run(spec("mono_exam", Source::exam, {Source::exam}, true));
  const auto& dual = run(spec("dual", Source::dual, {Source::dual}, true));

  emit_run_outputs(dir, all);

  // table: backbone comparison per test device
  std::string tables;
  tables += metrics_table_markdown(
      "Backbone comparison, test on child device (train: both)",
      {{"scratch", scratch_both.summary(Source::child).mean, scratch_both.summary(Source::child).seed_range},
       {"pretrained", pre_both.summary(Source::child).mean, pre_both.summary(Source::child).seed_range}});
  tables += "\n";
  tables += metrics_table_markdown(
      "Backbone comparison, test on examiner device (train: both)",
      {{"scratch", scratch_both.summary(Source::exam).mean, scratch_both.summary(Source::exam).seed_range},
       {"pretrained", pre_both.summary(Source::exam).mean, pre_both.summary(Source::exam).seed_range}});
  write_text_file((dir / "table1.md").string(), tables);

  // table: train/test source matrix (pretrained backbone)
  std::vector<TableRow> rows2;
  for (const auto* r : {&pre_child, &pre_exam, &pre_both}) {
    for (Source ts : {Source::child, Source::exam}) {
      TableRow row;
      row.label = std::string("train ") + source_name(r->spec.train_source) + ", test " + source_name(ts);
      row.mean = r->summary(ts).mean;
      row.range = r->summary(ts).seed_range;
      rows2.push_back(row);
    }
  }
  write_text_file((dir / "table2.md").string(),
                  metrics_table_markdown("Recording-source conditions (pretrained)", rows2));

  // ratio sweep csv + chart
  {
    std::string csv = "ratio,backbone,macro_f1\n";
    Series s_scr{"scratch", {}}, s_pre{"pretrained", {}};
    const double xs[] = {0.1, 0.5, 1.0};
    char buf[96];
    for (int i = 0; i < 3; ++i) {
      const double f_scr = sweep_scratch[static_cast<std::size_t>(i)]->summary(Source::child).mean.macro_f1;
      const double f_pre = sweep_pre[static_cast<std::size_t>(i)]->summary(Source::child).mean.macro_f1;
      std::snprintf(buf, sizeof buf, "%.1f,scratch,%.6f\n%.1f,pretrained,%.6f\n", xs[i], f_scr,
                    xs[i], f_pre);
      csv += buf;
      s_scr.ys.push_back(f_scr);
      s_pre.ys.push_back(f_pre);
    }
    write_text_file((dir / "fig5.csv").string(), csv);
    write_text_file((dir / "fig5.svg").string(),
                    svg_line_chart("Macro-F1 vs training-set fraction", "train ratio", "macro F1",
                                   {0.1, 0.5, 1.0}, {s_scr, s_pre}));
  }

  // adapter comparison csv + chart
  {
    const double full = pre_both.summary(Source::child).mean.macro_f1;
    const double f_ff = ff_res.summary(Source::child).mean.macro_f1;
    const double f_qv = qv_res.summary(Source::child).mean.macro_f1;
    char buf[160];
    std::snprintf(buf, sizeof buf, "variant,macro_f1\nfull,%.6f\nff-lora,%.6f\nqv-lora,%.6f\n",
                  full, f_ff, f_qv);
    write_text_file((dir / "fig6.csv").string(), buf);
    write_text_file((dir / "fig6.svg").string(),
                    svg_bar_chart("Fine-tuning strategies", "macro F1",
                                  {{"full", full}, {"ff-lora", f_ff}, {"qv-lora", f_qv}}));
  }

  // table: single- vs dual-channel
  write_text_file(
      (dir / "table3.md").string(),
      metrics_table_markdown(
          "Channel conditions (pretrained)",
          {{"child device only", mono_child.summary(Source::child).mean, mono_child.summary(Source::child).seed_range},
           {"examiner device only", mono_exam.summary(Source::exam).mean, mono_exam.summary(Source::exam).seed_range},
           {"dual channel", dual.summary(Source::dual).mean, dual.summary(Source::dual).seed_range}}));

  json extra;
  extra["command"] = "reproduce";
  extra["backbone_checkpoint"] = ckpt;
  write_resolved_config(dir, rc, extra);
  std::printf("wrote results under %s\n", dir.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic child/adult speaker classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic dyadic session corpus");
  int gen_sessions = -1;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  std::string gen_out = "corpus";
  int gen_pretrain = 0;
  double gen_duration = -1.0;
  gen->add_option("--sessions", gen_sessions, "number of sessions");
  gen->add_option("--seed", gen_seed, "corpus seed")->each([&](const std::string&) { gen_seed_set = true; });
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--pretrain-utterances", gen_pretrain, "also write this many unlabeled utterances");
  gen->add_option("--duration-s", gen_duration, "session duration in seconds");

  // vad
  auto* vad = app.add_subcommand("vad", "detect speech segments in a WAV file");
  std::string vad_in, vad_out = "segments.csv";
  double vad_min_dur = 0.0;
  vad->add_option("--in", vad_in, "input WAV")->required();
  vad->add_option("--out", vad_out, "output CSV");
  vad->add_option("--min-duration-s", vad_min_dur,
                  "exclude recordings shorter than this (0 disables)");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "self-supervised backbone pre-training");
  std::string pre_corpus, pre_out = "pretrain_out";
  int pre_epochs = -1;
  double pre_lr = -1.0;
  std::uint64_t pre_seed = 0;
  bool pre_seed_set = false;
  pre->add_option("--corpus", pre_corpus, "pretrain corpus directory (with listing.jsonl)")->required();
  pre->add_option("--out", pre_out, "output directory");
  pre->add_option("--epochs", pre_epochs, "training epochs");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--seed", pre_seed, "seed")->each([&](const std::string&) { pre_seed_set = true; });

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune and score a classifier across folds");
  std::string ft_corpus, ft_backbone = "scratch", ft_train = "both", ft_test = "child",
              ft_peft = "none", ft_out = "finetune_out";
  double ft_ratio = 1.0, ft_lr = -1.0;
  std::uint64_t ft_seed = 1;
  ft->add_option("--corpus", ft_corpus, "corpus manifest (manifest.jsonl)")->required();
  ft->add_option("--backbone", ft_backbone, "'scratch' or a pre-trained checkpoint path");
  ft->add_option("--train-source", ft_train, "child|exam|both|dual");
  ft->add_option("--test-source", ft_test, "child|exam|dual");
  ft->add_option("--peft", ft_peft, "none|ff|qv");
  ft->add_option("--ratio", ft_ratio, "training subsample ratio in (0,1]");
  ft->add_option("--lr", ft_lr, "learning rate (must be in the configured grid)");
  ft->add_option("--seed", ft_seed, "seed");
  ft->add_option("--out", ft_out, "output directory");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a saved classifier checkpoint");
  std::string ev_model, ev_corpus, ev_source, ev_out = "evaluate_out";
  int ev_folds = 5;
  ev->add_option("--model", ev_model, "classifier checkpoint")->required();
  ev->add_option("--corpus", ev_corpus, "corpus manifest")->required();
  ev->add_option("--folds", ev_folds, "fold count for reporting");
  ev->add_option("--source", ev_source, "child|exam|dual (default matches the model)");
  ev->add_option("--out", ev_out, "output directory");

  // reproduce
  auto* rep = app.add_subcommand("reproduce", "run the full comparison matrix");
  std::string rep_corpus, rep_backbone, rep_out = "reproduce_out";
  std::uint64_t rep_seed = 0;
  bool rep_seed_set = false;
  rep->add_option("--corpus", rep_corpus, "corpus manifest")->required();
  rep->add_option("--backbone", rep_backbone, "pre-trained checkpoint (default: pre-train now)");
  rep->add_option("--seed", rep_seed, "base seed for the three replicates")
      ->each([&](const std::string&) { rep_seed_set = true; });
  rep->add_option("--out", rep_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig rc = load_run_config(config_path);

    if (gen->parsed()) {
      if (gen_sessions > 0) rc.corpus.n_sessions = gen_sessions;
      if (gen_seed_set) {
        rc.corpus.seed = gen_seed;
        rc.pretrain_corpus.seed = gen_seed;
      }
      if (gen_duration > 0) rc.corpus.session_duration_s = gen_duration;
      return cmd_gen_corpus(rc, gen_out, gen_pretrain);
    }
    if (vad->parsed()) return cmd_vad(rc, vad_in, vad_out, vad_min_dur);
    if (pre->parsed()) {
      if (pre_epochs > 0) rc.pretrain.epochs = pre_epochs;
      if (pre_lr >= 0) rc.pretrain.lr = pre_lr;
      if (pre_seed_set) rc.pretrain.seed = pre_seed;
      return cmd_pretrain(rc, pre_corpus, pre_out);
    }
    if (ft->parsed()) {
      if (ft_lr > 0) rc.classifier.lr = ft_lr;
      return cmd_finetune(rc, ft_corpus, ft_backbone, ft_train, ft_test, ft_peft, ft_ratio,
                          ft_seed, ft_out);
    }
    if (ev->parsed()) return cmd_evaluate(rc, ev_model, ev_corpus, ev_folds, ev_source, ev_out);
    if (rep->parsed())
      return cmd_reproduce(rc, rep_corpus, rep_backbone,
                           rep_seed_set ? std::optional<std::uint64_t>(rep_seed) : std::nullopt,
                           rep_out);
    std::fprintf(stderr, "error: no subcommand\n");
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: numerical: %s\n", e.what());
    return kExitNumerical;
  } catch (const AudioError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return kExitData;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return kExitData;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
