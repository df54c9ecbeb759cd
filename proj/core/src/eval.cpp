#include "egosc/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "egosc/rng.hpp"

namespace egosc {

std::vector<FoldSplit> kfold_split(const std::vector<std::string>& sessions, int k,
                                   int sessions_per_fold, std::uint64_t seed) {
  if (k < 1 || sessions_per_fold < 1) throw ContractError("kfold: k and fold size must be >= 1");
  const auto n = static_cast<std::int64_t>(sessions.size());
  if (static_cast<std::int64_t>(k) * sessions_per_fold != n)
    throw ContractError("kfold: " + std::to_string(n) + " sessions do not divide into " +
                        std::to_string(k) + " folds of " + std::to_string(sessions_per_fold));
  {
    std::set<std::string> uniq(sessions.begin(), sessions.end());
    if (static_cast<std::int64_t>(uniq.size()) != n)
      throw ContractError("kfold: duplicate session ids");
  }
  std::vector<std::string> order = sessions;
  Pcg32 rng(hash_seed(seed, 0xF01Du));
  rng.shuffle(order);
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    auto& split = folds[static_cast<std::size_t>(f)];
    for (std::int64_t i = 0; i < n; ++i) {
      const bool in_test = i >= static_cast<std::int64_t>(f) * sessions_per_fold &&
                           i < static_cast<std::int64_t>(f + 1) * sessions_per_fold;
      (in_test ? split.test_sessions : split.train_sessions).push_back(order[static_cast<std::size_t>(i)]);
    }
    std::sort(split.train_sessions.begin(), split.train_sessions.end());
    std::sort(split.test_sessions.begin(), split.test_sessions.end());
  }
  return folds;
}

Metrics compute_metrics(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw ContractError("compute_metrics: empty input");
  if (preds.size() != labels.size()) throw ContractError("compute_metrics: length mismatch");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw ContractError("compute_metrics: labels must be 0 or 1");
    if (labels[i] == 1)
      (preds[i] == 1 ? m.tp : m.fn)++;
    else
      (preds[i] == 0 ? m.tn : m.fp)++;
  }
  const auto total = static_cast<double>(m.tp + m.fp + m.tn + m.fn);
  m.accuracy = static_cast<double>(m.tp + m.tn) / total;
  const std::int64_t pos = m.tp + m.fn, neg = m.tn + m.fp;
  m.degenerate = pos == 0 || neg == 0;
  m.recall = pos > 0 ? static_cast<double>(m.tp) / static_cast<double>(pos) : 0.0;
  m.specificity = neg > 0 ? static_cast<double>(m.tn) / static_cast<double>(neg) : 0.0;
  const auto f1 = [](std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    const std::int64_t den = 2 * tp + fp + fn;
    return den > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(den) : 0.0;
  };
  // adult F1 treats label 0 as the positive class, so the roles swap
  m.macro_f1 = 0.5 * (f1(m.tp, m.fp, m.fn) + f1(m.tn, m.fn, m.fp));
  return m;
}

std::vector<SegmentRef> subsample_train(const std::vector<SegmentRef>& segments, double ratio,
                                        std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ContractError("subsample: ratio must be in (0, 1]");
  if (ratio == 1.0) return segments;
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < segments.size(); ++i)
    cells[{segments[i].session_id, segments[i].label}].push_back(i);
  std::vector<char> keep(segments.size(), 0);
  std::uint64_t cell_idx = 0;
  for (auto& [key, idxs] : cells) {
    Pcg32 rng(hash_seed(seed, 0x5AB0u + cell_idx++));
    rng.shuffle(idxs);
    const auto n = static_cast<std::int64_t>(idxs.size());
    const auto take = std::max<std::int64_t>(1, std::llround(ratio * static_cast<double>(n)));
    for (std::int64_t j = 0; j < std::min(take, n); ++j) keep[idxs[static_cast<std::size_t>(j)]] = 1;
  }
  std::vector<SegmentRef> out;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (keep[i]) out.push_back(segments[i]);
  return out;
}

const char* source_name(Source s) {
  switch (s) {
    case Source::child: return "child";
    case Source::exam: return "exam";
    case Source::both: return "both";
    case Source::dual: return "dual";
  }
  return "child";
}

Source parse_source(const std::string& s) {
  if (s == "child") return Source::child;
  if (s == "exam") return Source::exam;
  if (s == "both") return Source::both;
  if (s == "dual") return Source::dual;
  throw ContractError("unknown source condition: " + s);
}

std::vector<SegmentRef> collect_segments(const std::vector<SessionManifest>& manifest,
                                         const std::vector<std::string>& sessions, Source source) {
  std::vector<SegmentRef> out;
  for (const auto& id : sessions) {
    const SessionManifest* sm = nullptr;
    for (const auto& m : manifest)
      if (m.session_id == id) sm = &m;
    if (!sm) throw ContractError("collect_segments: session not in manifest: " + id);
    for (const auto& ann : load_annotations(sm->annotation_path)) {
      if (ann.label != SpeakerLabel::adult && ann.label != SpeakerLabel::child) continue;
      SegmentRef ref;
      ref.session_id = id;
      ref.start_s = ann.start_s;
      ref.end_s = ann.end_s;
      ref.label = ann.label == SpeakerLabel::child ? 1 : 0;
      switch (source) {
        case Source::child:
          ref.path_a = sm->child_channel_path;
          out.push_back(ref);
          break;
        case Source::exam:
          ref.path_a = sm->exam_channel_path;
          out.push_back(ref);
          break;
        case Source::both:
          ref.path_a = sm->child_channel_path;
          out.push_back(ref);
          ref.path_a = sm->exam_channel_path;
          out.push_back(ref);
          break;
        case Source::dual:
          ref.path_a = sm->child_channel_path;
          ref.path_b = sm->exam_channel_path;
          out.push_back(ref);
          break;
      }
    }
  }
  return out;
}

namespace {

void accumulate(Metrics& acc, const Metrics& m, double w) {
  acc.accuracy += w * m.accuracy;
  acc.macro_f1 += w * m.macro_f1;
  acc.recall += w * m.recall;
  acc.specificity += w * m.specificity;
}

Metrics mean_of(const std::vector<Metrics>& ms) {
  Metrics out;
  for (const auto& m : ms) accumulate(out, m, 1.0 / static_cast<double>(ms.size()));
  return out;
}

struct FoldJob {
  std::uint64_t seed = 0;
  int fold_index = 0;
  FoldSplit split;
};

std::vector<FoldResult> run_fold(const ExperimentSpec& spec, const RunContext& ctx,
                                 const FoldJob& job) {
  auto train = collect_segments(ctx.manifest, job.split.train_sessions, spec.train_source);
  train = subsample_train(train, spec.train_ratio,
                          hash_seed(job.seed, 0x0A7A0000u + static_cast<std::uint64_t>(job.fold_index)));

  std::set<std::string> test_ids(job.split.test_sessions.begin(), job.split.test_sessions.end());
  for (const auto& seg : train)
    if (test_ids.count(seg.session_id))
      throw ContractError("leakage: train segment from test session " + seg.session_id);

  ClassifierConfig cc = ctx.head;
  cc.seed = hash_seed(job.seed, 0xC0DE0000u + static_cast<std::uint64_t>(job.fold_index));
  cc.input_mode = spec.train_source == Source::dual ? ClassifierConfig::Mode::dual
                                                    : ClassifierConfig::Mode::mono;

  BackboneModel<float> backbone;
  if (spec.pretrained) {
    if (ctx.pretrained_checkpoint.empty())
      throw ContractError("experiment: pretrained backbone requested but no checkpoint given");
    backbone = backbone_from_checkpoint(Checkpoint::load(ctx.pretrained_checkpoint));
  } else {
    backbone = init_backbone<float>(ctx.backbone_cfg, hash_seed(job.seed, 0xBB00u));
  }

  auto model = finetune(train, cc, backbone, spec.peft);

  if (!ctx.model_dir.empty()) {
    const std::string tag = "_seed" + std::to_string(job.seed) + "_fold" + std::to_string(job.fold_index);
    classifier_to_checkpoint(model).save(ctx.model_dir + "/model" + tag + ".ckpt");
    if (spec.peft.variant != LoraSpec::Variant::none)
      lora_delta_checkpoint(model).save(ctx.model_dir + "/lora_delta" + tag + ".ckpt");
  }

  std::vector<FoldResult> out;
  for (Source ts : spec.test_sources) {
    auto test = collect_segments(ctx.manifest, job.split.test_sessions, ts);
    if (test.empty()) throw ContractError("experiment: no test segments");
    auto preds = predict_segments(model, test);
    std::vector<int> p, y;
    p.reserve(test.size());
    y.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      p.push_back(preds[i].label);
      y.push_back(test[i].label);
    }
    FoldResult r;
    r.seed = job.seed;
    r.fold_index = job.fold_index;
    r.test_source = ts;
    r.metrics = compute_metrics(p, y);
    out.push_back(r);
  }
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const RunContext& ctx) {
  if (spec.test_sources.empty()) throw ContractError("experiment: need a test source");
  for (Source ts : spec.test_sources)
    if ((spec.train_source == Source::dual) != (ts == Source::dual))
      throw ContractError("experiment: dual train requires dual test and vice versa");
  if (spec.seeds.empty()) throw ContractError("experiment: need at least one seed");
  std::vector<std::string> ids;
  for (const auto& m : ctx.manifest) ids.push_back(m.session_id);

  std::vector<FoldJob> jobs;
  for (std::uint64_t seed : spec.seeds) {
    auto splits = kfold_split(ids, spec.folds, spec.sessions_per_fold, seed);
    for (int f = 0; f < spec.folds; ++f)
      jobs.push_back({seed, f, splits[static_cast<std::size_t>(f)]});
  }

  std::vector<std::vector<FoldResult>> results(jobs.size());
  const int workers = std::max(1, std::min<int>(ctx.threads, static_cast<int>(jobs.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = run_fold(spec, ctx, jobs[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          try {
            results[i] = run_fold(spec, ctx, jobs[i]);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu);
            if (!err) err = std::current_exception();
            return;
          }
        }
      });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  }

  ExperimentResult out;
  out.spec = spec;
  for (const auto& rs : results)
    for (const auto& r : rs) out.folds.push_back(r);

  for (Source ts : spec.test_sources) {
    std::vector<Metrics> per_seed;
    for (std::uint64_t seed : spec.seeds) {
      std::vector<Metrics> fold_ms;
      for (const auto& r : out.folds)
        if (r.seed == seed && r.test_source == ts) fold_ms.push_back(r.metrics);
      per_seed.push_back(mean_of(fold_ms));
    }
    SourceSummary ss;
    ss.test_source = ts;
    ss.mean = mean_of(per_seed);
    auto range = [&per_seed](double Metrics::*field) {
      double lo = per_seed[0].*field, hi = per_seed[0].*field;
      for (const auto& m : per_seed) {
        lo = std::min(lo, m.*field);
        hi = std::max(hi, m.*field);
      }
      return hi - lo;
    };
    ss.seed_range.accuracy = range(&Metrics::accuracy);
    ss.seed_range.macro_f1 = range(&Metrics::macro_f1);
    ss.seed_range.recall = range(&Metrics::recall);
    ss.seed_range.specificity = range(&Metrics::specificity);
    out.by_test_source.push_back(ss);
  }
  return out;
}

namespace {

// the spec-derived columns between `fold` and the metrics
std::string spec_columns(const ExperimentSpec& s, Source test_source) {
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%g", s.train_ratio);
  return std::string(s.pretrained ? "pretrained" : "scratch") + ',' + source_name(s.train_source) +
         ',' + source_name(test_source) + ',' + lora_variant_name(s.peft.variant) + ',' + ratio;
}

void append_metrics(std::string& line, const Metrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f", m.accuracy, m.macro_f1, m.recall,
                m.specificity);
  line += buf;
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<ExperimentResult>& results) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write results: " + path);
  os << "experiment,fold,backbone,source_train,source_test,peft,ratio,acc,macro_f1,recall,"
        "specificity\n";
  for (const auto& r : results) {
    for (Source ts : r.spec.test_sources) {
      const std::string cols = spec_columns(r.spec, ts);
      for (int f = 0; f < r.spec.folds; ++f) {
        std::vector<Metrics> ms;
        for (const auto& fr : r.folds)
          if (fr.fold_index == f && fr.test_source == ts) ms.push_back(fr.metrics);
        std::string line = r.spec.name + ',' + std::to_string(f) + ',' + cols;
        append_metrics(line, mean_of(ms));
        os << line << '\n';
      }
      std::string line = r.spec.name + ",mean," + cols;
      append_metrics(line, r.summary(ts).mean);
      os << line << '\n';
    }
  }
}

void write_results_by_seed_csv(const std::string& path,
                               const std::vector<ExperimentResult>& results) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write results: " + path);
  os << "seed,experiment,fold,backbone,source_train,source_test,peft,ratio,acc,macro_f1,recall,"
        "specificity\n";
  for (const auto& r : results) {
    for (const auto& fr : r.folds) {
      std::string line = std::to_string(fr.seed) + ',' + r.spec.name + ',' +
                         std::to_string(fr.fold_index) + ',' + spec_columns(r.spec, fr.test_source);
      append_metrics(line, fr.metrics);
      os << line << '\n';
    }
  }
}

}  // namespace egosc
