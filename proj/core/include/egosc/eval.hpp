#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egosc/classifier.hpp"
#include "egosc/synth.hpp"

namespace egosc {

struct FoldSplit {
  std::vector<std::string> train_sessions;
  std::vector<std::string> test_sessions;
};

// Session-disjoint folds: every session lands in exactly one test fold.
std::vector<FoldSplit> kfold_split(const std::vector<std::string>& sessions, int k,
                                   int sessions_per_fold, std::uint64_t seed);

struct Metrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double recall = 0.0;       // child recall (child = 1 is the positive class)
  double specificity = 0.0;  // adult recall
  bool degenerate = false;   // a class was absent from the labels
};

Metrics compute_metrics(const std::vector<int>& preds, const std::vector<int>& labels);

// Stratified by (session, label): each nonempty cell contributes
// round(ratio * n), at least 1. Output preserves input order.
std::vector<SegmentRef> subsample_train(const std::vector<SegmentRef>& segments, double ratio,
                                        std::uint64_t seed);

// Which device channel(s) a condition reads segments from.
enum class Source { child, exam, both, dual };
const char* source_name(Source s);
Source parse_source(const std::string& s);

// Child/adult annotated segments of the listed sessions, cut by annotation
// boundaries on the channel(s) the condition names. `both` pools the two
// mono channels as independent examples.
std::vector<SegmentRef> collect_segments(const std::vector<SessionManifest>& manifest,
                                         const std::vector<std::string>& sessions, Source source);

struct ExperimentSpec {
  std::string name;
  Source train_source = Source::both;
  // one fine-tuned model per (seed, fold), scored on each listed condition
  std::vector<Source> test_sources = {Source::child};
  bool pretrained = false;
  LoraSpec peft;
  double train_ratio = 1.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int folds = 5;
  int sessions_per_fold = 2;
};

struct FoldResult {
  std::uint64_t seed = 0;
  int fold_index = 0;
  Source test_source = Source::child;
  Metrics metrics;
};

struct SourceSummary {
  Source test_source = Source::child;
  Metrics mean;        // unweighted mean over folds, then over seeds
  Metrics seed_range;  // max - min of the per-seed fold means
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<FoldResult> folds;  // one per (seed, fold, test source)
  std::vector<SourceSummary> by_test_source;

  const SourceSummary& summary(Source s) const {
    for (const auto& ss : by_test_source)
      if (ss.test_source == s) return ss;
    throw ContractError("experiment result: no summary for test source");
  }
};

struct RunContext {
  std::vector<SessionManifest> manifest;
  BackboneConfig backbone_cfg;
  std::string pretrained_checkpoint;  // required when a spec asks for it
  ClassifierConfig head;
  int threads = 1;
  std::string model_dir;  // when set, trained fold models are saved here
};

// The full protocol for one spec: per seed, split sessions into folds,
// fine-tune on the train sessions' segments (subsampled by ratio) and score
// the test sessions' segments. Train/test session disjointness is asserted
// on every segment's provenance.
ExperimentResult run_experiment(const ExperimentSpec& spec, const RunContext& ctx);

// results CSV rows: per-fold metrics averaged over seeds, plus a mean row.
void write_results_csv(const std::string& path, const std::vector<ExperimentResult>& results);
// companion with the raw per-seed rows (extra leading seed column).
void write_results_by_seed_csv(const std::string& path,
                               const std::vector<ExperimentResult>& results);

}  // namespace egosc
