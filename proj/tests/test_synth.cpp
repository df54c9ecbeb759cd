#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "egosc/audio.hpp"
#include "egosc/rng.hpp"
#include "egosc/synth.hpp"
#include "egosc/tensor.hpp"

using namespace egosc;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double mean_energy_db(const Waveform& w, const std::vector<SegmentAnnotation>& anns,
                      SpeakerLabel label) {
  double acc = 0.0;
  std::int64_t n = 0;
  for (const auto& a : anns) {
    if (a.label != label) continue;
    const auto s = static_cast<std::int64_t>(a.start_s * w.sample_rate);
    const auto e = static_cast<std::int64_t>(a.end_s * w.sample_rate);
    for (std::int64_t i = s; i < e && i < static_cast<std::int64_t>(w.samples.size()); ++i) {
      acc += static_cast<double>(w.samples[static_cast<std::size_t>(i)]) *
             w.samples[static_cast<std::size_t>(i)];
      ++n;
    }
  }
  REQUIRE(n > 0);
  return 10.0 * std::log10(acc / static_cast<double>(n));
}

// Median autocorrelation pitch over voiced frames; the coarse lag search is
// plenty to separate the ~120 Hz and ~300 Hz speaker families.
double median_f0(const Waveform& w) {
  const int sr = w.sample_rate;
  const std::int64_t win = 1024;
  std::vector<double> f0s;
  for (std::int64_t s = 0; s + win < static_cast<std::int64_t>(w.samples.size()); s += 2048) {
    const float* x = w.samples.data() + s;
    double rms = 0.0;
    for (std::int64_t i = 0; i < win; ++i) rms += static_cast<double>(x[i]) * x[i];
    if (std::sqrt(rms / static_cast<double>(win)) < 1e-3) continue;
    const std::int64_t lo = sr / 400, hi = sr / 80;
    double best = 0.0;
    std::int64_t best_lag = lo;
    for (std::int64_t lag = lo; lag <= hi; ++lag) {
      double ac = 0.0;
      for (std::int64_t i = 0; i + lag < win; ++i) ac += static_cast<double>(x[i]) * x[i + lag];
      if (ac > best) {
        best = ac;
        best_lag = lag;
      }
    }
    f0s.push_back(static_cast<double>(sr) / static_cast<double>(best_lag));
  }
  REQUIRE(!f0s.empty());
  std::nth_element(f0s.begin(), f0s.begin() + static_cast<std::ptrdiff_t>(f0s.size() / 2),
                   f0s.end());
  return f0s[f0s.size() / 2];
}

}  // namespace

TEST_CASE("same seed renders bit-identical sessions") {
  SynthConfig cfg;
  auto a = generate_session(default_profiles(), 30.0, 42, cfg, "s");
  auto b = generate_session(default_profiles(), 30.0, 42, cfg, "s");
  REQUIRE(a.child_channel.samples.size() == b.child_channel.samples.size());
  CHECK(std::memcmp(a.child_channel.samples.data(), b.child_channel.samples.data(),
                    a.child_channel.samples.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(a.exam_channel.samples.data(), b.exam_channel.samples.data(),
                    a.exam_channel.samples.size() * sizeof(float)) == 0);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (std::size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].start_s == b.annotations[i].start_s);
    CHECK(a.annotations[i].end_s == b.annotations[i].end_s);
    CHECK(a.annotations[i].label == b.annotations[i].label);
  }
}

TEST_CASE("both channels are time-aligned") {
  auto s = generate_session(default_profiles(), 20.0, 3, SynthConfig{}, "s");
  CHECK(s.child_channel.samples.size() == s.exam_channel.samples.size());
  CHECK(s.child_channel.sample_rate == s.exam_channel.sample_rate);
}

TEST_CASE("disabling overlap and third-party rates leaves only child and adult labels") {
  SynthConfig cfg;
  cfg.overlap_rate = 0.0;
  cfg.third_party_rate = 0.0;
  auto s = generate_session(default_profiles(), 60.0, 11, cfg, "s");
  REQUIRE(!s.annotations.empty());
  for (const auto& a : s.annotations) {
    const bool ok = a.label == SpeakerLabel::child || a.label == SpeakerLabel::adult;
    CHECK(ok);
  }
}

TEST_CASE("annotations are ordered, in range, and non-overlapping except overlap labels") {
  auto s = generate_session(default_profiles(), 120.0, 17, SynthConfig{}, "s");
  double prev_end = 0.0;
  for (const auto& a : s.annotations) {
    CHECK(a.start_s >= 0.0);
    CHECK(a.start_s < a.end_s);
    CHECK(a.end_s <= 120.0 + 1e-9);
    if (a.label != SpeakerLabel::overlap) {
      CHECK(a.start_s >= prev_end - 1e-9);
      prev_end = std::max(prev_end, a.end_s);
    }
  }
}

TEST_CASE("child speech lands at least 6 dB above adult speech on the child device") {
  auto s = generate_session(default_profiles(), 60.0, 5, SynthConfig{}, "s");
  const double child_db = mean_energy_db(s.child_channel, s.annotations, SpeakerLabel::child);
  const double adult_db = mean_energy_db(s.child_channel, s.annotations, SpeakerLabel::adult);
  CHECK(child_db - adult_db >= 6.0);
}

TEST_CASE("each speaker is louder on their own device") {
  for (std::uint64_t seed : {2ull, 9ull, 31ull}) {
    auto s = generate_session(default_profiles(), 60.0, seed, SynthConfig{}, "s");
    const double child_own = mean_energy_db(s.child_channel, s.annotations, SpeakerLabel::child);
    const double child_far = mean_energy_db(s.exam_channel, s.annotations, SpeakerLabel::child);
    const double adult_own = mean_energy_db(s.exam_channel, s.annotations, SpeakerLabel::adult);
    const double adult_far = mean_energy_db(s.child_channel, s.annotations, SpeakerLabel::adult);
    CHECK(child_own > child_far);
    CHECK(adult_own > adult_far);
  }
}

TEST_CASE("the annotation timeline matches the rendered audio") {
  auto s = generate_session(default_profiles(), 60.0, 13, SynthConfig{}, "s");
  const int sr = s.child_channel.sample_rate;
  const auto energy_db = [&](const Waveform& w, double t0, double t1) {
    const auto a = static_cast<std::int64_t>(t0 * sr);
    const auto b = std::min<std::int64_t>(static_cast<std::int64_t>(t1 * sr),
                                          static_cast<std::int64_t>(w.samples.size()));
    double acc = 0.0;
    for (std::int64_t i = a; i < b; ++i)
      acc += static_cast<double>(w.samples[static_cast<std::size_t>(i)]) *
             w.samples[static_cast<std::size_t>(i)];
    return 10.0 * std::log10(std::max(acc / static_cast<double>(std::max<std::int64_t>(b - a, 1)),
                                      1e-12));
  };

  // Interiors carry signal well above the -40 dB channel noise.
  for (const auto& a : s.annotations)
    CHECK(energy_db(s.child_channel, a.start_s + 0.01, a.end_s - 0.01) > -35.0);

  // Gaps between annotations carry only noise.
  double cursor = 0.0;
  int gaps = 0;
  for (const auto& a : s.annotations) {
    if (a.start_s - cursor > 0.1) {
      CHECK(energy_db(s.child_channel, cursor + 0.02, a.start_s - 0.02) < -35.0);
      CHECK(energy_db(s.exam_channel, cursor + 0.02, a.start_s - 0.02) < -35.0);
      ++gaps;
    }
    cursor = std::max(cursor, a.end_s);
  }
  CHECK(gaps > 3);
}

TEST_CASE("degenerate speaker profiles are rejected") {
  SynthProfiles bad = default_profiles();
  bad.child.f0_hz = 0.0;
  CHECK_THROWS_AS(generate_session(bad, 30.0, 1, SynthConfig{}, "s"), ContractError);
  CHECK_THROWS_AS(generate_session(default_profiles(), 5.0, 1, SynthConfig{}, "s"),
                  ContractError);
}

TEST_CASE("a ten-session corpus writes the expected file set") {
  auto dir = fresh_dir("egosc_corpus_files");
  CorpusConfig cfg;
  cfg.n_sessions = 10;
  cfg.session_duration_s = 30.0;
  cfg.seed = 7;
  auto manifest = generate_corpus(dir.string(), cfg);
  CHECK(manifest.size() == 10);

  int wavs = 0, csvs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() == ".wav") ++wavs;
    if (e.path().extension() == ".csv") ++csvs;
  }
  CHECK(wavs == 20);
  CHECK(csvs == 10);
  CHECK(fs::exists(dir / "manifest.jsonl"));

  auto loaded = load_corpus_manifest((dir / "manifest.jsonl").string());
  REQUIRE(loaded.size() == 10);
  std::set<std::string> ids;
  for (const auto& m : loaded) {
    ids.insert(m.session_id);
    CHECK(fs::exists(dir / m.child_channel_path));
    CHECK(fs::exists(dir / m.exam_channel_path));
    CHECK(fs::exists(dir / m.annotation_path));
  }
  CHECK(ids.size() == 10);
  fs::remove_all(dir);
}

TEST_CASE("an empty corpus is refused") {
  CorpusConfig cfg;
  cfg.n_sessions = 0;
  CHECK_THROWS_AS(generate_corpus(fresh_dir("egosc_corpus_zero").string(), cfg), ContractError);
}

TEST_CASE("annotation CSVs round-trip and use millisecond precision") {
  auto dir = fresh_dir("egosc_corpus_csv");
  CorpusConfig cfg;
  cfg.n_sessions = 1;
  cfg.session_duration_s = 60.0;
  cfg.seed = 21;
  auto manifest = generate_corpus(dir.string(), cfg);
  const auto csv = (dir / manifest[0].annotation_path).string();

  std::ifstream f(csv);
  std::string line;
  std::getline(f, line);
  CHECK(line == "session_id,start_s,end_s,label");
  const std::regex row("[^,]+,[0-9]+\\.[0-9]{3},[0-9]+\\.[0-9]{3},(child|adult|third_party|overlap)");
  int rows = 0;
  while (std::getline(f, line)) {
    CHECK(std::regex_match(line, row));
    ++rows;
  }
  CHECK(rows > 0);

  auto anns = load_annotations(csv);
  CHECK(static_cast<int>(anns.size()) == rows);
  for (const auto& a : anns) CHECK(a.session_id == manifest[0].session_id);
  fs::remove_all(dir);
}

TEST_CASE("per-session segment counts stay near the calibration target") {
  // One default-length session; the corpus is calibrated to ~424 child+adult
  // segments per 20 minutes, tolerance +/-30%.
  auto s = generate_session(default_profiles(), 1200.0, 77, SynthConfig{}, "s");
  int n = 0;
  for (const auto& a : s.annotations)
    if (a.label == SpeakerLabel::child || a.label == SpeakerLabel::adult) ++n;
  CHECK(n >= 297);
  CHECK(n <= 551);
}

TEST_CASE("pretrain corpus is deterministic with bounded durations") {
  auto d1 = fresh_dir("egosc_pre1");
  auto d2 = fresh_dir("egosc_pre2");
  PretrainCorpusConfig cfg;
  cfg.n_utterances = 20;
  cfg.seed = 9;
  auto p1 = generate_pretrain_corpus(d1.string(), cfg);
  auto p2 = generate_pretrain_corpus(d2.string(), cfg);
  REQUIRE(p1.size() == 20);
  REQUIRE(p2.size() == 20);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(fs::path(p1[i]).filename() == fs::path(p2[i]).filename());
    Waveform a = read_wav(p1[i]);
    Waveform b = read_wav(p2[i]);
    REQUIRE(a.samples.size() == b.samples.size());
    CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(float)) == 0);
    CHECK(a.duration_s() >= 1.0 - 1e-9);
    CHECK(a.duration_s() <= 10.0 + 1e-9);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("an all-adult pretrain corpus pitches below 200 Hz") {
  auto dir = fresh_dir("egosc_pre_adult");
  PretrainCorpusConfig cfg;
  cfg.n_utterances = 12;
  cfg.seed = 15;
  cfg.adult_fraction = 1.0;
  auto paths = generate_pretrain_corpus(dir.string(), cfg);
  for (const auto& p : paths) CHECK(median_f0(read_wav(p)) < 200.0);
  fs::remove_all(dir);
}

TEST_CASE("child voices pitch above adult voices") {
  Pcg32 rng(33);
  auto prof = default_profiles();
  Waveform child, adult;
  child.samples = synth_utterance(prof.child, 16000, 16000, rng);
  adult.samples = synth_utterance(prof.adult, 16000, 16000, rng);
  CHECK(median_f0(child) > 220.0);
  CHECK(median_f0(adult) < 160.0);
}
