#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "egosc/rng.hpp"
#include "egosc/synth.hpp"
#include "egosc/tensor.hpp"
#include "egosc/vad.hpp"

using namespace egosc;

namespace {

constexpr int kSr = kPipelineRateHz;

void add_noise(Waveform& w, double level_db, std::uint64_t seed) {
  Pcg32 rng(seed);
  const double amp = std::pow(10.0, level_db / 20.0);
  for (auto& v : w.samples) v += static_cast<float>(rng.gaussian() * amp);
}

void place_vowel(Waveform& w, const SpeakerProfile& prof, double t0, double t1,
                 std::uint64_t seed) {
  Pcg32 rng(seed);
  const auto n = static_cast<std::int64_t>((t1 - t0) * kSr);
  auto v = synth_utterance(prof, n, kSr, rng);
  const auto off = static_cast<std::size_t>(t0 * kSr);
  for (std::size_t i = 0; i < v.size(); ++i) w.samples[off + i] += v[i];
}

double covered(const std::vector<SpeechSegment>& segs) {
  double t = 0.0;
  for (const auto& s : segs) t += s.end_s - s.start_s;
  return t;
}

}  // namespace

TEST_CASE("digital silence detects nothing") {
  Waveform w;
  w.sample_rate = kSr;
  w.samples.assign(2 * kSr, 0.0f);
  CHECK(detect_speech(w, VadParams{}).empty());
}

TEST_CASE("a single vowel is localized within 50 ms") {
  Waveform w;
  w.sample_rate = kSr;
  w.samples.assign(2 * kSr, 0.0f);
  place_vowel(w, default_profiles().adult, 0.5, 1.5, 4);
  add_noise(w, -40.0, 5);
  auto segs = detect_speech(w, VadParams{});
  REQUIRE(segs.size() == 1);
  CHECK(std::abs(segs[0].start_s - 0.5) <= 0.05);
  CHECK(std::abs(segs[0].end_s - 1.5) <= 0.05);
}

TEST_CASE("gaps shorter than the hangover merge into one segment") {
  Waveform w;
  w.sample_rate = kSr;
  w.samples.assign(3 * kSr, 0.0f);
  place_vowel(w, default_profiles().adult, 0.5, 1.3, 6);
  place_vowel(w, default_profiles().adult, 1.34, 2.2, 7);  // 40 ms apart
  add_noise(w, -40.0, 8);
  VadParams p;
  p.min_gap_ms = 100.0;
  auto segs = detect_speech(w, p);
  CHECK(segs.size() == 1);
}

TEST_CASE("detections are sorted, disjoint, and inside the recording") {
  auto s = generate_session(default_profiles(), 60.0, 19, SynthConfig{}, "s");
  for (const Waveform* w : {&s.child_channel, &s.exam_channel}) {
    auto segs = detect_speech(*w, VadParams{});
    REQUIRE(!segs.empty());
    double prev = 0.0;
    for (const auto& seg : segs) {
      CHECK(seg.start_s >= prev - 1e-9);
      CHECK(seg.start_s < seg.end_s);
      CHECK(seg.end_s <= w->duration_s() + 1e-9);
      prev = seg.end_s;
    }
  }
}

TEST_CASE("re-detecting on detected speech keeps nearly all of it") {
  auto s = generate_session(default_profiles(), 120.0, 23, SynthConfig{}, "s");
  auto segs = detect_speech(s.child_channel, VadParams{});
  REQUIRE(!segs.empty());

  Waveform speech_only;
  speech_only.sample_rate = kSr;
  for (const auto& seg : segs) {
    const auto a = static_cast<std::size_t>(seg.start_s * kSr);
    const auto b = static_cast<std::size_t>(seg.end_s * kSr);
    speech_only.samples.insert(speech_only.samples.end(), s.child_channel.samples.begin() + a,
                               s.child_channel.samples.begin() + b);
  }
  auto again = detect_speech(speech_only, VadParams{});
  CHECK(covered(again) >= 0.95 * speech_only.duration_s());
}

TEST_CASE("frame-level recall and precision clear the bar on synthetic sessions") {
  double recall_sum = 0.0, precision_sum = 0.0;
  const int n_sessions = 10;
  for (std::uint64_t seed = 1; seed <= n_sessions; ++seed) {
    auto s = generate_session(default_profiles(), 60.0, seed, SynthConfig{}, "s");
    auto segs = detect_speech(s.child_channel, VadParams{});

    // 10 ms ground-truth grid from the union of all annotated speech.
    const int n_frames = static_cast<int>(s.child_channel.duration_s() * 100.0);
    std::vector<std::uint8_t> truth(static_cast<std::size_t>(n_frames), 0);
    for (const auto& a : s.annotations) {
      const int f0 = static_cast<int>(a.start_s * 100.0);
      const int f1 = std::min(n_frames, static_cast<int>(a.end_s * 100.0));
      for (int f = f0; f < f1; ++f) truth[static_cast<std::size_t>(f)] = 1;
    }
    std::vector<std::uint8_t> det(static_cast<std::size_t>(n_frames), 0);
    for (const auto& seg : segs) {
      const int f0 = static_cast<int>(seg.start_s * 100.0);
      const int f1 = std::min(n_frames, static_cast<int>(seg.end_s * 100.0));
      for (int f = f0; f < f1; ++f) det[static_cast<std::size_t>(f)] = 1;
    }
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int f = 0; f < n_frames; ++f) {
      tp += truth[static_cast<std::size_t>(f)] && det[static_cast<std::size_t>(f)];
      fp += !truth[static_cast<std::size_t>(f)] && det[static_cast<std::size_t>(f)];
      fn += truth[static_cast<std::size_t>(f)] && !det[static_cast<std::size_t>(f)];
    }
    recall_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
    precision_sum += static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  CHECK(recall_sum / n_sessions >= 0.95);
  CHECK(precision_sum / n_sessions >= 0.90);
}

TEST_CASE("short recordings are excluded from pre-training") {
  std::vector<SpeechSegment> segs{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(!apply_exclusion(segs, 299.0, 300.0).has_value());

  auto kept = apply_exclusion(segs, 301.0, 300.0);
  REQUIRE(kept.has_value());
  REQUIRE(kept->size() == 2);
  CHECK((*kept)[0].start_s == 1.0);
  CHECK((*kept)[1].end_s == 4.0);

  // Session mode: exclusion disabled.
  auto session = apply_exclusion(segs, 10.0, 0.0);
  CHECK(session.has_value());
}

TEST_CASE("vad parameters are validated") {
  Waveform w;
  w.sample_rate = kSr;
  w.samples.assign(kSr, 0.0f);
  VadParams p;
  p.min_speech_ms = 0.0;
  CHECK_THROWS_AS(detect_speech(w, p), ContractError);
}
