#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egosc/audio.hpp"
#include "egosc/rng.hpp"

namespace egosc {

enum class SpeakerLabel { adult = 0, child = 1, third_party = 2, overlap = 3 };

const char* label_name(SpeakerLabel l);
SpeakerLabel parse_label(const std::string& s);

struct SpeakerProfile {
  double f0_hz = 0.0;
  std::vector<double> formant_centers_hz;
  std::vector<double> formant_bandwidths_hz;
  double level_db = -20.0;  // target RMS, dB full scale
};

struct SynthProfiles {
  SpeakerProfile child;
  SpeakerProfile adult;
  SpeakerProfile third_party;
};

SynthProfiles default_profiles();

struct SegmentAnnotation {
  std::string session_id;
  double start_s = 0.0;
  double end_s = 0.0;
  SpeakerLabel label = SpeakerLabel::adult;
};

struct SessionManifest {
  std::string session_id;
  std::string child_channel_path;
  std::string exam_channel_path;
  std::string annotation_path;
  double duration_s = 0.0;
  std::uint64_t seed = 0;
};

struct SynthConfig {
  double crosstalk_attenuation_db = 10.0;
  double noise_db = -40.0;
  double turn_min_s = 0.5;
  double turn_max_s = 4.0;
  double pause_min_s = 0.2;
  double pause_max_s = 2.0;
  double overlap_rate = 0.08;
  double third_party_rate = 0.05;
  double session_f0_jitter = 0.15;
  double utterance_f0_jitter = 0.03;
  double formant_jitter = 0.10;
};

struct SessionAudio {
  Waveform child_channel;
  Waveform exam_channel;
  std::vector<SegmentAnnotation> annotations;
};

// One dyadic session: alternating child/examiner turns with pauses, optional
// overlaps and third-party interjections, rendered onto two time-aligned
// device channels. The wearer's speech lands at profile level on their own
// device and attenuated on the other one.
SessionAudio generate_session(const SynthProfiles& profiles, double duration_s,
                              std::uint64_t seed, const SynthConfig& cfg,
                              const std::string& session_id = "session");

struct CorpusConfig {
  int n_sessions = 10;
  double session_duration_s = 1200.0;
  std::uint64_t seed = 1;
  SynthConfig synth;
  SynthProfiles profiles = default_profiles();
};

// Writes WAV pairs, per-session annotation CSVs and a line-delimited
// manifest under out_dir; paths in the manifest are relative to it.
std::vector<SessionManifest> generate_corpus(const std::string& out_dir, const CorpusConfig& cfg);

struct PretrainCorpusConfig {
  int n_utterances = 2000;
  std::uint64_t seed = 1;
  double adult_fraction = 0.8;
  double min_duration_s = 1.0;
  double max_duration_s = 10.0;
  SynthProfiles profiles = default_profiles();
  SynthConfig synth;
};

// Unlabeled single-speaker utterances for self-supervised training, plus a
// listing file. Returns the written WAV paths.
std::vector<std::string> generate_pretrain_corpus(const std::string& out_dir,
                                                  const PretrainCorpusConfig& cfg);

// Harmonic pulse source with jitter shaped by parallel two-pole formant
// resonators, RMS-normalized to level_db.
std::vector<float> synth_utterance(const SpeakerProfile& profile, std::int64_t n_samples,
                                   int sample_rate, Pcg32& rng);

std::vector<SessionManifest> load_corpus_manifest(const std::string& manifest_path);
std::vector<SegmentAnnotation> load_annotations(const std::string& csv_path);
void write_annotations_csv(const std::string& path, const std::vector<SegmentAnnotation>& anns);

}  // namespace egosc
