#pragma once

#include <optional>
#include <vector>

#include "egosc/audio.hpp"

namespace egosc {

struct VadParams {
  double energy_threshold_db = -15.0;  // relative to session median energy
  double flatness_threshold = 0.7;
  double min_speech_ms = 100.0;
  double min_gap_ms = 150.0;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
};

struct SpeechSegment {
  double start_s = 0.0;
  double end_s = 0.0;
};

// A frame is speech when its energy clears the session-median-relative
// threshold and its spectral flatness stays below the noise bound. Gaps
// shorter than min_gap_ms are bridged, then runs shorter than
// min_speech_ms are dropped.
std::vector<SpeechSegment> detect_speech(const Waveform& w, const VadParams& params);

// Pre-training exclusion rule: recordings shorter than min_duration_s are
// rejected outright (returns nullopt); otherwise segments pass through.
std::optional<std::vector<SpeechSegment>> apply_exclusion(std::vector<SpeechSegment> segments,
                                                          double duration_s,
                                                          double min_duration_s = 300.0);

}  // namespace egosc
