#include "egosc/vad.hpp"

#include <algorithm>
#include <cmath>

#include "egosc/tensor.hpp"

namespace egosc {

std::vector<SpeechSegment> detect_speech(const Waveform& w, const VadParams& params) {
  if (params.min_speech_ms <= 0.0) throw ContractError("vad: min_speech_ms must be > 0");
  if (!std::isfinite(params.energy_threshold_db) || !std::isfinite(params.flatness_threshold))
    throw ContractError("vad: thresholds must be finite");

  const auto energy = frame_log_energy(w, params.frame_ms, params.hop_ms);
  const auto flatness = spectral_flatness(w, params.frame_ms, params.hop_ms);
  if (energy.empty()) return {};

  std::vector<float> sorted(energy);
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  const double cutoff = median + params.energy_threshold_db;

  const std::size_t n = energy.size();
  std::vector<std::uint8_t> active(n);
  for (std::size_t t = 0; t < n; ++t)
    active[t] = energy[t] > cutoff && flatness[t] < params.flatness_threshold;

  const double hop_s = params.hop_ms * 1e-3;
  const double frame_s = params.frame_ms * 1e-3;
  const std::int64_t max_gap = std::llround(params.min_gap_ms / params.hop_ms);
  const std::int64_t min_run = std::llround(params.min_speech_ms / params.hop_ms);

  // Bridge short gaps, then drop short runs.
  std::int64_t last_active = -1;
  for (std::size_t t = 0; t < n; ++t) {
    if (!active[t]) continue;
    if (last_active >= 0 && static_cast<std::int64_t>(t) - last_active <= max_gap)
      for (std::int64_t k = last_active + 1; k < static_cast<std::int64_t>(t); ++k) active[k] = 1;
    last_active = static_cast<std::int64_t>(t);
  }

  std::vector<SpeechSegment> out;
  std::size_t t = 0;
  const double duration = w.duration_s();
  while (t < n) {
    if (!active[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < n && active[e]) ++e;
    if (static_cast<std::int64_t>(e - t) >= min_run) {
      SpeechSegment seg;
      seg.start_s = static_cast<double>(t) * hop_s;
      seg.end_s = std::min(static_cast<double>(e - 1) * hop_s + frame_s, duration);
      out.push_back(seg);
    }
    t = e;
  }
  return out;
}

std::optional<std::vector<SpeechSegment>> apply_exclusion(std::vector<SpeechSegment> segments,
                                                          double duration_s,
                                                          double min_duration_s) {
  if (duration_s < 0.0) throw ContractError("apply_exclusion: negative duration");
  if (duration_s < min_duration_s) return std::nullopt;
  return segments;
}

}  // namespace egosc
