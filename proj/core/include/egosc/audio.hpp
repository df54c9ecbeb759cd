#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace egosc {

constexpr int kPipelineRateHz = 16000;

class AudioError : public std::runtime_error {
 public:
  enum class Kind { io, bad_header, unsupported_encoding, multichannel, empty_audio };

  AudioError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kPipelineRateHz;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

// PCM16 mono RIFF/WAVE only; other encodings raise typed AudioErrors.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Reads [start_sample, start_sample + count) without loading the whole file.
// The window is clipped to the file length.
Waveform read_wav_window(const std::string& path, std::int64_t start_sample, std::int64_t count);

Waveform resample_linear(const Waveform& w, int target_hz);

// Per-frame log-energy in dB (rectangular window, mean-square, floored at
// -80 dB). Frames shorter than the signal only; empty when it does not fit.
std::vector<float> frame_log_energy(const Waveform& w, double frame_ms = 25.0,
                                    double hop_ms = 10.0);

// Per-frame spectral flatness (Hann window, geometric over arithmetic mean
// of the magnitude spectrum), in [0,1]; all-zero frames report 1.0.
std::vector<float> spectral_flatness(const Waveform& w, double frame_ms = 25.0,
                                     double hop_ms = 10.0);

// In-place radix-2 FFT on interleaved re/im pairs; n must be a power of two.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

}  // namespace egosc
