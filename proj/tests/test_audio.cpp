#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "doctest.h"
#include "egosc/audio.hpp"
#include "egosc/rng.hpp"
#include "egosc/tensor.hpp"

using namespace egosc;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Waveform sine(double hz, double seconds, int rate, float amp = 0.5f) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::int64_t>(seconds * rate);
  w.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w.samples[static_cast<std::size_t>(i)] =
        amp * static_cast<float>(std::sin(2.0 * std::numbers::pi * hz * i / rate));
  return w;
}

// Hand-rolled header so the error paths can be exercised without a second
// audio library: PCM16, configurable channels and format tag.
void write_raw_wav(const std::string& path, std::uint16_t format, std::uint16_t channels,
                   std::uint32_t rate, const std::vector<std::int16_t>& frames) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&f](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames.size() * 2);
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * 2);
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  f.write("data", 4);
  u32(data_bytes);
  f.write(reinterpret_cast<const char*>(frames.data()), data_bytes);
}

}  // namespace

TEST_CASE("sine survives a write/read round trip within one quantization step") {
  const auto path = tmp_path("egosc_sine.wav");
  Waveform w = sine(440.0, 1.0, 16000);
  write_wav(path, w);
  Waveform back = read_wav(path);
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == 16000);
  float worst = 0.0f;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
  CHECK(worst <= 1.0f / 32768.0f);
  std::filesystem::remove(path);
}

TEST_CASE("zero-sample file raises the empty-audio error") {
  const auto path = tmp_path("egosc_empty.wav");
  write_raw_wav(path, 1, 1, 16000, {});
  try {
    read_wav(path);
    FAIL("expected AudioError");
  } catch (const AudioError& e) {
    CHECK(e.kind() == AudioError::Kind::empty_audio);
  }
  std::filesystem::remove(path);
}

TEST_CASE("an 8 kHz file reports its own rate") {
  const auto path = tmp_path("egosc_8k.wav");
  write_wav(path, sine(100.0, 0.25, 8000));
  CHECK(read_wav(path).sample_rate == 8000);
  std::filesystem::remove(path);
}

TEST_CASE("error kinds distinguish header, encoding, and channel problems") {
  const auto path = tmp_path("egosc_bad.wav");
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a riff file at all";
  }
  try {
    read_wav(path);
    FAIL("expected AudioError");
  } catch (const AudioError& e) {
    CHECK(e.kind() == AudioError::Kind::bad_header);
  }

  write_raw_wav(path, 3, 1, 16000, std::vector<std::int16_t>(64, 0));  // IEEE float tag
  try {
    read_wav(path);
    FAIL("expected AudioError");
  } catch (const AudioError& e) {
    CHECK(e.kind() == AudioError::Kind::unsupported_encoding);
  }

  write_raw_wav(path, 1, 2, 16000, std::vector<std::int16_t>(64, 0));
  try {
    read_wav(path);
    FAIL("expected AudioError");
  } catch (const AudioError& e) {
    CHECK(e.kind() == AudioError::Kind::multichannel);
  }

  try {
    read_wav(tmp_path("egosc_nonexistent_file.wav"));
    FAIL("expected AudioError");
  } catch (const AudioError& e) {
    CHECK(e.kind() == AudioError::Kind::io);
  }
  std::filesystem::remove(path);
}

TEST_CASE("windowed reads clip to the file length") {
  const auto path = tmp_path("egosc_window.wav");
  Waveform w = sine(440.0, 0.5, 16000);
  write_wav(path, w);
  Waveform full = read_wav(path);
  Waveform mid = read_wav_window(path, 1000, 200);
  REQUIRE(mid.samples.size() == 200);
  for (std::size_t i = 0; i < 200; ++i) CHECK(mid.samples[i] == full.samples[1000 + i]);
  Waveform tail = read_wav_window(path, 7900, 1000);
  CHECK(tail.samples.size() == 100);
  std::filesystem::remove(path);
}

TEST_CASE("same-rate resampling is the identity") {
  Waveform w = sine(440.0, 0.2, 16000);
  Waveform r = resample_linear(w, 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(r.samples[i] == w.samples[i]);
}

TEST_CASE("constant signals stay constant across rates") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples.assign(4000, 0.5f);
  Waveform r = resample_linear(w, 16000);
  CHECK(r.sample_rate == 16000);
  CHECK(r.samples.size() == 8000);
  for (float v : r.samples) CHECK(v == doctest::Approx(0.5f).epsilon(1e-7));
}

TEST_CASE("upsampled sine tracks the analytic waveform") {
  Waveform w = sine(100.0, 1.0, 8000);
  Waveform r = resample_linear(w, 16000);
  double err = 0.0;
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    const double ref = 0.5 * std::sin(2.0 * std::numbers::pi * 100.0 * t);
    err += (r.samples[i] - ref) * (r.samples[i] - ref);
  }
  CHECK(std::sqrt(err / static_cast<double>(r.samples.size())) < 1e-3);
}

TEST_CASE("silence sits at the energy floor with unit flatness") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0f);
  auto e = frame_log_energy(w);
  auto f = spectral_flatness(w);
  REQUIRE(!e.empty());
  REQUIRE(f.size() == e.size());
  for (float v : e) CHECK(v == doctest::Approx(-80.0f));
  for (float v : f) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("white noise is spectrally flat, a sine is not") {
  double noise_mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Pcg32 rng(seed);
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(16000);
    for (auto& v : w.samples) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    auto f = spectral_flatness(w);
    double m = 0.0;
    for (float x : f) m += x;
    noise_mean += m / static_cast<double>(f.size());
  }
  CHECK(noise_mean / 10.0 > 0.5);

  auto f = spectral_flatness(sine(440.0, 1.0, 16000));
  double m = 0.0;
  for (float x : f) m += x;
  CHECK(m / static_cast<double>(f.size()) < 0.1);
}

TEST_CASE("flatness stays inside the unit interval") {
  Pcg32 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(4000);
    for (auto& v : w.samples) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float x : spectral_flatness(w)) {
      CHECK(x >= 0.0f);
      CHECK(x <= 1.0f);
    }
  }
}

TEST_CASE("energy shifts along with the signal") {
  Pcg32 rng(123);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(8000);
  for (auto& v : w.samples) v = static_cast<float>(rng.uniform(-0.8, 0.8));

  Waveform delayed;
  delayed.sample_rate = 16000;
  const std::size_t hop = 160;  // 10 ms
  delayed.samples.assign(hop, 0.0f);
  delayed.samples.insert(delayed.samples.end(), w.samples.begin(), w.samples.end());

  auto e0 = frame_log_energy(w);
  auto e1 = frame_log_energy(delayed);
  REQUIRE(e1.size() >= e0.size());
  for (std::size_t i = 0; i + 1 < e0.size(); ++i)
    CHECK(std::abs(e1[i + 1] - e0[i]) < 1e-6f);
}

TEST_CASE("frames longer than the signal produce no output") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(200, 0.1f);  // 12.5 ms, shorter than the 25 ms frame
  CHECK(frame_log_energy(w).empty());
  CHECK(spectral_flatness(w).empty());
}

TEST_CASE("frame parameters are validated") {
  Waveform w = sine(440.0, 0.5, 16000);
  CHECK_THROWS_AS(frame_log_energy(w, 10.0, 25.0), ContractError);
  CHECK_THROWS_AS(spectral_flatness(w, 25.0, 0.0), ContractError);
}
