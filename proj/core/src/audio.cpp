#include "egosc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "egosc/tensor.hpp"

namespace egosc {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct WavLayout {
  int sample_rate = 0;
  std::int64_t data_offset = 0;
  std::int64_t n_samples = 0;
};

std::uint32_t rd_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t rd_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

// Scans RIFF chunks up to the data chunk; validates PCM16 mono.
WavLayout scan_wav(std::ifstream& is, const std::string& path) {
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw AudioError(AudioError::Kind::bad_header, "not a RIFF file: " + path);
  rd_u32(is);  // riff size, unused
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw AudioError(AudioError::Kind::bad_header, "not a WAVE file: " + path);

  WavLayout lay;
  bool have_fmt = false;
  std::uint16_t bits = 0;
  while (is.read(tag, 4)) {
    const std::uint32_t size = rd_u32(is);
    if (!is) throw AudioError(AudioError::Kind::bad_header, "truncated chunk: " + path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw AudioError(AudioError::Kind::bad_header, "short fmt chunk: " + path);
      const std::uint16_t format = rd_u16(is);
      const std::uint16_t channels = rd_u16(is);
      lay.sample_rate = static_cast<int>(rd_u32(is));
      rd_u32(is);  // byte rate
      rd_u16(is);  // block align
      bits = rd_u16(is);
      if (format != 1)
        throw AudioError(AudioError::Kind::unsupported_encoding,
                         "unsupported encoding (want PCM): " + path);
      if (channels != 1)
        throw AudioError(AudioError::Kind::multichannel, "multichannel file: " + path);
      if (bits != 16)
        throw AudioError(AudioError::Kind::unsupported_encoding,
                         "unsupported bit depth (want 16): " + path);
      is.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw AudioError(AudioError::Kind::bad_header, "data before fmt: " + path);
      lay.data_offset = static_cast<std::int64_t>(is.tellg());
      lay.n_samples = static_cast<std::int64_t>(size) / 2;
      if (lay.n_samples == 0) throw AudioError(AudioError::Kind::empty_audio, "empty audio: " + path);
      if (lay.sample_rate <= 0)
        throw AudioError(AudioError::Kind::bad_header, "bad sample rate: " + path);
      return lay;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw AudioError(AudioError::Kind::bad_header, "missing data chunk: " + path);
}

std::vector<float> read_pcm16(std::ifstream& is, std::int64_t count) {
  std::vector<std::int16_t> raw(static_cast<std::size_t>(count));
  is.read(reinterpret_cast<char*>(raw.data()), count * 2);
  if (!is) throw AudioError(AudioError::Kind::bad_header, "truncated sample data");
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]) / 32768.0f;
  return out;
}

std::int64_t frame_len_samples(const Waveform& w, double ms) {
  return std::llround(ms * 1e-3 * w.sample_rate);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw AudioError(AudioError::Kind::io, "cannot open: " + path);
  const WavLayout lay = scan_wav(is, path);
  Waveform w;
  w.sample_rate = lay.sample_rate;
  w.samples = read_pcm16(is, lay.n_samples);
  return w;
}

Waveform read_wav_window(const std::string& path, std::int64_t start_sample, std::int64_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw AudioError(AudioError::Kind::io, "cannot open: " + path);
  const WavLayout lay = scan_wav(is, path);
  const std::int64_t s0 = std::clamp<std::int64_t>(start_sample, 0, lay.n_samples);
  const std::int64_t s1 = std::clamp<std::int64_t>(start_sample + count, s0, lay.n_samples);
  Waveform w;
  w.sample_rate = lay.sample_rate;
  if (s1 > s0) {
    is.seekg(lay.data_offset + s0 * 2, std::ios::beg);
    w.samples = read_pcm16(is, s1 - s0);
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  if (w.samples.empty()) throw AudioError(AudioError::Kind::empty_audio, "empty audio: " + path);
  if (w.sample_rate <= 0) throw AudioError(AudioError::Kind::bad_header, "bad sample rate");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw AudioError(AudioError::Kind::io, "cannot open for write: " + path);

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  auto wr_u32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto wr_u16 = [&os](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };

  os.write("RIFF", 4);
  wr_u32(36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(16);
  wr_u16(1);  // PCM
  wr_u16(1);  // mono
  wr_u32(static_cast<std::uint32_t>(w.sample_rate));
  wr_u32(static_cast<std::uint32_t>(w.sample_rate * 2));
  wr_u16(2);
  wr_u16(16);
  os.write("data", 4);
  wr_u32(data_bytes);

  std::vector<std::int16_t> raw(w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double q = std::nearbyint(static_cast<double>(w.samples[i]) * 32768.0);
    raw[i] = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
  if (!os) throw AudioError(AudioError::Kind::io, "write failed: " + path);
}

Waveform resample_linear(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw AudioError(AudioError::Kind::bad_header, "bad target rate");
  if (target_hz == w.sample_rate) return w;
  const std::int64_t in_len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t out_len =
      std::llround(static_cast<double>(in_len) * target_hz / w.sample_rate);
  Waveform out;
  out.sample_rate = target_hz;
  out.samples.resize(static_cast<std::size_t>(out_len));
  const double step = static_cast<double>(w.sample_rate) / target_hz;
  for (std::int64_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const std::int64_t i0 = std::min<std::int64_t>(static_cast<std::int64_t>(pos), in_len - 1);
    const std::int64_t i1 = std::min<std::int64_t>(i0 + 1, in_len - 1);
    const double frac = pos - static_cast<double>(i0);
    out.samples[static_cast<std::size_t>(i)] = static_cast<float>(
        (1.0 - frac) * w.samples[static_cast<std::size_t>(i0)] +
        frac * w.samples[static_cast<std::size_t>(i1)]);
  }
  return out;
}

std::vector<float> frame_log_energy(const Waveform& w, double frame_ms, double hop_ms) {
  const std::int64_t flen = frame_len_samples(w, frame_ms);
  const std::int64_t hop = frame_len_samples(w, hop_ms);
  if (flen < hop || hop <= 0) throw ContractError("frame_energy: need frame_ms >= hop_ms > 0");
  const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  std::vector<float> out;
  if (n < flen) return out;
  const std::int64_t n_frames = (n - flen) / hop + 1;
  out.reserve(static_cast<std::size_t>(n_frames));
  for (std::int64_t t = 0; t < n_frames; ++t) {
    const float* x = w.samples.data() + t * hop;
    double acc = 0.0;
    for (std::int64_t i = 0; i < flen; ++i) acc += static_cast<double>(x[i]) * x[i];
    const double mean_sq = std::max(acc / static_cast<double>(flen), 1e-8);
    out.push_back(static_cast<float>(10.0 * std::log10(mean_sq)));
  }
  return out;
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n)
    throw ContractError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double xr = re[b] * cr - im[b] * ci;
        const double xi = re[b] * ci + im[b] * cr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

std::vector<float> spectral_flatness(const Waveform& w, double frame_ms, double hop_ms) {
  const std::int64_t flen = frame_len_samples(w, frame_ms);
  const std::int64_t hop = frame_len_samples(w, hop_ms);
  if (flen < hop || hop <= 0) throw ContractError("spectral_flatness: need frame_ms >= hop_ms > 0");
  const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  std::vector<float> out;
  if (n < flen) return out;

  std::size_t nfft = 1;
  while (nfft < static_cast<std::size_t>(flen)) nfft <<= 1;
  std::vector<double> hann(static_cast<std::size_t>(flen));
  for (std::int64_t i = 0; i < flen; ++i)
    hann[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(flen - 1));

  const std::int64_t n_frames = (n - flen) / hop + 1;
  out.reserve(static_cast<std::size_t>(n_frames));
  std::vector<double> re(nfft), im(nfft);
  constexpr double eps = 1e-12;
  for (std::int64_t t = 0; t < n_frames; ++t) {
    const float* x = w.samples.data() + t * hop;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::int64_t i = 0; i < flen; ++i)
      re[static_cast<std::size_t>(i)] = static_cast<double>(x[i]) * hann[static_cast<std::size_t>(i)];
    fft_inplace(re, im);
    const std::size_t nbins = nfft / 2 + 1;
    double log_sum = 0.0, lin_sum = 0.0;
    for (std::size_t k = 0; k < nbins; ++k) {
      const double mag = std::sqrt(re[k] * re[k] + im[k] * im[k]) + eps;
      log_sum += std::log(mag);
      lin_sum += mag;
    }
    const double gm = std::exp(log_sum / static_cast<double>(nbins));
    const double am = lin_sum / static_cast<double>(nbins);
    out.push_back(static_cast<float>(std::clamp(gm / am, 0.0, 1.0)));
  }
  return out;
}

}  // namespace egosc
