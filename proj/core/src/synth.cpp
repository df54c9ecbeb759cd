#include "egosc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "egosc/tensor.hpp"

namespace egosc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string session_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03d", i);
  return buf;
}

SpeakerProfile jittered(const SpeakerProfile& p, double f0_jitter, double formant_jitter,
                        Pcg32& rng) {
  SpeakerProfile out = p;
  out.f0_hz = p.f0_hz * (1.0 + rng.uniform(-f0_jitter, f0_jitter));
  for (auto& f : out.formant_centers_hz) f *= 1.0 + rng.uniform(-formant_jitter, formant_jitter);
  return out;
}

struct Turn {
  int who;  // 0 adult, 1 child, 2 third party
  std::int64_t start_ms;
  std::int64_t end_ms;
  bool head_overlap = false;  // starts inside the previous turn
};

struct Piece {
  std::int64_t start_ms;
  std::int64_t end_ms;
  SpeakerLabel label;
  std::vector<int> speakers;
};

const SpeakerProfile& profile_for(const SynthProfiles& p, int who) {
  switch (who) {
    case 0: return p.adult;
    case 1: return p.child;
    default: return p.third_party;
  }
}

void add_into(Waveform& channel, std::int64_t start_sample, const std::vector<float>& u,
              double gain) {
  for (std::size_t i = 0; i < u.size(); ++i) {
    const std::size_t idx = static_cast<std::size_t>(start_sample) + i;
    if (idx >= channel.samples.size()) break;
    channel.samples[idx] += static_cast<float>(u[i] * gain);
  }
}

}  // namespace

const char* label_name(SpeakerLabel l) {
  switch (l) {
    case SpeakerLabel::adult: return "adult";
    case SpeakerLabel::child: return "child";
    case SpeakerLabel::third_party: return "third_party";
    case SpeakerLabel::overlap: return "overlap";
  }
  return "?";
}

SpeakerLabel parse_label(const std::string& s) {
  if (s == "adult") return SpeakerLabel::adult;
  if (s == "child") return SpeakerLabel::child;
  if (s == "third_party") return SpeakerLabel::third_party;
  if (s == "overlap") return SpeakerLabel::overlap;
  throw ContractError("unknown label: " + s);
}

SynthProfiles default_profiles() {
  SynthProfiles p;
  p.child = {300.0, {1100.0, 2900.0}, {90.0, 140.0}, -20.0};
  p.adult = {120.0, {600.0, 1700.0}, {80.0, 120.0}, -20.0};
  p.third_party = {200.0, {800.0, 2200.0}, {80.0, 130.0}, -20.0};
  return p;
}

std::vector<float> synth_utterance(const SpeakerProfile& profile, std::int64_t n_samples,
                                   int sample_rate, Pcg32& rng) {
  if (profile.f0_hz <= 0.0) throw ContractError("degenerate speaker profile: f0 <= 0");
  if (profile.formant_centers_hz.empty() ||
      profile.formant_centers_hz.size() != profile.formant_bandwidths_hz.size())
    throw ContractError("degenerate speaker profile: formants");

  // Phone-like targets a few times per second, linearly interpolated. Speech
  // moves between articulatory configurations; a statically filtered pulse
  // train would make every frame of an utterance statistically identical.
  const std::size_t nf = std::min<std::size_t>(profile.formant_centers_hz.size(), 3);
  std::vector<std::int64_t> knot_t{0};
  while (knot_t.back() < n_samples)
    knot_t.push_back(knot_t.back() +
                     std::max<std::int64_t>(1, std::llround(rng.uniform(0.10, 0.25) * sample_rate)));
  const std::size_t nk = knot_t.size();
  std::vector<double> f0_k(nk);
  std::vector<std::vector<double>> center_k(nf, std::vector<double>(nk));
  for (std::size_t k = 0; k < nk; ++k) {
    f0_k[k] = profile.f0_hz * std::exp(rng.uniform(-0.08, 0.08));
    for (std::size_t f = 0; f < nf; ++f)
      center_k[f][k] = profile.formant_centers_hz[f] * std::exp(rng.uniform(-0.18, 0.18));
  }
  auto interp = [&knot_t, nk](const std::vector<double>& v, std::int64_t t, std::size_t& seg) {
    while (seg + 2 < nk && t >= knot_t[seg + 1]) ++seg;
    const double a = static_cast<double>(t - knot_t[seg]) /
                     static_cast<double>(knot_t[seg + 1] - knot_t[seg]);
    return v[seg] + a * (v[seg + 1] - v[seg]);
  };

  std::vector<float> exc(static_cast<std::size_t>(n_samples), 0.0f);
  double pos = rng.uniform(0.0, sample_rate / f0_k[0]);
  std::size_t f0_seg = 0;
  while (pos < static_cast<double>(n_samples)) {
    exc[static_cast<std::size_t>(pos)] =
        static_cast<float>(1.0 + rng.uniform(-0.05, 0.05));
    const double f0 = interp(f0_k, static_cast<std::int64_t>(pos), f0_seg);
    pos += (sample_rate / f0) * (1.0 + rng.uniform(-0.02, 0.02));
  }

  // Glottal-style spectral tilt: a bare impulse train is spectrally flat,
  // which no voice is. Two leaky integrators give ~-12 dB/octave above the
  // corner so the formant peaks sit on a falling envelope.
  {
    const double a = std::exp(-2.0 * kPi * 150.0 / sample_rate);
    double s1 = 0.0, s2 = 0.0;
    for (auto& v : exc) {
      s1 = a * s1 + (1.0 - a) * v;
      s2 = a * s2 + (1.0 - a) * s1;
      v = static_cast<float>(s2);
    }
  }

  std::vector<double> out(static_cast<std::size_t>(n_samples), 0.0);
  static constexpr double kFormantWeight[3] = {1.0, 0.6, 0.35};
  for (std::size_t f = 0; f < nf; ++f) {
    const double R = std::exp(-kPi * profile.formant_bandwidths_hz[f] / sample_rate);
    const double b2 = R * R;
    std::size_t seg = 0;
    double y1 = 0.0, y2 = 0.0, b1 = 0.0;
    for (std::int64_t t = 0; t < n_samples; ++t) {
      // Coefficient refresh every 2 ms tracks the formant glide; the pole
      // radius stays fixed so the filter remains stable throughout.
      if ((t & 31) == 0)
        b1 = 2.0 * R * std::cos(2.0 * kPi * interp(center_k[f], t, seg) / sample_rate);
      const double y = exc[static_cast<std::size_t>(t)] + b1 * y1 - b2 * y2;
      out[static_cast<std::size_t>(t)] += kFormantWeight[f] * y;
      y2 = y1;
      y1 = y;
    }
  }

  double acc = 0.0;
  for (double v : out) acc += v * v;
  const double rms = std::sqrt(acc / std::max<std::int64_t>(n_samples, 1));
  const double gain = std::pow(10.0, profile.level_db / 20.0) / std::max(rms, 1e-9);

  const std::int64_t fade = std::min<std::int64_t>(sample_rate / 200, n_samples / 4);  // 5 ms
  std::vector<float> res(static_cast<std::size_t>(n_samples));
  for (std::int64_t t = 0; t < n_samples; ++t) {
    double g = gain;
    if (t < fade) g *= 0.5 - 0.5 * std::cos(kPi * t / fade);
    if (n_samples - 1 - t < fade) g *= 0.5 - 0.5 * std::cos(kPi * (n_samples - 1 - t) / fade);
    res[static_cast<std::size_t>(t)] = static_cast<float>(out[static_cast<std::size_t>(t)] * g);
  }
  return res;
}

SessionAudio generate_session(const SynthProfiles& profiles, double duration_s,
                              std::uint64_t seed, const SynthConfig& cfg,
                              const std::string& session_id) {
  if (duration_s < 10.0) throw ContractError("generate_session: duration must be >= 10 s");
  for (const SpeakerProfile* p : {&profiles.child, &profiles.adult, &profiles.third_party})
    if (p->f0_hz <= 0.0) throw ContractError("degenerate speaker profile: f0 <= 0");
  if (profiles.child.f0_hz <= profiles.adult.f0_hz)
    throw ContractError("child f0 must exceed adult f0");

  Pcg32 rng(seed);
  SynthProfiles sp;
  sp.child = jittered(profiles.child, cfg.session_f0_jitter, cfg.formant_jitter, rng);
  sp.adult = jittered(profiles.adult, cfg.session_f0_jitter, cfg.formant_jitter, rng);
  sp.third_party = jittered(profiles.third_party, cfg.session_f0_jitter, cfg.formant_jitter, rng);

  const std::int64_t dur_ms = std::llround(duration_s * 1000.0);
  auto pick_ms = [&rng](double lo, double hi) { return std::llround(rng.uniform(lo, hi) * 1000.0); };

  std::vector<Turn> turns;
  std::int64_t t = pick_ms(cfg.pause_min_s, cfg.pause_max_s);
  int cur = static_cast<int>(rng.below(2));
  while (true) {
    int who = cur;
    if (rng.next_double() < cfg.third_party_rate) {
      who = 2;
    } else {
      cur ^= 1;
    }
    const std::int64_t len = pick_ms(cfg.turn_min_s, cfg.turn_max_s);
    if (t + len + 200 > dur_ms) break;
    turns.push_back({who, t, t + len});
    t += len + pick_ms(cfg.pause_min_s, cfg.pause_max_s);
  }

  // Pull some turns forward so they start inside the previous turn.
  for (std::size_t i = 1; i < turns.size(); ++i) {
    if (rng.next_double() >= cfg.overlap_rate) continue;
    Turn& prev = turns[i - 1];
    Turn& next = turns[i];
    if (prev.who == 2 || next.who == 2) continue;
    const std::int64_t o = std::llround(rng.uniform(0.10, 0.25) * 1000.0);
    const std::int64_t prev_solo_start = prev.head_overlap ? turns[i - 2].end_ms : prev.start_ms;
    if (prev.end_ms - o - prev_solo_start < 250) continue;
    if (next.end_ms - prev.end_ms < 250) continue;
    next.start_ms = prev.end_ms - o;
    next.head_overlap = true;
  }

  // Cut each turn into solo/overlap pieces; every piece is one annotation
  // interval and is rendered exactly on that interval.
  std::vector<Piece> pieces;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Turn& turn = turns[i];
    const bool tail_overlap = i + 1 < turns.size() && turns[i + 1].head_overlap;
    const std::int64_t solo_start = turn.head_overlap ? turns[i - 1].end_ms : turn.start_ms;
    const std::int64_t solo_end = tail_overlap ? turns[i + 1].start_ms : turn.end_ms;
    if (turn.head_overlap)
      pieces.push_back({turn.start_ms, solo_start, SpeakerLabel::overlap,
                        {turns[i - 1].who, turn.who}});
    SpeakerLabel own = turn.who == 0   ? SpeakerLabel::adult
                       : turn.who == 1 ? SpeakerLabel::child
                                       : SpeakerLabel::third_party;
    pieces.push_back({solo_start, solo_end, own, {turn.who}});
  }
  std::sort(pieces.begin(), pieces.end(),
            [](const Piece& a, const Piece& b) { return a.start_ms < b.start_ms; });

  const std::int64_t n_samples = std::llround(duration_s * kPipelineRateHz);
  SessionAudio session;
  session.child_channel.sample_rate = kPipelineRateHz;
  session.child_channel.samples.assign(static_cast<std::size_t>(n_samples), 0.0f);
  session.exam_channel.sample_rate = kPipelineRateHz;
  session.exam_channel.samples.assign(static_cast<std::size_t>(n_samples), 0.0f);

  const double far = std::pow(10.0, -cfg.crosstalk_attenuation_db / 20.0);
  for (const Piece& piece : pieces) {
    const std::int64_t s0 = piece.start_ms * kPipelineRateHz / 1000;
    const std::int64_t s1 = piece.end_ms * kPipelineRateHz / 1000;
    for (int who : piece.speakers) {
      SpeakerProfile p = jittered(profile_for(sp, who), cfg.utterance_f0_jitter, 0.02, rng);
      const auto u = synth_utterance(p, s1 - s0, kPipelineRateHz, rng);
      const double child_gain = who == 1 ? 1.0 : far;
      const double exam_gain = who == 0 ? 1.0 : far;
      add_into(session.child_channel, s0, u, child_gain);
      add_into(session.exam_channel, s0, u, exam_gain);
    }
    session.annotations.push_back({session_id, piece.start_ms / 1000.0, piece.end_ms / 1000.0,
                                   piece.label});
  }

  const double noise = std::pow(10.0, cfg.noise_db / 20.0);
  Pcg32 noise_child(hash_seed(seed, 1001));
  Pcg32 noise_exam(hash_seed(seed, 1002));
  for (auto& s : session.child_channel.samples)
    s += static_cast<float>(noise * noise_child.gaussian());
  for (auto& s : session.exam_channel.samples)
    s += static_cast<float>(noise * noise_exam.gaussian());
  return session;
}

void write_annotations_csv(const std::string& path, const std::vector<SegmentAnnotation>& anns) {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot write annotations: " + path);
  os << "session_id,start_s,end_s,label\n";
  char buf[160];
  for (const auto& a : anns) {
    std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%s\n", a.session_id.c_str(), a.start_s, a.end_s,
                  label_name(a.label));
    os << buf;
  }
}

std::vector<SegmentAnnotation> load_annotations(const std::string& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw ContractError("cannot open annotations: " + csv_path);
  std::vector<SegmentAnnotation> out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("session_id,", 0) == 0) continue;
    }
    SegmentAnnotation a;
    std::size_t p0 = line.find(',');
    std::size_t p1 = line.find(',', p0 + 1);
    std::size_t p2 = line.find(',', p1 + 1);
    if (p0 == std::string::npos || p1 == std::string::npos || p2 == std::string::npos)
      throw ContractError("bad annotation row: " + line);
    a.session_id = line.substr(0, p0);
    a.start_s = std::stod(line.substr(p0 + 1, p1 - p0 - 1));
    a.end_s = std::stod(line.substr(p1 + 1, p2 - p1 - 1));
    a.label = parse_label(line.substr(p2 + 1));
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<SessionManifest> generate_corpus(const std::string& out_dir, const CorpusConfig& cfg) {
  if (cfg.n_sessions <= 0) throw ContractError("generate_corpus: need at least one session");
  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "sessions", ec);
  if (ec) throw ContractError("cannot create output directory: " + out_dir);

  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw ContractError("cannot write manifest under: " + out_dir);

  std::vector<SessionManifest> result;
  for (int i = 0; i < cfg.n_sessions; ++i) {
    const std::string sid = session_name(i);
    const std::uint64_t seed_i = hash_seed(cfg.seed, static_cast<std::uint64_t>(i));
    SessionAudio audio =
        generate_session(cfg.profiles, cfg.session_duration_s, seed_i, cfg.synth, sid);

    SessionManifest m;
    m.session_id = sid;
    m.child_channel_path = "sessions/" + sid + "_child.wav";
    m.exam_channel_path = "sessions/" + sid + "_exam.wav";
    m.annotation_path = "sessions/" + sid + "_annotations.csv";
    m.duration_s = cfg.session_duration_s;
    m.seed = seed_i;

    write_wav((root / m.child_channel_path).string(), audio.child_channel);
    write_wav((root / m.exam_channel_path).string(), audio.exam_channel);
    write_annotations_csv((root / m.annotation_path).string(), audio.annotations);

    json rec = {{"session_id", m.session_id},
                {"child_channel_path", m.child_channel_path},
                {"exam_channel_path", m.exam_channel_path},
                {"annotation_path", m.annotation_path},
                {"duration_s", m.duration_s},
                {"seed", m.seed}};
    manifest << rec.dump() << "\n";
    result.push_back(std::move(m));
  }
  return result;
}

std::vector<SessionManifest> load_corpus_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw ContractError("cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<SessionManifest> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    SessionManifest m;
    m.session_id = rec.at("session_id").get<std::string>();
    m.child_channel_path = (base / rec.at("child_channel_path").get<std::string>()).string();
    m.exam_channel_path = (base / rec.at("exam_channel_path").get<std::string>()).string();
    m.annotation_path = (base / rec.at("annotation_path").get<std::string>()).string();
    m.duration_s = rec.at("duration_s").get<double>();
    m.seed = rec.at("seed").get<std::uint64_t>();
    out.push_back(std::move(m));
  }
  if (out.empty()) throw ContractError("empty corpus manifest: " + manifest_path);
  return out;
}

std::vector<std::string> generate_pretrain_corpus(const std::string& out_dir,
                                                  const PretrainCorpusConfig& cfg) {
  if (cfg.n_utterances < 1) throw ContractError("generate_pretrain_corpus: need n >= 1");
  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw ContractError("cannot create output directory: " + out_dir);
  std::ofstream listing(root / "listing.jsonl");

  std::vector<std::string> paths;
  for (int i = 0; i < cfg.n_utterances; ++i) {
    Pcg32 rng(hash_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    const bool adult_like = rng.next_double() < cfg.adult_fraction;
    SpeakerProfile base = adult_like ? cfg.profiles.adult : cfg.profiles.child;
    SpeakerProfile p = jittered(base, cfg.synth.session_f0_jitter, cfg.synth.formant_jitter, rng);
    const double dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
    const std::int64_t n = std::llround(dur * kPipelineRateHz);
    Waveform w;
    w.sample_rate = kPipelineRateHz;
    w.samples = synth_utterance(p, n, kPipelineRateHz, rng);

    char name[32];
    std::snprintf(name, sizeof name, "utt_%05d.wav", i);
    const std::string path = (root / name).string();
    write_wav(path, w);
    listing << json({{"path", name}, {"duration_s", dur}}).dump() << "\n";
    paths.push_back(path);
  }
  return paths;
}

}  // namespace egosc
