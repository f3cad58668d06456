#include "qvp/audio.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "qvp/error.h"
#include "qvp/random.h"

namespace qvp {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {"kick", "snare", "hh_closed",
                                                                   "hh_opened"};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Little-endian cursor over the WAV byte buffer.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw ParseError("truncated WAV: " + std::string(what) + " at byte offset " +
                       std::to_string(pos_));
    }
  }
  std::string tag() {
    require(4, "chunk id");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return s;
  }
  std::uint16_t u16() {
    require(2, "16-bit field");
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    require(4, "32-bit field");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  void skip(std::size_t n) { pos_ += std::min(n, remaining()); }
  const std::uint8_t* data() const { return bytes_.data() + pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_tag(std::vector<std::uint8_t>& out, std::string_view tag) {
  out.insert(out.end(), tag.begin(), tag.end());
}

}  // namespace

std::string_view class_name(int class_id) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw ContractError("class id out of range: " + std::to_string(class_id));
  }
  return kClassNames[static_cast<std::size_t>(class_id)];
}

std::optional<int> class_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

AudioClip fix_length(AudioClip clip, std::size_t length) {
  clip.samples.resize(length, 0.0);
  return clip;
}

void UtteranceDataset::push_back(AudioClip clip, int label, Provenance tag) {
  clips.push_back(std::move(clip));
  labels.push_back(label);
  provenance.push_back(std::move(tag));
}

void UtteranceDataset::validate() const {
  if (clips.size() != labels.size() || clips.size() != provenance.size()) {
    throw ContractError("dataset '" + participant_id + "': clips, labels and provenance differ in length");
  }
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].size() != kClipSamples) {
      throw ContractError("dataset '" + participant_id + "': clip " + std::to_string(i) +
                          " is not " + std::to_string(kClipSamples) + " samples");
    }
    if (labels[i] < 0 || labels[i] >= kNumClasses) {
      throw ContractError("dataset '" + participant_id + "': label out of range at " +
                          std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

AudioClip parse_wav(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.tag() != "RIFF") throw ParseError("not a RIFF file (byte offset 0)");
  r.u32();
  if (r.tag() != "WAVE") throw ParseError("not a WAVE file (byte offset 8)");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;

  while (r.remaining() > 0) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      r.require(16, "fmt chunk");
      const std::size_t start = r.offset();
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      if (format == 0xFFFE && size >= 40) {
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the subformat GUID
      }
      r.skip(size - (r.offset() - start) + (size & 1));
      have_fmt = true;
      continue;
    }
    if (id != "data") {
      r.skip(size + (size & 1));
      continue;
    }
    if (!have_fmt) throw ParseError("data chunk before fmt chunk at byte offset " + std::to_string(r.offset()));
    if (format != 1 && format != 3) throw FormatError("unsupported format: audio_format");
    if ((format == 1 && bits != 16) || (format == 3 && bits != 32)) {
      throw FormatError("unsupported format: bits_per_sample");
    }
    if (channels != 1 && channels != 2) throw FormatError("unsupported format: channels");
    if (rate != static_cast<std::uint32_t>(kSampleRate)) throw FormatError("unsupported format: sample_rate");

    const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
    if (size % frame_bytes != 0) {
      throw ParseError("data chunk size is not a whole number of frames at byte offset " +
                       std::to_string(r.offset() - 4));
    }
    r.require(size, "data chunk");
    const std::size_t frames = size / frame_bytes;
    AudioClip clip;
    clip.samples.resize(frames);
    const std::uint8_t* p = r.data();
    for (std::size_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        if (format == 1) {
          std::int16_t v = 0;
          std::memcpy(&v, p, 2);  // little-endian host assumed
          acc += static_cast<double>(v) / 32768.0;
          p += 2;
        } else {
          float v = 0.0f;
          std::memcpy(&v, p, 4);
          acc += static_cast<double>(v);
          p += 4;
        }
      }
      clip.samples[f] = acc / channels;
    }
    return clip;
  }
  throw ParseError(have_fmt ? "truncated WAV: missing data chunk at byte offset " + std::to_string(r.offset())
                            : "truncated WAV: missing fmt chunk at byte offset " + std::to_string(r.offset()));
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(std::string(e.what()) + " (" + path.string() + ")");
  } catch (const ParseError& e) {
    throw ParseError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double x : clip.samples) {
    const double scaled = std::round(std::clamp(x, -1.0, 1.0) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

LabelAliases read_label_aliases(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  LabelAliases aliases;
  std::istringstream in(text);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_fields(t);
    if (fields.size() != 2 || !class_from_name(fields[1])) {
      throw ParseError("bad alias row " + std::to_string(row) + " in " + path.string());
    }
    aliases[fields[0]] = fields[1];
  }
  return aliases;
}

std::vector<OnsetAnnotation> parse_onsets_csv(std::string_view text, std::optional<int> default_label,
                                              const LabelAliases& aliases) {
  std::vector<OnsetAnnotation> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int row = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_fields(t);
    const auto time = parse_double(fields[0]);
    if (!time) {
      // Tolerate a single header line such as "seconds,label".
      if (!seen_data && out.empty() && (fields[0] == "seconds" || fields[0] == "onset" || fields[0] == "time")) {
        seen_data = true;
        continue;
      }
      throw ParseError("bad onset time '" + fields[0] + "' at row " + std::to_string(row));
    }
    seen_data = true;
    if (*time < 0.0) throw ParseError("negative onset time at row " + std::to_string(row));
    OnsetAnnotation a;
    a.onset_time = *time;
    if (default_label) {
      a.label = *default_label;
    } else {
      if (fields.size() < 2 || fields[1].empty()) {
        throw ParseError("missing label at row " + std::to_string(row));
      }
      std::string name = fields[1];
      if (auto it = aliases.find(name); it != aliases.end()) name = it->second;
      const auto id = class_from_name(name);
      if (!id) throw ParseError("unknown label '" + fields[1] + "' at row " + std::to_string(row));
      a.label = *id;
    }
    if (!out.empty() && a.onset_time <= out.back().onset_time) {
      throw ParseError("onset times not strictly increasing at row " + std::to_string(row));
    }
    out.push_back(a);
  }
  return out;
}

std::vector<OnsetAnnotation> read_onsets_csv(const std::filesystem::path& path, std::optional<int> default_label,
                                             const LabelAliases& aliases) {
  const std::string text = read_text(path);
  try {
    return parse_onsets_csv(text, default_label, aliases);
  } catch (const ParseError& e) {
    throw ParseError(std::string(e.what()) + " in " + path.string());
  }
}

void write_onsets_csv(const std::filesystem::path& path, const std::vector<OnsetAnnotation>& onsets) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& a : onsets) out << a.onset_time << ',' << class_name(a.label) << '\n';
}

std::vector<std::pair<AudioClip, int>> segment_by_onsets(const AudioClip& clip,
                                                         const std::vector<OnsetAnnotation>& annotations) {
  std::vector<std::size_t> starts;
  starts.reserve(annotations.size());
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const double pos = std::round(annotations[i].onset_time * kSampleRate);
    if (annotations[i].onset_time < 0.0 || pos >= static_cast<double>(clip.size())) {
      throw DataError("onset beyond end of file at annotation index " + std::to_string(i));
    }
    starts.push_back(static_cast<std::size_t>(pos));
    if (i > 0 && starts[i] <= starts[i - 1]) {
      throw DataError("onsets not strictly increasing at annotation index " + std::to_string(i));
    }
  }

  std::vector<std::pair<AudioClip, int>> out;
  out.reserve(annotations.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    std::size_t end = std::min(starts[i] + kClipSamples, clip.size());
    if (i + 1 < starts.size()) end = std::min(end, starts[i + 1]);
    AudioClip seg;
    seg.samples.assign(kClipSamples, 0.0);
    std::copy(clip.samples.begin() + static_cast<std::ptrdiff_t>(starts[i]),
              clip.samples.begin() + static_cast<std::ptrdiff_t>(end), seg.samples.begin());
    out.emplace_back(std::move(seg), annotations[i].label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Participant layout
// ---------------------------------------------------------------------------

ParticipantData load_participant(const std::filesystem::path& dir) {
  ParticipantData data;
  const std::string pid = dir.filename().empty() ? dir.parent_path().filename().string()
                                                 : dir.filename().string();
  data.train.participant_id = pid;
  data.train.split = Split::kTrain;
  data.test.participant_id = pid;
  data.test.split = Split::kTest;

  for (int c = 0; c < kNumClasses; ++c) {
    const std::string stem(class_name(c));
    const AudioClip audio = read_wav(dir / (stem + ".wav"));
    const auto onsets = read_onsets_csv(dir / (stem + ".csv"), c);
    for (auto& [seg, label] : segment_by_onsets(audio, onsets)) {
      data.train.push_back(std::move(seg), label, "original");
    }
  }

  LabelAliases aliases;
  if (std::filesystem::exists(dir / "labels.map")) aliases = read_label_aliases(dir / "labels.map");
  const AudioClip improv = read_wav(dir / "improv.wav");
  const auto onsets = read_onsets_csv(dir / "improv.csv", std::nullopt, aliases);
  for (auto& [seg, label] : segment_by_onsets(improv, onsets)) {
    data.test.push_back(std::move(seg), label, "original");
  }
  return data;
}

namespace {

void write_sequence(const std::filesystem::path& wav, const std::filesystem::path& csv,
                    const std::vector<const AudioClip*>& clips, const std::vector<int>& labels,
                    std::size_t spacing) {
  AudioClip joined;
  std::vector<OnsetAnnotation> onsets;
  joined.samples.assign(clips.empty() ? 0 : spacing * (clips.size() - 1) + kClipSamples, 0.0);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::size_t start = i * spacing;
    const auto& s = clips[i]->samples;
    const std::size_t n = std::min(s.size(), spacing);
    std::copy(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(n),
              joined.samples.begin() + static_cast<std::ptrdiff_t>(start));
    onsets.push_back({static_cast<double>(start) / kSampleRate, labels[i]});
  }
  write_wav(wav, joined);
  write_onsets_csv(csv, onsets);
}

}  // namespace

void write_participant(const std::filesystem::path& dir, const ParticipantData& data,
                       std::size_t spacing_samples) {
  std::filesystem::create_directories(dir);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<const AudioClip*> clips;
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (data.train.labels[i] != c) continue;
      clips.push_back(&data.train.clips[i]);
      labels.push_back(c);
    }
    const std::string stem(class_name(c));
    write_sequence(dir / (stem + ".wav"), dir / (stem + ".csv"), clips, labels, spacing_samples);
  }
  std::vector<const AudioClip*> clips;
  for (const auto& c : data.test.clips) clips.push_back(&c);
  write_sequence(dir / "improv.wav", dir / "improv.csv", clips, data.test.labels, spacing_samples);
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double jitter(Rng& rng, double value) { return value * uniform_real(rng, 0.9, 1.1); }

void peak_normalize(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    for (double& v : x) v *= peak / m;
  }
}

std::vector<double> white_noise(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = uniform_real(rng, -1.0, 1.0);
  return x;
}

std::vector<double> one_pole_highpass(const std::vector<double>& x, double cutoff_hz) {
  const double rc = 1.0 / (kTwoPi * cutoff_hz);
  const double dt = 1.0 / kSampleRate;
  const double a = rc / (rc + dt);
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t i = 1; i < x.size(); ++i) y[i] = a * (y[i - 1] + x[i] - x[i - 1]);
  return y;
}

// decay_scale multiplies the hi-hat decay (used for blended test hi-hats).
AudioClip synth_utterance(int cls, Rng& rng, double decay_override_s = 0.0) {
  const std::size_t n = kClipSamples;
  std::vector<double> x(n, 0.0);
  const double dt = 1.0 / kSampleRate;
  switch (cls) {
    case 0: {
      const double f0 = jitter(rng, 120.0);
      const double f1 = jitter(rng, 60.0);
      const double sweep = jitter(rng, 0.150);
      const double tau = jitter(rng, 0.060);
      double phase = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        const double f = f0 * std::pow(f1 / f0, std::min(t, sweep) / sweep);
        x[i] = std::sin(phase) * std::exp(-t / tau);
        phase += kTwoPi * f * dt;
      }
      break;
    }
    case 1: {
      const double f = jitter(rng, 200.0);
      const double tau_tone = jitter(rng, 0.040);
      const double tau_noise = jitter(rng, 0.080);
      const auto noise = white_noise(rng, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        x[i] = 0.5 * std::sin(kTwoPi * f * t) * std::exp(-t / tau_tone) +
               0.5 * noise[i] * std::exp(-t / tau_noise);
      }
      break;
    }
    default: {
      const double cutoff = jitter(rng, 6000.0);
      const double tau = decay_override_s > 0.0 ? jitter(rng, decay_override_s)
                                                : jitter(rng, cls == 2 ? 0.030 : 0.250);
      const auto noise = one_pole_highpass(white_noise(rng, n), cutoff);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        x[i] = noise[i] * std::exp(-t / tau);
      }
      break;
    }
  }
  peak_normalize(x, 0.5);
  const double gain_db = uniform_real(rng, -3.0, 3.0);
  const double gain = std::pow(10.0, gain_db / 20.0);
  for (double& v : x) v *= gain;
  AudioClip clip;
  clip.samples = std::move(x);
  return clip;
}

}  // namespace

ParticipantData generate_synthetic(std::uint64_t seed, std::size_t n_per_class, const SynthOptions& options) {
  if (n_per_class < 1) throw ContractError("generate_synthetic: n_per_class must be >= 1");
  ParticipantData data;
  data.train.participant_id = "synthetic-" + std::to_string(seed);
  data.train.split = Split::kTrain;
  data.test.participant_id = data.train.participant_id;
  data.test.split = Split::kTest;

  Rng train_rng = make_rng(seed, 0);
  for (int c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      data.train.push_back(synth_utterance(c, train_rng), c, "original");
    }
  }

  Rng test_rng = make_rng(seed, 1);
  std::vector<int> order;
  for (int c = 0; c < kNumClasses; ++c) order.insert(order.end(), n_per_class, c);
  std::shuffle(order.begin(), order.end(), test_rng);
  for (int c : order) {
    double decay = 0.0;
    if (c >= 2 && options.hihat_blend > 0.0) {
      const double own = c == 2 ? 0.030 : 0.250;
      const double other = c == 2 ? 0.250 : 0.030;
      const double u = uniform_real(test_rng, 0.0, options.hihat_blend);
      decay = std::exp((1.0 - u) * std::log(own) + u * std::log(other));
    }
    data.test.push_back(synth_utterance(c, test_rng, decay), c, "original");
  }
  return data;
}

}  // namespace qvp
