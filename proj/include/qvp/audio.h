#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qvp {

inline constexpr int kSampleRate = 44100;
/// Length of every utterance fed to the feature extractors (0.68 s).
inline constexpr std::size_t kClipSamples = 30000;
inline constexpr int kNumClasses = 4;

enum class DrumClass : int { kKick = 0, kSnare = 1, kHhClosed = 2, kHhOpened = 3 };

/// Canonical spelling used in file names and annotation files.
std::string_view class_name(int class_id);
/// Returns the class id for one of the four canonical names, or nullopt.
std::optional<int> class_from_name(std::string_view name);

/// Mono buffer at 44.1 kHz.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Pads with zeros or trims the tail so the clip has exactly `length` samples.
AudioClip fix_length(AudioClip clip, std::size_t length = kClipSamples);

struct OnsetAnnotation {
  double onset_time = 0.0;  // seconds
  int label = 0;
};

enum class Split { kTrain, kTest };

/// "original" or "augmented(<transform>)".
using Provenance = std::string;

struct UtteranceDataset {
  std::vector<AudioClip> clips;
  std::vector<int> labels;
  std::string participant_id;
  Split split = Split::kTrain;
  std::vector<Provenance> provenance;

  std::size_t size() const { return clips.size(); }
  void push_back(AudioClip clip, int label, Provenance tag);
  /// Throws ContractError when the dataset invariants do not hold.
  void validate() const;
};

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

/// Reads a RIFF/WAVE file (PCM16 or float32, mono or stereo, 44.1 kHz).
/// Stereo is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);
AudioClip parse_wav(const std::vector<std::uint8_t>& bytes);

/// Writes PCM16 mono. Samples are clamped to [-1, 1] and quantized with
/// round-half-away-from-zero.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

/// Maps non-canonical label spellings onto the four canonical names.
using LabelAliases = std::map<std::string, std::string>;

/// Reads "alias,canonical" rows ('#' comments allowed).
LabelAliases read_label_aliases(const std::filesystem::path& path);

/// Parses "seconds,label" rows. Blank lines and lines starting with '#' are
/// skipped; row numbers in error messages count every physical line from 1.
/// When `default_label` is set the label column is optional and ignored.
std::vector<OnsetAnnotation> parse_onsets_csv(std::string_view text,
                                              std::optional<int> default_label = std::nullopt,
                                              const LabelAliases& aliases = {});
std::vector<OnsetAnnotation> read_onsets_csv(const std::filesystem::path& path,
                                             std::optional<int> default_label = std::nullopt,
                                             const LabelAliases& aliases = {});
void write_onsets_csv(const std::filesystem::path& path,
                      const std::vector<OnsetAnnotation>& onsets);

/// Cuts one 30000-sample window per onset. A window stops early at the next
/// onset and is zero-padded to full length.
std::vector<std::pair<AudioClip, int>> segment_by_onsets(
    const AudioClip& clip, const std::vector<OnsetAnnotation>& annotations);

// ---------------------------------------------------------------------------
// Participant layout
// ---------------------------------------------------------------------------
//
//   <dir>/kick.wav       <dir>/kick.csv
//   <dir>/snare.wav      <dir>/snare.csv
//   <dir>/hh_closed.wav  <dir>/hh_closed.csv
//   <dir>/hh_opened.wav  <dir>/hh_opened.csv
//   <dir>/improv.wav     <dir>/improv.csv      (onset,label rows)
//   <dir>/labels.map     optional alias table for improv.csv labels

struct ParticipantData {
  UtteranceDataset train;
  UtteranceDataset test;
};

ParticipantData load_participant(const std::filesystem::path& dir);

/// Writes a participant directory. Utterances are laid out back to back with
/// `spacing_samples` between onsets; the test split becomes improv.wav.
void write_participant(const std::filesystem::path& dir, const ParticipantData& data,
                       std::size_t spacing_samples = 33075);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthOptions {
  /// Test-split hi-hats take a decay blended toward the other hi-hat class
  /// by a fraction drawn uniformly from [0, hihat_blend] (log-domain).
  /// Zero keeps the two hi-hats cleanly separated.
  double hihat_blend = 0.0;
};

/// Deterministic stand-in for one participant: percussive recipes per class
/// with seeded jitter. The test split is drawn with an independent stream.
ParticipantData generate_synthetic(std::uint64_t seed, std::size_t n_per_class,
                                   const SynthOptions& options = {});

}  // namespace qvp
