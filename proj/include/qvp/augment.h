#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qvp/audio.h"
#include "qvp/dsp.h"
#include "qvp/random.h"

namespace qvp {

// ---------------------------------------------------------------------------
// Waveform transforms. Every output is a 30000-sample clip clamped to [-1, 1].
// ---------------------------------------------------------------------------

inline constexpr std::size_t kVocoderFft = 2048;
inline constexpr std::size_t kVocoderHop = 512;

/// Phase-vocoder stretch of an arbitrary-length signal. rate > 1 shortens.
/// Output has round(x.size() / rate) samples.
std::vector<double> phase_vocoder(const std::vector<double>& x, double rate);

/// Shifts pitch by `semitones` keeping duration: stretch by 2^(s/12), then
/// linear-interpolation resampling back to the original length.
AudioClip pitch_shift(const AudioClip& clip, double semitones);

/// Changes duration keeping pitch, then pads/trims back to 30000 samples.
AudioClip time_stretch(const AudioClip& clip, double rate);

/// Voss-McCartney pink noise with 16 rows, peak-normalized to 1.
std::vector<double> pink_noise(std::size_t n, Rng& rng);

/// Adds pink noise whose peak amplitude equals `factor`.
AudioClip add_pink_noise(const AudioClip& clip, double factor, Rng& rng);

// ---------------------------------------------------------------------------
// Spectrogram transforms.
// ---------------------------------------------------------------------------

struct MaskBand {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct MaskDraw {
  std::vector<MaskBand> freq;  // masked rows (mel bands)
  std::vector<MaskBand> time;  // masked columns (frames)
};

/// Upper bound on masks per axis: floor(2*N_b/8).
std::size_t max_mask_count(std::size_t n_bands);
/// Upper bound on mask width: ceil(N_b/3).
std::size_t max_mask_width(std::size_t n_bands);

MaskDraw draw_masks(std::size_t n_bands, Rng& rng);
MelSpectrogram apply_masks(MelSpectrogram spec, const MaskDraw& draw);
/// Frequency and time zero-masking; masked cells take the log floor (-100 dB).
MelSpectrogram mask_spectrogram(const MelSpectrogram& spec, Rng& rng);

/// Maximum warp displacement W = max(1, floor(N_b/8)).
std::size_t max_warp(std::size_t n_bands);
/// Piecewise-linear time warp moving column `pivot` to `pivot + displacement`.
MelSpectrogram warp_spectrogram(const MelSpectrogram& spec, std::size_t pivot, long displacement);
MelSpectrogram warp_spectrogram(const MelSpectrogram& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Dataset expansion.
// ---------------------------------------------------------------------------

enum class TransformKind { kPitchShift, kTimeStretch, kPinkNoise, kMask, kWarp };

struct TransformSpec {
  TransformKind kind;
  double parameter = 0.0;  // semitones, rate or noise factor; unused for kMask/kWarp

  bool is_waveform() const {
    return kind == TransformKind::kPitchShift || kind == TransformKind::kTimeStretch ||
           kind == TransformKind::kPinkNoise;
  }
  std::string name() const;
};

struct AugmentationPlan {
  std::vector<TransformSpec> transforms;
  std::size_t copies_per_transform = 1;
  std::uint64_t rng_seed = 0;
  /// Allows parameters outside the published sets.
  bool allow_override = false;

  /// Throws ConfigError on out-of-set parameters (unless overridden).
  void validate() const;
  bool empty() const { return transforms.empty() || copies_per_transform == 0; }

  /// pitch +-1 st, stretch 0.85/1.15, pink noise 0.005/0.01.
  static AugmentationPlan waveform_default(std::uint64_t seed);
  /// frequency/time masking and time warping.
  static AugmentationPlan spectrogram_default(std::uint64_t seed);
};

struct SpectrogramDataset {
  std::vector<MelSpectrogram> specs;
  std::vector<int> labels;
  std::string participant_id;
  std::vector<Provenance> provenance;

  std::size_t size() const { return specs.size(); }
};

SpectrogramDataset spectrogram_dataset(const UtteranceDataset& ds, std::size_t n_bands, int jobs = 1);

/// Originals first, then for each original (in order) each transform spec's
/// copies. Clip i draws from the substream derive_seed(plan.rng_seed, i), so
/// the result is independent of `jobs`.
UtteranceDataset expand_dataset(const UtteranceDataset& ds, const AugmentationPlan& plan, int jobs = 1);
SpectrogramDataset expand_dataset(const SpectrogramDataset& ds, const AugmentationPlan& plan, int jobs = 1);

}  // namespace qvp
