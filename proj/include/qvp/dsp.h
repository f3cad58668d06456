#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qvp/audio.h"
#include "qvp/matrix.h"

namespace qvp {

/// Analysis window for square spectrograms: 96 ms at 44.1 kHz.
inline constexpr std::size_t kMelWindowSamples = 4233;
/// Log-power floor, 10*log10(1e-10).
inline constexpr double kLogFloorDb = -100.0;
inline constexpr double kPowerEpsilon = 1e-10;

inline constexpr std::size_t kDescriptorWindow = 2048;
inline constexpr std::size_t kDescriptorHop = 512;
inline constexpr std::size_t kNumMfcc = 13;
inline constexpr std::size_t kMfccMelBands = 40;
inline constexpr std::size_t kNumDescriptors = 20;
inline constexpr std::size_t kNumFunctionals = 5;
inline constexpr std::size_t kNumFeatures = kNumDescriptors * kNumFunctionals;
inline constexpr double kRolloffFraction = 0.85;

/// Square log-power mel image. Rows are mel bands (low to high), columns are
/// frames (time).
struct MelSpectrogram {
  std::size_t n_bands = 0;
  std::size_t hop_samples = 0;
  std::vector<double> values;  // row-major n_bands x n_bands

  double& at(std::size_t band, std::size_t frame) { return values[band * n_bands + frame]; }
  double at(std::size_t band, std::size_t frame) const { return values[band * n_bands + frame]; }

  friend bool operator==(const MelSpectrogram&, const MelSpectrogram&) = default;
};

bool is_valid_band_count(std::size_t n_bands);

/// Hann-windowed magnitude STFT. Frame k covers [k*hop, k*hop + window); the
/// signal is zero-padded past its end. FFT size is next_pow2(window).
/// Returns n_frames x (n_fft/2 + 1).
Matrix stft_magnitude(const AudioClip& clip, std::size_t window_samples, std::size_t hop_samples,
                      std::size_t n_frames);

/// Triangular mel filters (mel = 2595*log10(1 + f/700)), centers evenly spaced
/// on the mel axis over [0, sr/2], each row peak-normalized to 1.
/// Throws ConfigError if any filter would have no nonzero weight.
Matrix mel_filterbank(std::size_t n_fft_bins, std::size_t n_bands, double sample_rate);

/// Center frequency in Hz of each filter in mel_filterbank.
std::vector<double> mel_band_centers(std::size_t n_bands, double sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// N_b x N_b dB mel spectrogram of a 30000-sample clip, hop floor(30000/N_b).
MelSpectrogram mel_spectrogram(const AudioClip& clip, std::size_t n_bands);

/// Per-frame descriptor tracks in feature order: MFCC1..MFCC13 (MFCC1 is the
/// 0th cepstral coefficient), ZCR, centroid, spread, skewness, kurtosis,
/// flatness, roll-off. Frames are 2048 long with hop 512.
using DescriptorSeries = std::array<std::vector<double>, kNumDescriptors>;
DescriptorSeries descriptor_series(const AudioClip& clip);

/// mean, population std, min, max, IQR (linear-interpolation percentiles).
std::array<double, kNumFunctionals> apply_functionals(std::span<const double> series);

/// Percentile in [0, 100] with linear interpolation between order statistics.
double percentile(std::span<const double> values, double q);

/// 100 values; index 5*descriptor + functional.
std::vector<double> engineered_features(const AudioClip& clip);

/// "mfcc1_mean", ..., "rolloff_iqr" in feature order.
const std::vector<std::string>& feature_names();

/// Feature matrix of a dataset, one row per clip. Rows are computed
/// independently so the result does not depend on `jobs`.
Matrix feature_matrix(const UtteranceDataset& ds, int jobs = 1);

void write_feature_csv(const std::filesystem::path& path, const Matrix& features,
                       std::span<const int> labels, std::span<const std::string> names);

/// Per-feature affine normalization fitted on a training matrix.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // zero-variance columns stored as 1

  static Standardizer fit(const Matrix& train);
  Matrix apply(const Matrix& x) const;
  std::vector<double> apply(std::span<const double> row) const;
};

}  // namespace qvp
