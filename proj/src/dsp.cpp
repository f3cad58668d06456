#include "qvp/dsp.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "qvp/error.h"
#include "qvp/fft.h"
#include "qvp/parallel.h"

namespace qvp {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

bool is_valid_band_count(std::size_t n_bands) { return n_bands == 8 || n_bands == 12 || n_bands == 16; }

Matrix stft_magnitude(const AudioClip& clip, std::size_t window_samples, std::size_t hop_samples,
                      std::size_t n_frames) {
  if (window_samples < 1) throw ContractError("stft_magnitude: window_samples must be >= 1");
  const std::size_t n_fft = next_pow2(window_samples);
  const auto window = hann_window(window_samples);
  Matrix out(n_frames, n_fft / 2 + 1);
  std::vector<double> frame(window_samples);
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t start = k * hop_samples;
    for (std::size_t i = 0; i < window_samples; ++i) {
      const std::size_t s = start + i;
      frame[i] = s < clip.size() ? clip.samples[s] * window[i] : 0.0;
    }
    const auto spec = rfft(frame, n_fft);
    auto row = out.row(k);
    for (std::size_t b = 0; b < spec.size(); ++b) row[b] = std::abs(spec[b]);
  }
  return out;
}

std::vector<double> mel_band_centers(std::size_t n_bands, double sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(n_bands);
  for (std::size_t m = 0; m < n_bands; ++m) {
    centers[m] = mel_to_hz(top * static_cast<double>(m + 1) / static_cast<double>(n_bands + 1));
  }
  return centers;
}

Matrix mel_filterbank(std::size_t n_fft_bins, std::size_t n_bands, double sample_rate) {
  if (n_bands < 1) throw ConfigError("mel_filterbank: n_bands must be >= 1");
  if (n_fft_bins < 2) throw ConfigError("mel_filterbank: need at least 2 FFT bins");
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_bands + 1));
  }
  const std::size_t n_fft = 2 * (n_fft_bins - 1);
  Matrix fb(n_bands, n_fft_bins);
  for (std::size_t m = 0; m < n_bands; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    double peak = 0.0;
    for (std::size_t k = 0; k < n_fft_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb(m, k) = w;
      peak = std::max(peak, w);
    }
    if (peak <= 0.0) {
      throw ConfigError("mel_filterbank: " + std::to_string(n_bands) + " bands is too many for " +
                        std::to_string(n_fft_bins) + " FFT bins (filter " + std::to_string(m) + " is empty)");
    }
    for (std::size_t k = 0; k < n_fft_bins; ++k) fb(m, k) /= peak;
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, std::size_t n_bands) {
  if (clip.size() != kClipSamples) {
    throw ContractError("mel_spectrogram: clip must have " + std::to_string(kClipSamples) + " samples, got " +
                        std::to_string(clip.size()));
  }
  if (n_bands < 1) throw ConfigError("mel_spectrogram: n_bands must be >= 1");
  MelSpectrogram spec;
  spec.n_bands = n_bands;
  spec.hop_samples = kClipSamples / n_bands;
  spec.values.assign(n_bands * n_bands, 0.0);

  const Matrix mag = stft_magnitude(clip, kMelWindowSamples, spec.hop_samples, n_bands);
  const Matrix fb = mel_filterbank(mag.cols(), n_bands, kSampleRate);
  for (std::size_t t = 0; t < n_bands; ++t) {
    const auto frame = mag.row(t);
    for (std::size_t m = 0; m < n_bands; ++m) {
      const auto w = fb.row(m);
      double power = 0.0;
      for (std::size_t k = 0; k < frame.size(); ++k) power += w[k] * frame[k] * frame[k];
      spec.at(m, t) = 10.0 * std::log10(power + kPowerEpsilon);
    }
  }
  return spec;
}

namespace {

const Matrix& mfcc_filterbank() {
  static const Matrix fb = mel_filterbank(kDescriptorWindow / 2 + 1, kMfccMelBands, kSampleRate);
  return fb;
}

// Orthonormal DCT-II basis, rows are output coefficients 0..kNumMfcc-1.
const Matrix& dct_basis() {
  static const Matrix basis = [] {
    const std::size_t n = kMfccMelBands;
    Matrix b(kNumMfcc, n);
    for (std::size_t k = 0; k < kNumMfcc; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (std::size_t i = 0; i < n; ++i) {
        b(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * i + 1.0) / (2.0 * n));
      }
    }
    return b;
  }();
  return basis;
}

struct SpectralShape {
  double centroid = 0.0, spread = 0.0, skewness = 0.0, kurtosis = 0.0, flatness = 1.0, rolloff = 0.0;
};

SpectralShape spectral_shape(std::span<const double> mag, double bin_hz) {
  SpectralShape s;
  double sum_m = 0.0, sum_p = 0.0;
  for (double m : mag) {
    sum_m += m;
    sum_p += m * m;
  }
  if (sum_m <= 0.0) return s;

  double c = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) c += static_cast<double>(k) * bin_hz * mag[k];
  c /= sum_m;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    const double d = static_cast<double>(k) * bin_hz - c;
    const double w = mag[k] / sum_m;
    m2 += d * d * w;
    m3 += d * d * d * w;
    m4 += d * d * d * d * w;
  }
  s.centroid = c;
  s.spread = std::sqrt(m2);
  if (m2 > 0.0) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.kurtosis = m4 / (m2 * m2);
  }

  bool has_zero = false;
  double log_sum = 0.0;
  for (double m : mag) {
    const double p = m * m;
    if (p <= 0.0) {
      has_zero = true;
      break;
    }
    log_sum += std::log(p);
  }
  const double n = static_cast<double>(mag.size());
  s.flatness = has_zero ? 0.0 : std::exp(log_sum / n) / (sum_p / n);

  const double target = kRolloffFraction * sum_p;
  double cum = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    cum += mag[k] * mag[k];
    if (cum >= target) {
      s.rolloff = static_cast<double>(k) * bin_hz;
      break;
    }
  }
  return s;
}

}  // namespace

DescriptorSeries descriptor_series(const AudioClip& clip) {
  const std::size_t n = clip.size();
  const std::size_t n_frames = (n + kDescriptorHop - 1) / kDescriptorHop;
  const Matrix mag = stft_magnitude(clip, kDescriptorWindow, kDescriptorHop, n_frames);
  const Matrix& fb = mfcc_filterbank();
  const Matrix& dct = dct_basis();
  const double bin_hz = static_cast<double>(kSampleRate) / static_cast<double>(kDescriptorWindow);

  DescriptorSeries out;
  for (auto& s : out) s.resize(n_frames);
  std::vector<double> log_mel(kMfccMelBands);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const auto frame = mag.row(t);
    for (std::size_t m = 0; m < kMfccMelBands; ++m) {
      const auto w = fb.row(m);
      double power = 0.0;
      for (std::size_t k = 0; k < frame.size(); ++k) power += w[k] * frame[k] * frame[k];
      log_mel[m] = std::log(power + kPowerEpsilon);
    }
    for (std::size_t c = 0; c < kNumMfcc; ++c) {
      const auto b = dct.row(c);
      out[c][t] = std::inner_product(b.begin(), b.end(), log_mel.begin(), 0.0);
    }

    const std::size_t start = t * kDescriptorHop;
    std::size_t crossings = 0;
    auto sample = [&](std::size_t i) { return start + i < n ? clip.samples[start + i] : 0.0; };
    for (std::size_t i = 1; i < kDescriptorWindow; ++i) {
      if ((sample(i) >= 0.0) != (sample(i - 1) >= 0.0)) ++crossings;
    }
    out[13][t] = static_cast<double>(crossings) / static_cast<double>(kDescriptorWindow - 1);

    const SpectralShape s = spectral_shape(frame, bin_hz);
    out[14][t] = s.centroid;
    out[15][t] = s.spread;
    out[16][t] = s.skewness;
    out[17][t] = s.kurtosis;
    out[18][t] = s.flatness;
    out[19][t] = s.rolloff;
  }
  return out;
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw ContractError("percentile: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

std::array<double, kNumFunctionals> apply_functionals(std::span<const double> series) {
  if (series.empty()) throw ContractError("apply_functionals: empty series");
  const double n = static_cast<double>(series.size());
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
  double var = 0.0;
  for (double x : series) var += (x - mean) * (x - mean);
  var /= n;
  const auto [mn, mx] = std::minmax_element(series.begin(), series.end());
  return {mean, std::sqrt(var), *mn, *mx, percentile(series, 75.0) - percentile(series, 25.0)};
}

std::vector<double> engineered_features(const AudioClip& clip) {
  const DescriptorSeries series = descriptor_series(clip);
  std::vector<double> out;
  out.reserve(kNumFeatures);
  for (const auto& s : series) {
    const auto f = apply_functionals(s);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> descriptors;
    for (std::size_t i = 1; i <= kNumMfcc; ++i) descriptors.push_back("mfcc" + std::to_string(i));
    for (const char* d : {"zcr", "centroid", "spread", "skewness", "kurtosis", "flatness", "rolloff"}) {
      descriptors.emplace_back(d);
    }
    std::vector<std::string> out;
    for (const auto& d : descriptors) {
      for (const char* f : {"mean", "std", "min", "max", "iqr"}) out.push_back(d + "_" + f);
    }
    return out;
  }();
  return names;
}

Matrix feature_matrix(const UtteranceDataset& ds, int jobs) {
  Matrix x(ds.size(), kNumFeatures);
  parallel_for(ds.size(), jobs, [&](std::size_t i) {
    const auto f = engineered_features(ds.clips[i]);
    std::copy(f.begin(), f.end(), x.row(i).begin());
  });
  return x;
}

void write_feature_csv(const std::filesystem::path& path, const Matrix& features, std::span<const int> labels,
                       std::span<const std::string> names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "label";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < features.rows(); ++r) {
    out << class_name(labels[r]);
    for (double v : features.row(r)) out << ',' << v;
    out << '\n';
  }
}

Standardizer Standardizer::fit(const Matrix& train) {
  if (train.rows() == 0) throw ContractError("Standardizer::fit: empty training set");
  Standardizer s;
  const std::size_t d = train.cols();
  const double n = static_cast<double>(train.rows());
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t r = 0; r < train.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += train(r, c);
  }
  for (double& m : s.mean) m /= n;
  for (std::size_t r = 0; r < train.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = train(r, c) - s.mean[c];
      s.stddev[c] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    double& v = s.stddev[c];
    v = std::sqrt(v / n);
    // Rounding in the mean leaves constant columns with a residue near 1e-16.
    if (!(v > 1e-12 * std::max(1.0, std::abs(s.mean[c])))) v = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> row) const {
  if (row.size() != mean.size()) throw ContractError("Standardizer::apply: dimension mismatch");
  std::vector<double> out(row.size());
  for (std::size_t c = 0; c < row.size(); ++c) out[c] = (row[c] - mean[c]) / stddev[c];
  return out;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw ContractError("Standardizer::apply: dimension mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / stddev[c];
  }
  return out;
}

}  // namespace qvp
