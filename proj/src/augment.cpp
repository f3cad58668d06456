#include "qvp/augment.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numbers>
#include <sstream>

#include "qvp/error.h"
#include "qvp/fft.h"
#include "qvp/parallel.h"

namespace qvp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_phase(double p) { return p - kTwoPi * std::round(p / kTwoPi); }

void clamp_unit(std::vector<double>& x) {
  for (double& v : x) v = std::clamp(v, -1.0, 1.0);
}

bool contains(std::initializer_list<double> set, double v) {
  return std::any_of(set.begin(), set.end(), [v](double s) { return std::abs(s - v) < 1e-12; });
}

}  // namespace

// ---------------------------------------------------------------------------
// Phase vocoder
// ---------------------------------------------------------------------------

std::vector<double> phase_vocoder(const std::vector<double>& x, double rate) {
  if (!(rate > 0.0)) throw ContractError("phase_vocoder: rate must be > 0");
  const std::size_t n_fft = kVocoderFft;
  const std::size_t hop = kVocoderHop;
  const std::size_t half = n_fft / 2;
  const std::size_t bins = half + 1;
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) / rate));
  if (x.empty() || out_len == 0) return std::vector<double>(out_len, 0.0);

  // Centered analysis: the signal is padded by half a window on both sides.
  std::vector<double> padded(x.size() + n_fft, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(half));
  const std::size_t n_frames = 1 + (padded.size() - n_fft) / hop;
  const auto window = hann_window(n_fft);

  std::vector<std::vector<Complex>> stft(n_frames + 1, std::vector<Complex>(bins));
  std::vector<double> frame(n_fft);
  for (std::size_t k = 0; k < n_frames; ++k) {
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = padded[k * hop + i] * window[i];
    stft[k] = rfft(frame, n_fft);
  }
  // stft[n_frames] stays zero so interpolation past the last frame is defined.

  std::vector<double> advance(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    advance[b] = kTwoPi * static_cast<double>(b) * static_cast<double>(hop) / static_cast<double>(n_fft);
  }
  std::vector<double> phase(bins);
  for (std::size_t b = 0; b < bins; ++b) phase[b] = std::arg(stft[0][b]);

  std::vector<std::vector<Complex>> stretched;
  for (std::size_t step = 0;; ++step) {
    const double t = static_cast<double>(step) * rate;
    if (t >= static_cast<double>(n_frames)) break;
    const auto k = static_cast<std::size_t>(t);
    const double alpha = t - static_cast<double>(k);
    const auto& cur = stft[k];
    const auto& nxt = stft[k + 1];
    std::vector<Complex> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      const double mag = (1.0 - alpha) * std::abs(cur[b]) + alpha * std::abs(nxt[b]);
      out[b] = std::polar(mag, phase[b]);
      const double dphi = wrap_phase(std::arg(nxt[b]) - std::arg(cur[b]) - advance[b]);
      phase[b] += advance[b] + dphi;
    }
    stretched.push_back(std::move(out));
  }

  // Weighted overlap-add with window-square normalization.
  const std::size_t full = n_fft + hop * (stretched.size() - 1);
  std::vector<double> y(full, 0.0), norm(full, 0.0);
  for (std::size_t k = 0; k < stretched.size(); ++k) {
    const auto seg = irfft(stretched[k], n_fft);
    for (std::size_t i = 0; i < n_fft; ++i) {
      y[k * hop + i] += seg[i] * window[i];
      norm[k * hop + i] += window[i] * window[i];
    }
  }
  std::vector<double> out(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + half;
    if (j >= full) break;
    out[i] = norm[j] > 1e-10 ? y[j] / norm[j] : 0.0;
  }
  return out;
}

AudioClip pitch_shift(const AudioClip& clip, double semitones) {
  if (std::abs(semitones) > 12.0) throw ContractError("pitch_shift: |semitones| must be <= 12");
  const double ratio = std::pow(2.0, semitones / 12.0);
  const auto longer = phase_vocoder(clip.samples, 1.0 / ratio);
  AudioClip out;
  out.samples.assign(kClipSamples, 0.0);
  const std::size_t n = std::min(clip.size(), kClipSamples);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo >= longer.size()) break;
    const double frac = pos - static_cast<double>(lo);
    const double next = lo + 1 < longer.size() ? longer[lo + 1] : 0.0;
    out.samples[i] = longer[lo] + frac * (next - longer[lo]);
  }
  clamp_unit(out.samples);
  return out;
}

AudioClip time_stretch(const AudioClip& clip, double rate) {
  if (!(rate > 0.0)) throw ContractError("time_stretch: rate must be > 0");
  AudioClip out;
  out.samples = phase_vocoder(clip.samples, rate);
  out = fix_length(std::move(out));
  clamp_unit(out.samples);
  return out;
}

std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  constexpr std::size_t kRows = 16;
  std::array<double, kRows> rows{};
  double running = 0.0;
  for (double& r : rows) {
    r = uniform_real(rng, -1.0, 1.0);
    running += r;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Row k is refreshed every 2^k samples: pick the index of the lowest
    // set bit of the counter.
    const std::size_t counter = i + 1;
    const auto row = static_cast<std::size_t>(std::countr_zero(counter));
    if (row < kRows) {
      running -= rows[row];
      rows[row] = uniform_real(rng, -1.0, 1.0);
      running += rows[row];
    }
    out[i] = running + uniform_real(rng, -1.0, 1.0);
  }
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : out) v /= peak;
  }
  return out;
}

AudioClip add_pink_noise(const AudioClip& clip, double factor, Rng& rng) {
  if (factor < 0.0) throw ContractError("add_pink_noise: factor must be >= 0");
  if (factor == 0.0) return clip;
  const auto noise = pink_noise(clip.size(), rng);
  AudioClip out = clip;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += factor * noise[i];
  clamp_unit(out.samples);
  return out;
}

// ---------------------------------------------------------------------------
// Spectrogram transforms
// ---------------------------------------------------------------------------

std::size_t max_mask_count(std::size_t n_bands) { return std::max<std::size_t>(1, 2 * n_bands / 8); }

std::size_t max_mask_width(std::size_t n_bands) { return std::max<std::size_t>(1, (n_bands + 2) / 3); }

MaskDraw draw_masks(std::size_t n_bands, Rng& rng) {
  MaskDraw draw;
  const auto max_count = static_cast<long>(max_mask_count(n_bands));
  const auto max_width = static_cast<long>(std::min(max_mask_width(n_bands), n_bands));
  auto draw_axis = [&](std::vector<MaskBand>& out) {
    const long count = uniform_int(rng, 1, max_count);
    for (long i = 0; i < count; ++i) {
      const auto width = static_cast<std::size_t>(uniform_int(rng, 1, max_width));
      const auto start = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(n_bands - width)));
      out.push_back({start, width});
    }
  };
  draw_axis(draw.freq);
  draw_axis(draw.time);
  return draw;
}

MelSpectrogram apply_masks(MelSpectrogram spec, const MaskDraw& draw) {
  const std::size_t n = spec.n_bands;
  for (const auto& m : draw.freq) {
    for (std::size_t r = m.start; r < std::min(n, m.start + m.width); ++r) {
      for (std::size_t c = 0; c < n; ++c) spec.at(r, c) = kLogFloorDb;
    }
  }
  for (const auto& m : draw.time) {
    for (std::size_t c = m.start; c < std::min(n, m.start + m.width); ++c) {
      for (std::size_t r = 0; r < n; ++r) spec.at(r, c) = kLogFloorDb;
    }
  }
  return spec;
}

MelSpectrogram mask_spectrogram(const MelSpectrogram& spec, Rng& rng) {
  return apply_masks(spec, draw_masks(spec.n_bands, rng));
}

std::size_t max_warp(std::size_t n_bands) { return std::max<std::size_t>(1, n_bands / 8); }

MelSpectrogram warp_spectrogram(const MelSpectrogram& spec, std::size_t pivot, long displacement) {
  const std::size_t n = spec.n_bands;
  if (n < 2 || displacement == 0) return spec;
  const double last = static_cast<double>(n - 1);
  const double src_pivot = static_cast<double>(pivot);
  const double dst_pivot = static_cast<double>(static_cast<long>(pivot) + displacement);
  if (dst_pivot < 0.0 || dst_pivot > last || src_pivot > last) {
    throw ContractError("warp_spectrogram: pivot/displacement outside the image");
  }
  MelSpectrogram out = spec;
  for (std::size_t j = 0; j < n; ++j) {
    const double dst = static_cast<double>(j);
    double src = 0.0;
    if (j == n - 1) {
      src = last;  // endpoints stay fixed even when the pivot lands on one
    } else if (dst <= dst_pivot) {
      src = dst_pivot > 0.0 ? dst * src_pivot / dst_pivot : 0.0;
    } else {
      src = src_pivot + (dst - dst_pivot) * (last - src_pivot) / (last - dst_pivot);
    }
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = src - static_cast<double>(lo);
    for (std::size_t r = 0; r < n; ++r) {
      out.at(r, j) = (1.0 - frac) * spec.at(r, lo) + frac * spec.at(r, hi);
    }
  }
  return out;
}

MelSpectrogram warp_spectrogram(const MelSpectrogram& spec, Rng& rng) {
  const std::size_t n = spec.n_bands;
  const auto w = static_cast<long>(max_warp(n));
  const long hi = static_cast<long>(n) - 1 - w;
  if (hi < w) return spec;
  const auto pivot = static_cast<std::size_t>(uniform_int(rng, w, hi));
  const long displacement = uniform_int(rng, -w, w);
  return warp_spectrogram(spec, pivot, displacement);
}

// ---------------------------------------------------------------------------
// Plans and dataset expansion
// ---------------------------------------------------------------------------

std::string TransformSpec::name() const {
  std::ostringstream ss;
  switch (kind) {
    case TransformKind::kPitchShift:
      ss << "pitch_shift:" << std::showpos << parameter;
      break;
    case TransformKind::kTimeStretch:
      ss << "time_stretch:" << parameter;
      break;
    case TransformKind::kPinkNoise:
      ss << "pink_noise:" << parameter;
      break;
    case TransformKind::kMask:
      ss << "mask";
      break;
    case TransformKind::kWarp:
      ss << "warp";
      break;
  }
  return ss.str();
}

void AugmentationPlan::validate() const {
  for (const auto& t : transforms) {
    if (t.kind == TransformKind::kTimeStretch && !(t.parameter > 0.0)) {
      throw ConfigError("augmentation: time_stretch rate must be > 0");
    }
    if (t.kind == TransformKind::kPitchShift && std::abs(t.parameter) > 12.0) {
      throw ConfigError("augmentation: pitch_shift must be within 12 semitones");
    }
    if (t.kind == TransformKind::kPinkNoise && t.parameter < 0.0) {
      throw ConfigError("augmentation: pink_noise factor must be >= 0");
    }
    if (allow_override) continue;
    const bool ok = (t.kind == TransformKind::kPitchShift && contains({-1.0, 1.0}, t.parameter)) ||
                    (t.kind == TransformKind::kTimeStretch && contains({0.85, 1.15}, t.parameter)) ||
                    (t.kind == TransformKind::kPinkNoise && contains({0.005, 0.01}, t.parameter)) ||
                    t.kind == TransformKind::kMask || t.kind == TransformKind::kWarp;
    if (!ok) throw ConfigError("augmentation: parameter outside the allowed set for " + t.name());
  }
}

AugmentationPlan AugmentationPlan::waveform_default(std::uint64_t seed) {
  AugmentationPlan plan;
  plan.rng_seed = seed;
  plan.transforms = {{TransformKind::kPitchShift, -1.0}, {TransformKind::kPitchShift, 1.0},
                     {TransformKind::kTimeStretch, 0.85}, {TransformKind::kTimeStretch, 1.15},
                     {TransformKind::kPinkNoise, 0.005},  {TransformKind::kPinkNoise, 0.01}};
  return plan;
}

AugmentationPlan AugmentationPlan::spectrogram_default(std::uint64_t seed) {
  AugmentationPlan plan;
  plan.rng_seed = seed;
  plan.transforms = {{TransformKind::kMask, 0.0}, {TransformKind::kWarp, 0.0}};
  return plan;
}

SpectrogramDataset spectrogram_dataset(const UtteranceDataset& ds, std::size_t n_bands, int jobs) {
  SpectrogramDataset out;
  out.participant_id = ds.participant_id;
  out.labels = ds.labels;
  out.provenance = ds.provenance;
  out.specs.resize(ds.size());
  parallel_for(ds.size(), jobs, [&](std::size_t i) { out.specs[i] = mel_spectrogram(ds.clips[i], n_bands); });
  return out;
}

namespace {

std::string variant_tag(const Provenance& base, const TransformSpec& t) {
  if (base == "original") return "augmented(" + t.name() + ")";
  // Serial combination: keep the earlier transform chain.
  return base.substr(0, base.size() - 1) + "+" + t.name() + ")";
}

}  // namespace

UtteranceDataset expand_dataset(const UtteranceDataset& ds, const AugmentationPlan& plan, int jobs) {
  plan.validate();
  for (const auto& t : plan.transforms) {
    if (!t.is_waveform()) throw ConfigError("augmentation: " + t.name() + " is a spectrogram transform");
  }
  if (plan.empty()) return ds;
  const std::size_t per_clip = plan.transforms.size() * plan.copies_per_transform;
  std::vector<AudioClip> variants(ds.size() * per_clip);
  parallel_for(ds.size(), jobs, [&](std::size_t i) {
    Rng rng = make_rng(plan.rng_seed, i);
    for (std::size_t s = 0; s < plan.transforms.size(); ++s) {
      const auto& t = plan.transforms[s];
      for (std::size_t c = 0; c < plan.copies_per_transform; ++c) {
        AudioClip v;
        switch (t.kind) {
          case TransformKind::kPitchShift:
            v = pitch_shift(ds.clips[i], t.parameter);
            break;
          case TransformKind::kTimeStretch:
            v = time_stretch(ds.clips[i], t.parameter);
            break;
          default:
            v = add_pink_noise(ds.clips[i], t.parameter, rng);
            break;
        }
        variants[i * per_clip + s * plan.copies_per_transform + c] = std::move(v);
      }
    }
  });
  UtteranceDataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t s = 0; s < plan.transforms.size(); ++s) {
      for (std::size_t c = 0; c < plan.copies_per_transform; ++c) {
        out.push_back(std::move(variants[i * per_clip + s * plan.copies_per_transform + c]), ds.labels[i],
                      variant_tag(ds.provenance[i], plan.transforms[s]));
      }
    }
  }
  return out;
}

SpectrogramDataset expand_dataset(const SpectrogramDataset& ds, const AugmentationPlan& plan, int jobs) {
  plan.validate();
  for (const auto& t : plan.transforms) {
    if (t.is_waveform()) throw ConfigError("augmentation: " + t.name() + " is a waveform transform");
  }
  if (plan.empty()) return ds;
  const std::size_t per_clip = plan.transforms.size() * plan.copies_per_transform;
  std::vector<MelSpectrogram> variants(ds.size() * per_clip);
  parallel_for(ds.size(), jobs, [&](std::size_t i) {
    Rng rng = make_rng(plan.rng_seed, i);
    for (std::size_t s = 0; s < plan.transforms.size(); ++s) {
      for (std::size_t c = 0; c < plan.copies_per_transform; ++c) {
        variants[i * per_clip + s * plan.copies_per_transform + c] =
            plan.transforms[s].kind == TransformKind::kMask ? mask_spectrogram(ds.specs[i], rng)
                                                            : warp_spectrogram(ds.specs[i], rng);
      }
    }
  });
  SpectrogramDataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t s = 0; s < plan.transforms.size(); ++s) {
      for (std::size_t c = 0; c < plan.copies_per_transform; ++c) {
        out.specs.push_back(std::move(variants[i * per_clip + s * plan.copies_per_transform + c]));
        out.labels.push_back(ds.labels[i]);
        out.provenance.push_back(variant_tag(ds.provenance[i], plan.transforms[s]));
      }
    }
  }
  return out;
}

}  // namespace qvp
