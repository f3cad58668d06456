#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "qvp/augment.h"
#include "qvp/error.h"
#include "test_util.h"

using namespace qvp;

namespace {

double rms_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

MelSpectrogram ramp_spec(std::size_t n) {
  MelSpectrogram s;
  s.n_bands = n;
  s.hop_samples = 30000 / n;
  s.values.resize(n * n);
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = -50.0 + 0.37 * static_cast<double>(i % 17);
  return s;
}

UtteranceDataset small_dataset(std::size_t n) {
  const auto data = generate_synthetic(5, n / 4);
  return data.train;
}

}  // namespace

TEST_CASE("pitch_shift by 0 semitones is the identity") {
  const auto clip = generate_synthetic(1, 1).train.clips[1];
  const auto out = pitch_shift(clip, 0.0);
  CHECK(out.size() == kClipSamples);
  CHECK(rms_diff(out.samples, clip.samples) < 1e-6);
}

TEST_CASE("pitch_shift moves a 440 Hz sine to 466.16 Hz") {
  const auto clip = testutil::sine(440.0);
  const auto out = pitch_shift(clip, 1.0);
  CHECK(out.size() == kClipSamples);
  const std::size_t n_fft = 32768;
  const double bin = static_cast<double>(kSampleRate) / n_fft;
  const double expected = 440.0 * std::pow(2.0, 1.0 / 12.0);
  CHECK(expected == doctest::Approx(466.16).epsilon(1e-5));
  CHECK(std::abs(testutil::peak_frequency(out.samples, n_fft) - expected) <= bin);
}

TEST_CASE("pitch_shift keeps the length for any shift (property)") {
  Rng rng(3);
  const auto clip = testutil::sine(300.0);
  for (int trial = 0; trial < 8; ++trial) {
    const double s = uniform_real(rng, -12.0, 12.0);
    const auto out = pitch_shift(clip, s);
    CHECK(out.size() == clip.size());
    for (double v : out.samples) REQUIRE(std::abs(v) <= 1.0);
  }
  CHECK_THROWS_AS(pitch_shift(clip, 13.0), ContractError);
}

TEST_CASE("time_stretch") {
  const auto clip = testutil::sine(440.0);
  SUBCASE("rate 1 is the identity") { CHECK(rms_diff(time_stretch(clip, 1.0).samples, clip.samples) < 1e-6); }
  SUBCASE("rate 1.15 gives 26087 samples before padding") {
    CHECK(phase_vocoder(clip.samples, 1.15).size() == 26087);
    const auto out = time_stretch(clip, 1.15);
    CHECK(out.size() == kClipSamples);
    CHECK(std::all_of(out.samples.begin() + 26087, out.samples.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("rate 0.85 keeps the pitch") {
    const auto out = time_stretch(clip, 0.85);
    CHECK(out.size() == kClipSamples);
    const std::size_t n_fft = 32768;
    CHECK(std::abs(testutil::peak_frequency(out.samples, n_fft) - 440.0) <= double(kSampleRate) / n_fft);
  }
  SUBCASE("non-positive rate") { CHECK_THROWS_AS(time_stretch(clip, 0.0), ContractError); }
}

TEST_CASE("add_pink_noise") {
  const auto clip = testutil::sine(440.0, 0.3);
  Rng rng(1);
  SUBCASE("factor 0 is the identity") { CHECK(add_pink_noise(clip, 0.0, rng).samples == clip.samples); }
  SUBCASE("peak of the added noise is bounded by the factor") {
    for (double factor : {0.005, 0.01}) {
      const auto out = add_pink_noise(clip, factor, rng);
      double peak = 0.0;
      for (std::size_t i = 0; i < clip.size(); ++i) peak = std::max(peak, std::abs(out.samples[i] - clip.samples[i]));
      CHECK(peak <= factor + 1e-15);
      CHECK(peak > 0.0);
    }
  }
  SUBCASE("spectral slope is roughly -10 dB per decade") {
    // Least-squares slope of the averaged periodogram against log10(f).
    const std::size_t seg = 4096;
    std::vector<double> avg(seg / 2 + 1, 0.0);
    const int n_segments = 64;
    for (int s = 0; s < n_segments; ++s) {
      const auto noise = pink_noise(seg, rng);
      const auto w = hann_window(seg);
      std::vector<double> x(seg);
      for (std::size_t i = 0; i < seg; ++i) x[i] = noise[i] * w[i];
      const auto spec = rfft(x, seg);
      for (std::size_t b = 0; b < avg.size(); ++b) avg[b] += std::norm(spec[b]);
    }
    std::vector<double> lx, ly;
    for (std::size_t b = 1; b < avg.size(); ++b) {
      const double f = static_cast<double>(b) * kSampleRate / seg;
      if (f < 100.0 || f > 10000.0) continue;
      lx.push_back(std::log10(f));
      ly.push_back(10.0 * std::log10(avg[b]));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    CHECK(slope >= -12.0);
    CHECK(slope <= -8.0);
  }
}

TEST_CASE("mask count and width ranges") {
  CHECK(max_mask_count(16) == 4);
  CHECK(max_mask_width(16) == 6);
  CHECK(max_mask_count(8) == 2);
  CHECK(max_mask_width(8) == 3);
  CHECK(max_mask_count(12) == 3);
  CHECK(max_mask_width(12) == 4);
  for (std::size_t nb : {8u, 12u, 16u}) {
    Rng rng(nb);
    std::set<std::size_t> counts, widths;
    for (int i = 0; i < 10000; ++i) {
      const auto d = draw_masks(nb, rng);
      counts.insert(d.freq.size());
      counts.insert(d.time.size());
      for (const auto& m : d.freq) {
        widths.insert(m.width);
        CHECK(m.start + m.width <= nb);
      }
      for (const auto& m : d.time) widths.insert(m.width);
    }
    const std::size_t c_hi = 2 * nb / 8, w_hi = (nb + 2) / 3;
    CHECK(*counts.begin() == 1);
    CHECK(*counts.rbegin() == c_hi);
    CHECK(counts.size() == c_hi);
    CHECK(*widths.begin() == 1);
    CHECK(*widths.rbegin() == w_hi);
    CHECK(widths.size() == w_hi);
  }
}

TEST_CASE("masking sets whole rows and columns to the floor and nothing else") {
  const auto spec = ramp_spec(16);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto draw = draw_masks(16, rng);
    const auto out = apply_masks(spec, draw);
    std::set<std::size_t> rows, cols;
    for (const auto& m : draw.freq) for (std::size_t r = m.start; r < m.start + m.width; ++r) rows.insert(r);
    for (const auto& m : draw.time) for (std::size_t c = m.start; c < m.start + m.width; ++c) cols.insert(c);
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        if (rows.count(r) || cols.count(c)) {
          CHECK(out.at(r, c) == -100.0);
        } else {
          CHECK(out.at(r, c) == spec.at(r, c));
        }
      }
    }
  }
}

TEST_CASE("time warp") {
  const auto spec = ramp_spec(16);
  CHECK(warp_spectrogram(spec, 7, 0) == spec);
  Rng rng(9);
  const double lo = *std::min_element(spec.values.begin(), spec.values.end());
  const double hi = *std::max_element(spec.values.begin(), spec.values.end());
  for (int trial = 0; trial < 200; ++trial) {
    const auto out = warp_spectrogram(spec, rng);
    CHECK(out.n_bands == spec.n_bands);
    CHECK(out.values.size() == spec.values.size());
    for (double v : out.values) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
    // Endpoints are fixed.
    for (std::size_t r = 0; r < 16; ++r) {
      CHECK(out.at(r, 0) == spec.at(r, 0));
      CHECK(out.at(r, 15) == doctest::Approx(spec.at(r, 15)));
    }
  }
  // Pivot column moves to pivot + displacement.
  const auto moved = warp_spectrogram(spec, 7, 2);
  for (std::size_t r = 0; r < 16; ++r) CHECK(moved.at(r, 9) == doctest::Approx(spec.at(r, 7)));
}

TEST_CASE("expand_dataset with the waveform plan") {
  const auto ds = small_dataset(100);
  REQUIRE(ds.size() == 100);
  const auto plan = AugmentationPlan::waveform_default(42);
  const auto out = expand_dataset(ds, plan);
  CHECK(out.size() == 700);
  out.validate();
  for (int c = 0; c < kNumClasses; ++c) {
    CHECK(std::count(out.labels.begin(), out.labels.end(), c) == 7 * std::count(ds.labels.begin(), ds.labels.end(), c));
  }
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(out.provenance[i] == "original");
    CHECK(out.clips[i].samples == ds.clips[i].samples);
  }
  CHECK(out.provenance[100] == "augmented(pitch_shift:-1)");
  CHECK(out.provenance[105] == "augmented(pink_noise:0.01)");
  for (const auto& clip : out.clips) {
    for (double v : clip.samples) REQUIRE(std::abs(v) <= 1.0);
  }

  const auto again = expand_dataset(ds, plan, 4);
  for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(again.clips[i].samples == out.clips[i].samples);
}

TEST_CASE("expand_dataset edge cases") {
  const auto ds = small_dataset(8);
  AugmentationPlan empty;
  const auto same = expand_dataset(ds, empty);
  CHECK(same.size() == ds.size());

  AugmentationPlan bad = AugmentationPlan::waveform_default(1);
  bad.transforms[0].parameter = 2.0;
  CHECK_THROWS_AS(expand_dataset(ds, bad), ConfigError);
  bad.allow_override = true;
  CHECK(expand_dataset(ds, bad).size() == 8 * 7);

  CHECK_THROWS_AS(expand_dataset(ds, AugmentationPlan::spectrogram_default(1)), ConfigError);
  const auto specs = spectrogram_dataset(ds, 8);
  CHECK_THROWS_AS(expand_dataset(specs, AugmentationPlan::waveform_default(1)), ConfigError);

  auto plan = AugmentationPlan::spectrogram_default(3);
  plan.copies_per_transform = 2;
  const auto grown = expand_dataset(specs, plan);
  CHECK(grown.size() == 8 * (1 + 2 * 2));
  CHECK(grown.labels.size() == grown.size());
  const auto grown2 = expand_dataset(specs, plan, 3);
  for (std::size_t i = 0; i < grown.size(); ++i) CHECK(grown.specs[i] == grown2.specs[i]);
}
