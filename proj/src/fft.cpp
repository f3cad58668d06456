#include "qvp/fft.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <tuple>

namespace qvp {

namespace {

enum class PlanKind { kComplex, kRealForward, kRealInverse };

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(std::max<std::size_t>(bytes, 16))) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

// FFTW planning is not thread-safe; execution with the new-array interface
// is. Plans are created once per (kind, size) under a lock and reused.
// FFTW_ESTIMATE keeps the chosen algorithm, and thus the rounding, stable
// across runs.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(PlanKind kind, std::size_t n) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(kind, n);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const int len = static_cast<int>(n);
    FftwBuffer in(sizeof(fftw_complex) * (n + 2));
    FftwBuffer out(sizeof(fftw_complex) * (n + 2));
    fftw_plan plan = nullptr;
    switch (kind) {
      case PlanKind::kComplex:
        plan = fftw_plan_dft_1d(len, static_cast<fftw_complex*>(in.ptr), static_cast<fftw_complex*>(out.ptr),
                                FFTW_FORWARD, FFTW_ESTIMATE);
        break;
      case PlanKind::kRealForward:
        plan = fftw_plan_dft_r2c_1d(len, static_cast<double*>(in.ptr), static_cast<fftw_complex*>(out.ptr),
                                    FFTW_ESTIMATE);
        break;
      case PlanKind::kRealInverse:
        plan = fftw_plan_dft_c2r_1d(len, static_cast<fftw_complex*>(in.ptr), static_cast<double*>(out.ptr),
                                    FFTW_ESTIMATE);
        break;
    }
    plans_[key] = plan;
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<PlanKind, std::size_t>, fftw_plan> plans_;
};

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

std::vector<Complex> fft(std::span<const Complex> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  fftw_plan plan = PlanCache::instance().get(PlanKind::kComplex, n);
  FftwBuffer in(sizeof(fftw_complex) * n);
  FftwBuffer out(sizeof(fftw_complex) * n);
  std::copy(x.begin(), x.end(), static_cast<Complex*>(in.ptr));
  fftw_execute_dft(plan, static_cast<fftw_complex*>(in.ptr), static_cast<fftw_complex*>(out.ptr));
  const auto* res = static_cast<const Complex*>(out.ptr);
  return std::vector<Complex>(res, res + n);
}

std::vector<Complex> rfft(std::span<const double> x, std::size_t n_fft) {
  fftw_plan plan = PlanCache::instance().get(PlanKind::kRealForward, n_fft);
  FftwBuffer in(sizeof(double) * n_fft);
  FftwBuffer out(sizeof(fftw_complex) * (n_fft / 2 + 1));
  auto* buf = static_cast<double*>(in.ptr);
  const std::size_t n = std::min(x.size(), n_fft);
  std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n), buf);
  std::fill(buf + n, buf + n_fft, 0.0);
  fftw_execute_dft_r2c(plan, buf, static_cast<fftw_complex*>(out.ptr));
  const auto* res = static_cast<const Complex*>(out.ptr);
  return std::vector<Complex>(res, res + n_fft / 2 + 1);
}

std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n_fft) {
  fftw_plan plan = PlanCache::instance().get(PlanKind::kRealInverse, n_fft);
  const std::size_t bins = n_fft / 2 + 1;
  FftwBuffer in(sizeof(fftw_complex) * bins);
  FftwBuffer out(sizeof(double) * n_fft);
  auto* buf = static_cast<Complex*>(in.ptr);
  std::fill(buf, buf + bins, Complex{});
  std::copy(spectrum.begin(), spectrum.begin() + static_cast<std::ptrdiff_t>(std::min(bins, spectrum.size())), buf);
  // c2r destroys its input; it is a scratch copy here.
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(buf), static_cast<double*>(out.ptr));
  const auto* res = static_cast<const double*>(out.ptr);
  std::vector<double> y(res, res + n_fft);
  const double scale = 1.0 / static_cast<double>(n_fft);
  for (double& v : y) v *= scale;
  return y;
}

}  // namespace qvp
