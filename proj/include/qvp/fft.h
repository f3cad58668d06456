#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace qvp {

using Complex = std::complex<double>;

/// Forward complex DFT of any length (unnormalized).
std::vector<Complex> fft(std::span<const Complex> x);

/// Forward DFT of a real signal zero-padded (or truncated) to n_fft.
/// Returns bins 0..n_fft/2.
std::vector<Complex> rfft(std::span<const double> x, std::size_t n_fft);

/// Inverse of rfft: n_fft real samples, scaled by 1/n_fft.
std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n_fft);

/// Smallest power of two >= n.
std::size_t next_pow2(std::size_t n);

/// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t length);

}  // namespace qvp
