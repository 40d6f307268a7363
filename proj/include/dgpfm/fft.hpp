#pragma once

#include <complex>
#include <vector>

#include "dgpfm/common.hpp"

// Discrete Fourier transforms used by the spectral transform path, the random
// field generators, and the Burgers solver. Conventions: unnormalized forward
// DFT, 1/n inverse. Real-input transforms use the half spectrum of length
// floor(n/2)+1. Arbitrary lengths are supported (radix-2 when possible,
// Bluestein otherwise).

namespace dgpfm::fft {

using cd = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void fft_pow2(std::vector<cd>& a, bool invert) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (invert ? kTwoPi : -kTwoPi) / static_cast<double>(len);
    const cd wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const cd u = a[i + j];
        const cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (invert)
    for (cd& x : a) x /= static_cast<double>(n);
}

// Bluestein's algorithm: expresses a length-n DFT as a convolution, which is
// evaluated with a padded radix-2 FFT. Handles non power-of-two grids.
inline void fft_bluestein(std::vector<cd>& a, bool invert) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = invert ? 1.0 : -1.0;
  std::vector<cd> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2/2 mod n, computed in integers to avoid phase drift for large k.
    const std::uint64_t kk = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    const double ang = sign * kTwoPi * 0.5 * static_cast<double>(kk) / static_cast<double>(n);
    chirp[k] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> x(m, cd(0, 0)), y(m, cd(0, 0));
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
  y[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
  fft_pow2(x, false);
  fft_pow2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  fft_pow2(x, true);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  if (invert)
    for (cd& v : a) v /= static_cast<double>(n);
}

inline void fft(std::vector<cd>& a, bool invert) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size()))
    fft_pow2(a, invert);
  else
    fft_bluestein(a, invert);
}

inline std::size_t half_spectrum_size(std::size_t n) { return n / 2 + 1; }

// Unnormalized forward DFT of a real signal; returns the lowest
// floor(n/2)+1 bins.
inline std::vector<cd> rdft(const double* x, std::size_t n) {
  std::vector<cd> a(n);
  for (std::size_t j = 0; j < n; ++j) a[j] = cd(x[j], 0.0);
  fft(a, false);
  a.resize(half_spectrum_size(n));
  return a;
}

// Inverse of rdft under the hermitian extension: takes K = floor(n/2)+1 or
// fewer bins (missing bins treated as zero) and returns the length-n real
// signal, with the 1/n normalization.
inline std::vector<double> irdft(const cd* spec, std::size_t k_given, std::size_t n) {
  std::vector<cd> full(n, cd(0, 0));
  const std::size_t khalf = half_spectrum_size(n);
  for (std::size_t k = 0; k < k_given && k < khalf; ++k) full[k] = spec[k];
  for (std::size_t k = 1; k < khalf; ++k)
    if (n - k > k) full[n - k] = std::conj(full[k]);
  fft(full, true);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = full[j].real();
  return out;
}

// Adjoint (transpose as a real-linear map R^n -> R^{2K}) of rdft: maps a
// half-spectrum cotangent back to a signal cotangent.
inline std::vector<double> rdft_adjoint(const cd* gbar, std::size_t k_given, std::size_t n) {
  std::vector<cd> full(n, cd(0, 0));
  const std::size_t khalf = half_spectrum_size(n);
  for (std::size_t k = 0; k < k_given && k < khalf; ++k) full[k] = gbar[k];
  fft(full, true);  // sum_k g_k e^{+2pi i jk/n} / n
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = full[j].real() * static_cast<double>(n);
  return out;
}

// Adjoint of irdft: maps a signal cotangent to a half-spectrum cotangent.
// Interior bins pick up a factor 2 from the hermitian mirror; DC (and the
// Nyquist bin when n is even) do not, and their imaginary parts are inert.
inline std::vector<cd> irdft_adjoint(const double* xbar, std::size_t n, std::size_t k_wanted) {
  std::vector<cd> spec = rdft(xbar, n);
  const std::size_t khalf = spec.size();
  std::vector<cd> out(k_wanted, cd(0, 0));
  for (std::size_t k = 0; k < k_wanted && k < khalf; ++k) {
    const bool self_paired = (k == 0) || (2 * k == n);
    const double c = self_paired ? 1.0 : 2.0;
    out[k] = spec[k] * (c / static_cast<double>(n));
    if (self_paired) out[k].imag(0.0);
  }
  return out;
}

}  // namespace dgpfm::fft
