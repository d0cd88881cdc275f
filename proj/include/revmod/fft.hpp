#pragma once

// Iterative radix-2 complex FFT. No external transform library: results are
// reproducible bit-for-bit for a given compiler and precision.

#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"

namespace revmod {

using cplx = std::complex<double>;

constexpr bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Precomputed twiddles and bit-reversal table for one transform size.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    require(is_pow2(n), "fft: size " + std::to_string(n) + " is not a power of two");
    // stage with half-width h reads twiddle_[h-1 .. 2h-2] contiguously
    twiddle_.reserve(n);
    for (std::size_t h = 1; h < n; h <<= 1)
      for (std::size_t j = 0; j < h; ++j) {
        const double a = -std::numbers::pi * static_cast<double>(j) / static_cast<double>(h);
        twiddle_.emplace_back(std::cos(a), std::sin(a));
      }
    rev_.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      rev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  /// In-place transform. The inverse carries the 1/n normalization.
  void transform(std::span<cplx> buf, bool inverse) const {
    require_dims(buf.size() == n_, "fft: buffer size does not match plan");
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(buf[i], buf[rev_[i]]);
    // plain real arithmetic: std::complex operator* takes a slow NaN-recovery path
    double* d = reinterpret_cast<double*>(buf.data());
    const double sgn = inverse ? -1.0 : 1.0;
    for (std::size_t h = 1; h < n_; h <<= 1) {
      const cplx* w = twiddle_.data() + (h - 1);
      for (std::size_t start = 0; start < n_; start += 2 * h) {
        double* p = d + 2 * start;
        double* q = p + 2 * h;
        for (std::size_t j = 0; j < h; ++j) {
          const double wr = w[j].real(), wi = sgn * w[j].imag();
          const double vr = q[2 * j] * wr - q[2 * j + 1] * wi;
          const double vi = q[2 * j] * wi + q[2 * j + 1] * wr;
          const double ur = p[2 * j], ui = p[2 * j + 1];
          p[2 * j] = ur + vr;
          p[2 * j + 1] = ui + vi;
          q[2 * j] = ur - vr;
          q[2 * j + 1] = ui - vi;
        }
      }
    }
    if (inverse) {
      const double s = 1.0 / static_cast<double>(n_);
      for (std::size_t i = 0; i < 2 * n_; ++i) d[i] *= s;
    }
  }

  void forward(std::span<cplx> buf) const { transform(buf, false); }
  void inverse(std::span<cplx> buf) const { transform(buf, true); }

  /// Zero-padded forward transform of a real sequence.
  std::vector<cplx> forward_real(std::span<const double> x) const {
    require(x.size() <= n_, "fft: input longer than transform size");
    std::vector<cplx> buf(n_);
    for (std::size_t i = 0; i < x.size(); ++i) buf[i] = x[i];
    forward(buf);
    return buf;
  }

 private:
  std::size_t n_;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> rev_;
};

inline std::vector<cplx> fft(std::span<const cplx> x, std::size_t n, bool inverse = false) {
  require(is_pow2(n), "fft: size " + std::to_string(n) + " is not a power of two");
  require(n >= x.size(), "fft: size smaller than input length");
  std::vector<cplx> buf(n);
  std::copy(x.begin(), x.end(), buf.begin());
  FftPlan(n).transform(buf, inverse);
  return buf;
}

inline std::vector<cplx> fft(std::span<const double> x, std::size_t n, bool inverse = false) {
  std::vector<cplx> c(x.begin(), x.end());
  return fft(std::span<const cplx>(c), n, inverse);
}

}  // namespace revmod
