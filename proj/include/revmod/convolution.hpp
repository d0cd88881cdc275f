#pragma once

// Linear convolution of a dry signal with an impulse response, truncated to
// the dry length, together with its adjoint.

#include <algorithm>
#include <span>
#include <vector>

#include "revmod/core.hpp"
#include "revmod/fft.hpp"

namespace revmod {

namespace detail {
inline void check_conv_inputs(std::span<const double> d, std::span<const double> h) {
  require(!d.empty(), "convolve: empty dry signal");
  require(!h.empty(), "convolve: empty impulse response");
}
}  // namespace detail

/// r_t = sum_{k=0}^{min(t, L-1)} h_k d_{t-k}, t in [0, T).
inline std::vector<double> convolve_direct(std::span<const double> d, std::span<const double> h) {
  detail::check_conv_inputs(d, h);
  const std::size_t T = d.size();
  std::vector<double> r(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t kmax = std::min(t, h.size() - 1);
    double acc = 0.0;
    for (std::size_t k = 0; k <= kmax; ++k) acc += h[k] * d[t - k];
    r[t] = acc;
  }
  return r;
}

/// Same result as convolve_direct via one zero-padded FFT product. The pad
/// length covers T+L-1 so the product realizes linear, not circular, convolution.
inline std::vector<double> convolve_fft(std::span<const double> d, std::span<const double> h) {
  detail::check_conv_inputs(d, h);
  const std::size_t T = d.size();
  // Scaled unit impulse: skip the transform so identity reverb is sample-exact.
  if (std::all_of(h.begin() + 1, h.end(), [](double x) { return x == 0.0; })) {
    std::vector<double> r(d.begin(), d.end());
    if (h[0] != 1.0)
      for (auto& x : r) x *= h[0];
    return r;
  }
  const std::size_t n = next_pow2(T + h.size() - 1);
  const FftPlan plan(n);
  auto D = plan.forward_real(d);
  const auto H = plan.forward_real(h);
  for (std::size_t i = 0; i < n; ++i) D[i] *= H[i];
  plan.inverse(D);
  std::vector<double> r(T);
  for (std::size_t t = 0; t < T; ++t) r[t] = D[t].real();
  return r;
}

inline Waveform convolve_direct(const Waveform& d, std::span<const double> h) {
  return {convolve_direct(d.view(), h), d.sample_rate};
}

inline Waveform convolve_fft(const Waveform& d, std::span<const double> h) {
  return {convolve_fft(d.view(), h), d.sample_rate};
}

struct ConvGrad {
  std::vector<double> grad_dry;
  std::vector<double> grad_rir;
};

/// Gradients of a scalar loss through the truncated convolution, given
/// dL/dr. Both are correlations of grad_r and computed from one shared spectrum.
inline ConvGrad convolve_grad(std::span<const double> d, std::span<const double> h, std::span<const double> grad_r) {
  detail::check_conv_inputs(d, h);
  require_dims(grad_r.size() == d.size(), "convolve_grad: grad_r length must equal dry length");
  const std::size_t T = d.size();
  const std::size_t L = h.size();
  const std::size_t n = next_pow2(T + L - 1);
  const FftPlan plan(n);
  const auto G = plan.forward_real(grad_r);
  auto D = plan.forward_real(d);
  auto H = plan.forward_real(h);
  // grad_rir[k] = sum_s d_s g_{s+k}; grad_dry[s] = sum_k h_k g_{s+k}
  for (std::size_t i = 0; i < n; ++i) {
    D[i] = G[i] * std::conj(D[i]);
    H[i] = G[i] * std::conj(H[i]);
  }
  plan.inverse(D);
  plan.inverse(H);
  ConvGrad out;
  out.grad_rir.resize(L);
  out.grad_dry.resize(T);
  for (std::size_t k = 0; k < L; ++k) out.grad_rir[k] = D[k].real();
  for (std::size_t s = 0; s < T; ++s) out.grad_dry[s] = H[s].real();
  return out;
}

/// Fixed-size spectral convolution for training loops: spectra of reused
/// signals are computed once, and two real transforms share one complex FFT.
class SpectralConvolver {
 public:
  SpectralConvolver(std::size_t n_out, std::size_t max_rir_length)
      : n_out_(n_out), max_rir_(max_rir_length), plan_(next_pow2(n_out + max_rir_length - 1)) {
    require(n_out >= 1 && max_rir_length >= 1, "spectral convolver: lengths must be positive");
  }

  std::size_t n_out() const { return n_out_; }
  std::size_t max_rir_length() const { return max_rir_; }
  std::size_t fft_size() const { return plan_.size(); }

  std::vector<cplx> spectrum(std::span<const double> x) const {
    require(x.size() <= plan_.size(), "spectral convolver: input longer than transform");
    return plan_.forward_real(x);
  }

  /// Spectra of two real signals from one transform.
  std::pair<std::vector<cplx>, std::vector<cplx>> spectrum_pair(std::span<const double> x,
                                                                std::span<const double> y) const {
    const std::size_t n = plan_.size();
    require(x.size() <= n && y.size() <= n, "spectral convolver: input longer than transform");
    std::vector<cplx> z(n);
    for (std::size_t i = 0; i < x.size(); ++i) z[i].real(x[i]);
    for (std::size_t i = 0; i < y.size(); ++i) z[i].imag(y[i]);
    plan_.forward(z);
    std::vector<cplx> X(n), Y(n);
    for (std::size_t k = 0; k < n; ++k) {
      const cplx a = z[k], b = std::conj(z[(n - k) & (n - 1)]);
      X[k] = 0.5 * (a + b);
      Y[k] = cplx(0.0, -0.5) * (a - b);
    }
    return {std::move(X), std::move(Y)};
  }

  /// First `len` samples of the real inverse transforms of A*B and C*D.
  std::pair<std::vector<double>, std::vector<double>> product_pair(std::span<const cplx> A, std::span<const cplx> B,
                                                                   std::span<const cplx> C, std::span<const cplx> D,
                                                                   std::size_t len, bool conj_second) const {
    const std::size_t n = plan_.size();
    std::vector<cplx> z(n);
    const cplx i1(0.0, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      const cplx p = A[k] * (conj_second ? std::conj(B[k]) : B[k]);
      const cplx q = C[k] * (conj_second ? std::conj(D[k]) : D[k]);
      z[k] = p + i1 * q;
    }
    plan_.inverse(z);
    std::pair<std::vector<double>, std::vector<double>> out{std::vector<double>(len), std::vector<double>(len)};
    for (std::size_t t = 0; t < len; ++t) {
      out.first[t] = z[t].real();
      out.second[t] = z[t].imag();
    }
    return out;
  }

  /// Inverse transform of a Hermitian spectrum, first `len` samples.
  std::vector<double> real_inverse(std::vector<cplx> Z, std::size_t len) const {
    plan_.inverse(Z);
    std::vector<double> out(len);
    for (std::size_t t = 0; t < len; ++t) out[t] = Z[t].real();
    return out;
  }

 private:
  std::size_t n_out_;
  std::size_t max_rir_;
  FftPlan plan_;
};

}  // namespace revmod
