#pragma once

// Short-time spectral analysis: STFT, log amplitude spectra (LAS), mel features.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"
#include "revmod/fft.hpp"

namespace revmod {

/// Amplitudes are clamped to this value before taking the log.
inline constexpr double kAmplitudeFloor = 1e-5;

enum class Window { hann, rect };

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t frame_length = 400;
  std::size_t frame_shift = 96;
  Window window = Window::hann;

  std::size_t n_bins() const { return fft_size / 2 + 1; }

  void validate() const {
    require(is_pow2(fft_size), "stft: fft_size must be a power of two");
    require(frame_length >= 1 && frame_length <= fft_size, "stft: frame_length must be in [1, fft_size]");
    require(frame_shift >= 1 && frame_shift <= frame_length, "stft: frame_shift must be in [1, frame_length]");
  }

  /// 50 ms frames, 12 ms shift, 2048-point FFT at 24 kHz.
  static StftConfig full_scale() { return {2048, 1200, 288, Window::hann}; }
  /// Same ratios at 8 kHz.
  static StftConfig desk_default() { return {512, 400, 96, Window::hann}; }

  bool operator==(const StftConfig&) const = default;
};

inline std::size_t frame_count(std::size_t n_samples, const StftConfig& cfg) {
  if (n_samples < cfg.frame_length) return 0;
  return (n_samples - cfg.frame_length) / cfg.frame_shift + 1;
}

inline std::vector<double> analysis_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.frame_length, 1.0);
  if (cfg.window == Window::hann && cfg.frame_length > 1) {
    const double denom = static_cast<double>(cfg.frame_length - 1);
    for (std::size_t n = 0; n < cfg.frame_length; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
  }
  return w;
}

/// Full-length complex spectra, one row of fft_size bins per frame.
struct ComplexFrames {
  std::size_t n_frames = 0;
  std::size_t fft_size = 0;
  std::vector<cplx> data;
  StftConfig config;

  std::span<const cplx> frame(std::size_t t) const { return {data.data() + t * fft_size, fft_size}; }
  std::span<cplx> frame(std::size_t t) { return {data.data() + t * fft_size, fft_size}; }
};

inline ComplexFrames stft(std::span<const double> x, const StftConfig& cfg) {
  cfg.validate();
  if (x.size() < cfg.frame_length)
    throw std::invalid_argument("stft: signal of " + std::to_string(x.size()) +
                                " samples is shorter than one frame (" + std::to_string(cfg.frame_length) + ")");
  ComplexFrames out;
  out.config = cfg;
  out.fft_size = cfg.fft_size;
  out.n_frames = frame_count(x.size(), cfg);
  out.data.assign(out.n_frames * cfg.fft_size, cplx{});
  const auto win = analysis_window(cfg);
  const FftPlan plan(cfg.fft_size);
  const std::size_t N = cfg.fft_size;
  std::vector<cplx> z(N);
  // two real frames per complex transform, separated by conjugate symmetry
  for (std::size_t t = 0; t < out.n_frames; t += 2) {
    const bool pair = t + 1 < out.n_frames;
    std::fill(z.begin(), z.end(), cplx{});
    const std::size_t off = t * cfg.frame_shift;
    for (std::size_t n = 0; n < cfg.frame_length; ++n) z[n].real(win[n] * x[off + n]);
    if (pair)
      for (std::size_t n = 0; n < cfg.frame_length; ++n) z[n].imag(win[n] * x[off + cfg.frame_shift + n]);
    plan.forward(z);
    auto a = out.frame(t);
    if (!pair) {
      std::copy(z.begin(), z.end(), a.begin());
      break;
    }
    auto b = out.frame(t + 1);
    for (std::size_t k = 0; k < N; ++k) {
      const cplx zk = z[k], zc = std::conj(z[(N - k) & (N - 1)]);
      a[k] = {0.5 * (zk.real() + zc.real()), 0.5 * (zk.imag() + zc.imag())};
      b[k] = {0.5 * (zk.imag() - zc.imag()), -0.5 * (zk.real() - zc.real())};
    }
  }
  return out;
}

inline ComplexFrames stft(const Waveform& w, const StftConfig& cfg) { return stft(w.view(), cfg); }

/// Adjoint of stft restricted to the non-redundant bins. `grad` holds, per
/// frame and bin k in [0, fft_size/2], dL/dRe + i dL/dIm; returns dL/dx.
inline std::vector<double> stft_backward(std::span<const cplx> grad, std::size_t n_samples, const StftConfig& cfg) {
  const std::size_t nf = frame_count(n_samples, cfg);
  const std::size_t nb = cfg.n_bins();
  require_dims(grad.size() == nf * nb, "stft_backward: gradient shape does not match frame layout");
  std::vector<double> dx(n_samples, 0.0);
  const auto win = analysis_window(cfg);
  const FftPlan plan(cfg.fft_size);
  const std::size_t N = cfg.fft_size;
  std::vector<cplx> buf(N);
  const double scale = static_cast<double>(N);
  // Re(ifft(G)) is the inverse of the Hermitian part of G, so two frames
  // share one inverse transform
  auto hermitian = [&](std::size_t t, std::size_t k) {
    const auto at = [&](std::size_t kk) { return kk < nb ? grad[t * nb + kk] : cplx{}; };
    return 0.5 * (at(k) + std::conj(at((N - k) & (N - 1))));
  };
  for (std::size_t t = 0; t < nf; t += 2) {
    const bool pair = t + 1 < nf;
    for (std::size_t k = 0; k < N; ++k) {
      const cplx e0 = hermitian(t, k);
      const cplx e1 = pair ? hermitian(t + 1, k) : cplx{};
      buf[k] = {e0.real() - e1.imag(), e0.imag() + e1.real()};  // e0 + i e1
    }
    // sum_k G_k e^{+i 2 pi k n / N} == N * ifft(G)[n]
    plan.inverse(buf);
    const std::size_t off = t * cfg.frame_shift;
    for (std::size_t n = 0; n < cfg.frame_length; ++n) dx[off + n] += win[n] * scale * buf[n].real();
    if (pair)
      for (std::size_t n = 0; n < cfg.frame_length; ++n)
        dx[off + cfg.frame_shift + n] += win[n] * scale * buf[n].imag();
  }
  return dx;
}

inline double floored_log(double mag) { return std::log(std::max(mag, kAmplitudeFloor)); }

/// Natural-log amplitude spectra over the fft_size/2+1 non-redundant bins.
struct LasFrames {
  Matrix values;
  StftConfig config;

  std::size_t n_frames() const { return values.rows; }
  std::size_t n_bins() const { return values.cols; }
};

inline LasFrames log_amplitude(const ComplexFrames& spec) {
  const std::size_t nb = spec.fft_size / 2 + 1;
  LasFrames las{Matrix(spec.n_frames, nb), spec.config};
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const auto f = spec.frame(t);
    for (std::size_t k = 0; k < nb; ++k) las.values(t, k) = floored_log(std::sqrt(std::norm(f[k])));  // same rounding as the loss path
  }
  return las;
}

inline LasFrames las(std::span<const double> x, const StftConfig& cfg) { return log_amplitude(stft(x, cfg)); }
inline LasFrames las(const Waveform& w, const StftConfig& cfg) { return las(w.view(), cfg); }

/// Triangular filterbank on the HTK mel scale spanning 0 Hz to Nyquist.
/// Rows are filters, columns are the fft_size/2+1 spectral bins.
inline Matrix mel_filterbank(std::size_t n_mel, std::size_t fft_size, int sample_rate) {
  const std::size_t nb = fft_size / 2 + 1;
  require(n_mel >= 1, "mel: n_mel must be positive");
  require(n_mel <= nb, "mel: n_mel (" + std::to_string(n_mel) + ") exceeds the number of spectral bins (" +
                           std::to_string(nb) + ")");
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(n_mel + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mel + 1));
  Matrix fb(n_mel, nb);
  for (std::size_t m = 0; m < n_mel; ++m) {
    const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < nb; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      if (f > lo && f <= c)
        fb(m, k) = (f - lo) / (c - lo);
      else if (f > c && f < hi)
        fb(m, k) = (hi - f) / (hi - c);
    }
  }
  return fb;
}

struct MelFrames {
  Matrix values;
  std::size_t n_mel = 0;
};

inline MelFrames mel_spectrogram(const Waveform& w, const StftConfig& cfg, std::size_t n_mel) {
  const Matrix fb = mel_filterbank(n_mel, cfg.fft_size, w.sample_rate);
  const auto spec = stft(w, cfg);
  const std::size_t nb = cfg.n_bins();
  MelFrames out{Matrix(spec.n_frames, n_mel), n_mel};
  std::vector<double> mag(nb);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const auto f = spec.frame(t);
    for (std::size_t k = 0; k < nb; ++k) mag[k] = std::abs(f[k]);
    for (std::size_t m = 0; m < n_mel; ++m) out.values(t, m) = floored_log(dot(fb.row(m), mag));
  }
  return out;
}

}  // namespace revmod
