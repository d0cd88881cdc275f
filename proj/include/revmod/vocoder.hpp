#pragma once

// Minimal trainable source-filter generator: harmonic sine excitation with
// Gaussian noise in unvoiced regions, shaped by an FIR filter whose first tap
// is fixed to 1.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "revmod/convolution.hpp"
#include "revmod/core.hpp"

namespace revmod {

struct F0Track {
  std::vector<double> f0;         // Hz per frame
  std::vector<std::uint8_t> vuv;  // 1 = voiced
  std::vector<std::uint8_t> active;  // 0 = silent pause; empty means all active
  std::size_t frame_shift = 80;   // samples
  int sample_rate = 8000;

  std::size_t n_frames() const { return f0.size(); }
  std::size_t n_samples() const { return f0.size() * frame_shift; }
  bool is_active(std::size_t frame) const { return active.empty() || active[frame] != 0; }

  void validate() const {
    require_dims(f0.size() == vuv.size(), "f0 track: f0 and vuv lengths differ");
    require_dims(active.empty() || active.size() == f0.size(), "f0 track: activity mask length differs");
    require(frame_shift >= 1 && sample_rate > 0, "f0 track: invalid frame shift or sample rate");
    for (std::size_t i = 0; i < f0.size(); ++i)
      require(!vuv[i] || f0[i] > 0.0, "f0 track: voiced frame with non-positive f0");
  }
};

struct SourceComponents {
  std::vector<double> harmonic;
  std::vector<double> noise;
  int sample_rate = 0;
};

/// Harmonic and noise parts of the excitation, kept separate so a noise gain
/// can be applied (and differentiated) downstream.
inline SourceComponents sine_source_components(const F0Track& track, std::size_t harmonics, double amp,
                                               std::uint64_t seed) {
  track.validate();
  require(harmonics >= 1, "sine_source: at least one harmonic is required");
  const std::size_t T = track.n_samples();
  const double fs = track.sample_rate;
  SourceComponents out{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0), track.sample_rate};
  std::vector<double> phase(harmonics, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, amp / 3.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t fr = t / track.frame_shift;
    const double f0 = track.f0[fr];
    if (!track.is_active(fr)) continue;
    if (track.vuv[fr]) {
      double s = 0.0;
      for (std::size_t k = 1; k <= harmonics; ++k) {
        if (static_cast<double>(k) * f0 >= fs / 2.0) break;
        s += std::sin(phase[k - 1]) / static_cast<double>(k);
        phase[k - 1] = std::fmod(phase[k - 1] + two_pi * static_cast<double>(k) * f0 / fs, two_pi);
      }
      out.harmonic[t] = amp * s;
    } else {
      out.noise[t] = gauss(rng);
    }
  }
  return out;
}

inline Waveform sine_source(const F0Track& track, std::size_t harmonics, double amp, std::uint64_t seed) {
  auto c = sine_source_components(track, harmonics, amp, seed);
  std::vector<double> s(c.harmonic.size());
  for (std::size_t t = 0; t < s.size(); ++t) s[t] = c.harmonic[t] + c.noise[t];
  return {std::move(s), c.sample_rate};
}

struct ToyVocoderParams {
  Tensor fir_tail;    // [K-1]; the full filter is [1, fir_tail...]
  Tensor noise_gain;  // [1]

  static constexpr std::size_t kGroups = 2;

  explicit ToyVocoderParams(std::size_t fir_length = 32) : fir_tail({checked_tail(fir_length)}), noise_gain({1}, 1.0) {}

  std::size_t fir_length() const { return fir_tail.size() + 1; }

  static std::size_t checked_tail(std::size_t fir_length) {
    require(fir_length >= 1, "vocoder: FIR length must be at least 1");
    return fir_length - 1;
  }

  std::vector<double> fir() const {
    std::vector<double> f{1.0};
    f.insert(f.end(), fir_tail.data.begin(), fir_tail.data.end());
    return f;
  }

  std::array<std::pair<const char*, Tensor*>, kGroups> groups() {
    return {{{"vocoder.fir_tail", &fir_tail}, {"vocoder.noise_gain", &noise_gain}}};
  }
  std::array<std::pair<const char*, const Tensor*>, kGroups> groups() const {
    return {{{"vocoder.fir_tail", &fir_tail}, {"vocoder.noise_gain", &noise_gain}}};
  }

  std::uint64_t fingerprint() const { return fnv1a(noise_gain.data, fnv1a(fir_tail.data)); }

  static ToyVocoderParams zeros_like(const ToyVocoderParams& p) {
    ToyVocoderParams g(p.fir_length());
    g.noise_gain[0] = 0.0;
    return g;
  }
};

/// harmonic + noise_gain * noise
inline Waveform excite(const ToyVocoderParams& p, const SourceComponents& c) {
  std::vector<double> s(c.harmonic.size());
  const double gain = p.noise_gain[0];
  for (std::size_t t = 0; t < s.size(); ++t) s[t] = c.harmonic[t] + gain * c.noise[t];
  return {std::move(s), c.sample_rate};
}

/// dL/d(noise_gain) given dL/d(source).
inline double excite_backward(const SourceComponents& c, std::span<const double> grad_source) {
  require_dims(grad_source.size() == c.noise.size(), "excite_backward: length mismatch");
  return dot(c.noise, grad_source);
}

struct VocoderCache {
  std::vector<double> source;
  std::uint64_t params_fingerprint = 0;
};

inline Waveform vocoder_forward(const ToyVocoderParams& p, const Waveform& source, VocoderCache* cache = nullptr) {
  const auto fir = p.fir();
  if (cache) {
    cache->source = source.samples;
    cache->params_fingerprint = p.fingerprint();
  }
  return convolve_fft(source, fir);
}

struct VocoderGrad {
  ToyVocoderParams params;
  std::vector<double> grad_source;
};

/// FIR-tail gradient via the convolution adjoint; the fixed first tap is
/// dropped. noise_gain receives no gradient here (see excite_backward).
inline VocoderGrad vocoder_backward(const ToyVocoderParams& p, const VocoderCache& cache,
                                    std::span<const double> grad_dry) {
  if (cache.params_fingerprint != p.fingerprint() || cache.source.empty())
    throw std::invalid_argument("vocoder_backward: cache does not belong to these parameters");
  const auto fir = p.fir();
  auto cg = convolve_grad(cache.source, fir, grad_dry);
  VocoderGrad out{ToyVocoderParams::zeros_like(p), std::move(cg.grad_dry)};
  for (std::size_t k = 1; k < fir.size(); ++k) out.params.fir_tail[k - 1] = cg.grad_rir[k];
  return out;
}

/// Gradient over the full filter; the fixed first tap always receives 0.
inline std::vector<double> vocoder_full_fir_grad(const VocoderGrad& g) {
  std::vector<double> full{0.0};
  full.insert(full.end(), g.params.fir_tail.data.begin(), g.params.fir_tail.data.end());
  return full;
}

}  // namespace revmod
