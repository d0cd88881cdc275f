#pragma once

// Training objectives with analytic gradients w.r.t. the generated samples.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"
#include "revmod/features.hpp"

namespace revmod {

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // dL/d(generated samples)
};

struct MrsdConfig {
  std::vector<StftConfig> resolutions;

  void validate() const {
    require(!resolutions.empty(), "mrsd: at least one resolution is required");
    for (const auto& r : resolutions) r.validate();
  }

  /// 8 kHz resolutions: 40 ms / 10 ms / 80 ms frames.
  static MrsdConfig desk_default() {
    return {{{512, 320, 80, Window::hann}, {128, 80, 40, Window::hann}, {1024, 640, 160, Window::hann}}};
  }
};

/// Log-magnitude spectra of a reference signal, one entry per resolution.
struct MrsdReference {
  std::vector<LasFrames> spectra;
  std::size_t n_samples = 0;
};

inline MrsdReference make_mrsd_reference(std::span<const double> ref, const MrsdConfig& cfg) {
  cfg.validate();
  MrsdReference out;
  out.n_samples = ref.size();
  for (const auto& r : cfg.resolutions) out.spectra.push_back(las(ref, r));
  return out;
}

namespace detail {
// Mean squared log-magnitude distance for one resolution; adds its gradient into `grad`.
inline double log_spectral_mse(std::span<const double> gen, const LasFrames& ref, std::span<double> grad) {
  const auto& cfg = ref.config;
  const auto X = stft(gen, cfg);
  const std::size_t nf = X.n_frames, nb = cfg.n_bins();
  require_dims(nf == ref.n_frames() && nb == ref.n_bins(), "log spectral distance: frame layout mismatch");
  const double inv = 1.0 / static_cast<double>(nf * nb);
  double loss = 0.0;
  std::vector<cplx> G(nf * nb);
  for (std::size_t t = 0; t < nf; ++t) {
    const auto f = X.frame(t);
    for (std::size_t k = 0; k < nb; ++k) {
      const double mag = std::sqrt(std::norm(f[k]));
      const double diff = floored_log(mag) - ref.values(t, k);
      loss += diff * diff;
      // d ln|X| / d(Re, Im) = (Re, Im) / |X|^2 above the floor, zero otherwise
      if (mag > kAmplitudeFloor) G[t * nb + k] = (2.0 * diff * inv / (mag * mag)) * f[k];
    }
  }
  const auto dx = stft_backward(G, gen.size(), cfg);
  for (std::size_t i = 0; i < dx.size(); ++i) grad[i] += dx[i];
  return loss * inv;
}
}  // namespace detail

/// Sum over resolutions of the mean squared natural-log magnitude difference.
inline LossResult mrsd_loss(std::span<const double> gen, const MrsdReference& ref) {
  require_dims(gen.size() == ref.n_samples, "mrsd: generated and reference lengths differ");
  LossResult out{0.0, std::vector<double>(gen.size(), 0.0)};
  for (const auto& spec : ref.spectra) out.value += detail::log_spectral_mse(gen, spec, out.grad);
  return out;
}

inline LossResult mrsd_loss(std::span<const double> gen, std::span<const double> ref, const MrsdConfig& cfg) {
  require_dims(gen.size() == ref.size(), "mrsd: generated and reference lengths differ");
  return mrsd_loss(gen, make_mrsd_reference(ref, cfg));
}

inline LossResult mrsd_loss(const Waveform& gen, const Waveform& ref, const MrsdConfig& cfg) {
  return mrsd_loss(gen.view(), ref.view(), cfg);
}

/// Mean squared sample error.
inline LossResult waveform_mse(std::span<const double> gen, std::span<const double> ref) {
  require_dims(gen.size() == ref.size(), "waveform mse: lengths differ");
  require(!gen.empty(), "waveform mse: empty input");
  LossResult out{0.0, std::vector<double>(gen.size())};
  const double inv = 1.0 / static_cast<double>(gen.size());
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const double d = gen[i] - ref[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d * inv;
  }
  out.value *= inv;
  return out;
}

/// 1 - Pearson correlation. Zero-variance input counts as zero correlation.
inline LossResult correlation_loss(std::span<const double> gen, std::span<const double> ref) {
  require_dims(gen.size() == ref.size(), "correlation loss: lengths differ");
  require(!gen.empty(), "correlation loss: empty input");
  const std::size_t n = gen.size();
  double mg = 0, mr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mg += gen[i];
    mr += ref[i];
  }
  mg /= static_cast<double>(n);
  mr /= static_cast<double>(n);
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = gen[i] - mg;
    b[i] = ref[i] - mr;
  }
  const double na = std::sqrt(sum_squares(a)), nb = std::sqrt(sum_squares(b));
  LossResult out{1.0, std::vector<double>(n, 0.0)};
  constexpr double kEps = 1e-8;
  if (na * nb < kEps) return out;
  const double rho = dot(a, b) / (na * nb);
  out.value = 1.0 - rho;
  // d rho / d gen = b / (|a||b|) - rho a / |a|^2 (both already centered)
  for (std::size_t i = 0; i < n; ++i) out.grad[i] = -(b[i] / (na * nb) - rho * a[i] / (na * na));
  return out;
}

struct SecondaryLossConfig {
  double w_las = 1.0;
  double w_wave = 1.0;
  double w_corr = 1.0;
  StftConfig las_config = StftConfig::desk_default();
};

struct SecondaryLossResult {
  LossResult total;
  double las_mse = 0.0;
  double wave_mse = 0.0;
  double corr = 0.0;
};

/// Weighted LAS-MSE + waveform MSE + correlation loss between generated and natural dry audio.
inline SecondaryLossResult secondary_dry_loss(std::span<const double> gen, std::span<const double> ref,
                                              const SecondaryLossConfig& cfg) {
  require_dims(gen.size() == ref.size(), "secondary loss: lengths differ");
  SecondaryLossResult out;
  out.total.grad.assign(gen.size(), 0.0);
  std::vector<double> g_las(gen.size(), 0.0);
  out.las_mse = detail::log_spectral_mse(gen, las(ref, cfg.las_config), g_las);
  const auto wave = waveform_mse(gen, ref);
  const auto corr = correlation_loss(gen, ref);
  out.wave_mse = wave.value;
  out.corr = corr.value;
  out.total.value = cfg.w_las * out.las_mse + cfg.w_wave * wave.value + cfg.w_corr * corr.value;
  for (std::size_t i = 0; i < gen.size(); ++i)
    out.total.grad[i] = cfg.w_las * g_las[i] + cfg.w_wave * wave.grad[i] + cfg.w_corr * corr.grad[i];
  return out;
}

inline SecondaryLossResult secondary_dry_loss(const Waveform& gen, const Waveform& ref,
                                              const SecondaryLossConfig& cfg = {}) {
  return secondary_dry_loss(gen.view(), ref.view(), cfg);
}

/// LAS mean squared error on one STFT configuration (evaluation metric).
inline double las_mse(std::span<const double> gen, std::span<const double> ref, const StftConfig& cfg) {
  require_dims(gen.size() == ref.size(), "las mse: lengths differ");
  std::vector<double> scratch(gen.size(), 0.0);
  return detail::log_spectral_mse(gen, las(ref, cfg), scratch);
}

struct MultitaskLoss {
  double total = 0.0;
  double main = 0.0;
  double secondary = 0.0;
};

/// Sum of the main (reverberant) and weighted secondary (dry) objectives.
/// Gradients combine at the dry signal: the secondary term reaches only
/// parameters upstream of the reverberation module.
inline MultitaskLoss multitask_loss(double main, double secondary, double secondary_weight = 1.0) {
  return {main + secondary_weight * secondary, main, secondary};
}

inline std::vector<double> multitask_dry_grad(std::span<const double> main_dry_grad,
                                              std::span<const double> secondary_grad, double secondary_weight) {
  require_dims(main_dry_grad.size() == secondary_grad.size(), "multitask: gradient lengths differ");
  std::vector<double> g(main_dry_grad.begin(), main_dry_grad.end());
  if (secondary_weight != 0.0)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += secondary_weight * secondary_grad[i];
  return g;
}

}  // namespace revmod
