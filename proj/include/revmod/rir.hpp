#pragma once

// Room impulse responses: the fixed-direct-path representation, the trainable
// global RIR, the exponential-noise room simulator and Schroeder T60 analysis.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"

namespace revmod {

struct DecayRangeError : NumericError {
  using NumericError::NumericError;
};

/// Impulse response whose first coefficient (the direct path) is exactly 1.
class Rir {
 public:
  Rir() : h_{1.0}, sample_rate_(1) {}

  /// Builds [1, tail...].
  Rir(std::span<const double> tail, int sample_rate) : sample_rate_(sample_rate) {
    require(sample_rate > 0, "rir: sample rate must be positive");
    if (!all_finite(tail)) throw NumericError("rir: non-finite coefficient");
    h_.reserve(tail.size() + 1);
    h_.push_back(1.0);
    h_.insert(h_.end(), tail.begin(), tail.end());
  }

  /// Validates a full coefficient vector; h[0] must bit-equal 1.0.
  static Rir from_coefficients(std::span<const double> h, int sample_rate) {
    require(!h.empty(), "rir: empty coefficient vector");
    if (h[0] != 1.0)
      throw std::invalid_argument("rir: direct-path coefficient h1 must equal 1.0 (got " + std::to_string(h[0]) + ")");
    return Rir(h.subspan(1), sample_rate);
  }

  static Rir identity(int sample_rate, std::size_t length = 1) {
    require(length >= 1, "rir: length must be at least 1");
    return Rir(std::vector<double>(length - 1, 0.0), sample_rate);
  }

  std::span<const double> coefficients() const { return h_; }
  std::span<const double> tail() const { return std::span<const double>(h_).subspan(1); }
  std::size_t length() const { return h_.size(); }
  int sample_rate() const { return sample_rate_; }

 private:
  std::vector<double> h_;
  int sample_rate_;
};

/// Globally shared trainable RIR. Only the L-1 tail coefficients are free.
struct GtiRir {
  std::vector<double> tail;
  int sample_rate = 0;

  GtiRir() = default;
  GtiRir(std::size_t length, int fs) : tail(checked_tail(length), 0.0), sample_rate(fs) {}

  static std::size_t checked_tail(std::size_t length) {
    require(length >= 1, "gti: RIR length must be at least 1");
    return length - 1;
  }

  std::size_t length() const { return tail.size() + 1; }
  Rir assemble() const { return Rir(tail, sample_rate); }
};

inline Rir assemble(const GtiRir& g) { return g.assemble(); }

/// Gradient w.r.t. the free coefficients given dL/dh over the full vector.
inline std::vector<double> mask_direct_path(std::span<const double> grad_h) {
  return {grad_h.begin() + 1, grad_h.end()};
}

struct RoomSpec {
  std::string room_id;
  double t60 = 0.3;                  // seconds
  double direct_to_reverb_db = 0.0;  // dB
  std::size_t onset_delay = 1;       // samples
  std::uint64_t seed = 0;

  void validate() const {
    require(t60 > 0.0, "room " + room_id + ": t60 must be positive");
    require(onset_delay >= 1, "room " + room_id + ": onset_delay must be at least 1");
  }
};

/// Energy decay range of the simulator envelope over a length-L response.
inline double envelope_decay_db(const RoomSpec& spec, std::size_t length, int fs) {
  if (length <= spec.onset_delay) return 0.0;
  return 60.0 * static_cast<double>(length - 1 - spec.onset_delay) / (spec.t60 * fs);
}

/// Direct path followed by exponentially decaying Gaussian noise with tail
/// energy set by the direct-to-reverberant ratio.
inline Rir synth_rir(const RoomSpec& spec, std::size_t length, int fs) {
  spec.validate();
  require(fs > 0, "synth_rir: sample rate must be positive");
  const double range = envelope_decay_db(spec, length, fs);
  if (range < 30.0)
    throw DecayRangeError("synth_rir: length " + std::to_string(length) + " captures only " + std::to_string(range) +
                          " dB of decay for t60=" + std::to_string(spec.t60) + " s; at least 30 dB is required");
  const double a = std::pow(10.0, -3.0 / (fs * spec.t60));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> tail(length - 1, 0.0);
  double energy = 0.0;
  for (std::size_t n = spec.onset_delay; n < length; ++n) {
    const double v = std::pow(a, static_cast<double>(n)) * gauss(rng);
    tail[n - 1] = v;
    energy += v * v;
  }
  const double target = std::pow(10.0, -spec.direct_to_reverb_db / 10.0);
  const double g = std::sqrt(target / energy);
  for (auto& v : tail) v *= g;
  return Rir(tail, fs);
}

struct EnergyDecayCurve {
  std::vector<double> values;  // dB, values[0] == 0
  int sample_rate = 0;
};

/// Schroeder backward integration, normalized to the total energy.
inline EnergyDecayCurve edc(std::span<const double> h, int fs) {
  require(!h.empty(), "edc: empty impulse response");
  std::vector<double> tail_energy(h.size());
  double acc = 0.0;
  for (std::size_t i = h.size(); i-- > 0;) {
    acc += h[i] * h[i];
    tail_energy[i] = acc;
  }
  if (!(acc > 0.0)) throw NumericError("edc: impulse response has zero energy");
  EnergyDecayCurve out{std::vector<double>(h.size()), fs};
  for (std::size_t i = 0; i < h.size(); ++i) out.values[i] = 10.0 * std::log10(tail_energy[i] / acc);
  out.values[0] = 0.0;
  return out;
}

inline EnergyDecayCurve edc(const Rir& h) { return edc(h.coefficients(), h.sample_rate()); }

inline constexpr double kT60FitStartDb = -5.0;
inline constexpr double kT60FitEndDb = -25.0;

/// T60 by least-squares line fit of the EDC between -5 and -25 dB,
/// extrapolated to -60 dB. A bare impulse yields 0.
inline double estimate_t60(std::span<const double> h, int fs) {
  const auto curve = edc(h, fs);
  const auto& e = curve.values;
  std::size_t first_below = e.size();
  for (std::size_t i = 0; i < e.size(); ++i)
    if (e[i] < kT60FitEndDb) {
      first_below = i;
      break;
    }
  if (first_below <= 2 || e.size() == 1) return 0.0;
  if (first_below == e.size())
    throw DecayRangeError("estimate_t60: energy decay never reaches " + std::to_string(kT60FitEndDb) +
                          " dB; the RIR is too short");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < first_below; ++i) {
    if (e[i] > kT60FitStartDb) continue;
    const double x = static_cast<double>(i) / fs;
    sx += x;
    sy += e[i];
    sxx += x * x;
    sxy += x * e[i];
    ++m;
  }
  if (m < 2) throw NumericError("estimate_t60: fewer than two EDC samples inside the fit window");
  const double mm = static_cast<double>(m);
  const double slope = (mm * sxy - sx * sy) / (mm * sxx - sx * sx);
  if (!(slope < 0.0)) throw NumericError("estimate_t60: non-negative decay slope");
  return -60.0 / slope;
}

inline double estimate_t60(const Rir& h) { return estimate_t60(h.coefficients(), h.sample_rate()); }

struct T60ErrorStats {
  std::size_t n = 0;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  double mean_abs = 0;
};

namespace detail {
// Linear interpolation between closest ranks of a sorted sample.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + (s[hi] - s[lo]) * frac;
}
}  // namespace detail

inline T60ErrorStats error_stats(std::vector<double> errors) {
  require(!errors.empty(), "t60_error_stats: empty input");
  T60ErrorStats st;
  st.n = errors.size();
  double sum = 0.0, sum_abs = 0.0;
  for (double e : errors) {
    sum += e;
    sum_abs += std::abs(e);
  }
  st.mean = sum / static_cast<double>(st.n);
  st.mean_abs = sum_abs / static_cast<double>(st.n);
  std::sort(errors.begin(), errors.end());
  st.min = errors.front();
  st.max = errors.back();
  st.median = detail::quantile_sorted(errors, 0.5);
  st.q1 = detail::quantile_sorted(errors, 0.25);
  st.q3 = detail::quantile_sorted(errors, 0.75);
  return st;
}

/// Summary of signed errors estimate - truth.
inline T60ErrorStats t60_error_stats(std::span<const double> estimates, std::span<const double> truths) {
  require_dims(estimates.size() == truths.size(), "t60_error_stats: estimate and truth lists differ in length");
  require(!estimates.empty(), "t60_error_stats: empty input");
  std::vector<double> err(estimates.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = estimates[i] - truths[i];
  return error_stats(std::move(err));
}

}  // namespace revmod
