#pragma once

// Gradient self-checks on tiny configurations for every analytic backward
// path. Shared by the command-line `gradcheck` and the acceptance run.

#include <random>
#include <string>
#include <vector>

#include "revmod/gradcheck.hpp"
#include "revmod/train.hpp"

namespace revmod {

struct SelfCheckResult {
  std::string name;
  double tolerance = 0.0;
  GradCheckReport report;
};

inline TrainHyper selfcheck_hyper(MainLoss loss) {
  TrainHyper h;
  h.main_loss = loss;
  h.mrsd = MrsdConfig{{{128, 96, 48, Window::hann}, {64, 40, 20, Window::hann}}};
  h.features = {16, 16, 8, Window::hann};
  h.secondary.las_config = {64, 48, 24, Window::hann};
  return h;
}

namespace detail {

inline std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Broadband dry signals through short synthetic rooms: every STFT bin sits
// well above the log floor, so central differences of the log loss are accurate.
inline TrainingData selfcheck_data(MainLoss loss, std::uint64_t seed, std::size_t n_utts = 2) {
  std::mt19937_64 rng(seed);
  std::vector<Utterance> utts;
  for (std::size_t i = 0; i < n_utts; ++i) {
    const RoomSpec room{"c" + std::to_string(i), 0.02 + 0.01 * static_cast<double>(i), 0.0, 1, seed + i};
    Utterance u;
    u.utt_id = room.room_id;
    u.room_id = room.room_id;
    u.t60_truth = room.t60;
    u.dry = Waveform(gaussian(1200, rng, 0.1), 8000);
    u.reverb = Waveform(convolve_fft(u.dry.view(), synth_rir(room, 256, 8000).coefficients()), 8000);
    utts.push_back(std::move(u));
  }
  return prepare_training_data(utts, selfcheck_hyper(loss));
}

}  // namespace detail

inline std::vector<SelfCheckResult> selfcheck_losses(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<SelfCheckResult> out;
  const auto ref = detail::gaussian(512, rng, 1.0);
  const auto gen0 = detail::gaussian(512, rng, 1.0);
  const MrsdConfig one{{{128, 96, 48, Window::hann}}};
  const auto R = make_mrsd_reference(ref, one);
  out.push_back({"losses.mrsd", 1e-5,
                 grad_check([&](std::span<const double> x) { return mrsd_loss(x, R).value; }, gen0,
                            mrsd_loss(gen0, R).grad, 1e-4, 1e-5)});
  const SecondaryLossConfig sc{1.0, 1.0, 1.0, {128, 96, 48, Window::hann}};
  out.push_back({"losses.secondary", 1e-5,
                 grad_check([&](std::span<const double> x) { return secondary_dry_loss(x, ref, sc).total.value; },
                            gen0, secondary_dry_loss(gen0, ref, sc).total.grad, 1e-5, 1e-5)});
  return out;
}

inline std::vector<SelfCheckResult> selfcheck_vocoder(std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  ToyVocoderParams p(8);
  p.fir_tail.data = detail::gaussian(7, rng, 0.3);
  p.noise_gain[0] = 0.8;
  const SourceComponents comps{detail::gaussian(300, rng, 1.0), detail::gaussian(300, rng, 0.2), 8000};
  const auto target = detail::gaussian(300, rng, 1.0);
  auto loss = [&] {
    const auto d = vocoder_forward(p, excite(p, comps));
    double l = 0;
    for (std::size_t i = 0; i < d.size(); ++i) l += 0.5 * (d.samples[i] - target[i]) * (d.samples[i] - target[i]);
    return l;
  };
  VocoderCache c;
  const auto d = vocoder_forward(p, excite(p, comps), &c);
  std::vector<double> gd(d.size());
  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = d.samples[i] - target[i];
  auto g = vocoder_backward(p, c, gd);
  g.params.noise_gain[0] = excite_backward(comps, g.grad_source);
  const std::vector<GradCheckTarget> t{{"vocoder.fir_tail", p.fir_tail.data, g.params.fir_tail.data},
                                       {"vocoder.noise_gain", p.noise_gain.data, g.params.noise_gain.data}};
  return {{"vocoder", 1e-6, grad_check(loss, t, 1e-6, 1e-6)}};
}

inline std::vector<SelfCheckResult> selfcheck_gti(std::uint64_t seed = 3) {
  std::vector<SelfCheckResult> out;
  for (MainLoss kind : {MainLoss::waveform_mse, MainLoss::mrsd}) {
    const auto td = detail::selfcheck_data(kind, seed, 3);
    std::mt19937_64 rng(seed + 10);
    GtiRir g(24, 8000);
    g.tail = detail::gaussian(23, rng, 0.05);
    detail::ConvolverCache cc(td, g.length());
    const std::vector<std::size_t> batch{0, 1, 2, 0};
    const auto l = gti_batch_loss(td, g, batch, cc);
    const std::vector<GradCheckTarget> t{{"gti.tail", g.tail, l.grad}};
    out.push_back({"gti." + to_string(kind), 1e-5,
                   grad_check([&] { return gti_batch_loss(td, g, batch, cc).value; }, t, 1e-5, 1e-5)});
  }
  return out;
}

inline std::vector<SelfCheckResult> selfcheck_utv(std::uint64_t seed = 4) {
  std::vector<SelfCheckResult> out;
  const UtvConfig cfg{9, 4, 4, 3, 32};
  for (MainLoss kind : {MainLoss::waveform_mse, MainLoss::mrsd}) {
    const auto td = detail::selfcheck_data(kind, seed, 2);
    auto p = UtvEstimatorParams::zeros(cfg);
    std::mt19937_64 rng(seed + 20);
    for (auto& [name, t] : p.groups()) t->data = detail::gaussian(t->data.size(), rng, 0.3);
    detail::ConvolverCache cc(td, cfg.rir_length);
    const std::vector<std::size_t> batch{0, 1};
    const auto grads = utv_batch_loss(td, p, batch, cc).second;
    std::vector<GradCheckTarget> t;
    auto pg = p.groups();
    auto gg = grads.groups();
    for (std::size_t i = 0; i < pg.size(); ++i) t.push_back({pg[i].first, pg[i].second->data, gg[i].second->data});
    // tiny components sit near roundoff, so the step cannot shrink much further
    out.push_back({"utv." + to_string(kind), 1e-4,
                   grad_check([&] { return utv_batch_loss(td, p, batch, cc).first; }, t, 3e-5, 1e-4)});
  }
  return out;
}

/// module: all | gti | utv | vocoder | losses
inline std::vector<SelfCheckResult> run_selfcheck(const std::string& module) {
  require(module == "all" || module == "gti" || module == "utv" || module == "vocoder" || module == "losses",
          "gradcheck: unknown module '" + module + "'");
  std::vector<SelfCheckResult> out;
  auto add = [&](std::vector<SelfCheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (module == "all" || module == "losses") add(selfcheck_losses());
  if (module == "all" || module == "vocoder") add(selfcheck_vocoder());
  if (module == "all" || module == "gti") add(selfcheck_gti());
  if (module == "all" || module == "utv") add(selfcheck_utv());
  return out;
}

}  // namespace revmod
