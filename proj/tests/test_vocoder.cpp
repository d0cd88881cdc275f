#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "revmod/gradcheck.hpp"
#include "revmod/vocoder.hpp"

using namespace revmod;

namespace {

F0Track constant_track(double f0, std::size_t frames, bool voiced = true) {
  F0Track t;
  t.f0.assign(frames, f0);
  t.vuv.assign(frames, voiced ? 1 : 0);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(SineSource, SingleHarmonicIsSinusoid) {
  const auto s = sine_source(constant_track(100.0, 10), 1, 0.1, 0);
  ASSERT_EQ(s.size(), 800u);
  EXPECT_EQ(s.sample_rate, 8000);
  for (std::size_t t = 0; t < s.size(); ++t)
    EXPECT_NEAR(s.samples[t], 0.1 * std::sin(2.0 * std::numbers::pi * 100.0 * t / 8000.0), 1e-9);
}

TEST(SineSource, UnvoicedNoiseDeterministic) {
  const auto tr = constant_track(0.0, 20, false);
  const auto a = sine_source(tr, 4, 0.3, 9), b = sine_source(tr, 4, 0.3, 9), c = sine_source(tr, 4, 0.3, 10);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
  double ss = 0;
  for (double v : a.samples) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / a.size()), 0.1, 0.01);  // std = amp / 3
}

TEST(SineSource, PhaseContinuousAcrossF0Step) {
  auto tr = constant_track(100.0, 20);
  for (std::size_t i = 10; i < 20; ++i) tr.f0[i] = 200.0;
  const double amp = 0.1;
  const auto s = sine_source(tr, 3, amp, 0);
  double max_jump = 0;
  for (std::size_t t = 1; t < s.size(); ++t) max_jump = std::max(max_jump, std::abs(s.samples[t] - s.samples[t - 1]));
  // derivative bound: amp * sum_k (1/k) * 2 pi k f0 / fs = amp * H * 2 pi f0 / fs
  const double bound = amp * 3.0 * 2.0 * std::numbers::pi * 200.0 / 8000.0;
  EXPECT_LE(max_jump, bound + 1e-12);
  EXPECT_LT(max_jump, 2.0 * amp);
}

TEST(SineSource, BoundedByHarmonicSum) {
  const auto s = sine_source(constant_track(137.0, 50), 5, 0.2, 0);
  const double bound = 0.2 * (1 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4 + 1.0 / 5);
  for (double v : s.samples) EXPECT_LE(std::abs(v), bound + 1e-12);
}

TEST(SineSource, HarmonicsAboveNyquistDropped) {
  // 3000 Hz: only the first harmonic is below 4 kHz
  const auto a = sine_source(constant_track(3000.0, 4), 8, 0.1, 0);
  const auto b = sine_source(constant_track(3000.0, 4), 1, 0.1, 0);
  EXPECT_EQ(a.samples, b.samples);
}

TEST(SineSource, SilentFramesAreZero) {
  auto tr = constant_track(120.0, 6);
  tr.vuv[4] = 0;
  tr.active = {1, 1, 0, 1, 0, 1};
  const auto s = sine_source(tr, 2, 0.1, 3);
  for (std::size_t t = 160; t < 240; ++t) EXPECT_EQ(s.samples[t], 0.0);
  for (std::size_t t = 320; t < 400; ++t) EXPECT_EQ(s.samples[t], 0.0);
  EXPECT_NE(s.samples[250], 0.0);
}

TEST(SineSource, InvalidInputsThrow) {
  EXPECT_THROW(sine_source(constant_track(100.0, 3), 0, 0.1, 0), std::invalid_argument);
  auto tr = constant_track(100.0, 3);
  tr.f0[1] = 0.0;
  EXPECT_THROW(sine_source(tr, 1, 0.1, 0), std::invalid_argument);
  auto tr2 = constant_track(100.0, 3);
  tr2.vuv.pop_back();
  EXPECT_THROW(sine_source(tr2, 1, 0.1, 0), DimensionError);
}

TEST(Vocoder, UnitFirIsIdentity) {
  const ToyVocoderParams p(1);
  const Waveform s(random_vec(100, 1), 8000);
  EXPECT_EQ(vocoder_forward(p, s).samples, s.samples);
}

TEST(Vocoder, HandComputedFir) {
  ToyVocoderParams p(2);
  p.fir_tail[0] = 0.5;
  const auto d = vocoder_forward(p, Waveform({1, 2, 3}, 8000));
  ASSERT_EQ(d.size(), 3u);
  EXPECT_NEAR(d.samples[0], 1.0, 1e-12);
  EXPECT_NEAR(d.samples[1], 2.5, 1e-12);
  EXPECT_NEAR(d.samples[2], 4.0, 1e-12);
}

TEST(Vocoder, LinearInSource) {
  ToyVocoderParams p(8);
  p.fir_tail.data = random_vec(7, 2, 0.3);
  const auto s = random_vec(300, 3);
  auto s2 = s;
  for (auto& v : s2) v *= 2.0;
  const auto a = vocoder_forward(p, Waveform(s, 8000)), b = vocoder_forward(p, Waveform(s2, 8000));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.samples[i], 2.0 * a.samples[i], 1e-12);
}

TEST(Vocoder, ZeroUpstreamGradient) {
  ToyVocoderParams p(8);
  VocoderCache c;
  vocoder_forward(p, Waveform(random_vec(200, 4), 8000), &c);
  const auto g = vocoder_backward(p, c, std::vector<double>(200, 0.0));
  for (double v : g.params.fir_tail.data) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_source) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.params.noise_gain[0], 0.0);
}

TEST(Vocoder, FirGradientMatchesFiniteDifferences) {
  ToyVocoderParams p(8);
  p.fir_tail.data = random_vec(7, 5, 0.3);
  const auto comps = SourceComponents{random_vec(200, 6), random_vec(200, 7, 0.2), 8000};
  const auto target = random_vec(200, 8);
  auto loss_of = [&](const ToyVocoderParams& q) {
    const auto d = vocoder_forward(q, excite(q, comps));
    double l = 0;
    for (std::size_t i = 0; i < d.size(); ++i) l += 0.5 * (d.samples[i] - target[i]) * (d.samples[i] - target[i]);
    return l;
  };
  VocoderCache c;
  const auto d = vocoder_forward(p, excite(p, comps), &c);
  std::vector<double> gd(200);
  for (std::size_t i = 0; i < 200; ++i) gd[i] = d.samples[i] - target[i];
  auto g = vocoder_backward(p, c, gd);
  g.params.noise_gain[0] = excite_backward(comps, g.grad_source);
  const std::vector<GradCheckTarget> targets{{"fir_tail", p.fir_tail.data, g.params.fir_tail.data},
                                             {"noise_gain", p.noise_gain.data, g.params.noise_gain.data}};
  const auto rep = grad_check([&] { return loss_of(p); }, targets, 1e-6, 1e-6);
  for (const auto& grp : rep.groups) EXPECT_TRUE(grp.pass) << grp.name << " " << grp.max_rel_error;
}

TEST(Vocoder, SourceGradientMatchesFiniteDifferences) {
  ToyVocoderParams p(8);
  p.fir_tail.data = random_vec(7, 9, 0.3);
  auto s = random_vec(200, 10);
  const auto w = random_vec(200, 11);
  VocoderCache c;
  vocoder_forward(p, Waveform(s, 8000), &c);
  const auto g = vocoder_backward(p, c, w);
  const auto rep = grad_check(
      [&](std::span<const double> x) {
        return dot(vocoder_forward(p, Waveform(std::vector<double>(x.begin(), x.end()), 8000)).samples, w);
      },
      s, g.grad_source, 1e-4, 1e-6);  // linear in the source, so a wide step only cuts roundoff
  EXPECT_TRUE(rep.pass) << rep.max_rel_error;
}

TEST(Vocoder, FirstTapFixed) {
  ToyVocoderParams p(4);
  EXPECT_EQ(p.fir()[0], 1.0);
  EXPECT_EQ(p.fir_tail.size(), 3u);
  p.fir_tail.data = {5, 6, 7};
  EXPECT_EQ(p.fir(), (std::vector<double>{1, 5, 6, 7}));
  const auto full = vocoder_full_fir_grad(vocoder_backward(p, [&] {
    VocoderCache c;
    vocoder_forward(p, Waveform(random_vec(50, 12), 8000), &c);
    return c;
  }(), random_vec(50, 13)));
  ASSERT_EQ(full.size(), 4u);
  EXPECT_EQ(full[0], 0.0);
}

TEST(Vocoder, StaleCacheThrows) {
  ToyVocoderParams p(4);
  VocoderCache c;
  vocoder_forward(p, Waveform(random_vec(50, 14), 8000), &c);
  p.fir_tail[0] = 0.3;
  EXPECT_THROW(vocoder_backward(p, c, random_vec(50, 15)), std::invalid_argument);
}

TEST(Vocoder, ZeroLengthFirRejected) {
  EXPECT_THROW(ToyVocoderParams(0), std::invalid_argument);
}
