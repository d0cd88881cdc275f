#include <gtest/gtest.h>

#include "revmod/convolution.hpp"
#include "revmod/rir.hpp"

using namespace revmod;

namespace {
std::vector<double> exponential(double t60, int fs, std::size_t L) {
  const double a = std::pow(10.0, -3.0 / (fs * t60));
  std::vector<double> h(L);
  for (std::size_t n = 0; n < L; ++n) h[n] = std::pow(a, static_cast<double>(n));
  return h;
}
}  // namespace

TEST(Assemble, EmptyTailIsIdentity) {
  const auto h = Rir(std::vector<double>{}, 8000);
  ASSERT_EQ(h.length(), 1u);
  EXPECT_EQ(h.coefficients()[0], 1.0);
}

TEST(Assemble, ZeroTailLeavesSignalUnchanged) {
  const GtiRir g(4, 8000);
  const auto h = g.assemble();
  EXPECT_EQ(std::vector<double>(h.coefficients().begin(), h.coefficients().end()), (std::vector<double>{1, 0, 0, 0}));
  const std::vector<double> d{0.3, -0.7, 0.11, 0.5, 0.25};
  EXPECT_EQ(convolve_fft(d, h.coefficients()), d);
  EXPECT_EQ(convolve_direct(d, h.coefficients()), d);
}

TEST(Assemble, DirectConstruction) {
  GtiRir g(3, 8000);
  g.tail = {0.5, 0.25};
  const auto h = assemble(g);
  EXPECT_EQ(std::vector<double>(h.coefficients().begin(), h.coefficients().end()), (std::vector<double>{1, 0.5, 0.25}));
}

TEST(Assemble, GradientMaskDropsDirectPath) {
  const std::vector<double> g{9, 1, 2};
  EXPECT_EQ(mask_direct_path(g), (std::vector<double>{1, 2}));
}

TEST(Rir, FromCoefficientsRequiresUnitDirectPath) {
  const std::vector<double> ok{1.0, 0.2}, bad{0.9, 0.2};
  EXPECT_EQ(Rir::from_coefficients(ok, 8000).tail()[0], 0.2);
  EXPECT_THROW(Rir::from_coefficients(bad, 8000), std::invalid_argument);
  EXPECT_THROW(Rir::from_coefficients(std::vector<double>{}, 8000), std::invalid_argument);
  const std::vector<double> nan{1.0, std::nan("")};
  EXPECT_THROW(Rir::from_coefficients(nan, 8000), NumericError);
  EXPECT_THROW(Rir::identity(8000, 0), std::invalid_argument);
}

TEST(SynthRir, Deterministic) {
  const RoomSpec spec{"a", 0.3, 3.0, 1, 42};
  const auto a = synth_rir(spec, 4096, 8000), b = synth_rir(spec, 4096, 8000);
  ASSERT_EQ(a.length(), b.length());
  for (std::size_t i = 0; i < a.length(); ++i) EXPECT_EQ(a.coefficients()[i], b.coefficients()[i]);
  const auto c = synth_rir({"a", 0.3, 3.0, 1, 43}, 4096, 8000);
  EXPECT_NE(a.coefficients()[5], c.coefficients()[5]);
}

TEST(SynthRir, ZeroDrrGivesUnitTailEnergy) {
  const auto h = synth_rir({"a", 0.2, 0.0, 1, 1}, 2048, 8000);
  EXPECT_EQ(h.coefficients()[0], 1.0);
  EXPECT_NEAR(sum_squares(h.tail()), 1.0, 1e-12);
}

TEST(SynthRir, DrrSetsTailEnergy) {
  const auto h = synth_rir({"a", 0.2, 6.0, 1, 1}, 2048, 8000);
  EXPECT_NEAR(10.0 * std::log10(1.0 / sum_squares(h.tail())), 6.0, 1e-9);
}

TEST(SynthRir, OnsetDelayLeavesLeadingZeros) {
  const auto h = synth_rir({"a", 0.2, 0.0, 5, 1}, 2048, 8000);
  for (std::size_t n = 1; n < 5; ++n) EXPECT_EQ(h.coefficients()[n], 0.0);
  EXPECT_NE(h.coefficients()[5], 0.0);
}

TEST(SynthRir, T60Recovered) {
  EXPECT_NEAR(estimate_t60(synth_rir({"a", 0.3, 0.0, 1, 7}, 4096, 8000)), 0.3, 0.03);
  EXPECT_NEAR(estimate_t60(synth_rir({"b", 0.15, 0.0, 1, 7}, 2048, 8000)), 0.15, 0.015);
}

TEST(SynthRir, TooShortThrows) {
  // 256 taps cover only ~12 dB of a 0.15 s decay at 8 kHz
  EXPECT_THROW(synth_rir({"a", 0.15, 0.0, 1, 1}, 256, 8000), DecayRangeError);
  EXPECT_NO_THROW(synth_rir({"a", 0.15, 0.0, 1, 1}, 602, 8000));
}

TEST(SynthRir, InvalidSpecThrows) {
  EXPECT_THROW(synth_rir({"a", 0.0, 0.0, 1, 1}, 2048, 8000), std::invalid_argument);
  EXPECT_THROW(synth_rir({"a", 0.2, 0.0, 0, 1}, 2048, 8000), std::invalid_argument);
}

TEST(Edc, SingleTap) {
  const std::vector<double> h{1};
  const auto e = edc(h, 8000);
  EXPECT_EQ(e.values, (std::vector<double>{0.0}));
}

TEST(Edc, TwoEqualTaps) {
  const std::vector<double> h{1, 1};
  const auto e = edc(h, 8000);
  EXPECT_EQ(e.values[0], 0.0);
  EXPECT_NEAR(e.values[1], -3.0103, 1e-4);
}

TEST(Edc, ExponentialIsLinearInDb) {
  const double a = 0.99;
  std::vector<double> h(400);
  for (std::size_t n = 0; n < h.size(); ++n) h[n] = std::pow(a, static_cast<double>(n));
  const auto e = edc(h, 8000);
  // finite geometric sums: (a^2n - a^2L) / (1 - a^2L)
  const double aL = std::pow(a, 2.0 * h.size());
  for (std::size_t n = 0; n < 100; ++n)
    EXPECT_NEAR(e.values[n], 10.0 * std::log10((std::pow(a, 2.0 * n) - aL) / (1.0 - aL)), 1e-9);
}

TEST(Edc, MonotoneNonIncreasing) {
  const auto h = synth_rir({"a", 0.25, 2.0, 3, 11}, 3000, 8000);
  const auto e = edc(h);
  for (std::size_t n = 1; n < e.values.size(); ++n) EXPECT_LE(e.values[n], e.values[n - 1]);
}

TEST(Edc, ZeroEnergyThrows) {
  const std::vector<double> h(10, 0.0);
  EXPECT_THROW(edc(h, 8000), NumericError);
}

TEST(EstimateT60, ClosedFormExponential) {
  for (int fs : {8000, 24000})
    for (double t60 : {0.1, 0.2, 0.3, 0.5}) {
      const auto h = exponential(t60, fs, static_cast<std::size_t>(t60 * fs));
      EXPECT_NEAR(estimate_t60(h, fs), t60, 0.02 * t60) << t60 << " @ " << fs;
    }
}

TEST(EstimateT60, BareImpulseIsZero) {
  const std::vector<double> h{1};
  EXPECT_EQ(estimate_t60(h, 8000), 0.0);
  std::vector<double> h3{1, 0, 0, 0};
  EXPECT_EQ(estimate_t60(h3, 8000), 0.0);
}

TEST(EstimateT60, InsufficientDecayThrows) {
  const auto h = exponential(0.5, 8000, 200);  // ~3 dB of decay
  EXPECT_THROW(estimate_t60(h, 8000), DecayRangeError);
}

TEST(T60Stats, IdenticalListsAllZero) {
  const std::vector<double> a{0.1, 0.2, 0.3};
  const auto s = t60_error_stats(a, a);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.median, 0.0);
  EXPECT_EQ(s.q1, 0.0);
  EXPECT_EQ(s.q3, 0.0);
  EXPECT_EQ(s.mean_abs, 0.0);
}

TEST(T60Stats, FixtureAgainstReportedTruth) {
  const std::vector<double> est{0.4, 0.3}, truth{0.362, 0.362};
  const auto s = t60_error_stats(est, truth);
  EXPECT_NEAR(s.mean, -0.012, 1e-12);
  EXPECT_NEAR(s.median, -0.012, 1e-12);
  EXPECT_NEAR(s.mean_abs, 0.05, 1e-12);
}

TEST(T60Stats, SinglePair) {
  const std::vector<double> est{0.5}, truth{0.25};
  const auto s = t60_error_stats(est, truth);
  EXPECT_EQ(s.mean, 0.25);
  EXPECT_EQ(s.median, 0.25);
  EXPECT_EQ(s.n, 1u);
}

TEST(T60Stats, Quartiles) {
  const std::vector<double> est{1, 2, 3, 4, 5}, truth(5, 0.0);
  const auto s = t60_error_stats(est, truth);
  EXPECT_EQ(s.q1, 2.0);
  EXPECT_EQ(s.median, 3.0);
  EXPECT_EQ(s.q3, 4.0);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 5.0);
}

TEST(T60Stats, Errors) {
  const std::vector<double> a{0.1}, b{0.1, 0.2}, e;
  EXPECT_THROW(t60_error_stats(a, b), DimensionError);
  EXPECT_THROW(t60_error_stats(e, e), std::invalid_argument);
}
