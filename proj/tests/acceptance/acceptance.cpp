// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any criterion fails. Runtime limits are part of each criterion.

#include <cstdio>
#include <functional>
#include <iostream>
#include <random>

#include "revmod/selfcheck.hpp"
#include "revmod/simdata.hpp"
#include "revmod/train.hpp"

using namespace revmod;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kScratch = fs::temp_directory_path() / "revmod_acceptance";

// Shared by the structural-constraint criterion: every training run in here
// reports whether h1 and fir1 stayed exactly 1 after every step.
bool g_constraints_held = true;
std::size_t g_training_runs = 0;

void note_run(const TrainReport& r) {
  g_constraints_held = g_constraints_held && r.constraints_held;
  ++g_training_runs;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t n, double sd) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double rel_sq_error(const Rir& est, const Rir& truth) {
  double e = 0, n = 0;
  for (std::size_t i = 0; i < truth.length(); ++i) {
    const double d = est.coefficients()[i] - truth.coefficients()[i];
    e += d * d;
    n += truth.coefficients()[i] * truth.coefficients()[i];
  }
  return e / n;
}

Outcome ac1_convolution() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto d = gaussian(rng, 4800, 1.0);
    auto h = gaussian(rng, 256, 0.3);
    h[0] = 1.0;
    const auto a = convolve_fft(d, h), b = convolve_direct(d, h);
    double diff = 0, peak = 0;
    for (std::size_t t = 0; t < a.size(); ++t) {
      diff = std::max(diff, std::abs(a[t] - b[t]));
      peak = std::max(peak, std::abs(b[t]));
    }
    worst = std::max(worst, diff / peak);
  }
  return {worst <= 1e-6, fmt("worst max|fft-direct|/max|r| = %.3g (limit 1e-6)", worst)};
}

Outcome ac2_gradients() {
  bool ok = true;
  std::string d;
  for (const auto& r : run_selfcheck("all")) {
    ok = ok && r.report.pass;
    d += fmt("%s%s=%.2g/%.0e", d.empty() ? "" : " ", r.name.c_str(), r.report.max_rel_error, r.tolerance);
  }
  return {ok, d};
}

// Single room, 50 two-second utterances.
struct SingleRoom {
  DatasetManifest manifest;
  std::vector<Utterance> utts;
  Rir truth;
};

SingleRoom single_room() {
  const std::size_t L = 1024;
  SimConfig cfg;
  cfg.train_fraction = 1.0;
  cfg.val_fraction = 0.0;
  const RoomSpec room{"r015", 0.15, 0.0, 1, 7};
  SingleRoom s;
  s.manifest = build_dataset({room}, {}, 50, kScratch / "single", 1, cfg, {{"r015", L}});
  s.utts = load_split(s.manifest, Split::train);
  s.truth = load_room_rir(s.manifest, "r015");
  return s;
}

Outcome ac3_gti_recovery(const SingleRoom& s) {
  TrainHyper hy;
  hy.main_loss = MainLoss::waveform_mse;
  hy.adam.lr = 3e-3;
  const auto td = prepare_training_data(s.utts, hy);
  const auto r = train_gti(td, s.truth.length(), 2000, hy, 3);
  note_run(r.report);
  const double e = rel_sq_error(r.state.rir.assemble(), s.truth);
  return {e <= 1e-3, fmt("%zu utts, 2000 steps: |h_est-h|^2/|h|^2 = %.3g (limit 1e-3)", s.utts.size(), e)};
}

Outcome ac4_gti_mrsd(const SingleRoom& s) {
  TrainHyper hy;
  hy.main_loss = MainLoss::mrsd;
  hy.adam.lr = 1e-4;
  const auto td = prepare_training_data(s.utts, hy);
  auto mean_mrsd = [&](const Rir& h) {
    double sum = 0;
    for (const auto& it : td.items) sum += mrsd_loss(convolve_fft(it.dry, h.coefficients()), it.reverb_ref).value;
    return sum / static_cast<double>(td.items.size());
  };
  const double before = mean_mrsd(Rir::identity(8000, s.truth.length()));
  const auto r = train_gti(td, s.truth.length(), 8000, hy, 3);
  note_run(r.report);
  const auto h = r.state.rir.assemble();
  const double after = mean_mrsd(h);
  const double t60 = estimate_t60(h);
  const double reduction = 1.0 - after / before;
  const bool ok = std::abs(t60 - 0.15) <= 0.15 * 0.15 && reduction >= 0.9;
  return {ok, fmt("T60 %.4f s vs 0.15 (limit 15%%, err %.1f%%); MRSD %.4g -> %.4g, reduced %.1f%% (limit 90%%)", t60,
                  100 * std::abs(t60 - 0.15) / 0.15, before, after, 100 * reduction)};
}

// Four seen rooms, 200 utterances split 160 / 40.
struct MultiRoom {
  std::vector<Utterance> train, test;
};

MultiRoom multi_room() {
  SimConfig cfg;
  cfg.train_fraction = 0.8;
  cfg.val_fraction = 0.0;
  const std::vector<RoomSpec> rooms{
      {"r010", 0.1, 0.0, 1, 11}, {"r020", 0.2, 0.0, 1, 12}, {"r030", 0.3, 0.0, 1, 13}, {"r040", 0.4, 0.0, 1, 14}};
  std::map<std::string, std::size_t> lengths;
  for (const auto& r : rooms) lengths[r.room_id] = 2048;
  const auto m = build_dataset(rooms, {}, 200, kScratch / "multi", 1, cfg, lengths);
  return {load_split(m, Split::train), load_split(m, Split::test_seen)};
}

Outcome ac5_utv_vs_gti(const MultiRoom& d) {
  const std::size_t L = 2048;
  TrainHyper hy;
  hy.main_loss = MainLoss::waveform_mse;
  hy.adam.lr = 3e-4;
  const auto td = prepare_training_data(d.train, hy);
  UtvConfig uc = UtvConfig::desk_default();
  uc.rir_length = L;
  const auto utv = train_utv(td, UtvEstimatorParams::initialized(uc, 5), 2000, hy, 3);
  note_run(utv.report);

  TrainHyper gh = hy;
  gh.adam.lr = 3e-3;
  const auto gti = train_gti(td, L, 1500, gh, 3);
  note_run(gti.report);
  const double gti_t60 = estimate_t60(gti.state.rir.assemble());

  std::size_t within = 0;
  double utv_err = 0, gti_err = 0;
  for (const auto& u : d.test) {
    const auto h = predict_rir(utv.state.params, u.reverb.samples, hy.features, utv.state.norm, u.reverb.sample_rate);
    g_constraints_held = g_constraints_held && h.coefficients()[0] == 1.0;
    const double t = estimate_t60(h);
    within += std::abs(t - u.t60_truth) <= 0.2 * u.t60_truth;
    utv_err += std::abs(t - u.t60_truth);
    gti_err += std::abs(gti_t60 - u.t60_truth);
  }
  const double n = static_cast<double>(d.test.size());
  utv_err /= n;
  gti_err /= n;
  const double frac = static_cast<double>(within) / n;
  const bool ok = d.train.size() == 160 && d.test.size() == 40 && frac >= 0.8 && utv_err < gti_err;
  return {ok, fmt("%zu train / %zu held out; UTV within 20%%: %zu/%zu (limit 80%%); mean |T60 err| UTV %.4f s < GTI %.4f "
                  "s (GTI T60 %.3f)",
                  d.train.size(), d.test.size(), within, d.test.size(), utv_err, gti_err, gti_t60)};
}

Outcome ac6_multitask(const MultiRoom& d) {
  auto run = [&](double weight) {
    TrainHyper hy;
    hy.main_loss = MainLoss::waveform_mse;
    hy.adam.lr = 3e-4;
    hy.secondary_weight = weight;
    const auto td = prepare_training_data(d.train, hy);
    const auto held = prepare_training_data(d.test, hy, &td.norm);
    MtTrainState st;
    st.vocoder = ToyVocoderParams(32);
    st.model = ReverbModel::utv;
    UtvConfig uc = UtvConfig::desk_default();
    uc.rir_length = 2048;
    st.utv = UtvEstimatorParams::initialized(uc, 5);
    const auto r = train_mt(td, st, 1000, hy, 3);
    note_run(r.report);
    double las = 0;
    for (const auto& it : held.items)
      las += secondary_dry_loss(generate_dry(r.state.vocoder, *it.source), it.dry, hy.secondary).las_mse;
    return las / static_cast<double>(held.items.size());
  };
  const double with = run(1.0), without = run(0.0);
  const double gain = 1.0 - with / without;
  return {gain >= 0.1, fmt("held-out dry LAS-MSE with MT %.3g, without %.3g: %.1f%% lower (limit 10%%)", with, without,
                           100 * gain)};
}

Outcome ac7_t60_calibration() {
  double worst = 0;
  for (int fs : {8000, 24000})
    for (double t60 : {0.1, 0.2, 0.3, 0.5}) {
      std::vector<double> h(static_cast<std::size_t>(1.2 * t60 * fs));
      for (std::size_t n = 0; n < h.size(); ++n) h[n] = std::pow(10.0, -3.0 * static_cast<double>(n) / (t60 * fs));
      worst = std::max(worst, std::abs(estimate_t60(h, fs) - t60) / t60);
    }
  return {worst <= 0.02, fmt("worst relative error %.3g (limit 2%%)", worst)};
}

Outcome ac8_structure() {
  std::vector<std::string> bad;
  // identity application
  std::mt19937_64 rng(808);
  auto x = gaussian(rng, 5000, 0.3);
  for (auto& v : x) v = std::clamp(v, -1.0, 1.0);
  if (convolve_fft(x, Rir::identity(8000, 300).coefficients()) != x) bad.push_back("identity apply");

  // file formats
  fs::create_directories(kScratch / "formats");
  const Waveform w(x, 8000);
  write_wav(kScratch / "formats" / "w.wav", w, WavEncoding::float32);
  if (read_wav(kScratch / "formats" / "w.wav").samples != round_to_float(w.samples)) bad.push_back("wav");
  auto h = gaussian(rng, 999, 0.1);
  h[0] = 1.0;
  const auto rir = Rir::from_coefficients(h, 8000);
  write_rir(kScratch / "formats" / "h.rir", rir);
  const auto back = read_rir(kScratch / "formats" / "h.rir");
  if (!std::ranges::equal(back.coefficients(), rir.coefficients())) bad.push_back("rir");
  if (encode_rir(back) != encode_rir(rir)) bad.push_back("rir bytes");

  // short reproducibility runs of every trainer, plus a checkpoint roundtrip of each state
  SimConfig cfg;
  cfg.duration = 0.5;
  const std::vector<RoomSpec> rooms{{"a", 0.1, 0.0, 1, 1}, {"b", 0.2, 0.0, 1, 2}};
  const std::map<std::string, std::size_t> lens{{"a", 1024}, {"b", 2048}};
  const auto m1 = build_dataset(rooms, {}, 12, kScratch / "repro_a", 4, cfg, lens);
  build_dataset(rooms, {}, 12, kScratch / "repro_b", 4, cfg, lens);
  for (const auto& f : fs::recursive_directory_iterator(kScratch / "repro_a"))
    if (f.is_regular_file() &&
        detail::read_file(f.path()) != detail::read_file(kScratch / "repro_b" / fs::relative(f.path(), kScratch / "repro_a")))
      bad.push_back("dataset " + f.path().filename().string());
  const auto m2 = read_manifest(kScratch / "repro_a" / "manifest.json");
  if (manifest_to_json(m2) != manifest_to_json(m1)) bad.push_back("manifest");

  TrainHyper hy;
  const auto td = prepare_training_data(load_split(m2, Split::train), hy);
  UtvConfig uc{257, 8, 8, 5, 256};
  auto twice = [&](const char* name, auto train, auto encode) {
    const auto a = train(), b = train();
    note_run(a.report);
    note_run(b.report);
    if (a.report.checksum != b.report.checksum || encode(a.state) != encode(b.state)) bad.push_back(name);
    for (std::size_t i = 0; i < a.report.steps.size(); ++i)
      if (a.report.steps[i].main_loss != b.report.steps[i].main_loss) {
        bad.push_back(std::string(name) + " losses");
        break;
      }
  };
  twice("gti", [&] { return train_gti(td, 512, 20, hy, 8); },
        [&](const GtiTrainState& s) { return encode_checkpoint(gti_checkpoint(s, hy, 8)); });
  twice("utv", [&] { return train_utv(td, UtvEstimatorParams::initialized(uc, 2), 10, hy, 8); },
        [&](const UtvTrainState& s) { return encode_checkpoint(utv_checkpoint(s, hy, 8, 8000)); });
  MtTrainState mt;
  mt.vocoder = ToyVocoderParams(16);
  mt.utv = UtvEstimatorParams::initialized(uc, 3);
  twice("mt", [&] { return train_mt(td, mt, 10, hy, 8); },
        [&](const MtTrainState& s) { return encode_checkpoint(mt_checkpoint(s, hy, 8, 8000)); });

  const auto ck = encode_checkpoint(mt_checkpoint(train_mt(td, mt, 3, hy, 9).state, hy, 9, 8000));
  if (encode_checkpoint(mt_checkpoint(mt_from_checkpoint(decode_checkpoint(ck)), hy, 9, 8000)) != ck)
    bad.push_back("checkpoint");

  if (!g_constraints_held) bad.push_back("h1/fir1 constraint");
  std::string d = fmt("h1 = fir1 = 1 after every step of %zu training runs; identity apply, wav/rir/checkpoint/manifest "
                      "roundtrips and seeded reruns",
                      g_training_runs);
  if (!bad.empty()) {
    d += "; failed:";
    for (const auto& b : bad) d += " " + b;
  }
  return {bad.empty(), d};
}

}  // namespace

int main() {
  fs::remove_all(kScratch);
  fs::create_directories(kScratch);
  bool all = true;
  auto report = [&](const char* id, double limit_s, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool ok = o.pass && secs < limit_s;
    all = all && ok;
    std::cout << id << " " << (ok ? "PASS" : "FAIL") << "  " << o.detail
              << fmt("  [%.1f s, limit %.0f s]", secs, limit_s) << std::endl;
  };
  report("AC1", 5, ac1_convolution);
  report("AC2", 120, ac2_gradients);
  SingleRoom single;
  MultiRoom multi;
  // dataset synthesis is counted toward the first criterion that uses it
  report("AC3", 300, [&] {
    single = single_room();
    return ac3_gti_recovery(single);
  });
  report("AC4", 600, [&] { return ac4_gti_mrsd(single); });
  report("AC5", 1800, [&] {
    multi = multi_room();
    return ac5_utv_vs_gti(multi);
  });
  report("AC6", 1800, [&] { return ac6_multitask(multi); });
  report("AC7", 1, ac7_t60_calibration);
  report("AC8", 600, ac8_structure);
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
