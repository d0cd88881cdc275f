#pragma once

// Training loops for the global RIR, the per-utterance RIR estimator and
// joint vocoder + reverberation training, with resumable optimizer state.

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "revmod/convolution.hpp"
#include "revmod/estimator.hpp"
#include "revmod/features.hpp"
#include "revmod/io.hpp"
#include "revmod/losses.hpp"
#include "revmod/optim.hpp"
#include "revmod/rir.hpp"
#include "revmod/simdata.hpp"
#include "revmod/vocoder.hpp"

namespace revmod {

enum class MainLoss { mrsd, waveform_mse };

inline std::string to_string(MainLoss m) { return m == MainLoss::mrsd ? "mrsd" : "wave"; }

inline MainLoss main_loss_from_string(std::string_view s) {
  if (s == "mrsd") return MainLoss::mrsd;
  if (s == "wave" || s == "waveform_mse") return MainLoss::waveform_mse;
  throw std::invalid_argument("unknown main loss '" + std::string(s) + "' (expected mrsd or wave)");
}

struct TrainHyper {
  AdamHyper adam;
  std::size_t batch = 4;
  MainLoss main_loss = MainLoss::mrsd;
  MrsdConfig mrsd = MrsdConfig::desk_default();
  double secondary_weight = 1.0;  // joint training only; 0 disables the dry-signal objective
  SecondaryLossConfig secondary;
  StftConfig features = StftConfig::desk_default();  // estimator input analysis

  void validate() const {
    require(batch >= 1, "train: batch size must be at least 1");
    require(adam.lr > 0.0, "train: learning rate must be positive");
    require(secondary_weight >= 0.0, "train: secondary weight must be non-negative");
    mrsd.validate();
    features.validate();
  }
};

inline nlohmann::json stft_to_json(const StftConfig& c) {
  return {{"fft_size", c.fft_size},
          {"frame_length", c.frame_length},
          {"frame_shift", c.frame_shift},
          {"window", c.window == Window::hann ? "hann" : "rect"}};
}

inline StftConfig stft_from_json(const nlohmann::json& j) {
  StftConfig c;
  c.fft_size = j.at("fft_size").get<std::size_t>();
  c.frame_length = j.at("frame_length").get<std::size_t>();
  c.frame_shift = j.at("frame_shift").get<std::size_t>();
  c.window = j.value("window", std::string("hann")) == "rect" ? Window::rect : Window::hann;
  c.validate();
  return c;
}

inline nlohmann::json hyper_to_json(const TrainHyper& h) {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : h.mrsd.resolutions) res.push_back(stft_to_json(r));
  return {{"lr", h.adam.lr},
          {"beta1", h.adam.beta1},
          {"beta2", h.adam.beta2},
          {"eps", h.adam.eps},
          {"batch", h.batch},
          {"main_loss", to_string(h.main_loss)},
          {"mrsd", res},
          {"secondary_weight", h.secondary_weight},
          {"secondary", {{"w_las", h.secondary.w_las},
                         {"w_wave", h.secondary.w_wave},
                         {"w_corr", h.secondary.w_corr},
                         {"las", stft_to_json(h.secondary.las_config)}}},
          {"features", stft_to_json(h.features)}};
}

/// Missing keys keep their defaults, so partial config files are accepted.
inline TrainHyper hyper_from_json(const nlohmann::json& j, TrainHyper h = {}) {
  h.adam.lr = j.value("lr", h.adam.lr);
  h.adam.beta1 = j.value("beta1", h.adam.beta1);
  h.adam.beta2 = j.value("beta2", h.adam.beta2);
  h.adam.eps = j.value("eps", h.adam.eps);
  h.batch = j.value("batch", h.batch);
  if (j.contains("main_loss")) h.main_loss = main_loss_from_string(j.at("main_loss").get<std::string>());
  if (j.contains("mrsd")) {
    h.mrsd.resolutions.clear();
    for (const auto& r : j.at("mrsd")) h.mrsd.resolutions.push_back(stft_from_json(r));
  }
  h.secondary_weight = j.value("secondary_weight", h.secondary_weight);
  if (j.contains("secondary")) {
    const auto& s = j.at("secondary");
    h.secondary.w_las = s.value("w_las", h.secondary.w_las);
    h.secondary.w_wave = s.value("w_wave", h.secondary.w_wave);
    h.secondary.w_corr = s.value("w_corr", h.secondary.w_corr);
    if (s.contains("las")) h.secondary.las_config = stft_from_json(s.at("las"));
  }
  if (j.contains("features")) h.features = stft_from_json(j.at("features"));
  h.validate();
  return h;
}

struct StepRecord {
  std::uint64_t step = 0;
  double main_loss = 0.0;
  std::optional<double> secondary_loss;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  bool constraints_held = true;  // h1 == 1 and fir1 == 1 after every step
  std::uint64_t checksum = 0;    // FNV-1a over final parameters

  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& s : steps) {
      nlohmann::json j{{"step", s.step}, {"main_loss", s.main_loss}, {"wall_ms", s.wall_ms}};
      j["secondary_loss"] = s.secondary_loss ? nlohmann::json(*s.secondary_loss) : nlohmann::json(nullptr);
      os << j.dump() << "\n";
    }
    return os.str();
  }

  void write_jsonl(const std::filesystem::path& path) const { detail::write_file(path, to_jsonl()); }

  double final_main_loss() const { return steps.empty() ? 0.0 : steps.back().main_loss; }
};

/// Global affine standardization of estimator input features.
struct FeatureNorm {
  double mean = 0.0;
  double scale = 1.0;
};

struct TrainItem {
  std::string utt_id;
  std::string room_id;
  double t60_truth = 0.0;
  std::vector<double> dry;
  std::vector<double> reverb;
  MrsdReference reverb_ref;  // only when the main loss is mrsd
  Matrix features;           // normalized LAS of the reverberant signal
  std::optional<SourceComponents> source;
};

struct TrainingData {
  int sample_rate = 0;
  std::vector<TrainItem> items;
  FeatureNorm norm;
  MainLoss main_loss = MainLoss::mrsd;
  StftConfig features;
};

inline FeatureNorm fit_feature_norm(const std::vector<LasFrames>& feats) {
  double s = 0.0, ss = 0.0, n = 0.0;
  for (const auto& f : feats)
    for (double v : f.values.data) {
      s += v;
      ss += v * v;
      n += 1.0;
    }
  require(n > 0, "feature norm: no frames");
  const double mean = s / n;
  const double var = std::max(ss / n - mean * mean, 1e-12);
  return {mean, 1.0 / std::sqrt(var)};
}

inline Matrix normalize_features(const LasFrames& f, const FeatureNorm& norm) {
  Matrix m = f.values;
  for (auto& v : m.data) v = (v - norm.mean) * norm.scale;
  return m;
}

inline Matrix estimator_input(std::span<const double> reverb, const StftConfig& cfg, const FeatureNorm& norm) {
  return normalize_features(las(reverb, cfg), norm);
}

/// Precomputes loss references and estimator features. When `norm` is null
/// it is fitted on these utterances.
inline TrainingData prepare_training_data(const std::vector<Utterance>& utts, const TrainHyper& hyper,
                                          const FeatureNorm* norm = nullptr) {
  require(!utts.empty(), "train: empty training set");
  hyper.validate();
  TrainingData td;
  td.sample_rate = utts.front().dry.sample_rate;
  td.main_loss = hyper.main_loss;
  td.features = hyper.features;
  std::vector<LasFrames> feats;
  for (const auto& u : utts) {
    require(u.dry.sample_rate == td.sample_rate && u.reverb.sample_rate == td.sample_rate,
            "train: mixed sample rates in training set");
    require_dims(u.dry.size() == u.reverb.size(), "train: dry and reverberant lengths differ for " + u.utt_id);
    feats.push_back(las(u.reverb, hyper.features));
  }
  td.norm = norm ? *norm : fit_feature_norm(feats);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const auto& u = utts[i];
    TrainItem it;
    it.utt_id = u.utt_id;
    it.room_id = u.room_id;
    it.t60_truth = u.t60_truth;
    it.dry = u.dry.samples;
    it.reverb = u.reverb.samples;
    if (hyper.main_loss == MainLoss::mrsd) it.reverb_ref = make_mrsd_reference(it.reverb, hyper.mrsd);
    it.features = normalize_features(feats[i], td.norm);
    if (u.f0) {
      auto c = sine_source_components(u.f0->track, u.f0->harmonics, u.f0->amp, u.f0->source_seed);
      c.harmonic.resize(it.dry.size(), 0.0);
      c.noise.resize(it.dry.size(), 0.0);
      it.source = std::move(c);
    }
    td.items.push_back(std::move(it));
  }
  return td;
}

namespace detail {

inline std::vector<std::size_t> minibatch(std::uint64_t seed, std::uint64_t step, std::size_t n, std::size_t batch) {
  std::mt19937_64 rng(derive_seed(seed, step));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

inline LossResult main_loss(std::span<const double> gen, const TrainItem& it, MainLoss kind) {
  return kind == MainLoss::mrsd ? mrsd_loss(gen, it.reverb_ref) : waveform_mse(gen, it.reverb);
}

/// Per-length convolvers and per-item dry spectra for a fixed maximum RIR length.
class ConvolverCache {
 public:
  ConvolverCache(const TrainingData& td, std::size_t max_rir) : td_(td), max_rir_(max_rir) {}

  const SpectralConvolver& get(std::size_t n_out) {
    auto it = conv_.find(n_out);
    if (it == conv_.end()) it = conv_.emplace(n_out, std::make_unique<SpectralConvolver>(n_out, max_rir_)).first;
    return *it->second;
  }

  const std::vector<cplx>& dry_spectrum(std::size_t i) {
    auto it = spec_.find(i);
    if (it == spec_.end()) it = spec_.emplace(i, get(td_.items[i].dry.size()).spectrum(td_.items[i].dry)).first;
    return it->second;
  }

 private:
  const TrainingData& td_;
  std::size_t max_rir_;
  std::map<std::size_t, std::unique_ptr<SpectralConvolver>> conv_;
  std::map<std::size_t, std::vector<cplx>> spec_;
};

inline void scale(std::span<double> v, double s) {
  for (auto& x : v) x *= s;
}

inline void accumulate(std::span<double> acc, std::span<const double> g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Global trainable RIR

struct GtiTrainState {
  GtiRir rir;
  AdamState adam;
};

struct GtiTrainResult {
  GtiTrainState state;
  TrainReport report;
};

/// Loss and dL/d(tail) of the batch mean for one GTI step.
inline LossResult gti_batch_loss(const TrainingData& td, const GtiRir& g, std::span<const std::size_t> batch,
                                 detail::ConvolverCache& cc) {
  const auto h = g.assemble();
  const std::size_t L = h.length();
  std::vector<double> grad_h(L, 0.0);
  double loss = 0.0;
  std::map<std::size_t, std::vector<cplx>> acc;  // per output length
  std::map<std::size_t, std::vector<cplx>> Hs;
  auto H_for = [&](const SpectralConvolver& c) -> const std::vector<cplx>& {
    auto it = Hs.find(c.n_out());
    if (it == Hs.end()) it = Hs.emplace(c.n_out(), c.spectrum(h.coefficients())).first;
    return it->second;
  };
  std::size_t b = 0;
  while (b < batch.size()) {
    // consecutive same-length items share one forward and one gradient transform
    const std::size_t i = batch[b];
    const bool pair = b + 1 < batch.size() && td.items[batch[b + 1]].dry.size() == td.items[i].dry.size();
    const std::size_t j = pair ? batch[b + 1] : i;
    b += pair ? 2 : 1;
    const auto& conv = cc.get(td.items[i].dry.size());
    const auto& H = H_for(conv);
    const auto& Di = cc.dry_spectrum(i);
    const auto& Dj = cc.dry_spectrum(j);
    const std::size_t T = conv.n_out();
    auto [ri, rj] = conv.product_pair(Di, H, Dj, H, T, false);
    const auto li = detail::main_loss(ri, td.items[i], td.main_loss);
    loss += li.value;
    std::vector<double> gj(T, 0.0);
    if (pair) {
      auto lj = detail::main_loss(rj, td.items[j], td.main_loss);
      loss += lj.value;
      gj = std::move(lj.grad);
    }
    auto [Gi, Gj] = conv.spectrum_pair(li.grad, gj);
    auto& a = acc[T];
    if (a.empty()) a.assign(conv.fft_size(), cplx{});
    for (std::size_t k = 0; k < a.size(); ++k) {
      a[k] += Gi[k] * std::conj(Di[k]);
      if (pair) a[k] += Gj[k] * std::conj(Dj[k]);
    }
  }
  for (auto& [T, a] : acc) detail::accumulate(grad_h, cc.get(T).real_inverse(a, L));
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossResult out{loss * inv, mask_direct_path(grad_h)};
  detail::scale(out.grad, inv);
  return out;
}

inline GtiTrainResult train_gti(const TrainingData& td, std::size_t rir_length, std::uint64_t steps,
                                const TrainHyper& hyper, std::uint64_t seed, const GtiTrainState* resume = nullptr) {
  hyper.validate();
  require(!td.items.empty(), "train_gti: empty training set");
  require(td.main_loss == hyper.main_loss, "train_gti: training data was prepared for a different main loss");
  GtiTrainResult res;
  if (resume) {
    require_dims(resume->rir.length() == rir_length, "train_gti: resume state has a different RIR length");
    res.state = *resume;
  } else {
    res.state.rir = GtiRir(rir_length, td.sample_rate);
    res.state.adam.hyper = hyper.adam;
  }
  res.report.seed = seed;
  detail::ConvolverCache cc(td, rir_length);
  auto& st = res.state;
  for (std::uint64_t s = 0; s < steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t step = st.adam.step;
    const auto batch = detail::minibatch(seed, step, td.items.size(), hyper.batch);
    const auto lr = gti_batch_loss(td, st.rir, batch, cc);
    adam_step(st.adam, {{"gti.tail", st.rir.tail, lr.grad}});
    res.report.constraints_held = res.report.constraints_held && st.rir.assemble().coefficients()[0] == 1.0;
    res.report.steps.push_back({step, lr.value, std::nullopt, detail::elapsed_ms(t0)});
  }
  res.report.checksum = fnv1a(st.rir.tail);
  return res;
}

// ---------------------------------------------------------------------------
// Per-utterance RIR estimator

struct UtvTrainState {
  UtvEstimatorParams params;
  AdamState adam;
  FeatureNorm norm;
};

struct UtvTrainResult {
  UtvTrainState state;
  TrainReport report;
};

inline Rir predict_rir(const UtvEstimatorParams& p, const Matrix& features, int fs) {
  return Rir(estimator_forward(p, features), fs);
}

inline Rir predict_rir(const UtvEstimatorParams& p, std::span<const double> reverb, const StftConfig& feat_cfg,
                       const FeatureNorm& norm, int fs) {
  return predict_rir(p, estimator_input(reverb, feat_cfg, norm), fs);
}

namespace detail {

/// Forward through the convolution with a per-utterance RIR; returns the
/// main loss and writes dL/d(full RIR) into grad_h.
inline double utterance_rir_loss(const TrainItem& it, std::span<const double> dry, const std::vector<cplx>* dry_spec,
                                 const Rir& h, const SpectralConvolver& conv, MainLoss kind,
                                 std::vector<double>& grad_h, std::vector<double>* grad_dry) {
  const std::size_t T = dry.size();
  const std::size_t L = h.length();
  auto [Hspec, Dspec] = dry_spec ? std::pair{conv.spectrum(h.coefficients()), std::vector<cplx>{}}
                                 : conv.spectrum_pair(h.coefficients(), dry);
  const auto& D = dry_spec ? *dry_spec : Dspec;
  std::vector<cplx> prod(conv.fft_size());
  for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = D[k] * Hspec[k];
  const auto r = conv.real_inverse(std::move(prod), T);
  const auto l = main_loss(r, it, kind);
  const auto G = conv.spectrum(l.grad);
  if (grad_dry) {
    auto [gh, gd] = conv.product_pair(G, D, G, Hspec, T, true);
    grad_h.assign(gh.begin(), gh.begin() + static_cast<std::ptrdiff_t>(L));
    *grad_dry = std::move(gd);
  } else {
    std::vector<cplx> a(conv.fft_size());
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = G[k] * std::conj(D[k]);
    grad_h = conv.real_inverse(std::move(a), L);
  }
  return l.value;
}

template <class Params>
std::vector<ParamUpdate> param_updates(Params& p, const Params& g) {
  std::vector<ParamUpdate> ups;
  auto pg = p.groups();
  auto gg = g.groups();
  for (std::size_t i = 0; i < pg.size(); ++i) ups.push_back({pg[i].first, pg[i].second->data, gg[i].second->data});
  return ups;
}

template <class Params>
void accumulate_params(Params& acc, const Params& g) {
  auto a = acc.groups();
  auto b = g.groups();
  for (std::size_t i = 0; i < a.size(); ++i) accumulate(a[i].second->data, b[i].second->data);
}

template <class Params>
void scale_params(Params& p, double s) {
  for (auto& [name, t] : p.groups()) scale(t->data, s);
}

}  // namespace detail

/// Batch-mean loss and estimator gradients for one UTV step.
inline std::pair<double, UtvEstimatorParams> utv_batch_loss(const TrainingData& td, const UtvEstimatorParams& p,
                                                            std::span<const std::size_t> batch,
                                                            detail::ConvolverCache& cc) {
  auto grads = UtvEstimatorParams::zeros(p.config);
  double loss = 0.0;
  std::vector<double> grad_h;
  for (const std::size_t i : batch) {
    const auto& it = td.items[i];
    require_dims(it.features.cols == p.config.input_dim, "train_utv: feature width does not match estimator input");
    ForwardCache fc;
    const Rir h(estimator_forward(p, it.features, &fc), td.sample_rate);
    const auto& conv = cc.get(it.dry.size());
    loss += detail::utterance_rir_loss(it, it.dry, &cc.dry_spectrum(i), h, conv, td.main_loss, grad_h, nullptr);
    const auto eg = estimator_backward(p, fc, mask_direct_path(grad_h));
    detail::accumulate_params(grads, eg.params);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  detail::scale_params(grads, inv);
  return {loss * inv, std::move(grads)};
}

inline UtvTrainResult train_utv(const TrainingData& td, const UtvEstimatorParams& init, std::uint64_t steps,
                                const TrainHyper& hyper, std::uint64_t seed, const AdamState* resume_adam = nullptr) {
  hyper.validate();
  require(!td.items.empty(), "train_utv: empty training set");
  require(td.main_loss == hyper.main_loss, "train_utv: training data was prepared for a different main loss");
  UtvTrainResult res;
  res.state.params = init;
  res.state.norm = td.norm;
  if (resume_adam)
    res.state.adam = *resume_adam;
  else
    res.state.adam.hyper = hyper.adam;
  res.report.seed = seed;
  detail::ConvolverCache cc(td, init.config.rir_length);
  auto& st = res.state;
  for (std::uint64_t s = 0; s < steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t step = st.adam.step;
    const auto batch = detail::minibatch(seed, step, td.items.size(), hyper.batch);
    auto [loss, grads] = utv_batch_loss(td, st.params, batch, cc);
    const auto ups = detail::param_updates(st.params, grads);
    adam_step(st.adam, ups);
    res.report.steps.push_back({step, loss, std::nullopt, detail::elapsed_ms(t0)});
  }
  res.report.checksum = st.params.fingerprint();
  return res;
}

// ---------------------------------------------------------------------------
// Joint vocoder + reverberation training

enum class ReverbModel { gti, utv };

struct MtTrainState {
  ToyVocoderParams vocoder;
  ReverbModel model = ReverbModel::utv;
  GtiRir gti;
  UtvEstimatorParams utv;
  FeatureNorm norm;
  AdamState adam;
};

struct MtTrainResult {
  MtTrainState state;
  TrainReport report;
};

/// Generated dry signal for one utterance: source excitation through the vocoder.
inline std::vector<double> generate_dry(const ToyVocoderParams& v, const SourceComponents& src) {
  return vocoder_forward(v, excite(v, src)).samples;
}

struct MtBatchResult {
  double main = 0.0;
  double secondary = 0.0;
  ToyVocoderParams vocoder_grad;
  std::vector<double> gti_grad;
  UtvEstimatorParams utv_grad;
};

inline MtBatchResult mt_batch_loss(const TrainingData& td, const MtTrainState& st, const TrainHyper& hyper,
                                   std::span<const std::size_t> batch, detail::ConvolverCache& cc) {
  MtBatchResult out{0.0, 0.0, ToyVocoderParams::zeros_like(st.vocoder), {}, {}};
  if (st.model == ReverbModel::gti)
    out.gti_grad.assign(st.gti.tail.size(), 0.0);
  else
    out.utv_grad = UtvEstimatorParams::zeros(st.utv.config);
  std::vector<double> grad_h, grad_dry;
  for (const std::size_t i : batch) {
    const auto& it = td.items[i];
    require(it.source.has_value(), "train_mt: utterance " + it.utt_id + " has no F0 track");
    const auto exc = excite(st.vocoder, *it.source);
    VocoderCache vc;
    const auto dry = vocoder_forward(st.vocoder, exc, &vc);
    ForwardCache fc;
    const Rir h = st.model == ReverbModel::gti ? st.gti.assemble()
                                               : Rir(estimator_forward(st.utv, it.features, &fc), td.sample_rate);
    const auto& conv = cc.get(dry.size());
    out.main += detail::utterance_rir_loss(it, dry.samples, nullptr, h, conv, td.main_loss, grad_h, &grad_dry);
    const auto sec = secondary_dry_loss(dry.samples, it.dry, hyper.secondary);
    out.secondary += sec.total.value;
    const auto gd = multitask_dry_grad(grad_dry, sec.total.grad, hyper.secondary_weight);
    const auto vg = vocoder_backward(st.vocoder, vc, gd);
    detail::accumulate(out.vocoder_grad.fir_tail.data, vg.params.fir_tail.data);
    out.vocoder_grad.noise_gain[0] += excite_backward(*it.source, vg.grad_source);
    // the secondary objective never reaches the reverberation parameters
    const auto gtail = mask_direct_path(grad_h);
    if (st.model == ReverbModel::gti)
      detail::accumulate(out.gti_grad, gtail);
    else
      detail::accumulate_params(out.utv_grad, estimator_backward(st.utv, fc, gtail).params);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.main *= inv;
  out.secondary *= inv;
  detail::scale_params(out.vocoder_grad, inv);
  detail::scale(out.gti_grad, inv);
  if (st.model == ReverbModel::utv) detail::scale_params(out.utv_grad, inv);
  return out;
}

inline std::uint64_t mt_checksum(const MtTrainState& st) {
  const auto h = st.vocoder.fingerprint();
  return st.model == ReverbModel::gti ? fnv1a(st.gti.tail, h) : (h ^ splitmix64(st.utv.fingerprint()));
}

/// `init` supplies the starting vocoder, reverberation model and (when resuming) optimizer state.
inline MtTrainResult train_mt(const TrainingData& td, const MtTrainState& init, std::uint64_t steps,
                              const TrainHyper& hyper, std::uint64_t seed) {
  hyper.validate();
  require(!td.items.empty(), "train_mt: empty training set");
  require(td.main_loss == hyper.main_loss, "train_mt: training data was prepared for a different main loss");
  MtTrainResult res;
  res.state = init;
  if (res.state.adam.step == 0) res.state.adam.hyper = hyper.adam;
  res.state.norm = td.norm;
  res.report.seed = seed;
  auto& st = res.state;
  const std::size_t L = st.model == ReverbModel::gti ? st.gti.length() : st.utv.config.rir_length;
  if (st.model == ReverbModel::gti && st.gti.sample_rate == 0) st.gti.sample_rate = td.sample_rate;
  detail::ConvolverCache cc(td, L);
  for (std::uint64_t s = 0; s < steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t step = st.adam.step;
    const auto batch = detail::minibatch(seed, step, td.items.size(), hyper.batch);
    auto br = mt_batch_loss(td, st, hyper, batch, cc);
    auto ups = detail::param_updates(st.vocoder, br.vocoder_grad);
    if (st.model == ReverbModel::gti) {
      ups.push_back({"gti.tail", st.gti.tail, br.gti_grad});
    } else {
      auto more = detail::param_updates(st.utv, br.utv_grad);
      ups.insert(ups.end(), more.begin(), more.end());
    }
    adam_step(st.adam, ups);
    const bool ok = st.vocoder.fir()[0] == 1.0 && (st.model != ReverbModel::gti || st.gti.assemble().coefficients()[0] == 1.0);
    res.report.constraints_held = res.report.constraints_held && ok;
    res.report.steps.push_back({step, br.main, br.secondary, detail::elapsed_ms(t0)});
  }
  res.report.checksum = mt_checksum(st);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {
inline void add_adam(Checkpoint& ck, const AdamState& a) {
  for (const auto& [name, m] : a.moments) {
    ck.add("adam.m/" + name, m.m);
    ck.add("adam.v/" + name, m.v);
  }
}

inline AdamState restore_adam(const Checkpoint& ck) {
  AdamState a;
  const auto& j = ck.config.at("adam");
  a.hyper = {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
             j.at("eps").get<double>()};
  a.step = j.at("step").get<std::uint64_t>();
  for (const auto& g : ck.groups) {
    if (g.name.rfind("adam.m/", 0) != 0) continue;
    const std::string name = g.name.substr(7);
    const auto* v = ck.find("adam.v/" + name);
    if (!v || v->data.size() != g.data.size()) throw ShapeError("checkpoint: incomplete optimizer state for " + name);
    a.moments[name] = {g.data, v->data};
  }
  return a;
}

inline nlohmann::json adam_json(const AdamState& a) {
  return {{"lr", a.hyper.lr}, {"beta1", a.hyper.beta1}, {"beta2", a.hyper.beta2}, {"eps", a.hyper.eps}, {"step", a.step}};
}

inline nlohmann::json utv_config_json(const UtvConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"channels", c.channels}, {"kernel", c.kernel},
          {"rir_length", c.rir_length}};
}

inline UtvConfig utv_config_from_json(const nlohmann::json& j) {
  UtvConfig c{j.at("input_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
              j.at("channels").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
              j.at("rir_length").get<std::size_t>()};
  c.validate();
  return c;
}

inline void expect_kind(const Checkpoint& ck, const std::string& kind) {
  const auto k = ck.config.value("kind", std::string{});
  if (k != kind) throw FormatError("checkpoint: expected a " + kind + " checkpoint, found '" + k + "'");
}
}  // namespace detail

inline Checkpoint gti_checkpoint(const GtiTrainState& st, const TrainHyper& hyper, std::uint64_t seed) {
  Checkpoint ck;
  ck.config = {{"kind", "gti"}, {"sample_rate", st.rir.sample_rate}, {"rir_length", st.rir.length()},
               {"seed", seed},  {"hyper", hyper_to_json(hyper)},      {"adam", detail::adam_json(st.adam)}};
  ck.add("gti.tail", st.rir.tail);
  detail::add_adam(ck, st.adam);
  return ck;
}

inline GtiTrainState gti_from_checkpoint(const Checkpoint& ck) {
  detail::expect_kind(ck, "gti");
  GtiTrainState st;
  st.rir = GtiRir(ck.config.at("rir_length").get<std::size_t>(), ck.config.at("sample_rate").get<int>());
  ck.restore("gti.tail", st.rir.tail);
  st.adam = detail::restore_adam(ck);
  return st;
}

inline Checkpoint utv_checkpoint(const UtvTrainState& st, const TrainHyper& hyper, std::uint64_t seed, int fs) {
  Checkpoint ck;
  ck.config = {{"kind", "utv"},
               {"sample_rate", fs},
               {"utv", detail::utv_config_json(st.params.config)},
               {"feature_norm", {{"mean", st.norm.mean}, {"scale", st.norm.scale}}},
               {"seed", seed},
               {"hyper", hyper_to_json(hyper)},
               {"adam", detail::adam_json(st.adam)}};
  for (const auto& [name, t] : st.params.groups()) ck.add(name, *t);
  detail::add_adam(ck, st.adam);
  return ck;
}

inline UtvTrainState utv_from_checkpoint(const Checkpoint& ck) {
  detail::expect_kind(ck, "utv");
  UtvTrainState st;
  st.params = UtvEstimatorParams::zeros(detail::utv_config_from_json(ck.config.at("utv")));
  for (auto& [name, t] : st.params.groups()) ck.restore(name, *t);
  st.norm = {ck.config.at("feature_norm").at("mean").get<double>(),
             ck.config.at("feature_norm").at("scale").get<double>()};
  st.adam = detail::restore_adam(ck);
  return st;
}

inline Checkpoint mt_checkpoint(const MtTrainState& st, const TrainHyper& hyper, std::uint64_t seed, int fs) {
  Checkpoint ck;
  ck.config = {{"kind", "mt"},
               {"sample_rate", fs},
               {"reverb_model", st.model == ReverbModel::gti ? "gti" : "utv"},
               {"fir_length", st.vocoder.fir_length()},
               {"feature_norm", {{"mean", st.norm.mean}, {"scale", st.norm.scale}}},
               {"seed", seed},
               {"hyper", hyper_to_json(hyper)},
               {"adam", detail::adam_json(st.adam)}};
  for (const auto& [name, t] : st.vocoder.groups()) ck.add(name, *t);
  if (st.model == ReverbModel::gti) {
    ck.config["rir_length"] = st.gti.length();
    ck.add("gti.tail", st.gti.tail);
  } else {
    ck.config["utv"] = detail::utv_config_json(st.utv.config);
    for (const auto& [name, t] : st.utv.groups()) ck.add(name, *t);
  }
  detail::add_adam(ck, st.adam);
  return ck;
}

inline MtTrainState mt_from_checkpoint(const Checkpoint& ck) {
  detail::expect_kind(ck, "mt");
  MtTrainState st;
  const int fs = ck.config.at("sample_rate").get<int>();
  st.vocoder = ToyVocoderParams(ck.config.at("fir_length").get<std::size_t>());
  for (auto& [name, t] : st.vocoder.groups()) ck.restore(name, *t);
  st.model = ck.config.at("reverb_model").get<std::string>() == "gti" ? ReverbModel::gti : ReverbModel::utv;
  if (st.model == ReverbModel::gti) {
    st.gti = GtiRir(ck.config.at("rir_length").get<std::size_t>(), fs);
    ck.restore("gti.tail", st.gti.tail);
  } else {
    st.utv = UtvEstimatorParams::zeros(detail::utv_config_from_json(ck.config.at("utv")));
    for (auto& [name, t] : st.utv.groups()) ck.restore(name, *t);
  }
  st.norm = {ck.config.at("feature_norm").at("mean").get<double>(),
             ck.config.at("feature_norm").at("scale").get<double>()};
  st.adam = detail::restore_adam(ck);
  return st;
}

}  // namespace revmod
