#pragma once

// Utterance-level RIR estimator: a unidirectional GRU over LAS frames, a
// same-padded 1-D convolution along time with tanh, temporal average pooling
// and an affine output layer producing the L-1 free RIR coefficients.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "revmod/core.hpp"
#include "revmod/features.hpp"

namespace revmod {

struct UtvConfig {
  std::size_t input_dim = 257;
  std::size_t hidden = 32;
  std::size_t channels = 32;
  std::size_t kernel = 11;
  std::size_t rir_length = 256;

  std::size_t tail_length() const { return rir_length - 1; }

  void validate() const {
    require(input_dim >= 1 && hidden >= 1 && channels >= 1, "utv: layer sizes must be positive");
    require(kernel % 2 == 1, "utv: convolution kernel width must be odd");
    require(rir_length >= 2, "utv: RIR length must be at least 2");
  }

  static UtvConfig desk_default() { return {257, 32, 32, 11, 256}; }
  static UtvConfig full_scale() { return {1025, 1024, 1024, 11, 6000}; }

  bool operator==(const UtvConfig&) const = default;
};

struct UtvEstimatorParams {
  UtvConfig config;
  Tensor W_z, W_g, W_c;  // [hidden x input]
  Tensor U_z, U_g, U_c;  // [hidden x hidden]
  Tensor b_z, b_g, b_c;  // [hidden]
  Tensor conv_kernel;    // [channels x hidden x kernel]
  Tensor conv_bias;      // [channels]
  Tensor out_weight;     // [L-1 x channels]
  Tensor out_bias;       // [L-1]

  static constexpr std::size_t kGroups = 13;

  std::array<std::pair<const char*, Tensor*>, kGroups> groups() {
    return {{{"gru.W_z", &W_z},
             {"gru.W_g", &W_g},
             {"gru.W_c", &W_c},
             {"gru.U_z", &U_z},
             {"gru.U_g", &U_g},
             {"gru.U_c", &U_c},
             {"gru.b_z", &b_z},
             {"gru.b_g", &b_g},
             {"gru.b_c", &b_c},
             {"conv.kernel", &conv_kernel},
             {"conv.bias", &conv_bias},
             {"out.weight", &out_weight},
             {"out.bias", &out_bias}}};
  }

  std::array<std::pair<const char*, const Tensor*>, kGroups> groups() const {
    auto g = const_cast<UtvEstimatorParams*>(this)->groups();
    std::array<std::pair<const char*, const Tensor*>, kGroups> out;
    for (std::size_t i = 0; i < kGroups; ++i) out[i] = {g[i].first, g[i].second};
    return out;
  }

  static UtvEstimatorParams zeros(const UtvConfig& cfg) {
    cfg.validate();
    UtvEstimatorParams p;
    p.config = cfg;
    const std::size_t H = cfg.hidden, I = cfg.input_dim, C = cfg.channels, K = cfg.kernel, O = cfg.tail_length();
    p.W_z = p.W_g = p.W_c = Tensor({H, I});
    p.U_z = p.U_g = p.U_c = Tensor({H, H});
    p.b_z = p.b_g = p.b_c = Tensor({H});
    p.conv_kernel = Tensor({C, H, K});
    p.conv_bias = Tensor({C});
    p.out_weight = Tensor({O, C});
    p.out_bias = Tensor({O});
    return p;
  }

  /// Weights uniform in +-1/sqrt(fan_in), biases zero; the output layer is
  /// further scaled by 0.01 so the initial tail is close to zero.
  static UtvEstimatorParams initialized(const UtvConfig& cfg, std::uint64_t seed) {
    auto p = zeros(cfg);
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Tensor& t, double bound) {
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.data) v = u(rng);
    };
    const double in_b = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
    const double hid_b = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    fill(p.W_z, in_b);
    fill(p.W_g, in_b);
    fill(p.W_c, in_b);
    fill(p.U_z, hid_b);
    fill(p.U_g, hid_b);
    fill(p.U_c, hid_b);
    fill(p.conv_kernel, 1.0 / std::sqrt(static_cast<double>(cfg.hidden * cfg.kernel)));
    fill(p.out_weight, 0.01 / std::sqrt(static_cast<double>(cfg.channels)));
    return p;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : groups()) h = fnv1a(t->data, h);
    return h;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : groups()) n += t->size();
    return n;
  }
};

namespace detail {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y += M x for row-major M [rows x cols]
inline void gemv_acc(const Tensor& M, std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* m = M.data.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m[c] * x[c];
    y[r] += acc;
  }
}

// dM += d x^T ; dx += M^T d (dx optional)
inline void gemv_back(const Tensor& M, Tensor& dM, std::size_t rows, std::size_t cols, std::span<const double> x,
                      std::span<const double> d, std::span<double> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    double* gm = dM.data.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gm[c] += dr * x[c];
    if (!dx.empty()) {
      const double* m = M.data.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += m[c] * dr;
    }
  }
}
}  // namespace detail

struct GruCache {
  Matrix x;             // [n x input]
  Matrix z, g, u, c;    // [n x hidden]; u = U_c h_{t-1}
  Matrix h;             // [(n+1) x hidden]; row 0 is the zero initial state
};

/// Hidden sequence [n x hidden] for input frames [n x input], h_0 = 0.
inline Matrix gru_forward(const UtvEstimatorParams& p, const Matrix& x, GruCache* cache = nullptr) {
  const std::size_t n = x.rows, H = p.config.hidden, I = p.config.input_dim;
  require(n >= 1, "gru: empty frame sequence");
  require_dims(x.cols == I, "gru: input width " + std::to_string(x.cols) + " does not match configured " +
                                std::to_string(I));
  GruCache local;
  GruCache& cc = cache ? *cache : local;
  cc.x = x;
  cc.z = cc.g = cc.u = cc.c = Matrix(n, H);
  cc.h = Matrix(n + 1, H);
  std::vector<double> az(H), ag(H), ac(H);
  for (std::size_t t = 0; t < n; ++t) {
    const auto xt = x.row(t);
    const auto hp = cc.h.row(t);
    for (std::size_t j = 0; j < H; ++j) {
      az[j] = p.b_z[j];
      ag[j] = p.b_g[j];
      ac[j] = p.b_c[j];
    }
    detail::gemv_acc(p.W_z, H, I, xt, az);
    detail::gemv_acc(p.U_z, H, H, hp, az);
    detail::gemv_acc(p.W_g, H, I, xt, ag);
    detail::gemv_acc(p.U_g, H, H, hp, ag);
    detail::gemv_acc(p.W_c, H, I, xt, ac);
    auto u = cc.u.row(t);
    detail::gemv_acc(p.U_c, H, H, hp, u);
    auto z = cc.z.row(t), g = cc.g.row(t), c = cc.c.row(t), h = cc.h.row(t + 1);
    for (std::size_t j = 0; j < H; ++j) {
      z[j] = detail::sigmoid(az[j]);
      g[j] = detail::sigmoid(ag[j]);
      c[j] = std::tanh(ac[j] + g[j] * u[j]);
      h[j] = (1.0 - z[j]) * c[j] + z[j] * hp[j];
    }
  }
  Matrix out(n, H);
  std::copy(cc.h.data.begin() + static_cast<std::ptrdiff_t>(H), cc.h.data.end(), out.data.begin());
  return out;
}

/// Full BPTT. Accumulates into `grads` (GRU groups only); returns dL/dx if requested.
inline Matrix gru_backward(const UtvEstimatorParams& p, const GruCache& cc, const Matrix& dH,
                           UtvEstimatorParams& grads, bool want_input_grad = false) {
  const std::size_t n = cc.x.rows, H = p.config.hidden, I = p.config.input_dim;
  require_dims(dH.rows == n && dH.cols == H, "gru_backward: upstream gradient shape mismatch");
  Matrix dx(want_input_grad ? n : 0, I);
  std::vector<double> dh(H), dh_prev(H), daz(H), dag(H), dac(H), du(H);
  std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
  for (std::size_t t = n; t-- > 0;) {
    const auto z = cc.z.row(t), g = cc.g.row(t), u = cc.u.row(t), c = cc.c.row(t), hp = cc.h.row(t);
    const auto xt = cc.x.row(t);
    const auto up = dH.row(t);
    for (std::size_t j = 0; j < H; ++j) dh[j] = up[j] + dh_prev[j];
    for (std::size_t j = 0; j < H; ++j) {
      const double dz = dh[j] * (hp[j] - c[j]);
      const double dc = dh[j] * (1.0 - z[j]);
      dh_prev[j] = dh[j] * z[j];
      dac[j] = dc * (1.0 - c[j] * c[j]);
      du[j] = dac[j] * g[j];
      const double dg = dac[j] * u[j];
      dag[j] = dg * g[j] * (1.0 - g[j]);
      daz[j] = dz * z[j] * (1.0 - z[j]);
      grads.b_z[j] += daz[j];
      grads.b_g[j] += dag[j];
      grads.b_c[j] += dac[j];
    }
    std::span<double> dxt = want_input_grad ? dx.row(t) : std::span<double>{};
    detail::gemv_back(p.W_z, grads.W_z, H, I, xt, daz, dxt);
    detail::gemv_back(p.W_g, grads.W_g, H, I, xt, dag, dxt);
    detail::gemv_back(p.W_c, grads.W_c, H, I, xt, dac, dxt);
    detail::gemv_back(p.U_z, grads.U_z, H, H, hp, daz, dh_prev);
    detail::gemv_back(p.U_g, grads.U_g, H, H, hp, dag, dh_prev);
    detail::gemv_back(p.U_c, grads.U_c, H, H, hp, du, dh_prev);
  }
  return dx;
}

/// Same-padded convolution along frames followed by tanh. [n x hidden] -> [n x channels].
inline Matrix conv_forward(const UtvEstimatorParams& p, const Matrix& hs) {
  const std::size_t n = hs.rows, H = p.config.hidden, C = p.config.channels, K = p.config.kernel;
  require_dims(hs.cols == H, "conv: input width does not match hidden size");
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  Matrix out(n, C);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = p.conv_bias[c];
      const double* kc = p.conv_kernel.data.data() + c * H * K;
      for (std::size_t j = 0; j < K; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const auto hrow = hs.row(static_cast<std::size_t>(src));
        for (std::size_t i = 0; i < H; ++i) acc += kc[i * K + j] * hrow[i];
      }
      out(t, c) = std::tanh(acc);
    }
  }
  return out;
}

/// Given the conv input, its tanh output and dL/d(output), accumulates conv
/// gradients and returns dL/d(input).
inline Matrix conv_backward(const UtvEstimatorParams& p, const Matrix& hs, const Matrix& act, const Matrix& dact,
                            UtvEstimatorParams& grads) {
  const std::size_t n = hs.rows, H = p.config.hidden, C = p.config.channels, K = p.config.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  Matrix dhs(n, H);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double a = act(t, c);
      const double da = dact(t, c) * (1.0 - a * a);
      if (da == 0.0) continue;
      grads.conv_bias[c] += da;
      const double* kc = p.conv_kernel.data.data() + c * H * K;
      double* gk = grads.conv_kernel.data.data() + c * H * K;
      for (std::size_t j = 0; j < K; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const auto s = static_cast<std::size_t>(src);
        const auto hrow = hs.row(s);
        auto drow = dhs.row(s);
        for (std::size_t i = 0; i < H; ++i) {
          gk[i * K + j] += da * hrow[i];
          drow[i] += da * kc[i * K + j];
        }
      }
    }
  }
  return dhs;
}

/// Elementwise mean over frames.
inline std::vector<double> temporal_avg_pool(const Matrix& seq) {
  require(seq.rows >= 1, "pool: empty sequence");
  std::vector<double> out(seq.cols, 0.0);
  for (std::size_t t = 0; t < seq.rows; ++t)
    for (std::size_t j = 0; j < seq.cols; ++j) out[j] += seq(t, j);
  const double inv = 1.0 / static_cast<double>(seq.rows);
  for (auto& v : out) v *= inv;
  return out;
}

inline Matrix temporal_avg_pool_backward(std::span<const double> grad, std::size_t n_frames) {
  require(n_frames >= 1, "pool: empty sequence");
  Matrix out(n_frames, grad.size());
  const double inv = 1.0 / static_cast<double>(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t)
    for (std::size_t j = 0; j < grad.size(); ++j) out(t, j) = grad[j] * inv;
  return out;
}

inline std::vector<double> affine_forward(const UtvEstimatorParams& p, std::span<const double> pooled) {
  const std::size_t O = p.config.tail_length(), C = p.config.channels;
  require_dims(pooled.size() == C, "affine: input width does not match channel count");
  std::vector<double> out(p.out_bias.data);
  detail::gemv_acc(p.out_weight, O, C, pooled, out);
  return out;
}

struct ForwardCache {
  UtvConfig config;
  std::uint64_t params_fingerprint = 0;
  std::size_t n_frames = 0;
  GruCache gru;
  Matrix hidden;  // GRU outputs
  Matrix conv;    // tanh conv outputs
  std::vector<double> pooled;
};

/// Predicted RIR tail (length L-1) from LAS frames.
inline std::vector<double> estimator_forward(const UtvEstimatorParams& p, const Matrix& frames,
                                             ForwardCache* cache = nullptr) {
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.config = p.config;
  fc.n_frames = frames.rows;
  fc.hidden = gru_forward(p, frames, &fc.gru);
  fc.conv = conv_forward(p, fc.hidden);
  fc.pooled = temporal_avg_pool(fc.conv);
  if (cache) fc.params_fingerprint = p.fingerprint();
  return affine_forward(p, fc.pooled);
}

inline std::vector<double> estimator_forward(const UtvEstimatorParams& p, const LasFrames& las,
                                             ForwardCache* cache = nullptr) {
  return estimator_forward(p, las.values, cache);
}

struct EstimatorGrad {
  UtvEstimatorParams params;
  Matrix input;  // empty unless requested
};

inline EstimatorGrad estimator_backward(const UtvEstimatorParams& p, const ForwardCache& fc,
                                        std::span<const double> grad_tail, bool want_input_grad = false) {
  if (!(fc.config == p.config) || fc.params_fingerprint != p.fingerprint() || fc.n_frames == 0)
    throw std::invalid_argument("estimator_backward: cache does not belong to these parameters");
  const std::size_t O = p.config.tail_length(), C = p.config.channels;
  require_dims(grad_tail.size() == O, "estimator_backward: gradient length must equal L-1");
  EstimatorGrad out{UtvEstimatorParams::zeros(p.config), {}};
  auto& g = out.params;
  std::vector<double> dpool(C, 0.0);
  for (std::size_t o = 0; o < O; ++o) g.out_bias[o] = grad_tail[o];
  detail::gemv_back(p.out_weight, g.out_weight, O, C, fc.pooled, grad_tail, dpool);
  const Matrix dconv = temporal_avg_pool_backward(dpool, fc.n_frames);
  const Matrix dhidden = conv_backward(p, fc.hidden, fc.conv, dconv, g);
  out.input = gru_backward(p, fc.gru, dhidden, g, want_input_grad);
  return out;
}

}  // namespace revmod
