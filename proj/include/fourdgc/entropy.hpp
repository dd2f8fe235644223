#pragma once

#include "fourdgc/tensor.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// Quantization.

/// Simulated quantization in the scaled domain: y = q*x + u, u ~ U(-1/2, 1/2).
/// d y / d x = q (noise treated as constant).
inline std::vector<double> quantize_sim(std::span<const double> x, double q, Rng& rng) {
  if (!(q > 0)) throw std::invalid_argument("quantize_sim: q must be positive");
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = q * x[i] + (rng.uniform() - 0.5);
  return y;
}

struct QuantizedTensor {
  std::vector<int32_t> symbols;
  double q = 1;
  int32_t offset = 0;  // Q over the tensor minimum
};

/// Hard quantization Q(x) = floor(q*x + 0.5) per element.
inline QuantizedTensor quantize_hard(std::span<const double> x, double q) {
  if (!(q > 0)) throw std::invalid_argument("quantize_hard: q must be positive");
  QuantizedTensor out;
  out.q = q;
  out.symbols.resize(x.size());
  int32_t lo = std::numeric_limits<int32_t>::max();
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = std::floor(q * x[i] + 0.5);
    if (!(v >= -2147483648.0 && v <= 2147483647.0))
      throw NumericalError("quantize_hard: symbol overflows signed 32-bit range");
    out.symbols[i] = static_cast<int32_t>(v);
    lo = std::min(lo, out.symbols[i]);
  }
  out.offset = x.empty() ? 0 : lo;
  return out;
}

// ---------------------------------------------------------------------------
// Implicit factorized entropy model. One univariate monotone-CDF density per
// channel; layer widths (1,3,3,3,1). Weights are softplus-reparameterized and
// gates tanh-bounded, which keeps the cumulative logit monotone in its input.

class FactorizedEntropyModel {
 public:
  static constexpr int kLayers = 4;
  static constexpr int kDims[kLayers + 1] = {1, 3, 3, 3, 1};
  static constexpr double kLikelihoodFloor = 1e-9;

  explicit FactorizedEntropyModel(int channels, uint64_t seed = 1)
      : channels_(channels) {
    Rng rng(derive_seed(seed, 0xe11));
    const double scale = std::pow(10.0, 1.0 / kLayers);
    for (int k = 0; k < kLayers; ++k) {
      const size_t rows = kDims[k + 1], cols = kDims[k];
      const double init = std::log(std::expm1(1.0 / (scale * static_cast<double>(rows))));
      h_[k] = ParamTensor("entropy.h" + std::to_string(k),
                          {static_cast<size_t>(channels), rows, cols}, init);
      b_[k] = ParamTensor("entropy.b" + std::to_string(k),
                          {static_cast<size_t>(channels), rows});
      for (auto& v : b_[k].value) v = rng.uniform(-0.5, 0.5);
      if (k + 1 < kLayers)
        a_[k] = ParamTensor("entropy.a" + std::to_string(k),
                            {static_cast<size_t>(channels), rows});
    }
  }

  int channels() const { return channels_; }

  std::vector<ParamTensor*> tensors() {
    std::vector<ParamTensor*> out;
    for (auto& t : h_) out.push_back(&t);
    for (auto& t : b_) out.push_back(&t);
    for (auto& t : a_) out.push_back(&t);
    return out;
  }

  /// Cumulative logit; sigmoid of it is the model CDF.
  double logit_cdf(int ch, double y) const {
    Workspace ws;
    refresh_cache();
    return forward(ch, y, ws);
  }

  double cdf(int ch, double y) const { return sigmoid(logit_cdf(ch, y)); }

  /// Exact PMF of the unit bin at y: CDF(y + 1/2) - CDF(y - 1/2).
  /// Non-negative by monotonicity; not clamped.
  double pmf(int ch, double y) const {
    const double p = cdf(ch, y + 0.5) - cdf(ch, y - 0.5);
    return std::max(p, 0.0);
  }

  /// PMF clamped below at 1e-9 for loss evaluation.
  double likelihood(int ch, double y) const { return std::max(pmf(ch, y), kLikelihoodFloor); }

  /// Total estimated bits -sum log2 likelihood(y_i). `channel_of[i]` maps each
  /// element to its density.
  double rate_bits(std::span<const double> y, std::span<const int> channel_of) const {
    refresh_cache();
    double total = 0;
    Workspace ws;
    for (size_t i = 0; i < y.size(); ++i)
      total -= std::log2(pmf_cached(channel_of[i], y[i], ws));
    return total;
  }

  /// Rate with gradients: adds `scale * d(total_bits)/d(param)` into parameter
  /// grads and `scale * d(total_bits)/d(y_i)` into dy (when non-null).
  /// Returns total bits.
  double rate_bits_backward(std::span<const double> y, std::span<const int> channel_of,
                            double scale, std::vector<double>* dy) {
    refresh_cache();
    if (dy) dy->assign(y.size(), 0.0);
    double total = 0;
    Tape hi, lo;
    Workspace ws;
    for (size_t i = 0; i < y.size(); ++i) {
      const int ch = channel_of[i];
      const double lh = forward_tape(ch, y[i] + 0.5, hi, ws);
      const double ll = forward_tape(ch, y[i] - 0.5, lo, ws);
      const double sh = sigmoid(lh), sl = sigmoid(ll);
      const double p = std::max(sh - sl, 0.0);
      const double pc = std::max(p, kLikelihoodFloor);
      total -= std::log2(pc);
      if (p <= kLikelihoodFloor) continue;  // clamped region, zero gradient
      const double dtotal_dp = -1.0 / (p * 0.6931471805599453);
      const double d_lh = dtotal_dp * sh * (1 - sh);
      const double d_ll = -dtotal_dp * sl * (1 - sl);
      double dyi = 0;
      dyi += backward_tape(ch, hi, d_lh * scale, ws);
      dyi += backward_tape(ch, lo, d_ll * scale, ws);
      if (dy) (*dy)[i] = dyi;
    }
    return total;
  }

  void invalidate_cache() { cache_dirty_ = true; }

 private:
  struct Workspace {
    // per-layer activations, max width 3
    double v[kLayers + 1][3];
    double u[kLayers][3];
    double t[kLayers][3];  // tanh(u)
  };
  struct Tape : Workspace {};

  // Effective (reparameterized) weights, rebuilt after each optimizer step.
  struct ChannelCache {
    double hw[kLayers][9];   // softplus(h)
    double hsig[kLayers][9]; // sigmoid(h) = d softplus / d h
    double ga[kLayers][3];   // tanh(a)
    double gd[kLayers][3];   // 1 - tanh(a)^2
  };

  void refresh_cache() const {
    if (!cache_dirty_) return;
    cache_.resize(channels_);
    for (int ch = 0; ch < channels_; ++ch) {
      auto& cc = cache_[ch];
      for (int k = 0; k < kLayers; ++k) {
        const size_t rows = kDims[k + 1], cols = kDims[k];
        for (size_t i = 0; i < rows * cols; ++i) {
          const double raw = h_[k].value[ch * rows * cols + i];
          cc.hw[k][i] = softplus(raw);
          cc.hsig[k][i] = sigmoid(raw);
        }
        if (k + 1 < kLayers)
          for (size_t i = 0; i < rows; ++i) {
            const double raw = a_[k].value[ch * rows + i];
            cc.ga[k][i] = std::tanh(raw);
            cc.gd[k][i] = 1.0 - cc.ga[k][i] * cc.ga[k][i];
          }
      }
    }
    cache_dirty_ = false;
  }

  double forward(int ch, double y, Workspace& ws) const {
    const auto& cc = cache_[ch];
    ws.v[0][0] = y;
    for (int k = 0; k < kLayers; ++k) {
      const int rows = kDims[k + 1], cols = kDims[k];
      const double* bias = &b_[k].value[static_cast<size_t>(ch) * rows];
      for (int r = 0; r < rows; ++r) {
        double acc = bias[r];
        for (int c = 0; c < cols; ++c) acc += cc.hw[k][r * cols + c] * ws.v[k][c];
        ws.u[k][r] = acc;
        if (k + 1 < kLayers) {
          ws.t[k][r] = std::tanh(acc);
          ws.v[k + 1][r] = acc + cc.ga[k][r] * ws.t[k][r];
        } else {
          ws.v[k + 1][r] = acc;
        }
      }
    }
    return ws.v[kLayers][0];
  }

  double pmf_cached(int ch, double y, Workspace& ws) const {
    const double p = sigmoid(forward(ch, y + 0.5, ws)) - sigmoid(forward(ch, y - 0.5, ws));
    return std::max(p, kLikelihoodFloor);
  }

  double forward_tape(int ch, double y, Tape& tape, Workspace&) const {
    return forward(ch, y, tape);
  }

  /// Backprop d(logit) through one recorded forward; accumulates parameter
  /// grads (pre-scaled) and returns d(logit)/d(y) * d_logit.
  double backward_tape(int ch, const Tape& tp, double d_logit, Workspace&) {
    const auto& cc = cache_[ch];
    double dv[3] = {d_logit, 0, 0};
    for (int k = kLayers - 1; k >= 0; --k) {
      const int rows = kDims[k + 1], cols = kDims[k];
      double du[3];
      for (int r = 0; r < rows; ++r) {
        if (k + 1 < kLayers) {
          // v_out = u + tanh(a) * tanh(u)
          a_[k].grad[static_cast<size_t>(ch) * rows + r] += dv[r] * tp.t[k][r] * cc.gd[k][r];
          du[r] = dv[r] * (1.0 + cc.ga[k][r] * (1.0 - tp.t[k][r] * tp.t[k][r]));
        } else {
          du[r] = dv[r];
        }
      }
      double dvin[3] = {0, 0, 0};
      const size_t hbase = static_cast<size_t>(ch) * rows * cols;
      const size_t bbase = static_cast<size_t>(ch) * rows;
      for (int r = 0; r < rows; ++r) {
        b_[k].grad[bbase + r] += du[r];
        for (int c = 0; c < cols; ++c) {
          h_[k].grad[hbase + r * cols + c] += du[r] * tp.v[k][c] * cc.hsig[k][r * cols + c];
          dvin[c] += du[r] * cc.hw[k][r * cols + c];
        }
      }
      for (int c = 0; c < cols; ++c) dv[c] = dvin[c];
    }
    return dv[0];
  }

  int channels_;
  std::array<ParamTensor, kLayers> h_;
  std::array<ParamTensor, kLayers> b_;
  std::array<ParamTensor, kLayers - 1> a_;
  mutable std::vector<ChannelCache> cache_;
  mutable bool cache_dirty_ = true;
};

}  // namespace fourdgc
