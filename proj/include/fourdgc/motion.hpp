#pragma once

#include <atomic>
#include <cstdio>

#include "fourdgc/core.hpp"
#include "fourdgc/tensor.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// Multi-resolution motion grid.

struct GridLevel {
  int res = 0;
  int channels = 0;
  std::vector<double> values;  // [((z*res + y)*res + x)*channels + c]

  size_t size() const { return values.size(); }
};

struct MotionGrid {
  std::vector<GridLevel> levels;
  Vec3 bbox_min{-1, -1, -1}, bbox_max{1, 1, 1};

  static MotionGrid make(std::span<const int> resolutions, std::span<const int> channels,
                         const Vec3& bbox_min, const Vec3& bbox_max) {
    MotionGrid g;
    g.bbox_min = bbox_min;
    g.bbox_max = bbox_max;
    for (size_t l = 0; l < resolutions.size(); ++l) {
      GridLevel lvl;
      lvl.res = resolutions[l];
      lvl.channels = channels[l];
      lvl.values.assign(static_cast<size_t>(lvl.res) * lvl.res * lvl.res * lvl.channels, 0.0);
      g.levels.push_back(std::move(lvl));
    }
    return g;
  }

  int level_count() const { return static_cast<int>(levels.size()); }

  /// Concatenated feature width of one motion query: two lookups per level.
  int feature_width() const {
    int c = 0;
    for (const auto& l : levels) c += l.channels;
    return 2 * c;
  }

  size_t flat_size() const {
    size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
  }

  size_t level_offset(int level) const {
    size_t off = 0;
    for (int l = 0; l < level; ++l) off += levels[l].size();
    return off;
  }

  void load_flat(std::span<const double> flat) {
    size_t off = 0;
    for (auto& l : levels) {
      std::copy(flat.begin() + off, flat.begin() + off + l.size(), l.values.begin());
      off += l.size();
    }
  }

  std::vector<double> to_flat() const {
    std::vector<double> out;
    out.reserve(flat_size());
    for (const auto& l : levels) out.insert(out.end(), l.values.begin(), l.values.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Positional encoding (Eq-style frequency bands over the bbox-normalized
// center). Level l in 1..L uses angle 2^l * pi * mu_norm.

struct PositionalBands {
  std::vector<Vec3> sin_band;  // one per level
  std::vector<Vec3> cos_band;
};

inline PositionalBands positional_encode(const Vec3& mu, int levels, const Vec3& bbox_min,
                                         const Vec3& bbox_max) {
  if (levels < 1) throw std::invalid_argument("positional_encode: levels must be >= 1");
  static std::atomic<bool> warned{false};
  Vec3 norm;
  bool clamped = false;
  for (int i = 0; i < 3; ++i) {
    const double extent = bbox_max[i] - bbox_min[i];
    double t = extent > 0 ? (mu[i] - bbox_min[i]) / extent : 0.5;
    if (t < 0 || t > 1) {
      clamped = true;
      t = std::clamp(t, 0.0, 1.0);
    }
    norm[i] = t;
  }
  if (clamped && !warned.exchange(true))
    std::fprintf(stderr, "fourdgc: motion query outside bounding box, clamping\n");
  PositionalBands out;
  out.sin_band.resize(levels);
  out.cos_band.resize(levels);
  for (int l = 1; l <= levels; ++l) {
    const double f = std::pow(2.0, l) * 3.14159265358979323846;
    for (int i = 0; i < 3; ++i) {
      out.sin_band[l - 1][i] = std::sin(f * norm[i]);
      out.cos_band[l - 1][i] = std::cos(f * norm[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trilinear sampling, align-corners indexing: coordinate -1 maps to node 0,
// +1 to node res-1. Coordinates outside [-1, 1] are clamped.

namespace detail {

struct CellWeights {
  int i0[3];
  double frac[3];
};

inline CellWeights cell_weights(const GridLevel& level, const Vec3& coords) {
  CellWeights cw;
  for (int d = 0; d < 3; ++d) {
    const double c = std::clamp(coords[d], -1.0, 1.0);
    if (level.res == 1) {
      cw.i0[d] = 0;
      cw.frac[d] = 0;
      continue;
    }
    const double u = (c + 1.0) * 0.5 * (level.res - 1);
    int i0 = static_cast<int>(std::floor(u));
    i0 = std::clamp(i0, 0, level.res - 2);
    cw.i0[d] = i0;
    cw.frac[d] = u - i0;
  }
  return cw;
}

}  // namespace detail

/// Trilinear blend of the 8 enclosing nodes into `out` (level.channels wide).
inline void grid_sample(const GridLevel& level, const Vec3& coords, double* out) {
  const auto cw = detail::cell_weights(level, coords);
  std::fill(out, out + level.channels, 0.0);
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? cw.frac[0] : 1 - cw.frac[0]) *
                         (dy ? cw.frac[1] : 1 - cw.frac[1]) *
                         (dz ? cw.frac[2] : 1 - cw.frac[2]);
        if (w == 0) continue;
        const int x = std::min(cw.i0[0] + dx, level.res - 1);
        const int y = std::min(cw.i0[1] + dy, level.res - 1);
        const int z = std::min(cw.i0[2] + dz, level.res - 1);
        const size_t base =
            ((static_cast<size_t>(z) * level.res + y) * level.res + x) * level.channels;
        for (int c = 0; c < level.channels; ++c) out[c] += w * level.values[base + c];
      }
}

/// Scatter d(out) into per-node gradients (same weights as grid_sample).
inline void grid_sample_backward(const GridLevel& level, const Vec3& coords,
                                 const double* d_out, double* level_grad) {
  const auto cw = detail::cell_weights(level, coords);
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? cw.frac[0] : 1 - cw.frac[0]) *
                         (dy ? cw.frac[1] : 1 - cw.frac[1]) *
                         (dz ? cw.frac[2] : 1 - cw.frac[2]);
        if (w == 0) continue;
        const int x = std::min(cw.i0[0] + dx, level.res - 1);
        const int y = std::min(cw.i0[1] + dy, level.res - 1);
        const int z = std::min(cw.i0[2] + dz, level.res - 1);
        const size_t base =
            ((static_cast<size_t>(z) * level.res + y) * level.res + x) * level.channels;
        for (int c = 0; c < level.channels; ++c) level_grad[base + c] += w * d_out[c];
      }
}

// ---------------------------------------------------------------------------
// Shared motion MLPs: affine(in->64), ReLU, affine(64->out). Final layers are
// zero-initialized so the untrained field is the identity map.

struct Mlp {
  int in = 0, hidden = 0, out = 0;
  ParamTensor w1, b1, w2, b2;  // w1: hidden x in, w2: out x hidden

  Mlp() = default;
  Mlp(const std::string& name, int in_, int hidden_, int out_, uint64_t seed)
      : in(in_), hidden(hidden_), out(out_) {
    w1 = ParamTensor(name + ".w1", {static_cast<size_t>(hidden), static_cast<size_t>(in)});
    b1 = ParamTensor(name + ".b1", {static_cast<size_t>(hidden)}, 0.01);
    w2 = ParamTensor(name + ".w2", {static_cast<size_t>(out), static_cast<size_t>(hidden)});
    b2 = ParamTensor(name + ".b2", {static_cast<size_t>(out)});
    Rng rng(derive_seed(seed, 0x317));
    const double a = std::sqrt(6.0 / (in + hidden));
    for (auto& v : w1.value) v = rng.uniform(-a, a);
  }

  std::vector<ParamTensor*> tensors() { return {&w1, &b1, &w2, &b2}; }

  void forward(const double* feat, double* pre, double* out_vec) const {
    for (int r = 0; r < hidden; ++r) {
      double acc = b1.value[r];
      const double* wrow = &w1.value[static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) acc += wrow[c] * feat[c];
      pre[r] = acc;
    }
    for (int r = 0; r < out; ++r) {
      double acc = b2.value[r];
      const double* wrow = &w2.value[static_cast<size_t>(r) * hidden];
      for (int c = 0; c < hidden; ++c)
        if (pre[c] > 0) acc += wrow[c] * pre[c];
      out_vec[r] = acc;
    }
  }

  /// Accumulates weight grads; adds d(feat) into d_feat.
  void backward(const double* feat, const double* pre, const double* d_out, double* d_feat) {
    std::vector<double> d_pre(hidden, 0.0);
    for (int r = 0; r < out; ++r) {
      const double g = d_out[r];
      b2.grad[r] += g;
      double* wrow_g = &w2.grad[static_cast<size_t>(r) * hidden];
      const double* wrow = &w2.value[static_cast<size_t>(r) * hidden];
      for (int c = 0; c < hidden; ++c) {
        if (pre[c] > 0) {
          wrow_g[c] += g * pre[c];
          d_pre[c] += g * wrow[c];
        }
      }
    }
    for (int r = 0; r < hidden; ++r) {
      const double g = d_pre[r];
      if (g == 0) continue;
      b1.grad[r] += g;
      double* wrow_g = &w1.grad[static_cast<size_t>(r) * in];
      for (int c = 0; c < in; ++c) {
        wrow_g[c] += g * feat[c];
        if (d_feat) d_feat[c] += g * w1.value[static_cast<size_t>(r) * in + c];
      }
    }
  }
};

struct MotionMlps {
  Mlp phi_mu, phi_r;

  MotionMlps() = default;
  MotionMlps(int feature_width, uint64_t seed)
      : phi_mu("phi_mu", feature_width, 64, 3, derive_seed(seed, 1)),
        phi_r("phi_r", feature_width, 64, 4, derive_seed(seed, 2)) {}

  int input_width() const { return phi_mu.in; }

  std::vector<ParamTensor*> tensors() {
    auto out = phi_mu.tensors();
    for (auto* t : phi_r.tensors()) out.push_back(t);
    return out;
  }

  /// Flattened f32 round trip used for transmission in the keyframe record.
  std::vector<float> to_f32() const {
    std::vector<float> out;
    for (const Mlp* m : {&phi_mu, &phi_r})
      for (const ParamTensor* t : {&m->w1, &m->b1, &m->w2, &m->b2})
        for (double v : t->value) out.push_back(static_cast<float>(v));
    return out;
  }

  void from_f32(std::span<const float> data) {
    size_t pos = 0;
    for (Mlp* m : {&phi_mu, &phi_r})
      for (ParamTensor* t : {&m->w1, &m->b1, &m->w2, &m->b2})
        for (auto& v : t->value) {
          if (pos >= data.size()) throw FormatError("mlp weights truncated");
          v = data[pos++];
        }
    if (pos != data.size()) throw FormatError("mlp weights length mismatch");
  }

  /// Rounds weights through f32, the wire precision.
  void round_to_f32() {
    for (Mlp* m : {&phi_mu, &phi_r})
      for (ParamTensor* t : {&m->w1, &m->b1, &m->w2, &m->b2})
        for (auto& v : t->value) v = static_cast<float>(v);
  }
};

// ---------------------------------------------------------------------------
// Motion prediction: per level, one trilinear lookup at the sin band and one
// at the cos band; features concatenated level-major (sin block then cos
// block) and fed to both MLPs.

struct MotionSample {
  Vec3 delta_mu;
  std::array<double, 4> delta_q_raw{0, 0, 0, 0};  // (w, x, y, z) before identity bias

  Quat delta_rotation() const {
    return normalized(Quat{1.0 + delta_q_raw[0], delta_q_raw[1], delta_q_raw[2], delta_q_raw[3]});
  }

  double rotation_angle() const {
    const Quat q = delta_rotation();
    return 2.0 * std::acos(std::min(1.0, std::abs(q.w)));
  }
};

struct PredictTape {
  PositionalBands bands;
  std::vector<double> feat;
  std::vector<double> pre_mu, pre_r;
};

inline void check_motion_shapes(const MotionGrid& grid, const MotionMlps& mlps) {
  if (grid.feature_width() != mlps.input_width())
    throw std::invalid_argument("motion feature width does not match MLP input width");
}

inline MotionSample predict_motion_tape(const Vec3& mu, const MotionGrid& grid,
                                        const MotionMlps& mlps, PredictTape& tape) {
  const int L = grid.level_count();
  tape.bands = positional_encode(mu, L, grid.bbox_min, grid.bbox_max);
  tape.feat.assign(grid.feature_width(), 0.0);
  double* f = tape.feat.data();
  for (int l = 0; l < L; ++l) {
    grid_sample(grid.levels[l], tape.bands.sin_band[l], f);
    f += grid.levels[l].channels;
    grid_sample(grid.levels[l], tape.bands.cos_band[l], f);
    f += grid.levels[l].channels;
  }
  tape.pre_mu.resize(mlps.phi_mu.hidden);
  tape.pre_r.resize(mlps.phi_r.hidden);
  MotionSample s;
  double mu_out[3], r_out[4];
  mlps.phi_mu.forward(tape.feat.data(), tape.pre_mu.data(), mu_out);
  mlps.phi_r.forward(tape.feat.data(), tape.pre_r.data(), r_out);
  s.delta_mu = {mu_out[0], mu_out[1], mu_out[2]};
  s.delta_q_raw = {r_out[0], r_out[1], r_out[2], r_out[3]};
  return s;
}

inline MotionSample predict_motion(const Vec3& mu, const MotionGrid& grid,
                                   const MotionMlps& mlps) {
  PredictTape tape;
  return predict_motion_tape(mu, grid, mlps, tape);
}

/// Backward of predict_motion. Accumulates MLP weight grads and scatters
/// d(grid values) into `grid_grad` (flat, grid storage order). `train_mlps`
/// false skips weight accumulation (frozen MLPs) but still propagates to the
/// grid.
inline void predict_motion_backward(const MotionGrid& grid, MotionMlps& mlps,
                                    const PredictTape& tape, const Vec3& d_delta_mu,
                                    const std::array<double, 4>& d_delta_q_raw,
                                    std::span<double> grid_grad, bool train_mlps) {
  std::vector<double> d_feat(tape.feat.size(), 0.0);
  const double d_mu[3] = {d_delta_mu.x, d_delta_mu.y, d_delta_mu.z};
  if (train_mlps) {
    mlps.phi_mu.backward(tape.feat.data(), tape.pre_mu.data(), d_mu, d_feat.data());
    mlps.phi_r.backward(tape.feat.data(), tape.pre_r.data(), d_delta_q_raw.data(), d_feat.data());
  } else {
    // propagate to features only
    auto through = [&](const Mlp& m, const std::vector<double>& pre, const double* d_out) {
      for (int r = 0; r < m.out; ++r) {
        const double g = d_out[r];
        if (g == 0) continue;
        const double* wrow = &m.w2.value[static_cast<size_t>(r) * m.hidden];
        for (int c = 0; c < m.hidden; ++c) {
          if (pre[c] > 0) {
            const double gh = g * wrow[c];
            const double* w1row = &m.w1.value[static_cast<size_t>(c) * m.in];
            for (int k = 0; k < m.in; ++k) d_feat[k] += gh * w1row[k];
          }
        }
      }
    };
    through(mlps.phi_mu, tape.pre_mu, d_mu);
    through(mlps.phi_r, tape.pre_r, d_delta_q_raw.data());
  }
  const double* df = d_feat.data();
  size_t off = 0;
  for (int l = 0; l < grid.level_count(); ++l) {
    const auto& lvl = grid.levels[l];
    grid_sample_backward(lvl, tape.bands.sin_band[l], df, grid_grad.data() + off);
    df += lvl.channels;
    grid_sample_backward(lvl, tape.bands.cos_band[l], df, grid_grad.data() + off);
    df += lvl.channels;
    off += lvl.size();
  }
}

// ---------------------------------------------------------------------------
// Rigid transformation of the previous frame (center += delta_mu, rotation
// pre-multiplied by the identity-biased delta quaternion; f, s, alpha copied).

/// Exact-zero motion short-circuits to a bit-exact copy, which makes the
/// zero-motion identity hold without floating-point renormalization drift.
inline GaussianPrimitive transform_primitive(const GaussianPrimitive& g, const MotionSample& s) {
  GaussianPrimitive out = g;
  const bool zero = s.delta_mu.x == 0 && s.delta_mu.y == 0 && s.delta_mu.z == 0 &&
                    s.delta_q_raw[0] == 0 && s.delta_q_raw[1] == 0 && s.delta_q_raw[2] == 0 &&
                    s.delta_q_raw[3] == 0;
  if (zero) return out;
  out.center = g.center + s.delta_mu;
  out.rotation = compose_rotation(s.delta_rotation(), g.rotation);
  return out;
}

inline GaussianFrameSet apply_motion(const GaussianFrameSet& prev, const MotionGrid& grid,
                                     const MotionMlps& mlps) {
  check_motion_shapes(grid, mlps);
  GaussianFrameSet out;
  out.frame_index = prev.frame_index + 1;
  out.sh_degree = prev.sh_degree;
  out.primitives.reserve(prev.primitives.size());
  for (const auto& g : prev.primitives) {
    const MotionSample s = predict_motion(g.center, grid, mlps);
    out.primitives.push_back(transform_primitive(g, s));
  }
  return out;
}

}  // namespace fourdgc
