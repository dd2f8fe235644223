#pragma once

#include <sstream>

#include "fourdgc/compensate.hpp"
#include "fourdgc/motion.hpp"
#include "fourdgc/render.hpp"
#include "fourdgc/stream.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// Training configuration. Grid defaults are the desk-scale resolutions; the
// full-scale dimensions from the reference setup remain available via config.

struct TrainConfig {
  double lambda1 = 1e-4;
  double lambda2 = 0.2;
  int iters_keyframe = 2000;
  int iters_stage1 = 400;
  int iters_stage2 = 100;
  int hard_tail = 50;  // final iterations per stage switch to hard quantization
  double q_grid = 100.0;
  double q_sh = 50.0;
  int sh_degree = 1;
  std::vector<int> grid_res = {16, 32, 64};
  std::vector<int> grid_channels = {4, 4, 2};
  double lr_grid = 5e-3;
  double lr_mlp = 1e-4;
  double lr_center = 1.6e-4;  // scaled by scene extent
  double lr_sh = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_log_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_entropy = 1e-3;
  uint64_t seed = 4;
  double clone_cap_frac = 0.05;
  double tau_g = 1e-4;
  double tau_mu = 0.08;
  double tau_r = 3.14159265358979323846 / 4.0;
  double scale_floor = -0.01;
  double prune_opacity = 0.01;
  bool enable_compensation = true;
  Vec3 background{0, 0, 0};

  std::string describe() const {
    std::ostringstream os;
    os << "seed=" << seed << " lambda1=" << lambda1 << " lambda2=" << lambda2
       << " iters=(" << iters_keyframe << "," << iters_stage1 << "," << iters_stage2
       << ") q=(" << q_grid << "," << q_sh << ")";
    return os.str();
  }
};

/// Stream-wide metadata carried by the keyframe record.
struct StreamMeta {
  uint32_t prim_count = 0;
  int sh_degree = 1;
  std::vector<int> grid_res;
  std::vector<int> grid_channels;
  Vec3 bbox_min, bbox_max;

  size_t grid_flat_size() const {
    size_t n = 0;
    for (size_t l = 0; l < grid_res.size(); ++l)
      n += static_cast<size_t>(grid_res[l]) * grid_res[l] * grid_res[l] * grid_channels[l];
    return n;
  }

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    w.u32(prim_count);
    w.u8(static_cast<uint8_t>(sh_degree));
    w.u8(static_cast<uint8_t>(grid_res.size()));
    for (size_t l = 0; l < grid_res.size(); ++l) {
      w.u16(static_cast<uint16_t>(grid_res[l]));
      w.u8(static_cast<uint8_t>(grid_channels[l]));
    }
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(bbox_min[i]));
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(bbox_max[i]));
    return w.take();
  }

  static StreamMeta deserialize(std::span<const uint8_t> data) {
    ByteReader r(data);
    StreamMeta m;
    m.prim_count = r.u32();
    m.sh_degree = r.u8();
    const int levels = r.u8();
    for (int l = 0; l < levels; ++l) {
      m.grid_res.push_back(r.u16());
      m.grid_channels.push_back(r.u8());
    }
    for (int i = 0; i < 3; ++i) m.bbox_min[i] = r.f32();
    for (int i = 0; i < 3; ++i) m.bbox_max[i] = r.f32();
    if (!r.done()) throw FormatError("trailing bytes in keyframe meta");
    return m;
  }
};

/// Decoded previous frame plus the shared (frozen) motion MLPs; encoder and
/// decoder buffers stay bit-identical frame to frame.
struct ReferenceBuffer {
  GaussianFrameSet frame;
  MotionMlps mlps;
  bool mlps_ready = false;
  Vec3 bbox_min, bbox_max;
};

// ---------------------------------------------------------------------------
// Parameter packing for Gaussian attribute training. Opacity is trained as a
// logit, rotations as free 4-vectors normalized on activation.

namespace detail {

inline Quat normalize_backward_quat(const Quat& d_unit, const Quat& raw) {
  const double n = norm(raw);
  const Quat u = normalized(raw);
  const double d = d_unit.w * u.w + d_unit.x * u.x + d_unit.y * u.y + d_unit.z * u.z;
  return {(d_unit.w - u.w * d) / n, (d_unit.x - u.x * d) / n, (d_unit.y - u.y * d) / n,
          (d_unit.z - u.z * d) / n};
}

inline Vec3 normalize_backward_vec(const Vec3& d_unit, const Vec3& raw) {
  const double n = norm(raw);
  const Vec3 u = raw / n;
  return (d_unit - u * dot(d_unit, u)) / n;
}

/// d(dq) for p = dq (*) base with dp given.
inline Quat hamilton_left_backward(const Quat& dp, const Quat& base) {
  const double bw = base.w, bx = base.x, by = base.y, bz = base.z;
  return {bw * dp.w + bx * dp.x + by * dp.y + bz * dp.z,
          -bx * dp.w + bw * dp.x - bz * dp.y + by * dp.z,
          -by * dp.w + bz * dp.x + bw * dp.y - bx * dp.z,
          -bz * dp.w - by * dp.x + bx * dp.y + bw * dp.z};
}

}  // namespace detail

struct PrimParamSet {
  ParamTensor center, rotation, log_scale, opacity_logit, sh;
  int sh_degree = 1;

  size_t count() const { return center.size() / 3; }
  size_t sh_len() const { return static_cast<size_t>(3 * sh_coeff_count(sh_degree)); }

  static PrimParamSet from_set(const GaussianFrameSet& set, const std::string& prefix) {
    PrimParamSet p;
    p.sh_degree = set.sh_degree;
    const size_t n = set.primitives.size();
    const size_t shn = p.sh_len();
    p.center = ParamTensor(prefix + ".center", {n, 3});
    p.rotation = ParamTensor(prefix + ".rotation", {n, 4});
    p.rotation.quat_rows = true;
    p.log_scale = ParamTensor(prefix + ".log_scale", {n, 3});
    p.opacity_logit = ParamTensor(prefix + ".opacity", {n});
    p.sh = ParamTensor(prefix + ".sh", {n, shn});
    for (size_t i = 0; i < n; ++i) {
      const auto& g = set.primitives[i];
      for (int k = 0; k < 3; ++k) p.center.value[i * 3 + k] = g.center[k];
      for (int k = 0; k < 4; ++k) p.rotation.value[i * 4 + k] = g.rotation[k];
      for (int k = 0; k < 3; ++k) p.log_scale.value[i * 3 + k] = g.log_scale[k];
      p.opacity_logit.value[i] = logit(std::clamp(g.opacity, 1e-4, 1.0 - 1e-4));
      for (size_t k = 0; k < shn; ++k) p.sh.value[i * shn + k] = g.sh[k];
    }
    return p;
  }

  std::vector<ParamTensor*> tensors() {
    return {&center, &rotation, &log_scale, &opacity_logit, &sh};
  }

  /// Builds the activated frame set; `sh_values` supplies quantization-aware
  /// SH coefficients (pass sh.value for the raw ones).
  GaussianFrameSet build(std::span<const double> sh_values, int frame_index) const {
    GaussianFrameSet set;
    set.frame_index = frame_index;
    set.sh_degree = sh_degree;
    const size_t n = count();
    const size_t shn = sh_len();
    set.primitives.resize(n);
    for (size_t i = 0; i < n; ++i) {
      auto& g = set.primitives[i];
      g.center = {center.value[i * 3], center.value[i * 3 + 1], center.value[i * 3 + 2]};
      g.rotation = normalized(Quat{rotation.value[i * 4], rotation.value[i * 4 + 1],
                                   rotation.value[i * 4 + 2], rotation.value[i * 4 + 3]});
      g.log_scale = {log_scale.value[i * 3], log_scale.value[i * 3 + 1],
                     log_scale.value[i * 3 + 2]};
      g.opacity = sigmoid(opacity_logit.value[i]);
      g.sh.assign(sh_values.begin() + i * shn, sh_values.begin() + (i + 1) * shn);
    }
    return set;
  }

  /// Chains renderer gradients back into the raw parameters. SH gradients go
  /// through d(sh_used)/d(sh_param) = 1 (both noise and straight-through hard
  /// quantization).
  void accumulate(const std::vector<PrimGrad>& grads, size_t first_index = 0) {
    const size_t n = count();
    const size_t shn = sh_len();
    for (size_t i = 0; i < n; ++i) {
      const auto& pg = grads[first_index + i];
      for (int k = 0; k < 3; ++k) center.grad[i * 3 + k] += pg.d_center[k];
      const Quat raw{rotation.value[i * 4], rotation.value[i * 4 + 1],
                     rotation.value[i * 4 + 2], rotation.value[i * 4 + 3]};
      const Quat dq = detail::normalize_backward_quat(
          {pg.d_rotation[0], pg.d_rotation[1], pg.d_rotation[2], pg.d_rotation[3]}, raw);
      for (int k = 0; k < 4; ++k) rotation.grad[i * 4 + k] += dq[k];
      for (int k = 0; k < 3; ++k) log_scale.grad[i * 3 + k] += pg.d_log_scale[k];
      const double s = sigmoid(opacity_logit.value[i]);
      opacity_logit.grad[i] += pg.d_opacity * s * (1.0 - s);
      for (size_t k = 0; k < shn; ++k) sh.grad[i * shn + k] += pg.d_sh[k];
    }
  }
};

// ---------------------------------------------------------------------------
// Shared loss evaluators. The training loops and the finite-difference
// verification both call these, so the checked gradients are exactly the
// trained ones. `noise` empty means hard quantization (straight-through).

namespace detail {

inline std::vector<double> scaled_values(std::span<const double> x, double q,
                                         std::span<const double> noise) {
  std::vector<double> y(x.size());
  if (noise.empty()) {
    for (size_t i = 0; i < x.size(); ++i) y[i] = std::floor(q * x[i] + 0.5);
  } else {
    for (size_t i = 0; i < x.size(); ++i) y[i] = q * x[i] + noise[i];
  }
  return y;
}

inline std::vector<int> sh_channel_map(size_t count, size_t shn) {
  std::vector<int> ch(count * shn);
  for (size_t i = 0; i < count * shn; ++i) ch[i] = static_cast<int>(i % shn);
  return ch;
}

}  // namespace detail

/// Keyframe loss: L_color averaged over `views` plus lambda1 * mean SH rate.
struct KeyframeEvaluator {
  PrimParamSet* params;
  FactorizedEntropyModel* model;
  const std::vector<Image>* images;
  const std::vector<Camera>* cameras;
  const TrainConfig* cfg;
  std::vector<int> channels;

  KeyframeEvaluator(PrimParamSet* p, FactorizedEntropyModel* m, const std::vector<Image>* im,
                    const std::vector<Camera>* cam, const TrainConfig* c)
      : params(p), model(m), images(im), cameras(cam), cfg(c),
        channels(detail::sh_channel_map(p->count(), p->sh_len())) {}

  double eval(std::span<const double> noise, std::span<const int> views, bool grads) {
    const auto y = detail::scaled_values(params->sh.value, cfg->q_sh, noise);
    std::vector<double> sh_used(y.size());
    for (size_t i = 0; i < y.size(); ++i) sh_used[i] = y[i] / cfg->q_sh;
    const auto set = params->build(sh_used, 1);
    double loss = 0;
    for (int v : views) {
      const auto rendered = render(set, (*cameras)[v], cfg->background);
      if (grads) {
        Image d_pixels;
        const double lc =
            loss_color_backward(rendered, (*images)[v], cfg->lambda2, d_pixels) / views.size();
        for (auto& g : d_pixels.pixels) g /= static_cast<double>(views.size());
        loss += lc;
        const auto pg = render_backward(set, (*cameras)[v], d_pixels, cfg->background);
        params->accumulate(pg);
      } else {
        loss += loss_color(rendered, (*images)[v], cfg->lambda2) / views.size();
      }
    }
    if (cfg->lambda1 > 0) {
      const double scale = cfg->lambda1 / static_cast<double>(y.size());
      double total;
      if (grads) {
        std::vector<double> dy;
        total = model->rate_bits_backward(y, channels, scale, &dy);
        for (size_t i = 0; i < dy.size(); ++i) params->sh.grad[i] += dy[i] * cfg->q_sh;
      } else {
        total = model->rate_bits(y, channels);
      }
      loss += cfg->lambda1 * total / static_cast<double>(y.size());
    }
    return loss;
  }
};

/// Stage-1 loss: L_color of the motion-compensated previous frame plus
/// lambda1 * mean grid rate. Trains the grid (and the MLPs on frame 2).
struct Stage1Evaluator {
  const GaussianFrameSet* prev;
  ParamTensor* grid_param;
  MotionMlps* mlps;
  FactorizedEntropyModel* model;
  const std::vector<Image>* images;
  const std::vector<Camera>* cameras;
  const TrainConfig* cfg;
  StreamMeta meta;
  bool train_mlps = false;
  std::vector<int> channels;
  // scratch reused across calls
  MotionGrid grid_obj;
  std::vector<PredictTape> tapes;
  std::vector<MotionSample> samples;
  std::vector<double> grid_used_grad;
  std::vector<double> last_grad2d;  // per-primitive, from the latest eval

  Stage1Evaluator(const GaussianFrameSet* prev_, ParamTensor* gp, MotionMlps* m,
                  FactorizedEntropyModel* em, const std::vector<Image>* im,
                  const std::vector<Camera>* cam, const TrainConfig* c, const StreamMeta& sm)
      : prev(prev_), grid_param(gp), mlps(m), model(em), images(im), cameras(cam), cfg(c),
        meta(sm) {
    grid_obj = MotionGrid::make(meta.grid_res, meta.grid_channels, meta.bbox_min, meta.bbox_max);
    check_motion_shapes(grid_obj, *mlps);
    channels.resize(grid_obj.flat_size());
    size_t off = 0;
    int base = 0;
    for (const auto& lvl : grid_obj.levels) {
      for (size_t i = 0; i < lvl.size(); ++i)
        channels[off + i] = base + static_cast<int>(i % lvl.channels);
      off += lvl.size();
      base += lvl.channels;
    }
    tapes.resize(prev->size());
    samples.resize(prev->size());
  }

  double eval(std::span<const double> noise, std::span<const int> views, bool grads) {
    const auto y = detail::scaled_values(grid_param->value, cfg->q_grid, noise);
    std::vector<double> grid_used(y.size());
    for (size_t i = 0; i < y.size(); ++i) grid_used[i] = y[i] / cfg->q_grid;
    grid_obj.load_flat(grid_used);

    // transformed set; full arithmetic path so gradients match finite differences
    GaussianFrameSet moved;
    moved.frame_index = prev->frame_index + 1;
    moved.sh_degree = prev->sh_degree;
    moved.primitives.resize(prev->size());
    for (size_t i = 0; i < prev->size(); ++i) {
      const auto& g = prev->primitives[i];
      samples[i] = predict_motion_tape(g.center, grid_obj, *mlps, tapes[i]);
      auto& out = moved.primitives[i];
      out = g;
      out.center = g.center + samples[i].delta_mu;
      out.rotation = compose_rotation(samples[i].delta_rotation(), g.rotation);
    }

    if (grads) {
      grid_used_grad.assign(grid_used.size(), 0.0);
      last_grad2d.assign(prev->size(), 0.0);
    }
    double loss = 0;
    for (int v : views) {
      const auto rendered = render(moved, (*cameras)[v], cfg->background);
      if (!grads) {
        loss += loss_color(rendered, (*images)[v], cfg->lambda2) / views.size();
        continue;
      }
      Image d_pixels;
      loss += loss_color_backward(rendered, (*images)[v], cfg->lambda2, d_pixels) / views.size();
      for (auto& g : d_pixels.pixels) g /= static_cast<double>(views.size());
      const auto pg = render_backward(moved, (*cameras)[v], d_pixels, cfg->background);
      for (size_t i = 0; i < prev->size(); ++i) {
        last_grad2d[i] += pg[i].grad2d_norm;
        // center' = center + delta_mu
        const Vec3 d_delta_mu = pg[i].d_center;
        // rotation' = normalize((e + draw_normalized?) ...): chain through
        // normalize(hamilton(dq, base)) and dq = normalize(e + draw)
        const auto& g = prev->primitives[i];
        const std::array<double, 4>& raw = samples[i].delta_q_raw;
        const Quat biased{1.0 + raw[0], raw[1], raw[2], raw[3]};
        const Quat dq = normalized(biased);
        const Quat p = hamilton(dq, g.rotation);
        const Quat d_unit{pg[i].d_rotation[0], pg[i].d_rotation[1], pg[i].d_rotation[2],
                          pg[i].d_rotation[3]};
        const Quat dp = detail::normalize_backward_quat(d_unit, p);
        const Quat d_dq = detail::hamilton_left_backward(dp, g.rotation);
        const Quat d_biased = detail::normalize_backward_quat(d_dq, biased);
        predict_motion_backward(grid_obj, *mlps, tapes[i], d_delta_mu,
                                {d_biased.w, d_biased.x, d_biased.y, d_biased.z},
                                grid_used_grad, train_mlps);
      }
    }
    if (grads)
      for (size_t i = 0; i < grid_used_grad.size(); ++i)
        grid_param->grad[i] += grid_used_grad[i];  // d grid_used / d grid = 1

    if (cfg->lambda1 > 0) {
      const double scale = cfg->lambda1 / static_cast<double>(y.size());
      double total;
      if (grads) {
        std::vector<double> dy;
        total = model->rate_bits_backward(y, channels, scale, &dy);
        for (size_t i = 0; i < dy.size(); ++i) grid_param->grad[i] += dy[i] * cfg->q_grid;
      } else {
        total = model->rate_bits(y, channels);
      }
      loss += cfg->lambda1 * total / static_cast<double>(y.size());
    }
    return loss;
  }
};

/// Stage-2 loss: L_color of (frozen transformed set + compensated set) plus
/// lambda1 * mean rate over the compensated SH only.
struct Stage2Evaluator {
  const GaussianFrameSet* base;  // transformed, frozen
  PrimParamSet* params;          // compensated attributes
  FactorizedEntropyModel* model;
  const std::vector<Image>* images;
  const std::vector<Camera>* cameras;
  const TrainConfig* cfg;
  std::vector<int> channels;

  Stage2Evaluator(const GaussianFrameSet* base_, PrimParamSet* p, FactorizedEntropyModel* m,
                  const std::vector<Image>* im, const std::vector<Camera>* cam,
                  const TrainConfig* c)
      : base(base_), params(p), model(m), images(im), cameras(cam), cfg(c),
        channels(detail::sh_channel_map(p->count(), p->sh_len())) {}

  double eval(std::span<const double> noise, std::span<const int> views, bool grads) {
    const auto y = detail::scaled_values(params->sh.value, cfg->q_sh, noise);
    std::vector<double> sh_used(y.size());
    for (size_t i = 0; i < y.size(); ++i) sh_used[i] = y[i] / cfg->q_sh;
    GaussianFrameSet full = *base;
    const auto delta = params->build(sh_used, base->frame_index);
    full.primitives.insert(full.primitives.end(), delta.primitives.begin(),
                           delta.primitives.end());
    double loss = 0;
    for (int v : views) {
      const auto rendered = render(full, (*cameras)[v], cfg->background);
      if (grads) {
        Image d_pixels;
        loss += loss_color_backward(rendered, (*images)[v], cfg->lambda2, d_pixels) / views.size();
        for (auto& g : d_pixels.pixels) g /= static_cast<double>(views.size());
        const auto pg = render_backward(full, (*cameras)[v], d_pixels, cfg->background);
        params->accumulate(pg, base->size());
      } else {
        loss += loss_color(rendered, (*images)[v], cfg->lambda2) / views.size();
      }
    }
    if (cfg->lambda1 > 0 && !y.empty()) {
      const double scale = cfg->lambda1 / static_cast<double>(y.size());
      double total;
      if (grads) {
        std::vector<double> dy;
        total = model->rate_bits_backward(y, channels, scale, &dy);
        for (size_t i = 0; i < dy.size(); ++i) params->sh.grad[i] += dy[i] * cfg->q_sh;
      } else {
        total = model->rate_bits(y, channels);
      }
      loss += cfg->lambda1 * total / static_cast<double>(y.size());
    }
    return loss;
  }
};

}  // namespace fourdgc
