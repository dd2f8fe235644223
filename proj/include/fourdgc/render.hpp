#pragma once

#include <optional>

#include "fourdgc/core.hpp"
#include "fourdgc/metrics.hpp"

namespace fourdgc {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dLowPass = 0.3;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kConditionLimit = 1e12;

/// Screen-space footprint of one projected Gaussian.
struct Splat2D {
  double mean_x = 0, mean_y = 0;
  double cov_a = 0, cov_b = 0, cov_c = 0;  // 2x2 SPD [a b; b c]
  double depth = 0;
  Vec3 color;
  double opacity = 0;
};

struct RenderedImage {
  Image pixels;
  std::vector<double> transmittance;  // residual per pixel
};

// ---------------------------------------------------------------------------
// Projection: first-order perspective with the standard low-pass term.

inline std::optional<Splat2D> project_gaussian(const GaussianPrimitive& g, const Camera& cam) {
  const Vec3 p = cam.to_camera(g.center);
  if (p.z <= kNearPlane) return std::nullopt;
  Splat2D s;
  s.depth = p.z;
  s.mean_x = cam.fx * p.x / p.z + cam.cx;
  s.mean_y = cam.fy * p.y / p.z + cam.cy;

  const Mat3 sigma = covariance_of(g.rotation, g.log_scale);
  // T = J * W, rows of the 2x3 projection Jacobian times world-to-camera rotation
  const double j00 = cam.fx / p.z, j02 = -cam.fx * p.x / (p.z * p.z);
  const double j11 = cam.fy / p.z, j12 = -cam.fy * p.y / (p.z * p.z);
  double T[2][3];
  for (int c = 0; c < 3; ++c) {
    T[0][c] = j00 * cam.rot(0, c) + j02 * cam.rot(2, c);
    T[1][c] = j11 * cam.rot(1, c) + j12 * cam.rot(2, c);
  }
  double ts[2][3] = {};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) ts[r][c] += T[r][k] * sigma(k, c);
  s.cov_a = ts[0][0] * T[0][0] + ts[0][1] * T[0][1] + ts[0][2] * T[0][2] + kCov2dLowPass;
  s.cov_b = ts[0][0] * T[1][0] + ts[0][1] * T[1][1] + ts[0][2] * T[1][2];
  s.cov_c = ts[1][0] * T[1][0] + ts[1][1] * T[1][1] + ts[1][2] * T[1][2] + kCov2dLowPass;

  const Vec3 dir = normalized(g.center - cam.center());
  s.color = eval_sh(g.sh, sh_degree_of(g.sh.size()), dir);
  s.opacity = g.opacity;
  return s;
}

namespace detail {

struct Conic {
  double la, lb, lc;
  bool ok;
};

inline Conic conic_of(const Splat2D& s) {
  const double det = s.cov_a * s.cov_c - s.cov_b * s.cov_b;
  Conic c{0, 0, 0, false};
  if (!(det > 0)) return c;
  const double half_tr = 0.5 * (s.cov_a + s.cov_c);
  const double disc = std::sqrt(std::max(0.0, half_tr * half_tr - det));
  const double lmax = half_tr + disc, lmin = half_tr - disc;
  if (!(lmin > 0) || lmax / lmin > kConditionLimit) return c;
  c.la = s.cov_c / det;
  c.lb = -s.cov_b / det;
  c.lc = s.cov_a / det;
  c.ok = true;
  return c;
}

}  // namespace detail

/// Alpha-blend depth-sorted splats at one pixel position.
/// alpha'_i = min(0.99, opacity * exp(-0.5 d^T conic d)); splats below 1/255
/// are skipped and accumulation stops once transmittance drops under 1e-4.
inline Vec3 composite_pixel(std::span<const Splat2D> sorted_splats, double px, double py,
                            const Vec3& background) {
  Vec3 c{0, 0, 0};
  double t = 1.0;
  for (const auto& s : sorted_splats) {
    const auto conic = detail::conic_of(s);
    if (!conic.ok) continue;
    const double dx = px - s.mean_x, dy = py - s.mean_y;
    const double sigma = 0.5 * (conic.la * dx * dx + 2 * conic.lb * dx * dy + conic.lc * dy * dy);
    if (sigma < 0) continue;
    const double alpha = std::min(kAlphaClamp, s.opacity * std::exp(-sigma));
    if (alpha < kAlphaSkip) continue;
    c += s.color * (alpha * t);
    t *= 1.0 - alpha;
    if (t < kTransmittanceStop) break;
  }
  return c + background * t;
}

// ---------------------------------------------------------------------------
// Full-frame rendering with analytic gradients.

struct PrimGrad {
  Vec3 d_center;
  std::array<double, 4> d_rotation{0, 0, 0, 0};  // w.r.t. the unit quaternion
  Vec3 d_log_scale;
  double d_opacity = 0;
  std::vector<double> d_sh;
  double grad2d_norm = 0;  // accumulated ||dL/d mean2d||, drives compensation
};

namespace detail {

struct SplatWork {
  int prim = 0;
  double mx = 0, my = 0;
  double a = 0, b = 0, c = 0;
  double la = 0, lb = 0, lc = 0;
  double depth = 0;
  double opacity = 0;
  Vec3 color;       // clamped
  Vec3 color_pre;   // before clamping
  Vec3 p_cam;
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  std::array<double, 16> basis{};
  std::array<double, 48> dbasis{};
  Vec3 dir_unnorm;
};

inline std::vector<SplatWork> prepare_splats(const GaussianFrameSet& set, const Camera& cam,
                                             bool with_dbasis) {
  std::vector<SplatWork> out;
  const int degree = set.sh_degree;
  const Vec3 cc = cam.center();
  for (size_t i = 0; i < set.primitives.size(); ++i) {
    const auto& g = set.primitives[i];
    const Vec3 p = cam.to_camera(g.center);
    if (p.z <= kNearPlane) continue;
    if (g.opacity < kAlphaSkip) continue;
    SplatWork s;
    s.prim = static_cast<int>(i);
    s.p_cam = p;
    s.depth = p.z;
    s.mx = cam.fx * p.x / p.z + cam.cx;
    s.my = cam.fy * p.y / p.z + cam.cy;
    const Mat3 sigma = covariance_of(g.rotation, g.log_scale);
    const double j00 = cam.fx / p.z, j02 = -cam.fx * p.x / (p.z * p.z);
    const double j11 = cam.fy / p.z, j12 = -cam.fy * p.y / (p.z * p.z);
    double T[2][3];
    for (int c = 0; c < 3; ++c) {
      T[0][c] = j00 * cam.rot(0, c) + j02 * cam.rot(2, c);
      T[1][c] = j11 * cam.rot(1, c) + j12 * cam.rot(2, c);
    }
    double ts[2][3] = {};
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 3; ++k) ts[r][c] += T[r][k] * sigma(k, c);
    s.a = ts[0][0] * T[0][0] + ts[0][1] * T[0][1] + ts[0][2] * T[0][2] + kCov2dLowPass;
    s.b = ts[0][0] * T[1][0] + ts[0][1] * T[1][1] + ts[0][2] * T[1][2];
    s.c = ts[1][0] * T[1][0] + ts[1][1] * T[1][1] + ts[1][2] * T[1][2] + kCov2dLowPass;

    const double det = s.a * s.c - s.b * s.b;
    if (!(det > 0)) continue;
    const double half_tr = 0.5 * (s.a + s.c);
    const double disc = std::sqrt(std::max(0.0, half_tr * half_tr - det));
    if (!(half_tr - disc > 0) || (half_tr + disc) / (half_tr - disc) > kConditionLimit) continue;
    s.la = s.c / det;
    s.lb = -s.b / det;
    s.lc = s.a / det;

    s.dir_unnorm = g.center - cc;
    const Vec3 dir = normalized(s.dir_unnorm);
    sh::basis(degree, dir, s.basis.data(), with_dbasis ? s.dbasis.data() : nullptr);
    const int n = sh_coeff_count(degree);
    s.color_pre = {0.5, 0.5, 0.5};
    for (int k = 0; k < n; ++k)
      for (int ch = 0; ch < 3; ++ch) s.color_pre[ch] += g.sh[3 * k + ch] * s.basis[k];
    for (int ch = 0; ch < 3; ++ch) s.color[ch] = std::clamp(s.color_pre[ch], 0.0, 1.0);
    s.opacity = g.opacity;

    // conservative pixel bounds from the skip threshold
    const double sigma_cut = std::log(s.opacity * 255.0);
    const double dxm = std::sqrt(std::max(0.0, 2.0 * sigma_cut * s.a));
    const double dym = std::sqrt(std::max(0.0, 2.0 * sigma_cut * s.c));
    s.x_lo = s.mx - dxm;
    s.x_hi = s.mx + dxm;
    s.y_lo = s.my - dym;
    s.y_hi = s.my + dym;
    if (s.x_hi < 0.5 || s.x_lo > cam.width - 0.5 || s.y_hi < 0.5 || s.y_lo > cam.height - 0.5)
      continue;
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const SplatWork& x, const SplatWork& y) {
    if (x.depth != y.depth) return x.depth < y.depth;
    return x.prim < y.prim;
  });
  return out;
}

}  // namespace detail

/// Forward rendering. Pixel (x, y) is sampled at its center (x+0.5, y+0.5).
inline RenderedImage render(const GaussianFrameSet& set, const Camera& cam,
                            const Vec3& background = {0, 0, 0}) {
  RenderedImage out;
  out.pixels = Image(cam.width, cam.height);
  out.transmittance.assign(static_cast<size_t>(cam.width) * cam.height, 1.0);
  const auto splats = detail::prepare_splats(set, cam, false);
  std::vector<const detail::SplatWork*> row;
  for (int y = 0; y < cam.height; ++y) {
    const double py = y + 0.5;
    row.clear();
    for (const auto& s : splats)
      if (py >= s.y_lo && py <= s.y_hi) row.push_back(&s);
    for (int x = 0; x < cam.width; ++x) {
      const double px = x + 0.5;
      Vec3 c{0, 0, 0};
      double t = 1.0;
      for (const auto* s : row) {
        if (px < s->x_lo || px > s->x_hi) continue;
        const double dx = px - s->mx, dy = py - s->my;
        const double sigma = 0.5 * (s->la * dx * dx + 2 * s->lb * dx * dy + s->lc * dy * dy);
        if (sigma < 0) continue;
        const double alpha = std::min(kAlphaClamp, s->opacity * std::exp(-sigma));
        if (alpha < kAlphaSkip) continue;
        c += s->color * (alpha * t);
        t *= 1.0 - alpha;
        if (t < kTransmittanceStop) break;
      }
      c += background * t;
      for (int ch = 0; ch < 3; ++ch) out.pixels.at(x, y, ch) = c[ch];
      out.transmittance[static_cast<size_t>(y) * cam.width + x] = t;
    }
  }
  return out;
}

/// Backward pass: d(loss)/d(pixels) -> gradients for every primitive
/// attribute. Recomputes per-pixel chains; accumulation order is fixed
/// (row-major pixels, splat order within a pixel), so results are
/// deterministic.
inline std::vector<PrimGrad> render_backward(const GaussianFrameSet& set, const Camera& cam,
                                             const Image& d_pixels,
                                             const Vec3& background = {0, 0, 0}) {
  const int degree = set.sh_degree;
  const int shn = sh_coeff_count(degree);
  std::vector<PrimGrad> grads(set.primitives.size());
  for (auto& g : grads) g.d_sh.assign(3 * shn, 0.0);

  auto splats = detail::prepare_splats(set, cam, true);
  // per-splat accumulators
  struct Acc {
    Vec3 d_color;
    double d_opacity = 0;
    double d_mx = 0, d_my = 0;
    double d_la = 0, d_lb = 0, d_lc = 0;
  };
  std::vector<Acc> acc(splats.size());

  struct Contrib {
    int si;
    double alpha, g, t_before, dx, dy;
    bool clamped;
  };
  std::vector<Contrib> stack;
  std::vector<int> row;
  for (int y = 0; y < cam.height; ++y) {
    const double py = y + 0.5;
    row.clear();
    for (size_t i = 0; i < splats.size(); ++i)
      if (py >= splats[i].y_lo && py <= splats[i].y_hi) row.push_back(static_cast<int>(i));
    for (int x = 0; x < cam.width; ++x) {
      const double px = x + 0.5;
      stack.clear();
      double t = 1.0;
      for (int si : row) {
        const auto& s = splats[si];
        if (px < s.x_lo || px > s.x_hi) continue;
        const double dx = px - s.mx, dy = py - s.my;
        const double sigma = 0.5 * (s.la * dx * dx + 2 * s.lb * dx * dy + s.lc * dy * dy);
        if (sigma < 0) continue;
        const double gval = std::exp(-sigma);
        const double raw = s.opacity * gval;
        const double alpha = std::min(kAlphaClamp, raw);
        if (alpha < kAlphaSkip) continue;
        stack.push_back({si, alpha, gval, t, dx, dy, raw >= kAlphaClamp});
        t *= 1.0 - alpha;
        if (t < kTransmittanceStop) break;
      }
      if (stack.empty()) continue;
      const Vec3 dC{d_pixels.at(x, y, 0), d_pixels.at(x, y, 1), d_pixels.at(x, y, 2)};
      if (dC.x == 0 && dC.y == 0 && dC.z == 0) continue;
      Vec3 suffix = background * t;  // color accumulated after the current splat
      for (size_t k = stack.size(); k-- > 0;) {
        const auto& cb = stack[k];
        const auto& s = splats[cb.si];
        auto& a = acc[cb.si];
        const double w = cb.alpha * cb.t_before;
        a.d_color += dC * w;
        double d_alpha = 0;
        for (int ch = 0; ch < 3; ++ch)
          d_alpha += dC[ch] * (s.color[ch] * cb.t_before - suffix[ch] / (1.0 - cb.alpha));
        suffix += s.color * w;
        if (cb.clamped) continue;  // alpha pinned at 0.99
        a.d_opacity += cb.g * d_alpha;
        const double d_sigma = -s.opacity * cb.g * d_alpha;
        a.d_la += d_sigma * 0.5 * cb.dx * cb.dx;
        a.d_lb += d_sigma * cb.dx * cb.dy;
        a.d_lc += d_sigma * 0.5 * cb.dy * cb.dy;
        const double ddx = d_sigma * (s.la * cb.dx + s.lb * cb.dy);
        const double ddy = d_sigma * (s.lb * cb.dx + s.lc * cb.dy);
        a.d_mx -= ddx;
        a.d_my -= ddy;
      }
    }
  }

  // per-splat chain back to primitive attributes
  const Vec3 cc = cam.center();
  for (size_t si = 0; si < splats.size(); ++si) {
    const auto& s = splats[si];
    const auto& a = acc[si];
    const auto& g = set.primitives[s.prim];
    auto& pg = grads[s.prim];

    pg.grad2d_norm += std::sqrt(a.d_mx * a.d_mx + a.d_my * a.d_my);
    pg.d_opacity += a.d_opacity;

    // color -> sh and view direction (clamp gates each channel)
    Vec3 d_pre{0, 0, 0};
    for (int ch = 0; ch < 3; ++ch)
      if (s.color_pre[ch] > 0.0 && s.color_pre[ch] < 1.0) d_pre[ch] = a.d_color[ch];
    Vec3 d_dir{0, 0, 0};
    for (int k = 0; k < shn; ++k) {
      double d_basis = 0;
      for (int ch = 0; ch < 3; ++ch) {
        pg.d_sh[3 * k + ch] += d_pre[ch] * s.basis[k];
        d_basis += d_pre[ch] * g.sh[3 * k + ch];
      }
      d_dir.x += d_basis * s.dbasis[3 * k + 0];
      d_dir.y += d_basis * s.dbasis[3 * k + 1];
      d_dir.z += d_basis * s.dbasis[3 * k + 2];
    }
    {
      // dir = u / |u|, u = center - camera center
      const double r = norm(s.dir_unnorm);
      const Vec3 dirn = s.dir_unnorm / r;
      const Vec3 du = (d_dir - dirn * dot(d_dir, dirn)) / r;
      pg.d_center += du;
    }

    // conic -> cov2d
    const double det = s.a * s.c - s.b * s.b;
    // G_lambda (full) from (d_la, d_lb, d_lc)
    const double gl00 = a.d_la, gl01 = 0.5 * a.d_lb, gl11 = a.d_lc;
    // dC = -Lambda G Lambda
    const double l00 = s.la, l01 = s.lb, l11 = s.lc;
    // M = G * Lambda
    const double m00 = gl00 * l00 + gl01 * l01;
    const double m01 = gl00 * l01 + gl01 * l11;
    const double m10 = gl01 * l00 + gl11 * l01;
    const double m11 = gl01 * l01 + gl11 * l11;
    // dC_full = -Lambda * M
    const double dc00 = -(l00 * m00 + l01 * m10);
    const double dc01 = -(l00 * m01 + l01 * m11);
    const double dc10 = -(l01 * m00 + l11 * m10);
    const double dc11 = -(l01 * m01 + l11 * m11);
    const double d_a = dc00, d_b = dc01 + dc10, d_c = dc11;
    (void)det;

    // cov2d = T Sigma T^T + lowpass; T = J W
    const Vec3 p = s.p_cam;
    const double j00 = cam.fx / p.z, j02 = -cam.fx * p.x / (p.z * p.z);
    const double j11 = cam.fy / p.z, j12 = -cam.fy * p.y / (p.z * p.z);
    double T[2][3];
    for (int c = 0; c < 3; ++c) {
      T[0][c] = j00 * cam.rot(0, c) + j02 * cam.rot(2, c);
      T[1][c] = j11 * cam.rot(1, c) + j12 * cam.rot(2, c);
    }
    const Mat3 sigma_m = covariance_of(g.rotation, g.log_scale);
    const double gc[2][2] = {{d_a, 0.5 * d_b}, {0.5 * d_b, d_c}};
    // d Sigma = T^T Gc T
    Mat3 d_sigma = Mat3::zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double v = 0;
        for (int r = 0; r < 2; ++r)
          for (int cidx = 0; cidx < 2; ++cidx) v += T[r][i] * gc[r][cidx] * T[cidx][j];
        d_sigma(i, j) = v;
      }
    // d T = 2 Gc T Sigma
    double d_T[2][3] = {};
    for (int r = 0; r < 2; ++r)
      for (int cidx = 0; cidx < 3; ++cidx) {
        double v = 0;
        for (int r2 = 0; r2 < 2; ++r2)
          for (int k = 0; k < 3; ++k) v += 2.0 * gc[r][r2] * T[r2][k] * sigma_m(k, cidx);
        d_T[r][cidx] = v;
      }
    // d J = d T * W^T
    double d_j00 = 0, d_j02 = 0, d_j11 = 0, d_j12 = 0;
    for (int c = 0; c < 3; ++c) {
      d_j00 += d_T[0][c] * cam.rot(0, c);
      d_j02 += d_T[0][c] * cam.rot(2, c);
      d_j11 += d_T[1][c] * cam.rot(1, c);
      d_j12 += d_T[1][c] * cam.rot(2, c);
    }
    // p-space gradient: from J entries and from mean2d
    Vec3 dp{0, 0, 0};
    const double z2 = p.z * p.z, z3 = z2 * p.z;
    dp.x += d_j02 * (-cam.fx / z2);
    dp.y += d_j12 * (-cam.fy / z2);
    dp.z += d_j00 * (-cam.fx / z2) + d_j11 * (-cam.fy / z2) + d_j02 * (2 * cam.fx * p.x / z3) +
            d_j12 * (2 * cam.fy * p.y / z3);
    dp.x += a.d_mx * cam.fx / p.z;
    dp.z += a.d_mx * (-cam.fx * p.x / z2);
    dp.y += a.d_my * cam.fy / p.z;
    dp.z += a.d_my * (-cam.fy * p.y / z2);
    pg.d_center += cam.rot.transposed() * dp;

    // d Sigma -> rotation quaternion and log scale
    const Mat3 rot_m = rotation_matrix(g.rotation);
    const Vec3 e2{std::exp(2 * g.log_scale.x), std::exp(2 * g.log_scale.y),
                  std::exp(2 * g.log_scale.z)};
    for (int k = 0; k < 3; ++k) {
      double de = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) de += rot_m(i, k) * d_sigma(i, j) * rot_m(j, k);
      pg.d_log_scale[k] += de * 2.0 * e2[k];
    }
    // dL/dR = (G + G^T) R E
    Mat3 d_rot = Mat3::zero();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) {
        double v = 0;
        for (int j = 0; j < 3; ++j) v += (d_sigma(i, j) + d_sigma(j, i)) * rot_m(j, k);
        d_rot(i, k) = v * e2[k];
      }
    // chain to quaternion components
    const double qw = g.rotation.w, qx = g.rotation.x, qy = g.rotation.y, qz = g.rotation.z;
    auto add_q = [&](int i, int j, double dw, double dx_, double dy_, double dz_) {
      const double gij = d_rot(i, j);
      pg.d_rotation[0] += gij * dw;
      pg.d_rotation[1] += gij * dx_;
      pg.d_rotation[2] += gij * dy_;
      pg.d_rotation[3] += gij * dz_;
    };
    add_q(0, 0, 0, 0, -4 * qy, -4 * qz);
    add_q(0, 1, -2 * qz, 2 * qy, 2 * qx, -2 * qw);
    add_q(0, 2, 2 * qy, 2 * qz, 2 * qw, 2 * qx);
    add_q(1, 0, 2 * qz, 2 * qy, 2 * qx, 2 * qw);
    add_q(1, 1, 0, -4 * qx, 0, -4 * qz);
    add_q(1, 2, -2 * qx, -2 * qw, 2 * qz, 2 * qy);
    add_q(2, 0, -2 * qy, 2 * qz, -2 * qw, 2 * qx);
    add_q(2, 1, 2 * qx, 2 * qw, 2 * qz, 2 * qy);
    add_q(2, 2, 0, -4 * qx, -4 * qy, 0);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Photometric loss: (1 - lambda2) * L1 + lambda2 * D-SSIM.

inline double loss_color(const RenderedImage& rendered, const Image& truth, double lambda2) {
  if (!rendered.pixels.same_shape(truth))
    throw std::invalid_argument("loss_color: dimension mismatch");
  if (lambda2 < 0 || lambda2 > 1) throw std::invalid_argument("loss_color: lambda2 outside [0,1]");
  double l1 = 0;
  for (size_t i = 0; i < truth.pixels.size(); ++i)
    l1 += std::abs(rendered.pixels.pixels[i] - truth.pixels[i]);
  l1 /= static_cast<double>(truth.pixels.size());
  if (lambda2 == 0) return l1;
  const double dssim = (1.0 - ssim(rendered.pixels, truth)) / 2.0;
  return (1 - lambda2) * l1 + lambda2 * dssim;
}

/// Loss plus d(loss)/d(rendered pixels).
inline double loss_color_backward(const RenderedImage& rendered, const Image& truth,
                                  double lambda2, Image& d_pixels) {
  if (!rendered.pixels.same_shape(truth))
    throw std::invalid_argument("loss_color: dimension mismatch");
  if (lambda2 < 0 || lambda2 > 1) throw std::invalid_argument("loss_color: lambda2 outside [0,1]");
  d_pixels = Image(truth.width, truth.height, 0.0);
  const double pn = static_cast<double>(truth.pixels.size());
  double l1 = 0;
  for (size_t i = 0; i < truth.pixels.size(); ++i) {
    const double d = rendered.pixels.pixels[i] - truth.pixels[i];
    l1 += std::abs(d);
    d_pixels.pixels[i] = (1 - lambda2) * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / pn;
  }
  l1 /= pn;
  if (lambda2 == 0) return l1;
  Image ssim_grad;
  const double s = ssim(rendered.pixels, truth, &ssim_grad);
  for (size_t i = 0; i < d_pixels.pixels.size(); ++i)
    d_pixels.pixels[i] -= lambda2 * 0.5 * ssim_grad.pixels[i];
  return (1 - lambda2) * l1 + lambda2 * (1.0 - s) / 2.0;
}

}  // namespace fourdgc
