#pragma once

#include <fstream>
#include <limits>

#include "fourdgc/common.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// Gaussian primitives and frame sets.

/// One anisotropic 3D Gaussian splat. Scale is kept in the log domain and
/// activated by exp; opacity is the activated value in [0, 1] (training code
/// holds the logit). sh holds 3*(degree+1)^2 coefficients laid out
/// [coef0 r,g,b, coef1 r,g,b, ...].
struct GaussianPrimitive {
  Vec3 center;
  Quat rotation;       // unit quaternion
  Vec3 log_scale;
  double opacity = 1;  // in [0, 1]
  std::vector<double> sh;
};

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Degree stored in a 3*(d+1)^2-long coefficient vector.
inline int sh_degree_of(size_t sh_len) {
  for (int d = 0; d <= 3; ++d)
    if (static_cast<size_t>(3 * sh_coeff_count(d)) == sh_len) return d;
  throw std::invalid_argument("sh coefficient count does not match any degree <= 3");
}

struct GaussianFrameSet {
  std::vector<GaussianPrimitive> primitives;
  int frame_index = 1;
  int sh_degree = 1;

  size_t size() const { return primitives.size(); }
};

/// Pinhole camera with a rigid world-to-camera transform [R | t].
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rot;    // world-to-camera rotation
  Vec3 trans;  // world-to-camera translation
  int width = 0, height = 0;

  Vec3 to_camera(const Vec3& p) const { return rot * p + trans; }
  Vec3 center() const { return rot.transposed() * (trans * -1.0); }

  bool valid(double tol = 1e-6) const {
    if (!(fx > 0) || !(fy > 0) || width <= 0 || height <= 0) return false;
    const Mat3 rrt = rot * rot.transposed();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const double want = r == c ? 1.0 : 0.0;
        if (std::abs(rrt(r, c) - want) > tol) return false;
      }
    return true;
  }
};

/// Camera looking from `eye` towards `target`, `up` approximately +z.
inline Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                      double fx, double fy, int width, int height) {
  const Vec3 fwd = normalized(target - eye);        // camera +z
  const Vec3 right = normalized(cross(fwd, up));    // camera +x
  const Vec3 down = cross(fwd, right);              // camera +y
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = width * 0.5;
  cam.cy = height * 0.5;
  cam.width = width;
  cam.height = height;
  for (int c = 0; c < 3; ++c) {
    cam.rot(0, c) = right[c];
    cam.rot(1, c) = down[c];
    cam.rot(2, c) = fwd[c];
  }
  cam.trans = cam.rot * (eye * -1.0);
  return cam;
}

// ---------------------------------------------------------------------------
// Geometric algebra.

/// Sigma = R diag(exp(s))^2 R^T. Symmetric positive definite for finite input.
inline Mat3 covariance_of(const Quat& rotation, const Vec3& log_scale) {
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(rotation[i])) throw std::invalid_argument("covariance_of: non-finite rotation");
  for (int i = 0; i < 3; ++i)
    if (!std::isfinite(log_scale[i]) || !std::isfinite(std::exp(log_scale[i])))
      throw std::invalid_argument("covariance_of: non-finite scale");
  const Mat3 r = rotation_matrix(rotation);
  const Vec3 e2{std::exp(2.0 * log_scale.x), std::exp(2.0 * log_scale.y),
                std::exp(2.0 * log_scale.z)};
  Mat3 out = Mat3::zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) out(i, j) += r(i, k) * e2[k] * r(j, k);
  return out;
}

/// normalize(delta * base), delta applied on the left.
inline Quat compose_rotation(const Quat& delta, const Quat& base) {
  if (norm(delta) == 0.0) throw std::invalid_argument("compose_rotation: zero-norm delta");
  return normalized(hamilton(delta, base));
}

// ---------------------------------------------------------------------------
// Real spherical harmonics, 3DGS constants, degrees 0..3.

namespace sh {

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                                  0.31539156525252005, -1.0925484305920792,
                                  0.5462742152960396};
inline constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,
                                  -0.4570457994644658, 0.3731763325901154,
                                  -0.4570457994644658, 1.445305721320277,
                                  -0.5900435899266435};

/// Basis values for a unit direction; optionally d(basis)/d(direction).
/// `basis` must hold (degree+1)^2 slots, `dbasis` 3*(degree+1)^2 (x,y,z major).
inline void basis(int degree, const Vec3& d, double* basis, double* dbasis = nullptr) {
  const double x = d.x, y = d.y, z = d.z;
  const int n = sh_coeff_count(degree);
  if (dbasis) std::fill(dbasis, dbasis + 3 * n, 0.0);
  auto set_d = [&](int k, double dx, double dy, double dz) {
    if (!dbasis) return;
    dbasis[3 * k + 0] = dx;
    dbasis[3 * k + 1] = dy;
    dbasis[3 * k + 2] = dz;
  };
  basis[0] = kC0;
  set_d(0, 0, 0, 0);
  if (degree < 1) return;
  basis[1] = -kC1 * y;
  basis[2] = kC1 * z;
  basis[3] = -kC1 * x;
  set_d(1, 0, -kC1, 0);
  set_d(2, 0, 0, kC1);
  set_d(3, -kC1, 0, 0);
  if (degree < 2) return;
  basis[4] = kC2[0] * x * y;
  basis[5] = kC2[1] * y * z;
  basis[6] = kC2[2] * (2 * z * z - x * x - y * y);
  basis[7] = kC2[3] * x * z;
  basis[8] = kC2[4] * (x * x - y * y);
  set_d(4, kC2[0] * y, kC2[0] * x, 0);
  set_d(5, 0, kC2[1] * z, kC2[1] * y);
  set_d(6, -2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
  set_d(7, kC2[3] * z, 0, kC2[3] * x);
  set_d(8, 2 * kC2[4] * x, -2 * kC2[4] * y, 0);
  if (degree < 3) return;
  basis[9] = kC3[0] * y * (3 * x * x - y * y);
  basis[10] = kC3[1] * x * y * z;
  basis[11] = kC3[2] * y * (4 * z * z - x * x - y * y);
  basis[12] = kC3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y);
  basis[13] = kC3[4] * x * (4 * z * z - x * x - y * y);
  basis[14] = kC3[5] * z * (x * x - y * y);
  basis[15] = kC3[6] * x * (x * x - 3 * y * y);
  set_d(9, 6 * kC3[0] * x * y, kC3[0] * (3 * x * x - 3 * y * y), 0);
  set_d(10, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
  set_d(11, -2 * kC3[2] * x * y, kC3[2] * (4 * z * z - x * x - 3 * y * y), 8 * kC3[2] * y * z);
  set_d(12, -6 * kC3[3] * x * z, -6 * kC3[3] * y * z, kC3[3] * (6 * z * z - 3 * x * x - 3 * y * y));
  set_d(13, kC3[4] * (4 * z * z - 3 * x * x - y * y), -2 * kC3[4] * x * y, 8 * kC3[4] * x * z);
  set_d(14, 2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (x * x - y * y));
  set_d(15, kC3[6] * (3 * x * x - 3 * y * y), -6 * kC3[6] * x * y, 0);
}

}  // namespace sh

/// Unclamped view-dependent color: 0.5 + sum_k f_k Y_k(dir) per channel.
inline Vec3 eval_sh_unclamped(std::span<const double> coeffs, int degree, const Vec3& view_dir) {
  const int n = sh_coeff_count(degree);
  if (static_cast<size_t>(3 * n) > coeffs.size())
    throw std::invalid_argument("eval_sh: degree exceeds stored coefficients");
  double b[16];
  sh::basis(degree, view_dir, b);
  Vec3 c{0.5, 0.5, 0.5};
  for (int k = 0; k < n; ++k)
    for (int ch = 0; ch < 3; ++ch) c[ch] += coeffs[3 * k + ch] * b[k];
  return c;
}

/// View-dependent color clamped to [0, 1].
inline Vec3 eval_sh(std::span<const double> coeffs, int degree, const Vec3& view_dir) {
  Vec3 c = eval_sh_unclamped(coeffs, degree, view_dir);
  for (int ch = 0; ch < 3; ++ch) c[ch] = std::clamp(c[ch], 0.0, 1.0);
  return c;
}

// ---------------------------------------------------------------------------
// .4dgs raw frame format: magic "4DGS", u32 count, u8 sh_degree, then
// per-primitive f32 fields in declaration order.

inline void write_4dgs(const GaussianFrameSet& set, ByteWriter& w) {
  w.bytes(reinterpret_cast<const uint8_t*>("4DGS"), 4);
  w.u32(static_cast<uint32_t>(set.primitives.size()));
  w.u8(static_cast<uint8_t>(set.sh_degree));
  const int shn = 3 * sh_coeff_count(set.sh_degree);
  for (const auto& g : set.primitives) {
    if (static_cast<int>(g.sh.size()) != shn)
      throw FormatError("write_4dgs: sh length mismatch");
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(g.center[i]));
    for (int i = 0; i < 4; ++i) w.f32(static_cast<float>(g.rotation[i]));
    for (int i = 0; i < 3; ++i) w.f32(static_cast<float>(g.log_scale[i]));
    w.f32(static_cast<float>(g.opacity));
    for (double v : g.sh) w.f32(static_cast<float>(v));
  }
}

inline GaussianFrameSet read_4dgs(ByteReader& r) {
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), "4DGS", 4) != 0) throw FormatError("bad .4dgs magic");
  GaussianFrameSet set;
  const uint32_t count = r.u32();
  set.sh_degree = r.u8();
  if (set.sh_degree > 3) throw FormatError("unsupported sh degree");
  const int shn = 3 * sh_coeff_count(set.sh_degree);
  set.primitives.resize(count);
  for (auto& g : set.primitives) {
    for (int i = 0; i < 3; ++i) g.center[i] = r.f32();
    for (int i = 0; i < 4; ++i) g.rotation[i] = r.f32();
    for (int i = 0; i < 3; ++i) g.log_scale[i] = r.f32();
    g.opacity = r.f32();
    g.sh.resize(shn);
    for (auto& v : g.sh) v = r.f32();
  }
  return set;
}

inline void save_4dgs(const GaussianFrameSet& set, const std::string& path) {
  ByteWriter w;
  write_4dgs(set, w);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(w.data().data()),
          static_cast<std::streamsize>(w.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline GaussianFrameSet load_4dgs(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  ByteReader r(data.data(), data.size());
  return read_4dgs(r);
}

}  // namespace fourdgc
