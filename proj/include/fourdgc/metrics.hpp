#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fourdgc/image.hpp"

namespace fourdgc {

// ---------------------------------------------------------------------------
// PSNR.

/// 10*log10(1/MSE) on [0,1] images, capped at 99 dB for near-identical input.
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: dimension mismatch");
  double se = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------------------
// SSIM, 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, dynamic range 1,
// valid windows only, channels averaged.

namespace detail {

inline const std::array<double, 11>& ssim_kernel() {
  static const std::array<double, 11> k = [] {
    std::array<double, 11> v{};
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += v[i];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return k;
}

/// Separable valid convolution of a single-channel plane.
inline std::vector<double> conv_valid(const std::vector<double>& plane, int w, int h) {
  const auto& k = ssim_kernel();
  const int vw = w - 10, vh = h - 10;
  std::vector<double> rows(static_cast<size_t>(vw) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i) acc += k[i] * plane[static_cast<size_t>(y) * w + x + i];
      rows[static_cast<size_t>(y) * vw + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(vw) * vh, 0.0);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i) acc += k[i] * rows[static_cast<size_t>(y + i) * vw + x];
      out[static_cast<size_t>(y) * vw + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM; when grad_a is non-null it receives d(ssim)/d(a).
inline double ssim(const Image& a, const Image& b, Image* grad_a = nullptr) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: dimension mismatch");
  if (a.width < 11 || a.height < 11)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int w = a.width, h = a.height, vw = w - 10, vh = h - 10;
  const size_t vn = static_cast<size_t>(vw) * vh;
  if (grad_a) *grad_a = Image(w, h, 0.0);

  const auto& kern = detail::ssim_kernel();
  double total = 0;
  std::vector<double> pa(static_cast<size_t>(w) * h), pb(pa.size()), paa(pa.size()),
      pbb(pa.size()), pab(pa.size());
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const double va = a.at(x, y, ch), vb = b.at(x, y, ch);
        pa[i] = va;
        pb[i] = vb;
        paa[i] = va * va;
        pbb[i] = vb * vb;
        pab[i] = va * vb;
      }
    const auto mu_a = detail::conv_valid(pa, w, h);
    const auto mu_b = detail::conv_valid(pb, w, h);
    const auto m2a = detail::conv_valid(paa, w, h);
    const auto m2b = detail::conv_valid(pbb, w, h);
    const auto mab = detail::conv_valid(pab, w, h);

    // per-window partials, correlated back into pixel space for the gradient
    std::vector<double> d_mu(vn, 0.0), d_m2(vn, 0.0), d_mab(vn, 0.0);
    for (size_t i = 0; i < vn; ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = m2a[i] - ma * ma, vb = m2b[i] - mb * mb;
      const double vab = mab[i] - ma * mb;
      const double n1 = 2 * ma * mb + c1, d1 = ma * ma + mb * mb + c1;
      const double n2 = 2 * vab + c2, d2 = va + vb + c2;
      const double f = n1 / d1, g = n2 / d2;
      total += f * g;
      if (!grad_a) continue;
      const double df_dmu = (2 * mb * d1 - n1 * 2 * ma) / (d1 * d1);
      const double dg_dva = -n2 / (d2 * d2);
      const double dg_dvab = 2 / d2;
      // va, vab depend on mu_a as well
      d_mu[i] = df_dmu * g + f * (dg_dva * (-2 * ma) + dg_dvab * (-mb));
      d_m2[i] = f * dg_dva;
      d_mab[i] = f * dg_dvab;
    }
    if (grad_a) {
      const double scale = 1.0 / (3.0 * static_cast<double>(vn));
      for (int vy = 0; vy < vh; ++vy)
        for (int vx = 0; vx < vw; ++vx) {
          const size_t i = static_cast<size_t>(vy) * vw + vx;
          if (d_mu[i] == 0 && d_m2[i] == 0 && d_mab[i] == 0) continue;
          for (int ky = 0; ky < 11; ++ky)
            for (int kx = 0; kx < 11; ++kx) {
              const double wgt = kern[ky] * kern[kx];
              const int px = vx + kx, py = vy + ky;
              const size_t pi = static_cast<size_t>(py) * w + px;
              grad_a->at(px, py, ch) +=
                  scale * wgt * (d_mu[i] + 2 * pa[pi] * d_m2[i] + pb[pi] * d_mab[i]);
            }
        }
    }
  }
  return total / (3.0 * static_cast<double>(vn));
}

// ---------------------------------------------------------------------------
// Bjontegaard deltas, classic cubic-fit formulation on log10(rate).

struct RdPoint {
  double bits_per_frame = 0;
  double psnr_db = 0;
  double ssim = 0;
  double lambda1 = 0;
};

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;
};

namespace detail {

/// Least-squares cubic fit on centered abscissae.
struct Poly3 {
  double center = 0;
  std::array<double, 4> c{};  // c0 + c1 u + c2 u^2 + c3 u^3, u = x - center

  double eval(double x) const {
    const double u = x - center;
    return c[0] + u * (c[1] + u * (c[2] + u * c[3]));
  }

  /// Exact integral over [lo, hi].
  double integral(double lo, double hi) const {
    auto anti = [&](double x) {
      const double u = x - center;
      return u * (c[0] + u * (c[1] / 2 + u * (c[2] / 3 + u * c[3] / 4)));
    };
    return anti(hi) - anti(lo);
  }
};

inline Poly3 fit_poly3(std::span<const double> xs, std::span<const double> ys) {
  const size_t n = xs.size();
  if (n < 4) throw std::invalid_argument("cubic fit needs at least 4 points");
  Poly3 p;
  for (double x : xs) p.center += x;
  p.center /= static_cast<double>(n);
  // normal equations A^T A c = A^T y
  double ata[4][4] = {};
  double aty[4] = {};
  for (size_t i = 0; i < n; ++i) {
    const double u = xs[i] - p.center;
    double pw[4] = {1, u, u * u, u * u * u};
    for (int r = 0; r < 4; ++r) {
      aty[r] += pw[r] * ys[i];
      for (int cidx = 0; cidx < 4; ++cidx) ata[r][cidx] += pw[r] * pw[cidx];
    }
  }
  // Gaussian elimination with partial pivoting
  int perm[4] = {0, 1, 2, 3};
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
    std::swap(ata[col], ata[piv]);
    std::swap(aty[col], aty[piv]);
    std::swap(perm[col], perm[piv]);
    if (ata[col][col] == 0) throw std::invalid_argument("cubic fit is singular");
    for (int r = col + 1; r < 4; ++r) {
      const double f = ata[r][col] / ata[col][col];
      for (int cidx = col; cidx < 4; ++cidx) ata[r][cidx] -= f * ata[col][cidx];
      aty[r] -= f * aty[col];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double acc = aty[r];
    for (int cidx = r + 1; cidx < 4; ++cidx) acc -= ata[r][cidx] * p.c[cidx];
    p.c[r] = acc / ata[r][r];
  }
  return p;
}

inline void split_axes(const std::vector<RdPoint>& pts, std::vector<double>& log_rate,
                       std::vector<double>& quality) {
  log_rate.clear();
  quality.clear();
  for (const auto& p : pts) {
    if (!(p.bits_per_frame > 0)) throw std::invalid_argument("bjontegaard: rate must be positive");
    log_rate.push_back(std::log10(p.bits_per_frame));
    quality.push_back(p.psnr_db);
  }
}

}  // namespace detail

struct BdResult {
  double bdbr_percent = 0;
  double bd_psnr_db = 0;
};

inline BdResult bjontegaard(const std::vector<RdPoint>& anchor, const std::vector<RdPoint>& test) {
  if (anchor.size() < 4 || test.size() < 4)
    throw std::invalid_argument("bjontegaard: need at least 4 points per curve");
  std::vector<double> la, pa, lt, pt;
  detail::split_axes(anchor, la, pa);
  detail::split_axes(test, lt, pt);

  BdResult out;
  {
    const auto fa = detail::fit_poly3(la, pa);
    const auto ft = detail::fit_poly3(lt, pt);
    const double lo = std::max(*std::min_element(la.begin(), la.end()),
                               *std::min_element(lt.begin(), lt.end()));
    const double hi = std::min(*std::max_element(la.begin(), la.end()),
                               *std::max_element(lt.begin(), lt.end()));
    if (!(hi > lo)) throw std::invalid_argument("bjontegaard: no rate overlap");
    out.bd_psnr_db = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
  }
  {
    const auto fa = detail::fit_poly3(pa, la);
    const auto ft = detail::fit_poly3(pt, lt);
    const double lo = std::max(*std::min_element(pa.begin(), pa.end()),
                               *std::min_element(pt.begin(), pt.end()));
    const double hi = std::min(*std::max_element(pa.begin(), pa.end()),
                               *std::max_element(pt.begin(), pt.end()));
    if (!(hi > lo)) throw std::invalid_argument("bjontegaard: no quality overlap");
    const double avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    out.bdbr_percent = (std::pow(10.0, avg) - 1.0) * 100.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// RD reporting. Data CSV plus a fitted-curve CSV for plotting.

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void rd_report(const std::vector<RdCurve>& curves, const std::string& out_base) {
  if (curves.empty()) throw std::invalid_argument("rd_report: no curves");
  {
    std::ofstream f(out_base + ".csv");
    if (!f) throw IoError("cannot open for write: " + out_base + ".csv");
    f << "label,lambda1,bits_per_frame,psnr_db,ssim\n";
    for (const auto& c : curves)
      for (const auto& p : c.points)
        f << c.label << "," << format_g17(p.lambda1) << "," << format_g17(p.bits_per_frame)
          << "," << format_g17(p.psnr_db) << "," << format_g17(p.ssim) << "\n";
    if (!f) throw IoError("write failed: " + out_base + ".csv");
  }
  {
    std::ofstream f(out_base + "_fit.csv");
    if (!f) throw IoError("cannot open for write: " + out_base + "_fit.csv");
    f << "label,bits_per_frame,psnr_db\n";
    for (const auto& c : curves) {
      if (c.points.size() < 4) continue;
      std::vector<double> lr, q;
      detail::split_axes(c.points, lr, q);
      const auto fit = detail::fit_poly3(lr, q);
      const double lo = *std::min_element(lr.begin(), lr.end());
      const double hi = *std::max_element(lr.begin(), lr.end());
      for (int i = 0; i < 100; ++i) {
        const double x = lo + (hi - lo) * i / 99.0;
        f << c.label << "," << format_g17(std::pow(10.0, x)) << "," << format_g17(fit.eval(x))
          << "\n";
      }
    }
    if (!f) throw IoError("write failed: " + out_base + "_fit.csv");
  }
}

/// Parses the data CSV written by rd_report (round-trip exact).
inline std::vector<RdCurve> parse_rd_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<RdCurve> curves;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string label, fld;
    std::getline(ss, label, ',');
    RdPoint p;
    std::getline(ss, fld, ',');
    p.lambda1 = std::stod(fld);
    std::getline(ss, fld, ',');
    p.bits_per_frame = std::stod(fld);
    std::getline(ss, fld, ',');
    p.psnr_db = std::stod(fld);
    std::getline(ss, fld, ',');
    p.ssim = std::stod(fld);
    if (curves.empty() || curves.back().label != label) curves.push_back({label, {}});
    curves.back().points.push_back(p);
  }
  return curves;
}

}  // namespace fourdgc
