#pragma once

#include "fourdgc/core.hpp"
#include "fourdgc/motion.hpp"

namespace fourdgc {

/// Per-primitive accumulated 2D-center gradient norms, averaged over the
/// stage-1 iterations since the last reset.
struct GradientStats {
  std::vector<double> sums;
  int iterations = 0;

  explicit GradientStats(size_t count = 0) : sums(count, 0.0) {}

  void accumulate(std::span<const double> grad2d_norms) {
    if (grad2d_norms.size() != sums.size())
      throw std::invalid_argument("GradientStats: size mismatch");
    for (size_t i = 0; i < sums.size(); ++i) sums[i] += grad2d_norms[i];
    ++iterations;
  }

  std::vector<double> averages() const {
    std::vector<double> out(sums.size(), 0.0);
    if (iterations == 0) return out;
    for (size_t i = 0; i < sums.size(); ++i) out[i] = sums[i] / iterations;
    return out;
  }
};

enum class CloneKind : uint8_t { gradient = 0, motion = 1 };

/// Sparse compensated Gaussians appended after the transformed set.
struct CompensatedSet {
  std::vector<GaussianPrimitive> primitives;
  std::vector<CloneKind> provenance;

  size_t size() const { return primitives.size(); }
};

/// Indices whose averaged gradient stat strictly exceeds tau_g.
inline std::vector<size_t> select_gradient_clones(std::span<const double> stats, double tau_g) {
  std::vector<size_t> out;
  for (size_t i = 0; i < stats.size(); ++i)
    if (stats[i] > tau_g) out.push_back(i);
  return out;
}

/// Indices with large motion (|d mu| > tau_mu or rotation angle > tau_r) gated
/// on scale: max log-scale component strictly above the floor.
inline std::vector<size_t> select_motion_clones(std::span<const MotionSample> motions,
                                                std::span<const Vec3> log_scales, double tau_mu,
                                                double tau_r, double scale_floor) {
  if (motions.size() != log_scales.size())
    throw std::invalid_argument("select_motion_clones: size mismatch");
  std::vector<size_t> out;
  for (size_t i = 0; i < motions.size(); ++i) {
    const double t = norm(motions[i].delta_mu);
    const double ang = motions[i].rotation_angle();
    const double smax =
        std::max({log_scales[i].x, log_scales[i].y, log_scales[i].z});
    if ((t > tau_mu || ang > tau_r) && smax > scale_floor) out.push_back(i);
  }
  return out;
}

/// Clones sampled in N(mu, 2 Sigma) around the source. Gradient kind yields
/// one clone with attributes copied; motion kind yields two clones with the
/// activated extent reduced 100x (log_scale - ln 100).
inline std::vector<GaussianPrimitive> spawn_compensated(const GaussianPrimitive& source,
                                                        CloneKind kind, Rng& rng) {
  const Mat3 rot = rotation_matrix(source.rotation);
  const Vec3 std_axis{std::sqrt(2.0) * std::exp(source.log_scale.x),
                      std::sqrt(2.0) * std::exp(source.log_scale.y),
                      std::sqrt(2.0) * std::exp(source.log_scale.z)};
  const int count = kind == CloneKind::motion ? 2 : 1;
  std::vector<GaussianPrimitive> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    GaussianPrimitive g = source;
    const Vec3 z{rng.normal(), rng.normal(), rng.normal()};
    // A z with A = R diag(sqrt(2) exp(s)) gives covariance 2 Sigma
    const Vec3 local{std_axis.x * z.x, std_axis.y * z.y, std_axis.z * z.z};
    g.center = source.center + rot * local;
    if (kind == CloneKind::motion) {
      const double ln100 = std::log(100.0);
      g.log_scale = {source.log_scale.x - ln100, source.log_scale.y - ln100,
                     source.log_scale.z - ln100};
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Removes primitives with activated opacity below the threshold, preserving
/// the order of survivors.
inline CompensatedSet prune_low_opacity(const CompensatedSet& set, double threshold = 0.01) {
  CompensatedSet out;
  for (size_t i = 0; i < set.primitives.size(); ++i) {
    if (set.primitives[i].opacity < threshold) continue;
    out.primitives.push_back(set.primitives[i]);
    out.provenance.push_back(set.provenance[i]);
  }
  return out;
}

}  // namespace fourdgc
