#pragma once

#include <functional>
#include <numeric>

#include "fourdgc/common.hpp"

namespace fourdgc {

/// Flat f64 parameter block with a same-shape gradient accumulator.
/// Everything trainable (grids, MLP weights, Gaussian attributes, entropy
/// model parameters) lives in one of these.
struct ParamTensor {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<size_t> shape;
  bool learnable = true;
  bool quat_rows = false;  // rows of 4 renormalized after each optimizer step

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<size_t> shp, double fill = 0.0)
      : name(std::move(n)), shape(std::move(shp)) {
    size_t total = 1;
    for (size_t d : shape) total *= d;
    value.assign(total, fill);
    grad.assign(total, 0.0);
  }

  size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Adaptive-moment gradient descent, decay 0.9 / 0.999, eps 1e-8, bias
/// correction. Quaternion tensors are row-renormalized after the update.
class AdamOptimizer {
 public:
  struct Group {
    ParamTensor* tensor;
    double lr;
    std::vector<double> m, v;
  };

  void add(ParamTensor* t, double lr) {
    Group g;
    g.tensor = t;
    g.lr = lr;
    g.m.assign(t->size(), 0.0);
    g.v.assign(t->size(), 0.0);
    groups_.push_back(std::move(g));
  }

  void set_lr(const std::string& name, double lr) {
    for (auto& g : groups_)
      if (g.tensor->name == name) g.lr = lr;
  }

  void zero_grads() {
    for (auto& g : groups_) g.tensor->zero_grad();
  }

  int64_t step_count() const { return step_; }

  void step() {
    ++step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (auto& g : groups_) {
      if (!g.tensor->learnable) continue;
      auto& val = g.tensor->value;
      auto& grad = g.tensor->grad;
      for (size_t i = 0; i < val.size(); ++i) {
        const double gi = grad[i];
        if (std::isnan(gi))
          throw NumericalError("NaN gradient in parameter " + g.tensor->name);
        g.m[i] = b1 * g.m[i] + (1 - b1) * gi;
        g.v[i] = b2 * g.v[i] + (1 - b2) * gi * gi;
        const double mhat = g.m[i] / bc1;
        const double vhat = g.v[i] / bc2;
        val[i] -= g.lr * mhat / (std::sqrt(vhat) + eps);
      }
      if (g.tensor->quat_rows) {
        for (size_t r = 0; r + 4 <= val.size(); r += 4) {
          const double n = std::sqrt(val[r] * val[r] + val[r + 1] * val[r + 1] +
                                     val[r + 2] * val[r + 2] + val[r + 3] * val[r + 3]);
          if (n > 0)
            for (int k = 0; k < 4; ++k) val[r + k] /= n;
        }
      }
    }
  }

 private:
  std::vector<Group> groups_;
  int64_t step_ = 0;
};

struct FdReport {
  double max_rel_err = 0;
  std::string worst_param;
  size_t worst_index = 0;
  double analytic = 0, numeric = 0;
  size_t coords_checked = 0;
};

/// Central-difference verification of analytic gradients.
///
/// `loss_fn(true)` must populate `grad` on every tensor in `params`;
/// `loss_fn(false)` must evaluate the loss only. The callable must be
/// deterministic (freeze any stochastic inputs before calling). Relative
/// error is |analytic - fd| / max(1e-8, |fd|), maximized over sampled
/// coordinates (all coordinates when a tensor has at most
/// `max_coords_per_tensor`).
inline FdReport finite_diff_check(const std::function<double(bool)>& loss_fn,
                                  const std::vector<ParamTensor*>& params,
                                  double epsilon,
                                  size_t max_coords_per_tensor = 256,
                                  uint64_t seed = 17) {
  for (auto* p : params) p->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericalError("finite_diff_check: non-finite base loss");

  FdReport rep;
  Rng rng(derive_seed(seed, 0xfd));
  for (auto* p : params) {
    if (!p->learnable) continue;
    std::vector<size_t> coords;
    if (p->size() <= max_coords_per_tensor) {
      coords.resize(p->size());
      std::iota(coords.begin(), coords.end(), size_t{0});
    } else {
      for (size_t k = 0; k < max_coords_per_tensor; ++k)
        coords.push_back(static_cast<size_t>(rng.index(p->size())));
    }
    for (size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double up = loss_fn(false);
      p->value[i] = saved - epsilon;
      const double dn = loss_fn(false);
      p->value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw NumericalError("finite_diff_check: non-finite loss perturbing " + p->name);
      const double fd = (up - dn) / (2 * epsilon);
      const double rel = std::abs(p->grad[i] - fd) / std::max(1e-8, std::abs(fd));
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p->name;
        rep.worst_index = i;
        rep.analytic = p->grad[i];
        rep.numeric = fd;
      }
    }
  }
  return rep;
}

}  // namespace fourdgc
