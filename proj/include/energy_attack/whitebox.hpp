#pragma once

// White-box L-infinity attacks on a surrogate model. These are only used to
// produce perturbations whose patches feed the energy basis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>

#include "error.hpp"
#include "image.hpp"
#include "loss.hpp"
#include "nnet.hpp"

namespace ea {

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Optional hook observing every iterate x_k (tests use it to check that the
/// ball and box constraints hold throughout).
using IterateObserver = std::function<void(const Image& iterate)>;

namespace detail {

inline void check_whitebox_args(double epsilon, std::size_t iters) {
  if (!(epsilon > 0.0)) throw InvalidInput("white-box attack: epsilon must be positive");
  if (iters < 1) throw InvalidInput("white-box attack: need at least one iteration");
}

inline Tensor delta_of(const Image& x, const Image& xk) {
  Tensor d(x.shape());
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = xk.pixels.values[i] - x.pixels.values[i];
  return d;
}

}  // namespace detail

/// Frank-Wolfe attack maximizing the margin loss over the intersection of the
/// epsilon-ball around x and the [0,1] box.
///
/// Starting at x_0 = x, each step moves toward the linear-maximization vertex
/// s_k = clip(x + eps * sign(grad l(x_k)), 0, 1) with step 2/(k+2). Iterates are
/// convex combinations of feasible points so they stay feasible. The iterate
/// with the highest margin seen (including the last one) is returned.
inline Perturbation frank_wolfe_attack(const Model& m, const Image& x, std::size_t y, double epsilon,
                                       std::size_t iters, const IterateObserver& observe = {}) {
  detail::check_whitebox_args(epsilon, iters);
  Image xk = x;
  Image best = x;
  double best_margin = -std::numeric_limits<double>::infinity();

  for (std::size_t k = 0; k <= iters; ++k) {
    if (observe) observe(xk);
    const auto logits = m.forward(xk);
    const double margin = margin_loss(logits, y);
    if (margin > best_margin) {
      best_margin = margin;
      best = xk;
    }
    if (k == iters) break;

    const Tensor g = m.backward(xk.pixels, loss_gradient(LossKind::margin, logits, y), nullptr);
    const double gamma = 2.0 / (static_cast<double>(k) + 2.0);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double x0 = x.pixels.values[i];
      const double vertex = std::clamp(x0 + epsilon * sign_of(g.values[i]), 0.0, 1.0);
      double& xi = xk.pixels.values[i];
      xi += gamma * (vertex - xi);
    }
  }
  return {detail::delta_of(x, best), epsilon};
}

/// Projected sign-gradient ascent on the margin loss, starting at x.
inline Perturbation pgd_attack(const Model& m, const Image& x, std::size_t y, double epsilon, std::size_t iters,
                               double step, const IterateObserver& observe = {}) {
  detail::check_whitebox_args(epsilon, iters);
  if (step < 0.0) throw InvalidInput("pgd_attack: step must be non-negative");
  Image xk = x;
  Image best = x;
  double best_margin = -std::numeric_limits<double>::infinity();

  for (std::size_t k = 0; k <= iters; ++k) {
    if (observe) observe(xk);
    const auto logits = m.forward(xk);
    const double margin = margin_loss(logits, y);
    if (margin > best_margin) {
      best_margin = margin;
      best = xk;
    }
    if (k == iters) break;

    const Tensor g = m.backward(xk.pixels, loss_gradient(LossKind::margin, logits, y), nullptr);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double x0 = x.pixels.values[i];
      const double moved = xk.pixels.values[i] + step * sign_of(g.values[i]);
      xk.pixels.values[i] = std::clamp(std::clamp(moved, x0 - epsilon, x0 + epsilon), 0.0, 1.0);
    }
  }
  return {detail::delta_of(x, best), epsilon};
}

}  // namespace ea
