#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace ea {

enum class LossKind { cross_entropy, margin };

inline void check_label(std::span<const double> logits, std::size_t y) {
  if (y >= logits.size()) {
    throw InvalidInput("label " + std::to_string(y) + " out of range for " + std::to_string(logits.size()) +
                       " logits");
  }
}

/// Index of the largest logit other than y (lowest index on ties).
inline std::size_t best_wrong_class(std::span<const double> logits, std::size_t y) {
  check_label(logits, y);
  std::size_t arg = logits.size();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k == y) continue;
    if (arg == logits.size() || logits[k] > best) {
      best = logits[k];
      arg = k;
    }
  }
  return arg;
}

/// max_{k != y} logits[k] - logits[y]. Non-negative exactly when y is no
/// longer the unique top class.
inline double margin_loss(std::span<const double> logits, std::size_t y) {
  check_label(logits, y);
  if (logits.size() < 2) throw InvalidInput("margin_loss: need at least two classes");
  return logits[best_wrong_class(logits, y)] - logits[y];
}

inline double cross_entropy_loss(std::span<const double> logits, std::size_t y) {
  check_label(logits, y);
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z);
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return m + std::log(s) - logits[y];
}

inline double loss_value(LossKind kind, std::span<const double> logits, std::size_t y) {
  return kind == LossKind::margin ? margin_loss(logits, y) : cross_entropy_loss(logits, y);
}

/// d loss / d logits.
inline std::vector<double> loss_gradient(LossKind kind, std::span<const double> logits, std::size_t y) {
  check_label(logits, y);
  std::vector<double> g(logits.size(), 0.0);
  if (kind == LossKind::margin) {
    if (logits.size() < 2) throw InvalidInput("margin_loss: need at least two classes");
    g[best_wrong_class(logits, y)] = 1.0;
    g[y] = -1.0;
    return g;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z);
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    g[k] = std::exp(logits[k] - m);
    s += g[k];
  }
  for (double& v : g) v /= s;
  g[y] -= 1.0;
  return g;
}

}  // namespace ea
