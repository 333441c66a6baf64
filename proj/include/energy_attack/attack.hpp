#pragma once

// Energy Attack: score-based random search whose proposals are eigenpatches
// drawn by energy, tiled over a t*s_p square (or cropped to 3x3 once t hits 0),
// sign-quantized to {-eps, 0, +eps} and pasted at a random position. A
// proposal is kept only if it strictly raises the margin loss. When the
// current tiling stops paying off ("hopeless"), t is halved.
//
// The Square-style baseline runs the same harness with uniformly colored
// blocks in place of eigenpatches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "basis.hpp"
#include "error.hpp"
#include "image.hpp"
#include "oracle.hpp"
#include "rng.hpp"
#include "whitebox.hpp"

namespace ea {

struct HopelessStrategy {
  enum class Kind { batch, probabilistic };

  // Probabilistic rule: stop trusting the current tiling once we are 90%
  // confident the per-step advance probability is below 15%. Fifteen straight
  // failures is the smallest streak with (1 - 0.15)^k < 0.10.
  static constexpr double kConfidence = 0.90;
  static constexpr double kAdvanceProbability = 0.15;
  static constexpr std::size_t kStreak = 15;

  Kind kind = Kind::batch;
  std::size_t tau = 1;

  static HopelessStrategy batch(std::size_t tau) {
    if (tau < 1) throw InvalidConfig("hopeless strategy: tau must be >= 1");
    return {Kind::batch, tau};
  }
  static HopelessStrategy probabilistic() { return {Kind::probabilistic, kStreak}; }

  std::string name() const {
    return kind == Kind::batch ? "batch:" + std::to_string(tau) : std::string("prob");
  }
};

/// Smallest k with (1 - p)^k < 1 - confidence.
inline std::size_t hopeless_streak_for(double confidence, double advance_probability) {
  std::size_t k = 0;
  double tail = 1.0;
  while (tail >= 1.0 - confidence) {
    tail *= 1.0 - advance_probability;
    ++k;
  }
  return k;
}

/// Whether the current tiling is hopeless.
///
/// batch(tau): no image in the active batch improved this step and the batch
/// has now gone `fail_streak` >= tau consecutive steps without improvement.
/// probabilistic: this image's own `fail_streak` reached 15.
inline bool hopeless_fired(const HopelessStrategy& s, std::span<const bool> improved, std::size_t fail_streak) {
  if (s.kind == HopelessStrategy::Kind::probabilistic) return fail_streak >= HopelessStrategy::kStreak;
  const bool any = std::any_of(improved.begin(), improved.end(), [](bool b) { return b; });
  return !any && fail_streak >= s.tau;
}

struct AttackState {
  Perturbation delta;
  double best_loss = -std::numeric_limits<double>::infinity();
  std::size_t tiling = 0;
  std::size_t fail_streak = 0;
  std::uint64_t queries_used = 0;
  bool success = false;
};

struct AttackRecord {
  std::size_t image_id = 0;
  bool success = false;
  std::uint64_t queries = 0;
  double final_margin = 0.0;
};

struct AttackConfig {
  double epsilon = 0.0;
  std::uint64_t max_queries = 10000;
  HopelessStrategy strategy = HopelessStrategy::batch(1);
  // Side of the unit square block for the baseline; the energy attack takes it
  // from the basis.
  std::size_t square_patch = 5;
};

/// Emitted once per oracle query. `tiling` is the factor the candidate was
/// built with; `best_loss` is the running best after the acceptance decision.
struct QueryEvent {
  std::size_t image = 0;
  const Image* candidate = nullptr;
  double loss = 0.0;
  double best_loss = 0.0;
  std::size_t tiling = 0;
  bool accepted = false;
  std::uint64_t queries_used = 0;
};

using QueryObserver = std::function<void(const QueryEvent&)>;

/// Vertical stripes: each column gets one value from {-eps, +eps} per channel,
/// constant down the column. Not yet clipped to any image.
inline Perturbation init_stripes(const Shape& shape, double epsilon, Rng& rng) {
  if (!(epsilon > 0.0)) throw InvalidInput("init_stripes: epsilon must be positive");
  Tensor d(shape);
  for (std::size_t ch = 0; ch < shape.c; ++ch)
    for (std::size_t x = 0; x < shape.w; ++x) {
      const double v = epsilon * random_sign(rng);
      for (std::size_t y = 0; y < shape.h; ++y) d.at(ch, y, x) = v;
    }
  return {std::move(d), epsilon};
}

/// Repeats a c x s x s patch t times along each side.
inline Tensor tile(const Tensor& patch, std::size_t t) {
  if (t < 1) throw InvalidInput("tile: t must be >= 1 (use crop3 when t == 0)");
  const Shape ps = patch.shape;
  if (ps.h != ps.w) throw DimensionError("tile: patch must be square, got " + ps.str());
  Tensor out(Shape{ps.c, ps.h * t, ps.w * t});
  for (std::size_t ch = 0; ch < ps.c; ++ch)
    for (std::size_t y = 0; y < out.shape.h; ++y)
      for (std::size_t x = 0; x < out.shape.w; ++x) out.at(ch, y, x) = patch.at(ch, y % ps.h, x % ps.w);
  return out;
}

/// Uniformly random 3x3 spatial window of the patch (all channels).
inline Tensor crop3(const Tensor& patch, Rng& rng) {
  const Shape ps = patch.shape;
  if (ps.h < 3 || ps.w < 3) throw InvalidConfig("crop3: patch side must be >= 3, got " + ps.str());
  const std::size_t y0 = uniform_index(rng, ps.h - 2);
  const std::size_t x0 = uniform_index(rng, ps.w - 2);
  Tensor out(Shape{ps.c, 3, 3});
  for (std::size_t ch = 0; ch < ps.c; ++ch)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x) out.at(ch, y, x) = patch.at(ch, y0 + y, x0 + x);
  return out;
}

struct Proposal {
  Tensor delta;  // candidate perturbation before box clipping
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Pastes eps * s * sign(V), with one random scalar sign s, over a uniformly
/// chosen block-sized area of the current perturbation.
inline Proposal propose(const Tensor& current, const Tensor& block, double epsilon, Rng& rng) {
  const Shape& is = current.shape;
  const Shape& bs = block.shape;
  if (bs.c != is.c || bs.h > is.h || bs.w > is.w) {
    throw DimensionError("propose: block " + bs.str() + " does not fit perturbation " + is.str());
  }
  const double s = random_sign(rng);
  Proposal p{current, uniform_index(rng, is.h - bs.h + 1), 0};
  p.x = uniform_index(rng, is.w - bs.w + 1);
  for (std::size_t ch = 0; ch < bs.c; ++ch)
    for (std::size_t y = 0; y < bs.h; ++y)
      for (std::size_t x = 0; x < bs.w; ++x)
        p.delta.at(ch, p.y + y, p.x + x) = epsilon * s * sign_of(block.at(ch, y, x));
  return p;
}

/// Initial tiling factor floor(s_x / s_p) for the shorter image side.
inline std::size_t initial_tiling(const Shape& image, std::size_t patch) {
  return std::min(image.h, image.w) / patch;
}

namespace detail {

// Builds the unsigned block V for one proposal at tiling factor t.
using BlockMaker = std::function<Tensor(std::size_t t, Rng& rng)>;

inline std::vector<AttackRecord> random_search(QueryOracle& oracle, std::span<const Image> xs, const AttackConfig& cfg,
                                               std::size_t patch, const BlockMaker& make_block, Rng& rng,
                                               const QueryObserver& observe) {
  if (!(cfg.epsilon > 0.0)) throw InvalidConfig("attack: epsilon must be positive");
  if (cfg.max_queries < 1) throw InvalidConfig("attack: max_queries must be >= 1");
  const std::size_t n = xs.size();
  std::vector<AttackState> states(n);
  if (n == 0) return {};

  auto emit = [&](std::size_t i, const Image& cand, double loss, std::size_t t, bool accepted) {
    if (observe) observe({i, &cand, loss, states[i].best_loss, t, accepted, states[i].queries_used});
  };

  // Stripe initialization costs one query per image.
  std::vector<Image> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Perturbation p = init_stripes(xs[i].shape(), cfg.epsilon, rng);
    p.delta = clip_to_box(xs[i], p.delta);
    states[i].delta = std::move(p);
    states[i].tiling = initial_tiling(xs[i].shape(), patch);
    batch.push_back(apply(xs[i], states[i].delta.delta));
  }
  auto logits = oracle.query(batch);
  for (std::size_t i = 0; i < n; ++i) {
    const MarginEval ev = evaluate_margin(logits[i], xs[i].label);
    states[i].best_loss = ev.margin;
    states[i].queries_used = 1;
    states[i].success = ev.adversarial;
    emit(i, batch[i], ev.margin, states[i].tiling, true);
  }

  std::size_t batch_streak = 0;
  std::vector<Tensor> cand_delta;
  std::vector<std::size_t> cand_tiling;
  while (true) {
    const auto active = filter_active(std::span<const AttackState>(states), cfg.max_queries);
    if (active.empty()) break;

    batch.clear();
    cand_delta.clear();
    cand_tiling.clear();
    for (std::size_t i : active) {
      const std::size_t t = states[i].tiling;
      Tensor block = make_block(t, rng);
      Proposal p = propose(states[i].delta.delta, block, cfg.epsilon, rng);
      Tensor realized = clip_to_box(xs[i], p.delta);
      batch.push_back(apply(xs[i], realized));
      cand_delta.push_back(std::move(realized));
      cand_tiling.push_back(t);
    }
    logits = oracle.query(batch);

    // std::vector<bool> is not contiguous, so the flags live in a plain array.
    std::unique_ptr<bool[]> improved(new bool[active.size()]());
    for (std::size_t k = 0; k < active.size(); ++k) {
      AttackState& st = states[active[k]];
      const MarginEval ev = evaluate_margin(logits[k], xs[active[k]].label);
      ++st.queries_used;
      const bool accept = ev.margin > st.best_loss;
      if (accept) {
        st.delta.delta = std::move(cand_delta[k]);
        st.best_loss = ev.margin;
        st.fail_streak = 0;
        st.success = ev.adversarial;
        improved[k] = true;
      } else {
        ++st.fail_streak;
      }
      emit(active[k], batch[k], ev.margin, cand_tiling[k], accept);
    }

    if (cfg.strategy.kind == HopelessStrategy::Kind::batch) {
      const std::span<const bool> flags(improved.get(), active.size());
      batch_streak = std::any_of(flags.begin(), flags.end(), [](bool f) { return f; }) ? 0 : batch_streak + 1;
      const bool fired = hopeless_fired(cfg.strategy, flags, batch_streak);
      if (fired) {
        for (auto& st : states) st.tiling /= 2;
        batch_streak = 0;
      }
    } else {
      for (std::size_t i : active) {
        AttackState& st = states[i];
        if (hopeless_fired(cfg.strategy, {}, st.fail_streak)) {
          st.tiling /= 2;
          st.fail_streak = 0;
        }
      }
    }
  }

  std::vector<AttackRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) records[i] = {i, states[i].success, states[i].queries_used, states[i].best_loss};
  return records;
}

}  // namespace detail

/// Runs the Energy Attack on a batch of images against a score oracle.
inline std::vector<AttackRecord> energy_attack(QueryOracle& oracle, const EnergyBasis& basis,
                                               std::span<const Image> xs, const AttackConfig& cfg, Rng& rng,
                                               const QueryObserver& observe = {}) {
  const EnergySampler sampler(basis);  // throws on a degenerate basis before any query
  for (const auto& x : xs) {
    if (x.shape().c != basis.channels()) {
      throw DimensionError("energy_attack: basis has " + std::to_string(basis.channels()) + " channels, image " +
                           x.shape().str());
    }
  }
  if (basis.patch_size() < 3) throw InvalidConfig("energy_attack: patch size must be >= 3 for the crop stage");
  auto make_block = [&](std::size_t t, Rng& r) {
    const Tensor v = basis.patch(sampler.sample_index(r));
    return t > 0 ? tile(v, t) : crop3(v, r);
  };
  return detail::random_search(oracle, xs, cfg, basis.patch_size(), make_block, rng, observe);
}

/// Square-style baseline: same harness and tiling schedule, but each block is
/// a t*s_p square (3x3 once t == 0) with one random +-1 value per channel.
inline std::vector<AttackRecord> square_baseline(QueryOracle& oracle, std::span<const Image> xs,
                                                 const AttackConfig& cfg, Rng& rng,
                                                 const QueryObserver& observe = {}) {
  if (cfg.square_patch < 3) throw InvalidConfig("square_baseline: patch size must be >= 3");
  const std::size_t channels = xs.empty() ? 1 : xs.front().shape().c;
  auto make_block = [&](std::size_t t, Rng& r) {
    const std::size_t side = t > 0 ? t * cfg.square_patch : 3;
    Tensor block(Shape{channels, side, side});
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double v = random_sign(r);
      std::fill(block.values.begin() + static_cast<std::ptrdiff_t>(ch * side * side),
                block.values.begin() + static_cast<std::ptrdiff_t>((ch + 1) * side * side), v);
    }
    return block;
  };
  return detail::random_search(oracle, xs, cfg, cfg.square_patch, make_block, rng, observe);
}

}  // namespace ea
