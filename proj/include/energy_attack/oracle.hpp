#pragma once

// Score-access query interface to a victim classifier. The oracle only ever
// returns logits; there is no path to the hidden model's gradients.

#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "loss.hpp"
#include "nnet.hpp"

namespace ea {

using Logits = std::vector<double>;
using LogitFn = std::function<Logits(const Image&)>;

class BudgetExhausted : public Error {
 public:
  BudgetExhausted(std::uint64_t requested, std::uint64_t remaining, std::vector<Logits> partial = {})
      : Error("query budget exhausted: requested " + std::to_string(requested) + ", remaining " +
              std::to_string(remaining)),
        requested_(requested),
        remaining_(remaining),
        partial_(std::move(partial)) {}

  std::uint64_t requested() const { return requested_; }
  std::uint64_t remaining() const { return remaining_; }
  // Logits evaluated before the budget ran out. Empty: a batch is admitted
  // all-or-nothing, so a refused batch is never evaluated.
  const std::vector<Logits>& partial() const { return partial_; }

 private:
  std::uint64_t requested_;
  std::uint64_t remaining_;
  std::vector<Logits> partial_;
};

class QueryOracle {
 public:
  QueryOracle(LogitFn fn, std::uint64_t max_queries) : fn_(std::move(fn)), max_queries_(max_queries) {}

  static QueryOracle from_model(std::shared_ptr<const Model> model, std::uint64_t max_queries) {
    return QueryOracle([m = std::move(model)](const Image& x) { return m->forward(x); }, max_queries);
  }

  /// Evaluates a batch, charging one query per image. A batch larger than the
  /// remaining budget is refused as a whole and leaves the counter unchanged.
  std::vector<Logits> query(std::span<const Image> xs) {
    if (xs.size() > remaining()) throw BudgetExhausted(xs.size(), remaining());
    std::vector<Logits> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(fn_(x));
    query_count_ += xs.size();
    return out;
  }

  Logits query_one(const Image& x) { return std::move(query(std::span<const Image>(&x, 1)).front()); }

  std::uint64_t query_count() const { return query_count_; }
  std::uint64_t max_queries() const { return max_queries_; }
  std::uint64_t remaining() const { return max_queries_ - query_count_; }

 private:
  LogitFn fn_;
  std::uint64_t max_queries_;
  std::uint64_t query_count_ = 0;
};

struct MarginEval {
  double margin = 0.0;
  bool adversarial = false;
};

/// Margin >= 0 counts as adversarial, so an exact tie with the true class is
/// a success for the attacker.
inline MarginEval evaluate_margin(std::span<const double> logits, std::size_t y) {
  const double m = margin_loss(logits, y);
  return {m, m >= 0.0};
}

template <class State>
concept QueryTracked = requires(const State& s) {
  { s.success } -> std::convertible_to<bool>;
  { s.queries_used } -> std::convertible_to<std::uint64_t>;
};

/// Indices of states that are neither successful nor out of budget.
template <QueryTracked State>
std::vector<std::size_t> filter_active(std::span<const State> states, std::uint64_t max_queries) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < states.size(); ++i)
    if (!states[i].success && states[i].queries_used < max_queries) idx.push_back(i);
  return idx;
}

}  // namespace ea
