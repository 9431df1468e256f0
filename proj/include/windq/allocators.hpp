#pragma once

// Deterministic saliency-ranked allocator used as the baseline for the learned policy.

#include "windq/budget.hpp"
#include "windq/engine.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace windq {

struct HeuristicConfig {
  double target_bits = 2.0;
  std::vector<Action> demotion = {Action::Bits2, Action::Bits158, Action::Bits1};
  std::vector<Action> promotion = {Action::Bits2, Action::Bits3, Action::Bits4};

  void validate() const {
    if (!(target_bits > 0.0)) throw ValidationError("heuristic target must be > 0");
    const auto check = [](const std::vector<Action>& ladder, bool descending) {
      if (ladder.empty() || ladder.front() != Action::Bits2) throw ValidationError("ladders start at 2 bits");
      for (std::size_t i = 1; i < ladder.size(); ++i) {
        const bool ok = descending ? action_centibits(ladder[i]) < action_centibits(ladder[i - 1])
                                   : action_centibits(ladder[i]) > action_centibits(ladder[i - 1]);
        if (!ok || ladder[i] == Action::Skip) throw ValidationError("heuristic ladders must be strictly ordered");
      }
    };
    check(demotion, true);
    check(promotion, false);
  }
};

/// Realized cost of unit i under an action, in centibits.
using CostFn = std::function<std::int64_t(std::size_t, Action)>;

/// Greedy allocation over abstract units.
///
/// Every unit starts at 2 bits. While the average exceeds the target, units are demoted in
/// ascending score order one rung at a time, finishing each rung over all units before the
/// next. Then, while slack remains, the highest-scored unit whose next promotion keeps the
/// average within target is promoted one rung. Ties go to the lower unit index.
inline std::vector<Action> heuristic_actions(const std::vector<double>& scores, const std::vector<std::size_t>& sizes,
                                             const CostFn& cost, const HeuristicConfig& cfg) {
  cfg.validate();
  const std::size_t N = scores.size();
  if (N == 0 || sizes.size() != N) throw ValidationError("heuristic needs one score and size per unit");
  const double n_total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  const double limit = cfg.target_bits * 100.0 * n_total;

  std::vector<Action> act(N, Action::Bits2);
  std::int64_t used = 0;
  for (std::size_t i = 0; i < N; ++i) used += cost(i, act[i]);

  std::vector<std::size_t> ascending(N);
  std::iota(ascending.begin(), ascending.end(), 0);
  std::stable_sort(ascending.begin(), ascending.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<std::size_t> descending(N);
  std::iota(descending.begin(), descending.end(), 0);
  std::stable_sort(descending.begin(), descending.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  for (std::size_t rung = 0; rung + 1 < cfg.demotion.size(); ++rung) {
    for (std::size_t i : ascending) {
      if (static_cast<double>(used) <= limit) break;
      if (act[i] != cfg.demotion[rung]) continue;
      used += cost(i, cfg.demotion[rung + 1]) - cost(i, act[i]);
      act[i] = cfg.demotion[rung + 1];
    }
  }
  if (static_cast<double>(used) > limit)
    throw ValidationError("heuristic target " + std::to_string(cfg.target_bits) +
                          " is below the lowest reachable average");

  const auto next_rung = [&](Action a) -> std::optional<Action> {
    for (std::size_t k = 0; k + 1 < cfg.promotion.size(); ++k)
      if (cfg.promotion[k] == a) return cfg.promotion[k + 1];
    return std::nullopt;
  };
  for (;;) {
    bool promoted = false;
    for (std::size_t i : descending) {
      const auto up = next_rung(act[i]);
      if (!up) continue;
      const std::int64_t delta = cost(i, *up) - cost(i, act[i]);
      if (static_cast<double>(used + delta) > limit) continue;
      used += delta;
      act[i] = *up;
      promoted = true;
      break;
    }
    if (!promoted) break;
  }
  return act;
}

/// Heuristic plan over the engine's units, scored by mean |W| * activation scale.
inline std::vector<UnitDecision> heuristic_allocate(QuantEngine& engine, const HeuristicConfig& cfg) {
  std::vector<double> scores(engine.size());
  std::vector<std::size_t> sizes(engine.size());
  for (std::size_t i = 0; i < engine.size(); ++i) {
    scores[i] = engine.saliency_score(i);
    sizes[i] = engine.unit(i).n();
  }
  const auto cost = [&engine](std::size_t i, Action a) { return engine.decide(i, a).effective_centibits; };
  const auto actions = heuristic_actions(scores, sizes, cost, cfg);
  std::vector<UnitDecision> plan;
  plan.reserve(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) plan.push_back(engine.decide(i, actions[i]));
  return plan;
}

}  // namespace windq
