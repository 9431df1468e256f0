#pragma once

// Effective-bit accounting and budget-aware action masking.
//
// Bit counts are kept in hundredths of a bit (centibits) as exact integers so that 1.58-bit
// totals never accumulate rounding error.

#include "windq/common.hpp"
#include "windq/quantizers.hpp"
#include "windq/tensor_store.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace windq {

/// Action space, ordered from highest to lowest precision. Skip keeps the unit at 16 bits.
enum class Action : std::uint8_t { Skip = 0, Bits8, Bits4, Bits3, Bits2, Bits158, Bits1 };

inline constexpr std::size_t kNumActions = 7;

inline constexpr std::array<Action, kNumActions> kActions = {Action::Skip, Action::Bits8,   Action::Bits4,
                                                             Action::Bits3, Action::Bits2, Action::Bits158,
                                                             Action::Bits1};

using ActionMask = std::array<bool, kNumActions>;

inline constexpr std::size_t action_index(Action a) { return static_cast<std::size_t>(a); }

inline constexpr std::int64_t action_centibits(Action a) {
  constexpr std::array<std::int64_t, kNumActions> table = {1600, 800, 400, 300, 200, 158, 100};
  return table[action_index(a)];
}

inline constexpr double action_bits(Action a) { return static_cast<double>(action_centibits(a)) / 100.0; }

inline constexpr std::string_view action_label(Action a) {
  constexpr std::array<std::string_view, kNumActions> labels = {"skip", "8", "4", "3", "2", "1.58", "1"};
  return labels[action_index(a)];
}

inline Action parse_action(std::string_view label) {
  for (Action a : kActions)
    if (action_label(a) == label) return a;
  if (label == "16") return Action::Skip;
  throw ValidationError("unknown action label: " + std::string(label));
}

inline constexpr std::optional<QuantizerKind> quantizer_for(Action a) {
  switch (a) {
    case Action::Skip: return std::nullopt;
    case Action::Bits8: return QuantizerKind::Lsq8;
    case Action::Bits4: return QuantizerKind::Lsq4;
    case Action::Bits3: return QuantizerKind::Lsq3;
    case Action::Bits2: return QuantizerKind::Two2;
    case Action::Bits158: return QuantizerKind::Ternary158;
    case Action::Bits1: return QuantizerKind::Binary1;
  }
  return std::nullopt;
}

inline constexpr Action action_for(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::Binary1: return Action::Bits1;
    case QuantizerKind::Ternary158: return Action::Bits158;
    case QuantizerKind::Two2: return Action::Bits2;
    case QuantizerKind::Lsq3: return Action::Bits3;
    case QuantizerKind::Lsq4: return Action::Bits4;
    case QuantizerKind::Lsq8: return Action::Bits8;
  }
  return Action::Skip;
}

/// Effective cost of a unit in centibits: 1600 n for skip, else bits (n - n_p) + 800 n_p.
inline std::int64_t effective_centibits(Action a, std::size_t n, std::size_t n_protected) {
  if (n_protected > n) throw ValidationError("protected count exceeds unit size");
  const auto nn = static_cast<std::int64_t>(n);
  const auto np = static_cast<std::int64_t>(n_protected);
  if (a == Action::Skip) return action_centibits(Action::Skip) * nn;
  return action_centibits(a) * (nn - np) + 800 * np;
}

inline double effective_bits(Action a, std::size_t n, std::size_t n_protected) {
  return static_cast<double>(effective_centibits(a, n, n_protected)) / 100.0;
}

/// One allocation decision in a plan.
struct UnitDecision {
  std::string tensor_name;
  std::size_t chunk_index = 0;
  std::size_t col_start = 0;
  std::size_t col_end = 0;
  Action action = Action::Bits2;    // chosen
  Action realized = Action::Bits2;  // after fallback
  std::size_t n = 0;
  std::size_t n_protected = 0;   // 0 for skip
  std::int64_t effective_centibits = 0;
  double rel_error = 0.0;

  std::size_t n_quantized() const { return n - n_protected; }
  double effective_bits() const { return static_cast<double>(effective_centibits) / 100.0; }
  std::string unit_id() const { return tensor_name + "#" + std::to_string(chunk_index); }
};

inline double avg_bits(const std::vector<UnitDecision>& plan) {
  if (plan.empty()) throw ValidationError("avg_bits of an empty plan");
  std::int64_t bits = 0;
  std::int64_t weights = 0;
  for (const auto& d : plan) {
    bits += d.effective_centibits;
    weights += static_cast<std::int64_t>(d.n);
  }
  return static_cast<double>(bits) / (100.0 * static_cast<double>(weights));
}

/// Per-category minimum precisions applied to the policy's choices.
struct LayerClamps {
  int early_layers = 2;
  double early_min = 2.0;
  double attn_min = 1.58;
  double mlp_min = 1.58;
  double other_min = 1.0;

  std::int64_t min_centibits(const WeightUnit& u) const {
    const auto c = [](double b) { return static_cast<std::int64_t>(std::llround(b * 100.0)); };
    std::int64_t m = c(other_min);
    if (u.layer_index < early_layers) m = std::max(m, c(early_min));
    if (u.is_attention) m = std::max(m, c(attn_min));
    if (u.is_mlp) m = std::max(m, c(mlp_min));
    return m;
  }
};

/// Lowest-precision action allowed by a clamp.
inline Action cheapest_allowed(std::int64_t min_centibits) {
  for (auto it = kActions.rbegin(); it != kActions.rend(); ++it)
    if (*it != Action::Skip && action_centibits(*it) >= min_centibits) return *it;
  return Action::Skip;
}

struct BudgetState {
  std::int64_t used_centibits = 0;
  std::size_t n_total = 0;
  std::size_t n_done = 0;
  double b_target = 2.0;

  double target_centibits() const { return b_target * 100.0 * static_cast<double>(n_total); }
  double fp32_reference_bits() const { return 32.0 * static_cast<double>(n_total); }
  double bits_used() const { return static_cast<double>(used_centibits) / 100.0; }
  std::size_t n_remaining() const { return n_total - n_done; }
};

/// Mask over kActions for the current unit.
///
/// `completion_centibits` is the cheapest cost of every unit after this one. An action is
/// feasible when used + cost(action) + completion stays within the target total and the
/// action respects the unit's clamp (skip is exempt). When nothing is feasible the cheapest
/// clamp-respecting action is unmasked.
inline ActionMask feasible_actions(const BudgetState& state, std::size_t unit_n, std::size_t unit_protected,
                                   std::int64_t min_centibits, double completion_centibits) {
  ActionMask mask{};
  bool any = false;
  const double limit = state.target_centibits();
  for (Action a : kActions) {
    const bool clamped = a != Action::Skip && action_centibits(a) < min_centibits;
    const std::size_t np = a == Action::Skip ? 0 : unit_protected;
    const double total = static_cast<double>(state.used_centibits) +
                         static_cast<double>(effective_centibits(a, unit_n, np)) + completion_centibits;
    mask[action_index(a)] = !clamped && total <= limit;
    any = any || mask[action_index(a)];
  }
  if (!any) mask[action_index(cheapest_allowed(min_centibits))] = true;
  return mask;
}

/// Cheapest-completion lookahead of the basic form: one bit per remaining weight.
inline double one_bit_completion(std::size_t n_remaining_after_unit) {
  return 100.0 * static_cast<double>(n_remaining_after_unit);
}

}  // namespace windq
