#pragma once

// Shared quantization infrastructure for the RL environment, the heuristic allocator and the
// apply/eval commands: partitioned units, their statistics, protection sets and a memo of
// per-(unit, operator) fits. Fits are deterministic, so the memo never changes results.

#include "windq/budget.hpp"
#include "windq/calibration.hpp"
#include "windq/quantizers.hpp"
#include "windq/tensor_store.hpp"

#include <array>
#include <memory>
#include <optional>
#include <vector>

namespace windq {

struct ScaleStats {
  double mean = 0.0;
  double std = 0.0;
  double max = 0.0;
};

inline ScaleStats scale_stats(const WeightUnit& unit, const ActivationScales& scales) {
  const auto& s = unit_scales(unit, scales);
  ScaleStats out;
  const double w = static_cast<double>(unit.width());
  for (std::size_t j = unit.col_start; j < unit.col_end; ++j) {
    out.mean += s[j];
    out.max = std::max(out.max, s[j]);
  }
  out.mean /= w;
  for (std::size_t j = unit.col_start; j < unit.col_end; ++j) out.std += (s[j] - out.mean) * (s[j] - out.mean);
  out.std = std::sqrt(out.std / w);
  return out;
}

struct EngineConfig {
  std::size_t chunk_size = 256;
  double salient_rate = 0.03;
  FitOptions fit;
  bool memoize = true;
};

class QuantEngine {
 public:
  QuantEngine(std::vector<WeightUnit> units, const ActivationScales& scales, const EngineConfig& cfg)
      : units_(std::move(units)), cfg_(cfg) {
    stats_.reserve(units_.size());
    for (const auto& u : units_) {
      const Matrix sal = saliency(u, scales);
      stats_.push_back(unit_stats(u));
      scale_stats_.push_back(scale_stats(u, scales));
      saliency_score_.push_back(sal.mean());
      protection_.push_back(select_protected(u, sal, cfg_.salient_rate));
    }
    cache_.resize(units_.size());
  }

  static QuantEngine from_store(const ModelStore& store, const ActivationScales& scales, const EngineConfig& cfg) {
    auto units = partition_units(store, cfg.chunk_size, is_quantizable_name);
    if (units.empty()) throw ValidationError("store has no quantizable tensors");
    validate_scales(scales, store, is_quantizable_name);
    return QuantEngine(std::move(units), scales, cfg);
  }

  std::size_t size() const { return units_.size(); }
  const std::vector<WeightUnit>& units() const { return units_; }
  const WeightUnit& unit(std::size_t i) const { return units_[i]; }
  const WeightStats& stats(std::size_t i) const { return stats_[i]; }
  const ScaleStats& scales(std::size_t i) const { return scale_stats_[i]; }
  const ProtectionSet& protection(std::size_t i) const { return protection_[i]; }
  /// Mean of |W| * s over the unit.
  double saliency_score(std::size_t i) const { return saliency_score_[i]; }
  const EngineConfig& config() const { return cfg_; }

  std::size_t total_weights() const {
    std::size_t n = 0;
    for (const auto& u : units_) n += u.n();
    return n;
  }

  /// Quantized form of unit i under a non-skip action.
  const QuantResult& fit(std::size_t i, Action a) {
    const auto kind = quantizer_for(a);
    if (!kind) throw ValidationError("skip has no quantizer");
    auto& slot = cache_[i][static_cast<std::size_t>(*kind)];
    if (slot) return *slot;
    auto result = std::make_shared<QuantResult>(fit_unit(units_[i], *kind, protection_[i], cfg_.fit));
    if (!cfg_.memoize) {
      scratch_ = std::move(result);
      return *scratch_;
    }
    slot = std::move(result);
    return *slot;
  }

  /// Builds the decision record for unit i; consults the quantizer for realized bits.
  UnitDecision decide(std::size_t i, Action a) {
    const WeightUnit& u = units_[i];
    UnitDecision d;
    d.tensor_name = u.tensor_name;
    d.chunk_index = u.chunk_index;
    d.col_start = u.col_start;
    d.col_end = u.col_end;
    d.action = a;
    d.n = u.n();
    if (a == Action::Skip) {
      d.realized = Action::Skip;
      d.n_protected = 0;
      d.rel_error = 0.0;
    } else {
      const QuantResult& r = fit(i, a);
      d.realized = action_for(r.realized_kind);
      d.n_protected = r.n_protected;
      d.rel_error = r.rel_error;
    }
    d.effective_centibits = effective_centibits(d.realized, d.n, d.n_protected);
    return d;
  }

  /// Reconstructed weights of unit i under a decision; nullptr for skip.
  const Matrix* reconstruction(std::size_t i, const UnitDecision& d) {
    if (d.action == Action::Skip) return nullptr;
    return &fit(i, d.action).reconstructed;
  }

  /// Index of the unit a decision refers to. Throws on a mismatch.
  std::size_t locate(const UnitDecision& d) const {
    for (std::size_t i = 0; i < units_.size(); ++i)
      if (units_[i].tensor_name == d.tensor_name && units_[i].chunk_index == d.chunk_index) {
        if (units_[i].col_start != d.col_start || units_[i].col_end != d.col_end || units_[i].n() != d.n)
          throw ValidationError("plan unit " + d.unit_id() + " does not match the store's partition");
        return i;
      }
    throw ValidationError("plan unit " + d.unit_id() + " not present in the store");
  }

 private:
  std::vector<WeightUnit> units_;
  EngineConfig cfg_;
  std::vector<WeightStats> stats_;
  std::vector<ScaleStats> scale_stats_;
  std::vector<double> saliency_score_;
  std::vector<ProtectionSet> protection_;
  std::vector<std::array<std::shared_ptr<QuantResult>, 6>> cache_;
  std::shared_ptr<QuantResult> scratch_;
};

}  // namespace windq
