#pragma once

// Quality oracle: perplexity of the proxy with a plan's reconstructed weights swapped in, and
// a fast reconstruction-error surrogate.

#include "windq/budget.hpp"
#include "windq/calibration.hpp"
#include "windq/engine.hpp"
#include "windq/proxy_model.hpp"

#include <cmath>
#include <vector>

namespace windq {

struct ProxyMetrics {
  double base_loss = 0.0;       // L0, nats per token
  double quant_loss = 0.0;      // L_Q
  double rel_loss_increase = 0.0;  // (L_Q - L0) / L0
  double base_ppl = 0.0;
  double quant_ppl = 0.0;
  double rho = 1.0;             // PPL_Q / PPL_0
  double skip_frac = 0.0;       // fraction of units skipped
  double avg_bits = 0.0;

  bool finite() const {
    return std::isfinite(base_loss) && std::isfinite(quant_loss) && std::isfinite(rho) &&
           std::isfinite(rel_loss_increase) && std::isfinite(avg_bits);
  }
};

/// Evaluation data for the quality oracle.
struct QualityContext {
  const FloatProxy* model = nullptr;
  const Corpus* corpus = nullptr;
  std::vector<std::size_t> windows;
  double base_loss = 0.0;

  static QualityContext make(const FloatProxy& model, const Corpus& corpus, std::vector<std::size_t> windows) {
    QualityContext q;
    q.model = &model;
    q.corpus = &corpus;
    q.windows = std::move(windows);
    q.base_loss = mean_loss(model, corpus, q.windows);
    return q;
  }
};

/// Checks that `plan` covers every unit exactly once and returns unit indices aligned with it.
inline std::vector<std::size_t> match_plan(const QuantEngine& engine, const std::vector<UnitDecision>& plan) {
  if (plan.size() != engine.size())
    throw ValidationError("plan has " + std::to_string(plan.size()) + " units, store partition has " +
                          std::to_string(engine.size()));
  std::vector<std::size_t> index(plan.size());
  std::vector<bool> seen(engine.size(), false);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    index[k] = engine.locate(plan[k]);
    if (seen[index[k]]) throw ValidationError("plan lists unit " + plan[k].unit_id() + " twice");
    seen[index[k]] = true;
  }
  return index;
}

/// Copy of `model` with every non-skip unit replaced by its reconstruction.
inline FloatProxy quantized_copy(const FloatProxy& model, QuantEngine& engine, const std::vector<UnitDecision>& plan) {
  const auto index = match_plan(engine, plan);
  FloatProxy q = model;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const Matrix* rec = engine.reconstruction(index[k], plan[k]);
    if (!rec) continue;
    auto* target = q.param(plan[k].tensor_name);
    if (!target) throw ValidationError("proxy has no tensor " + plan[k].tensor_name);
    const auto c0 = static_cast<Eigen::Index>(plan[k].col_start);
    target->middleCols(c0, rec->cols()) = rec->cast<float>();
  }
  return q;
}

/// Applies a plan to a store, producing dequantized weights. Skipped units keep their bytes.
inline ModelStore apply_plan(const ModelStore& store, QuantEngine& engine, const std::vector<UnitDecision>& plan) {
  const auto index = match_plan(engine, plan);
  ModelStore out = store;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const Matrix* rec = engine.reconstruction(index[k], plan[k]);
    if (!rec) continue;
    Tensor* t = out.find(plan[k].tensor_name);
    if (!t) throw ValidationError("store has no tensor " + plan[k].tensor_name);
    for (std::size_t r = 0; r < t->rows; ++r)
      for (std::size_t c = plan[k].col_start; c < plan[k].col_end; ++c)
        t->data[r * t->cols + c] = static_cast<float>(
            (*rec)(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - plan[k].col_start)));
  }
  return out;
}

inline ProxyMetrics evaluate_quality(const QualityContext& ctx, QuantEngine& engine,
                                     const std::vector<UnitDecision>& plan) {
  const FloatProxy q = quantized_copy(*ctx.model, engine, plan);
  ProxyMetrics m;
  m.base_loss = ctx.base_loss;
  m.quant_loss = mean_loss(q, *ctx.corpus, ctx.windows);
  m.rel_loss_increase = (m.quant_loss - m.base_loss) / m.base_loss;
  m.base_ppl = std::exp(m.base_loss);
  m.quant_ppl = std::exp(m.quant_loss);
  m.rho = std::exp(m.quant_loss - m.base_loss);
  std::size_t skipped = 0;
  for (const auto& d : plan)
    if (d.action == Action::Skip) ++skipped;
  m.skip_frac = static_cast<double>(skipped) / static_cast<double>(plan.size());
  m.avg_bits = avg_bits(plan);
  return m;
}

/// Sum over units of s_j^2-weighted squared reconstruction error, divided by the same
/// weighting of the squared weights (s_j is the input channel's activation scale).
inline double recon_surrogate(QuantEngine& engine, const std::vector<UnitDecision>& plan,
                              const ActivationScales& scales) {
  const auto index = match_plan(engine, plan);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const WeightUnit& u = engine.unit(index[k]);
    const auto& s = unit_scales(u, scales);
    const Matrix* rec = engine.reconstruction(index[k], plan[k]);
    for (Eigen::Index j = 0; j < u.weights.cols(); ++j) {
      const double wgt = s[u.col_start + static_cast<std::size_t>(j)] * s[u.col_start + static_cast<std::size_t>(j)];
      for (Eigen::Index i = 0; i < u.weights.rows(); ++i) {
        const double w = u.weights(i, j);
        const double e = rec ? (*rec)(i, j) - w : 0.0;
        num += wgt * e * e;
        den += wgt * w * w;
      }
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace windq
