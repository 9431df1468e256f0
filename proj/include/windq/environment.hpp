#pragma once

// The allocation MDP: one episode visits every unit once, in partition order, and assigns it
// an action. Observations, shaped per-step rewards, the episode-end reward with its penalty
// terms, the dual variable on the quality constraint and the target curriculum live here.

#include "windq/budget.hpp"
#include "windq/engine.hpp"
#include "windq/oracle.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace windq {

inline constexpr std::size_t kStateDim = 15;
using StateVector = std::array<double, kStateDim>;

inline StateVector build_state(const WeightStats& w, const ScaleStats& s, bool is_attention, bool is_mlp,
                               const BudgetState& budget, std::size_t unit_index, std::size_t unit_count) {
  StateVector x{};
  x[0] = w.mean;
  x[1] = w.std;
  x[2] = w.abs_mean;
  x[3] = w.sparsity;
  x[4] = w.outlier_frac;
  x[5] = unit_count ? static_cast<double>(unit_index) / static_cast<double>(unit_count) : 0.0;
  x[6] = budget.bits_used() / budget.fp32_reference_bits();
  const double target_bits = budget.target_centibits() / 100.0;
  const double remaining_bits = target_bits - budget.bits_used();
  x[7] = remaining_bits / target_bits;
  const double n_r = static_cast<double>(budget.n_remaining());
  x[8] = n_r > 0.0 ? std::max(0.0, 1.0 - remaining_bits / (budget.b_target * n_r)) : 0.0;
  x[9] = s.mean;
  x[10] = s.std;
  x[11] = s.max;
  x[12] = is_attention ? 1.0 : 0.0;
  x[13] = is_mlp ? 1.0 : 0.0;
  x[14] = budget.b_target / 8.0;
  return x;
}

struct RewardConfig {
  double alpha = 1.0;
  double gain_cap = 0.95;
  double epsilon = 0.3;
  double budget_coeff = 10.0;
  double ppl_soft = 3.0;
  double ppl_hard = 20.0;
  double ppl_slope_soft = 0.1;
  double ppl_slope_hard = 1.0;
  double skip_threshold = 0.10;
  double skip_coeff = 1.0;
  double bonus = 0.5;
  double bonus_rho = 2.0;
  double skip_step_penalty = 0.05;
  double saved_coeff = 0.1;
  double over_penalty = 0.02;

  void validate() const {
    for (double c : {alpha, gain_cap, epsilon, budget_coeff, ppl_soft, ppl_hard, ppl_slope_soft, ppl_slope_hard,
                     skip_threshold, skip_coeff, bonus, bonus_rho, skip_step_penalty, saved_coeff, over_penalty})
      if (!(c >= 0.0) || !std::isfinite(c)) throw ValidationError("reward coefficients must be finite and >= 0");
    if (!(ppl_soft < ppl_hard)) throw ValidationError("perplexity soft threshold must be below the hard one");
  }
};

inline void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = {{"alpha", c.alpha},
       {"gain_cap", c.gain_cap},
       {"epsilon", c.epsilon},
       {"budget_coeff", c.budget_coeff},
       {"ppl_soft", c.ppl_soft},
       {"ppl_hard", c.ppl_hard},
       {"ppl_slope_soft", c.ppl_slope_soft},
       {"ppl_slope_hard", c.ppl_slope_hard},
       {"skip_threshold", c.skip_threshold},
       {"skip_coeff", c.skip_coeff},
       {"bonus", c.bonus},
       {"bonus_rho", c.bonus_rho},
       {"skip_step_penalty", c.skip_step_penalty},
       {"saved_coeff", c.saved_coeff},
       {"over_penalty", c.over_penalty}};
}

inline void from_json(const nlohmann::json& j, RewardConfig& c) {
  const RewardConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.gain_cap = j.value("gain_cap", d.gain_cap);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.budget_coeff = j.value("budget_coeff", d.budget_coeff);
  c.ppl_soft = j.value("ppl_soft", d.ppl_soft);
  c.ppl_hard = j.value("ppl_hard", d.ppl_hard);
  c.ppl_slope_soft = j.value("ppl_slope_soft", d.ppl_slope_soft);
  c.ppl_slope_hard = j.value("ppl_slope_hard", d.ppl_slope_hard);
  c.skip_threshold = j.value("skip_threshold", d.skip_threshold);
  c.skip_coeff = j.value("skip_coeff", d.skip_coeff);
  c.bonus = j.value("bonus", d.bonus);
  c.bonus_rho = j.value("bonus_rho", d.bonus_rho);
  c.skip_step_penalty = j.value("skip_step_penalty", d.skip_step_penalty);
  c.saved_coeff = j.value("saved_coeff", d.saved_coeff);
  c.over_penalty = j.value("over_penalty", d.over_penalty);
}

/// Shaped reward for one allocation step.
inline double step_reward(Action a, double b_target, const RewardConfig& cfg) {
  if (a == Action::Skip) return -cfg.skip_step_penalty;
  const double bits = action_bits(a);
  if (bits <= b_target) return cfg.saved_coeff * (b_target - bits) / b_target;
  return -cfg.over_penalty;
}

inline double ppl_penalty(double rho, const RewardConfig& cfg) {
  if (rho <= cfg.ppl_soft) return 0.0;
  if (rho <= cfg.ppl_hard) return cfg.ppl_slope_soft * (rho - cfg.ppl_soft);
  return cfg.ppl_slope_soft * (cfg.ppl_hard - cfg.ppl_soft) + cfg.ppl_slope_hard * (rho - cfg.ppl_hard);
}

struct RewardTerms {
  double gain = 0.0;  // G_c before the alpha weight
  double quality = 0.0;
  double budget = 0.0;
  double ppl = 0.0;
  double skip = 0.0;
  double bonus = 0.0;
  double total = 0.0;
};

inline void to_json(nlohmann::json& j, const RewardTerms& t) {
  j = {{"gain", t.gain}, {"p_quality", t.quality}, {"p_budget", t.budget}, {"p_ppl", t.ppl},
       {"p_skip", t.skip}, {"bonus", t.bonus},     {"total", t.total}};
}

/// Episode-end reward. Throws RuntimeFailure on non-finite metrics.
inline RewardTerms episode_reward(const ProxyMetrics& m, double b_target, double lambda, const RewardConfig& cfg) {
  if (!m.finite() || !std::isfinite(m.skip_frac) || !std::isfinite(lambda))
    throw RuntimeFailure("non-finite episode metrics");
  RewardTerms t;
  t.gain = std::min(cfg.gain_cap, (32.0 - m.avg_bits) / 32.0);
  t.quality = lambda * std::max(0.0, m.rel_loss_increase - cfg.epsilon);
  const double over = std::max(0.0, m.avg_bits - b_target);
  t.budget = cfg.budget_coeff * over * over;
  t.ppl = ppl_penalty(m.rho, cfg);
  t.skip = cfg.skip_coeff * std::max(0.0, m.skip_frac - cfg.skip_threshold);
  t.bonus = m.rho < cfg.bonus_rho ? cfg.bonus : 0.0;
  t.total = cfg.alpha * t.gain - t.quality - t.budget - t.ppl - t.skip + t.bonus;
  return t;
}

/// Discounted episode return: sum of gamma^(T-1-t) r_t over the T shaped rewards plus R_final.
inline double episode_return(const std::vector<double>& step_rewards, double final_reward, double gamma) {
  double g = 0.0;
  const std::size_t T = step_rewards.size();
  for (std::size_t t = 0; t < T; ++t) g += std::pow(gamma, static_cast<double>(T - 1 - t)) * step_rewards[t];
  return g + final_reward;
}

struct DualState {
  double lambda = 0.5;
  double eta = 0.1;
};

inline DualState update_dual(DualState d, double rel_loss_increase, double epsilon) {
  d.lambda = std::max(0.0, d.lambda + d.eta * (rel_loss_increase - epsilon));
  return d;
}

struct Curriculum {
  std::vector<double> targets = {3.0, 2.5, 2.0, 2.0};
  std::size_t episodes = 100;

  void validate() const {
    if (targets.empty()) throw ValidationError("curriculum needs at least one target");
    if (episodes == 0) throw ValidationError("curriculum needs at least one episode");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (!(targets[i] > 0.0) || !std::isfinite(targets[i])) throw ValidationError("curriculum targets must be > 0");
      if (i && targets[i] > targets[i - 1]) throw ValidationError("curriculum targets must be non-increasing");
    }
  }
};

/// Target for an episode: equal consecutive stages, remainder to the last stage.
inline double curriculum_target(std::size_t episode, const Curriculum& c) {
  if (episode >= c.episodes) throw ValidationError("episode index outside the curriculum");
  const std::size_t block = c.episodes / c.targets.size();
  if (block == 0) return c.targets.back();  // fewer episodes than stages: all of them are remainder
  return c.targets[std::min(episode / block, c.targets.size() - 1)];
}

/// Produces quality metrics for a finished plan.
using QualityFn = std::function<ProxyMetrics(QuantEngine&, const std::vector<UnitDecision>&)>;

inline QualityFn proxy_quality(const QualityContext& ctx) {
  return [&ctx](QuantEngine& engine, const std::vector<UnitDecision>& plan) {
    return evaluate_quality(ctx, engine, plan);
  };
}

/// Smoke-test stand-in for the proxy: the activation-weighted reconstruction error plays the
/// role of the relative loss increase, with L0 = 1.
inline QualityFn surrogate_quality(const ActivationScales& scales) {
  return [&scales](QuantEngine& engine, const std::vector<UnitDecision>& plan) {
    ProxyMetrics m;
    const double e = recon_surrogate(engine, plan, scales);
    m.base_loss = 1.0;
    m.quant_loss = 1.0 + e;
    m.rel_loss_increase = e;
    m.base_ppl = std::exp(1.0);
    m.quant_ppl = std::exp(1.0 + e);
    m.rho = std::exp(e);
    std::size_t skipped = 0;
    for (const auto& d : plan) skipped += d.action == Action::Skip;
    m.skip_frac = static_cast<double>(skipped) / static_cast<double>(plan.size());
    m.avg_bits = avg_bits(plan);
    return m;
  };
}

struct EpisodeOutcome {
  std::vector<UnitDecision> plan;
  ProxyMetrics metrics;
  RewardTerms terms;
  double b_target = 0.0;
  double lambda = 0.0;
  std::size_t forced_steps = 0;  // steps where no action was feasible and the fallback mask fired
};

/// How the mask estimates the cost of the units after the current one.
enum class Lookahead {
  OneBit,    // one bit per remaining weight
  Cheapest,  // cheapest clamp-respecting realized cost of each remaining unit (never forces)
};

class Environment {
 public:
  Environment(QuantEngine& engine, QualityFn quality, LayerClamps clamps, RewardConfig reward,
              Lookahead lookahead = Lookahead::Cheapest)
      : engine_(engine), quality_(std::move(quality)), clamps_(clamps), reward_(reward), lookahead_(lookahead) {
    reward_.validate();
    const std::size_t N = engine_.size();
    min_centibits_.resize(N);
    for (std::size_t i = 0; i < N; ++i) min_centibits_[i] = clamps_.min_centibits(engine_.unit(i));
    n_total_ = engine_.total_weights();
  }

  std::size_t size() const { return engine_.size(); }
  std::size_t position() const { return t_; }
  bool done() const { return t_ >= engine_.size(); }
  /// True when the most recent mask had to force an action.
  bool last_mask_forced() const { return last_forced_; }
  const BudgetState& budget() const { return budget_; }
  const std::vector<UnitDecision>& decisions() const { return plan_; }
  QuantEngine& engine() { return engine_; }
  const RewardConfig& reward_config() const { return reward_; }

  /// Realized cost of unit i under action a (fallback included).
  std::int64_t realized_cost(std::size_t i, Action a) {
    if (a == Action::Skip) return effective_centibits(Action::Skip, engine_.unit(i).n(), 0);
    return engine_.decide(i, a).effective_centibits;
  }

  /// Fits every operator on every unit (the mask needs realized costs) and builds the
  /// cheapest-completion table. Called lazily by the first reset.
  void prepare() {
    if (!completion_.empty()) return;
    const std::size_t N = engine_.size();
    completion_.assign(N + 1, 0.0);
    for (std::size_t i = N; i-- > 0;) {
      std::int64_t best = realized_cost(i, Action::Skip);
      for (Action a : kActions)
        if (a != Action::Skip && action_centibits(a) >= min_centibits_[i]) best = std::min(best, realized_cost(i, a));
      completion_[i] = completion_[i + 1] + static_cast<double>(best);
    }
  }

  /// Starts an episode at the given target and returns the first observation.
  StateVector reset(double b_target) {
    if (!(b_target > 0.0)) throw ValidationError("target bits must be > 0");
    prepare();
    budget_ = BudgetState{};
    budget_.n_total = n_total_;
    budget_.b_target = b_target;
    t_ = 0;
    forced_ = 0;
    plan_.clear();
    step_rewards_.clear();
    return observe();
  }

  StateVector observe() const {
    if (done()) throw ValidationError("episode already finished");
    return build_state(engine_.stats(t_), engine_.scales(t_), engine_.unit(t_).is_attention,
                       engine_.unit(t_).is_mlp, budget_, t_, engine_.size());
  }

  /// Feasible actions for the current unit. The current unit is judged on its realized cost
  /// (protection and fallback included), the rest by the lookahead.
  ActionMask mask() {
    if (done()) throw ValidationError("episode already finished");
    ActionMask m{};
    bool any = false;
    const double limit = budget_.target_centibits();
    const double completion =
        lookahead_ == Lookahead::OneBit
            ? one_bit_completion(budget_.n_remaining() - engine_.unit(t_).n())
            : completion_[t_ + 1];
    for (Action a : kActions) {
      const bool clamped = a != Action::Skip && action_centibits(a) < min_centibits_[t_];
      const double total = static_cast<double>(budget_.used_centibits + realized_cost(t_, a)) + completion;
      m[action_index(a)] = !clamped && total <= limit;
      any = any || m[action_index(a)];
    }
    last_forced_ = !any;
    if (!any) {
      Action cheapest = Action::Skip;
      std::int64_t best = realized_cost(t_, Action::Skip);
      for (Action a : kActions)
        if (a != Action::Skip && action_centibits(a) >= min_centibits_[t_] && realized_cost(t_, a) < best) {
          best = realized_cost(t_, a);
          cheapest = a;
        }
      m[action_index(cheapest)] = true;
    }
    mask_valid_ = true;
    current_mask_ = m;
    return m;
  }

  /// Applies an action to the current unit and returns the shaped step reward.
  double step(Action a) {
    if (done()) throw ValidationError("step after the final unit");
    if (!mask_valid_) mask();
    if (!current_mask_[action_index(a)])
      throw ValidationError("masked action " + std::string(action_label(a)) + " chosen for unit " +
                            engine_.unit(t_).id());
    if (last_forced_) ++forced_;
    UnitDecision d = engine_.decide(t_, a);
    budget_.used_centibits += d.effective_centibits;
    budget_.n_done += d.n;
    plan_.push_back(std::move(d));
    const double r = step_reward(a, budget_.b_target, reward_);
    step_rewards_.push_back(r);
    ++t_;
    mask_valid_ = false;
    return r;
  }

  const std::vector<double>& step_rewards() const { return step_rewards_; }

  /// Scores the completed plan.
  EpisodeOutcome finish(double lambda) {
    if (!done()) throw ValidationError("episode not finished");
    EpisodeOutcome out;
    out.plan = plan_;
    out.metrics = quality_(engine_, plan_);
    out.terms = episode_reward(out.metrics, budget_.b_target, lambda, reward_);
    out.b_target = budget_.b_target;
    out.lambda = lambda;
    out.forced_steps = forced_;
    return out;
  }

 private:
  QuantEngine& engine_;
  QualityFn quality_;
  LayerClamps clamps_;
  RewardConfig reward_;
  Lookahead lookahead_;
  std::vector<std::int64_t> min_centibits_;
  std::vector<double> completion_;
  std::size_t n_total_ = 0;

  BudgetState budget_;
  std::size_t t_ = 0;
  std::size_t forced_ = 0;
  bool last_forced_ = false;
  bool mask_valid_ = false;
  ActionMask current_mask_{};
  std::vector<UnitDecision> plan_;
  std::vector<double> step_rewards_;
};

inline nlohmann::json metrics_json(const ProxyMetrics& m) {
  return {{"base_loss", m.base_loss}, {"quant_loss", m.quant_loss}, {"rel_loss_increase", m.rel_loss_increase},
          {"base_ppl", m.base_ppl},   {"quant_ppl", m.quant_ppl},   {"rho", m.rho},
          {"skip_frac", m.skip_frac}, {"avg_bits", m.avg_bits}};
}

/// JSON-lines episode log: one record per step, then one terminal record.
class EpisodeLogger {
 public:
  explicit EpisodeLogger(std::ostream* out) : out_(out) {}

  void step(std::size_t episode, std::size_t t, const std::string& unit, const StateVector& s,
            const ActionMask& mask, Action a, double reward) {
    if (!out_) return;
    nlohmann::json j;
    j["episode"] = episode;
    j["t"] = t;
    j["unit"] = unit;
    j["state"] = s;
    std::vector<int> m(mask.begin(), mask.end());
    j["mask"] = m;
    j["action"] = std::string(action_label(a));
    j["reward"] = reward;
    *out_ << j.dump() << "\n";
  }

  void terminal(std::size_t episode, const EpisodeOutcome& o, double episode_return_value) {
    if (!out_) return;
    nlohmann::json j;
    j["episode"] = episode;
    j["terminal"] = true;
    j["b_target"] = o.b_target;
    j["lambda"] = o.lambda;
    j["metrics"] = metrics_json(o.metrics);
    j["terms"] = o.terms;
    j["forced_steps"] = o.forced_steps;
    j["return"] = episode_return_value;
    *out_ << j.dump() << "\n";
    out_->flush();
  }

 private:
  std::ostream* out_;
};

}  // namespace windq
