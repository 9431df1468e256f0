#pragma once

// Run configuration and the end-to-end pipelines behind the command-line tool: calibration,
// the reinforcement-learning loop with checkpoint/resume, the heuristic baseline, and sweeps.

#include "windq/allocators.hpp"
#include "windq/calibration.hpp"
#include "windq/engine.hpp"
#include "windq/environment.hpp"
#include "windq/oracle.hpp"
#include "windq/plan.hpp"
#include "windq/policy.hpp"
#include "windq/proxy_model.hpp"
#include "windq/tensor_store.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace windq {

namespace fs = std::filesystem;

enum class QualityMode { Proxy, Surrogate };

struct RunConfig {
  std::string model;    // model-store directory (a trained proxy for the proxy quality mode)
  std::string corpus;   // defaults to the corpus recorded with the proxy
  std::string scales;   // activation scales; computed into out_dir when empty or missing
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  std::size_t chunk_size = 256;
  double salient_rate = 0.03;
  Curriculum curriculum;
  RewardConfig reward;
  PPOConfig ppo;
  FitOptions fit;
  LayerClamps clamps;
  DualState dual;
  int policy_hidden = 128;
  QualityMode quality = QualityMode::Proxy;
  Lookahead lookahead = Lookahead::Cheapest;
  std::size_t eval_targets = 8192;
  std::size_t calib_windows = 64;
  double heuristic_target = 2.0;

  void validate() const {
    if (model.empty()) throw ValidationError("config: model path is required");
    if (chunk_size < 1) throw ValidationError("config: chunk_size must be >= 1");
    if (!(salient_rate >= 0.0 && salient_rate <= 1.0)) throw ValidationError("config: salient_rate must be in [0, 1]");
    curriculum.validate();
    reward.validate();
    ppo.validate();
    if (!(dual.lambda >= 0.0) || !(dual.eta >= 0.0)) throw ValidationError("config: dual lambda and eta must be >= 0");
    if (policy_hidden < 1) throw ValidationError("config: policy_hidden must be >= 1");
    if (fit.steps < 0 || !(fit.lr > 0.0)) throw ValidationError("config: fit steps >= 0 and lr > 0 required");
    if (!(fit.fallback_threshold > 0.0)) throw ValidationError("config: fallback threshold must be > 0");
    if (eval_targets < 1 || calib_windows < 1) throw ValidationError("config: eval_targets and calib_windows >= 1");
    if (!(heuristic_target > 0.0)) throw ValidationError("config: heuristic_target must be > 0");
  }
};

inline nlohmann::json config_json(const RunConfig& c, bool include_paths = true) {
  nlohmann::json j;
  if (include_paths) {
    j["model"] = c.model;
    j["corpus"] = c.corpus;
    j["scales"] = c.scales;
    j["out_dir"] = c.out_dir;
  }
  j["seed"] = c.seed;
  j["chunk_size"] = c.chunk_size;
  j["salient_rate"] = c.salient_rate;
  j["curriculum"] = c.curriculum.targets;
  j["episodes"] = c.curriculum.episodes;
  j["reward"] = c.reward;
  j["ppo"] = c.ppo;
  j["fit"] = {{"steps", c.fit.steps},
              {"lr", c.fit.lr},
              {"beta1", c.fit.beta1},
              {"beta2", c.fit.beta2},
              {"fallback_threshold", c.fit.fallback_threshold}};
  j["clamps"] = {{"early_layers", c.clamps.early_layers},
                 {"early_min", c.clamps.early_min},
                 {"attn_min", c.clamps.attn_min},
                 {"mlp_min", c.clamps.mlp_min},
                 {"other_min", c.clamps.other_min}};
  j["dual"] = {{"lambda0", c.dual.lambda}, {"eta", c.dual.eta}};
  j["policy_hidden"] = c.policy_hidden;
  j["quality"] = c.quality == QualityMode::Proxy ? "proxy" : "surrogate";
  j["mask_lookahead"] = c.lookahead == Lookahead::OneBit ? "one_bit" : "cheapest";
  j["eval_targets"] = c.eval_targets;
  j["calib_windows"] = c.calib_windows;
  j["heuristic_target"] = c.heuristic_target;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.model = j.value("model", c.model);
    c.corpus = j.value("corpus", c.corpus);
    c.scales = j.value("scales", c.scales);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
    c.chunk_size = j.value("chunk_size", c.chunk_size);
    c.salient_rate = j.value("salient_rate", c.salient_rate);
    c.curriculum.targets = j.value("curriculum", c.curriculum.targets);
    c.curriculum.episodes = j.value("episodes", c.curriculum.episodes);
    if (j.contains("reward")) c.reward = j.at("reward").get<RewardConfig>();
    if (j.contains("ppo")) c.ppo = j.at("ppo").get<PPOConfig>();
    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      c.fit.steps = f.value("steps", c.fit.steps);
      c.fit.lr = f.value("lr", c.fit.lr);
      c.fit.beta1 = f.value("beta1", c.fit.beta1);
      c.fit.beta2 = f.value("beta2", c.fit.beta2);
      c.fit.fallback_threshold = f.value("fallback_threshold", c.fit.fallback_threshold);
    }
    if (j.contains("clamps")) {
      const auto& k = j.at("clamps");
      c.clamps.early_layers = k.value("early_layers", c.clamps.early_layers);
      c.clamps.early_min = k.value("early_min", c.clamps.early_min);
      c.clamps.attn_min = k.value("attn_min", c.clamps.attn_min);
      c.clamps.mlp_min = k.value("mlp_min", c.clamps.mlp_min);
      c.clamps.other_min = k.value("other_min", c.clamps.other_min);
    }
    if (j.contains("dual")) {
      c.dual.lambda = j.at("dual").value("lambda0", c.dual.lambda);
      c.dual.eta = j.at("dual").value("eta", c.dual.eta);
    }
    c.policy_hidden = j.value("policy_hidden", c.policy_hidden);
    const std::string q = j.value("quality", std::string("proxy"));
    if (q == "proxy") c.quality = QualityMode::Proxy;
    else if (q == "surrogate") c.quality = QualityMode::Surrogate;
    else throw ValidationError("config: quality must be 'proxy' or 'surrogate'");
    const std::string la = j.value("mask_lookahead", std::string("cheapest"));
    if (la == "one_bit") c.lookahead = Lookahead::OneBit;
    else if (la == "cheapest") c.lookahead = Lookahead::Cheapest;
    else throw ValidationError("config: mask_lookahead must be 'one_bit' or 'cheapest'");
    c.eval_targets = j.value("eval_targets", c.eval_targets);
    c.calib_windows = j.value("calib_windows", c.calib_windows);
    c.heuristic_target = j.value("heuristic_target", c.heuristic_target);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Applies `key=value` overrides; dotted keys address nested objects and values are parsed as
/// JSON when possible, otherwise taken as strings.
inline void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override must look like key=value: " + o);
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json* node = &j;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

// ---------------------------------------------------------------------------------------------

/// Evenly spaced calibration windows across the training split.
inline std::vector<std::size_t> calibration_windows(const Corpus& corpus, int context, std::size_t count) {
  const auto ctx = static_cast<std::size_t>(context);
  if (corpus.train_size() <= ctx + 1) throw ValidationError("corpus too short for calibration");
  const std::size_t span = corpus.train_size() - ctx - 1;
  std::vector<std::size_t> starts(count);
  for (std::size_t i = 0; i < count; ++i) starts[i] = count > 1 ? i * span / (count - 1) : 0;
  return starts;
}

/// Everything a pipeline needs, loaded once.
struct Workspace {
  RunConfig cfg;
  ModelStore store;
  std::uint64_t hash = 0;
  std::optional<ProxyMeta> meta;
  std::unique_ptr<FloatProxy> proxy;
  std::unique_ptr<Corpus> corpus;
  ActivationScales scales;
  std::unique_ptr<QuantEngine> engine;
  std::unique_ptr<QualityContext> quality_ctx;

  QualityFn quality() const {
    if (cfg.quality == QualityMode::Proxy) return proxy_quality(*quality_ctx);
    return surrogate_quality(scales);
  }
};

inline fs::path resolve_corpus(const RunConfig& cfg, const std::optional<ProxyMeta>& meta) {
  if (!cfg.corpus.empty()) return cfg.corpus;
  if (meta && !meta->corpus.empty()) return meta->corpus;
  throw ValidationError("no corpus configured and the model records none");
}

/// Loads the store, proxy and corpus, and obtains activation scales (loaded or computed).
inline std::unique_ptr<Workspace> open_workspace(const RunConfig& cfg, bool need_engine = true) {
  cfg.validate();
  auto ws = std::make_unique<Workspace>();
  ws->cfg = cfg;
  ws->store = load_model(cfg.model);
  ws->hash = model_hash(ws->store);
  if (fs::exists(fs::path(cfg.model) / kProxyMetaName)) ws->meta = load_proxy_meta(cfg.model);

  const bool scales_on_disk = !cfg.scales.empty() && fs::exists(cfg.scales);
  const bool need_proxy = cfg.quality == QualityMode::Proxy || !scales_on_disk;
  if (need_proxy) {
    if (!ws->meta) throw ValidationError("model store has no proxy metadata: " + cfg.model);
    ws->proxy = std::make_unique<FloatProxy>(FloatProxy::from_store(ws->store, ws->meta->arch));
    ws->corpus =
        std::make_unique<Corpus>(load_corpus(resolve_corpus(cfg, ws->meta), ws->meta->arch.vocab, ws->meta->eval_fraction));
  }
  if (scales_on_disk) {
    ws->scales = load_scales(cfg.scales);
  } else {
    ws->scales = collect_activation_scales(*ws->proxy, *ws->corpus,
                                           calibration_windows(*ws->corpus, ws->meta->arch.context, cfg.calib_windows));
    if (!cfg.scales.empty()) save_scales(ws->scales, cfg.scales);
  }
  if (need_engine) {
    EngineConfig ec;
    ec.chunk_size = cfg.chunk_size;
    ec.salient_rate = cfg.salient_rate;
    ec.fit = cfg.fit;
    ws->engine = std::make_unique<QuantEngine>(QuantEngine::from_store(ws->store, ws->scales, ec));
  }
  if (cfg.quality == QualityMode::Proxy)
    ws->quality_ctx = std::make_unique<QualityContext>(
        QualityContext::make(*ws->proxy, *ws->corpus, eval_windows(*ws->corpus, ws->meta->arch.context, cfg.eval_targets)));
  return ws;
}

inline PlanFile make_plan_file(const Workspace& ws, std::vector<UnitDecision> plan, nlohmann::json extra = {}) {
  PlanFile f;
  f.model_hash = ws.hash;
  f.config = config_json(ws.cfg, false);
  if (!extra.is_null()) f.config["allocator"] = std::move(extra);
  f.units = std::move(plan);
  return f;
}

// ---------------------------------------------------------------------------------------------

struct EpisodeRecord {
  std::size_t episode = 0;
  double b_target = 0.0;
  double reward = 0.0;  // episode-end reward
  double ret = 0.0;     // discounted return including shaped rewards
  double lambda = 0.0;
  ProxyMetrics metrics;
  double seconds = 0.0;        // wall time of the episode (rollout, evaluation, update)
  double alloc_seconds = 0.0;  // rollout and update only
};

struct RunResult {
  std::vector<UnitDecision> best_plan;
  ProxyMetrics best_metrics;
  double best_reward = 0.0;
  std::string best_source;  // "episode N" or "greedy"
  std::vector<UnitDecision> greedy_plan;
  ProxyMetrics greedy_metrics;
  std::vector<EpisodeRecord> episodes;
  DualState dual;
  std::size_t units = 0;
  bool paused = false;  // stopped early by RunOptions::pause_after
};

/// Rolls out one episode. `rng` null selects greedy actions.
inline std::vector<Transition> rollout(Environment& env, const PolicyNet& net, double b_target, std::mt19937_64* rng,
                                       EpisodeLogger* log = nullptr, std::size_t episode = 0) {
  std::vector<Transition> traj;
  StateVector s = env.reset(b_target);
  while (true) {
    Transition tr;
    tr.state = s;
    tr.mask = env.mask();
    const PolicyOutput out = net.forward(tr.state, tr.mask);
    if (rng) {
      const auto [a, lp] = sample_action(out, *rng);
      tr.action = a;
      tr.log_prob = lp;
    } else {
      tr.action = greedy_action(out.probs);
      tr.log_prob = out.log_probs[static_cast<std::size_t>(tr.action)];
    }
    tr.value = out.value;
    const std::size_t t = env.position();
    const std::string unit_id = env.engine().unit(t).id();
    tr.reward = env.step(kActions[static_cast<std::size_t>(tr.action)]);
    if (log) log->step(episode, t, unit_id, tr.state, tr.mask, kActions[static_cast<std::size_t>(tr.action)], tr.reward);
    traj.push_back(tr);
    if (env.done()) break;
    s = env.observe();
  }
  return traj;
}

inline constexpr const char* kCheckpointFile = "policy.ckpt";
inline constexpr const char* kRunStateFile = "run_state.json";
inline constexpr const char* kEpisodeLogFile = "episodes.jsonl";
inline constexpr const char* kPlanFile = "plan.json";

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  if (!s) throw LoadError("malformed generator state in run state");
}

inline nlohmann::json decisions_json(const std::vector<UnitDecision>& plan) {
  PlanFile f;
  f.units = plan;
  return to_json(f)["units"];
}

inline std::vector<UnitDecision> decisions_from_json(const nlohmann::json& units) {
  nlohmann::json j = {{"schema_version", kPlanSchemaVersion}, {"model_hash", hash_string(0)}, {"units", units}};
  return parse_plan(j).units;
}

struct RunOptions {
  bool resume = false;
  bool write_outputs = true;
  std::ostream* progress = nullptr;
  /// When set, the run saves its state and returns once this many episodes are done, without
  /// the closing greedy rollout or a plan file. A later resume picks up from there.
  std::optional<std::size_t> pause_after;
};

/// The learning loop. Each episode: sample a plan, score it, fold the episode reward into the
/// last step, one PPO update on that trajectory, one dual step. The returned best plan is the
/// highest-reward plan among final-stage episodes and a closing greedy rollout.
inline RunResult run_rl(Workspace& ws, const RunOptions& opt = {}) {
  const RunConfig& cfg = ws.cfg;
  const fs::path out(cfg.out_dir);
  if (opt.write_outputs) fs::create_directories(out);

  Environment env(*ws.engine, ws.quality(), cfg.clamps, cfg.reward, cfg.lookahead);
  PolicyArch arch;
  arch.hidden = cfg.policy_hidden;
  PolicyNet net = PolicyNet::initialize(arch, cfg.seed ^ 0x5eed5eed5eedULL);
  AdamState adam;
  adam.lr = cfg.ppo.lr;
  std::mt19937_64 rng(cfg.seed);
  RunResult res;
  res.dual = cfg.dual;
  res.units = env.size();
  const double final_target = cfg.curriculum.targets.back();
  bool have_best = false;
  std::size_t first_episode = 0;

  std::unique_ptr<std::ofstream> log_file;
  if (opt.resume) {
    const nlohmann::json st = read_json_file(out / kRunStateFile);
    if (st.at("model_hash").get<std::string>() != hash_string(ws.hash))
      throw ValidationError("run state belongs to a different model");
    if (st.at("config") != config_json(cfg, false)) throw ValidationError("run state was produced by a different config");
    net = load_checkpoint(out / kCheckpointFile, &adam);
    if (!(net.arch == arch)) throw ValidationError("checkpoint architecture differs from the config");
    first_episode = st.at("next_episode").get<std::size_t>();
    res.dual.lambda = st.at("lambda").get<double>();
    restore_rng(rng, st.at("rng").get<std::string>());
    if (st.contains("best_plan")) {
      res.best_plan = decisions_from_json(st.at("best_plan"));
      res.best_reward = st.at("best_reward").get<double>();
      res.best_source = st.at("best_source").get<std::string>();
      have_best = true;
    }
    for (const auto& e : st.value("episodes", nlohmann::json::array())) {
      EpisodeRecord r;
      r.episode = e.at("episode");
      r.b_target = e.at("b_target");
      r.reward = e.at("reward");
      r.ret = e.at("return");
      r.lambda = e.at("lambda");
      r.metrics.rho = e.at("rho");
      r.metrics.avg_bits = e.at("avg_bits");
      r.metrics.rel_loss_increase = e.at("rel_loss_increase");
      res.episodes.push_back(r);
    }
    if (first_episode > cfg.curriculum.episodes) throw ValidationError("run state is past the configured episodes");
  }
  if (opt.write_outputs)
    log_file = std::make_unique<std::ofstream>(out / kEpisodeLogFile, opt.resume ? std::ios::app : std::ios::trunc);
  EpisodeLogger logger(log_file.get());

  const auto save_state = [&](std::size_t next_episode) {
    if (!opt.write_outputs) return;
    save_checkpoint(net, &adam, out / kCheckpointFile);
    nlohmann::json st;
    st["model_hash"] = hash_string(ws.hash);
    st["config"] = config_json(cfg, false);
    st["next_episode"] = next_episode;
    st["lambda"] = res.dual.lambda;
    st["rng"] = rng_state(rng);
    if (have_best) {
      st["best_plan"] = decisions_json(res.best_plan);
      st["best_reward"] = res.best_reward;
      st["best_source"] = res.best_source;
    }
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& r : res.episodes)
      eps.push_back({{"episode", r.episode},
                     {"b_target", r.b_target},
                     {"reward", r.reward},
                     {"return", r.ret},
                     {"lambda", r.lambda},
                     {"rho", r.metrics.rho},
                     {"avg_bits", r.metrics.avg_bits},
                     {"rel_loss_increase", r.metrics.rel_loss_increase}});
    st["episodes"] = std::move(eps);
    std::ofstream f(out / kRunStateFile, std::ios::trunc);
    f << st.dump(2) << "\n";
  };

  env.prepare();
  using clock = std::chrono::steady_clock;
  for (std::size_t e = first_episode; e < cfg.curriculum.episodes; ++e) {
    const auto t0 = clock::now();
    const double target = curriculum_target(e, cfg.curriculum);
    std::vector<Transition> traj = rollout(env, net, target, &rng, &logger, e);
    const auto t1 = clock::now();
    EpisodeOutcome outcome;
    try {
      outcome = env.finish(res.dual.lambda);
    } catch (const RuntimeFailure& err) {
      throw RuntimeFailure("episode " + std::to_string(e) + ": " + err.what());
    }
    const auto t2 = clock::now();
    traj.back().reward += outcome.terms.total;
    const double ret = episode_return(env.step_rewards(), outcome.terms.total, cfg.ppo.gamma);
    logger.terminal(e, outcome, ret);
    const LossStats ls = ppo_update(net, adam, make_samples(traj, cfg.ppo), cfg.ppo, rng);
    if (ls.aborted && opt.progress) *opt.progress << "episode " << e << ": non-finite PPO loss, update skipped\n";
    res.dual = update_dual(res.dual, outcome.metrics.rel_loss_increase, cfg.reward.epsilon);
    const auto t3 = clock::now();

    EpisodeRecord rec;
    rec.episode = e;
    rec.b_target = target;
    rec.reward = outcome.terms.total;
    rec.ret = ret;
    rec.lambda = outcome.lambda;
    rec.metrics = outcome.metrics;
    rec.seconds = std::chrono::duration<double>(t3 - t0).count();
    rec.alloc_seconds = std::chrono::duration<double>((t1 - t0) + (t3 - t2)).count();
    res.episodes.push_back(rec);
    if (target == final_target && (!have_best || outcome.terms.total > res.best_reward)) {
      res.best_plan = outcome.plan;
      res.best_metrics = outcome.metrics;
      res.best_reward = outcome.terms.total;
      res.best_source = "episode " + std::to_string(e);
      have_best = true;
    }
    if (opt.progress) {
      char line[200];
      std::snprintf(line, sizeof(line), "episode %3zu target %.2f bits %.4f rho %.4f dL/L %.4f reward %+.4f lambda %.3f\n",
                    e, target, outcome.metrics.avg_bits, outcome.metrics.rho, outcome.metrics.rel_loss_increase,
                    outcome.terms.total, res.dual.lambda);
      *opt.progress << line;
    }
    save_state(e + 1);
    if (opt.pause_after && e + 1 >= *opt.pause_after && e + 1 < cfg.curriculum.episodes) {
      res.paused = true;
      return res;
    }
  }

  rollout(env, net, final_target, nullptr);
  const EpisodeOutcome greedy = env.finish(res.dual.lambda);
  res.greedy_plan = greedy.plan;
  res.greedy_metrics = greedy.metrics;
  if (!have_best || greedy.terms.total >= res.best_reward) {
    res.best_plan = greedy.plan;
    res.best_metrics = greedy.metrics;
    res.best_reward = greedy.terms.total;
    res.best_source = "greedy";
  } else if (res.best_metrics.avg_bits == 0.0) {
    // Best plan came from a resumed run state, which does not store its metrics.
    res.best_metrics = ws.quality()(*ws.engine, res.best_plan);
  }
  if (opt.write_outputs) {
    save_plan(make_plan_file(ws, res.best_plan, {{"kind", "rl"}, {"selected", res.best_source}}), out / kPlanFile);
    save_checkpoint(net, &adam, out / kCheckpointFile);
  }
  return res;
}

/// Heuristic baseline plan at the configured target.
inline std::vector<UnitDecision> run_heuristic(Workspace& ws) {
  HeuristicConfig hc;
  hc.target_bits = ws.cfg.heuristic_target;
  return heuristic_allocate(*ws.engine, hc);
}

// ---------------------------------------------------------------------------------------------

enum class SweepAxis { ChunkSize, SalientRate, Episodes };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "chunk_size") return SweepAxis::ChunkSize;
  if (s == "salient_rate") return SweepAxis::SalientRate;
  if (s == "episodes") return SweepAxis::Episodes;
  throw ValidationError("unknown sweep axis: " + s + " (chunk_size, salient_rate or episodes)");
}

struct SweepRow {
  double value = 0.0;
  std::size_t units = 0;
  double avg_bits = 0.0;
  double rho = 0.0;
  double seconds_per_episode = 0.0;
  double alloc_seconds_per_episode = 0.0;
  double best_reward = 0.0;
};

inline RunConfig sweep_config(const RunConfig& base, SweepAxis axis, double value) {
  RunConfig c = base;
  std::ostringstream tag;
  switch (axis) {
    case SweepAxis::ChunkSize:
      if (!(value >= 1.0) || value != std::floor(value)) throw ValidationError("chunk sizes must be positive integers");
      c.chunk_size = static_cast<std::size_t>(value);
      tag << "chunk_size_" << c.chunk_size;
      break;
    case SweepAxis::SalientRate:
      if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("salient rates must lie in [0, 1]");
      c.salient_rate = value;
      tag << "salient_rate_" << value;
      break;
    case SweepAxis::Episodes:
      if (!(value >= 1.0) || value != std::floor(value)) throw ValidationError("episode counts must be positive integers");
      c.curriculum.episodes = static_cast<std::size_t>(value);
      tag << "episodes_" << c.curriculum.episodes;
      break;
  }
  c.out_dir = (fs::path(base.out_dir) / tag.str()).string();
  return c;
}

inline std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                                       std::ostream* progress = nullptr) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  std::vector<RunConfig> configs;
  for (double v : values) configs.push_back(sweep_config(base, axis, v));  // validate all before running
  for (const auto& c : configs) c.validate();
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < values.size(); ++k) {
    auto ws = open_workspace(configs[k]);
    RunOptions opt;
    opt.progress = progress;
    const RunResult r = run_rl(*ws, opt);
    SweepRow row;
    row.value = values[k];
    row.units = r.units;
    row.avg_bits = avg_bits(r.best_plan);
    row.rho = r.best_metrics.rho;
    row.best_reward = r.best_reward;
    for (const auto& e : r.episodes) {
      row.seconds_per_episode += e.seconds;
      row.alloc_seconds_per_episode += e.alloc_seconds;
    }
    row.seconds_per_episode /= static_cast<double>(r.episodes.size());
    row.alloc_seconds_per_episode /= static_cast<double>(r.episodes.size());
    rows.push_back(row);
  }
  return rows;
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  const char* name = axis == SweepAxis::ChunkSize ? "chunk_size" : axis == SweepAxis::SalientRate ? "salient_rate" : "episodes";
  std::ostringstream out;
  out << name << ",units,avg_bits,rho,seconds_per_episode,alloc_seconds_per_episode,best_reward\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%g,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.value, r.units, r.avg_bits, r.rho,
                  r.seconds_per_episode, r.alloc_seconds_per_episode, r.best_reward);
    out << line;
  }
  return out.str();
}

}  // namespace windq
