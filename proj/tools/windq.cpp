// Command-line front end. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include "windq/windq.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace windq;

namespace {

struct ConfigArgs {
  std::string config;
  std::string model;
  std::string corpus;
  std::string scales;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> chunk_size;
  std::optional<double> salient_rate;
  std::optional<std::string> quality;

  void add_to(CLI::App* cmd, bool with_out = true) {
    cmd->add_option("-c,--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("-m,--model", model, "model-store directory");
    cmd->add_option("--corpus", corpus, "text corpus for the proxy");
    cmd->add_option("--scales", scales, "activation scales file");
    if (with_out) cmd->add_option("-o,--out", out, "output directory");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--episodes", episodes, "training episodes");
    cmd->add_option("--chunk-size", chunk_size, "columns per unit");
    cmd->add_option("--salient-rate", salient_rate, "fraction of weights kept at INT8");
    cmd->add_option("--quality", quality, "proxy or surrogate")->check(CLI::IsMember({"proxy", "surrogate"}));
    cmd->add_option("--set", overrides, "key=value override (dotted keys for nested fields)");
  }

  RunConfig resolve() const {
    nlohmann::json j = config.empty() ? nlohmann::json::object() : read_json_file(config);
    // Relative paths inside a config file are taken relative to the file.
    if (!config.empty()) {
      const fs::path base = fs::path(config).parent_path();
      for (const char* key : {"model", "corpus", "scales", "out_dir"})
        if (j.contains(key) && j[key].is_string() && !j[key].get<std::string>().empty() &&
            fs::path(j[key].get<std::string>()).is_relative())
          j[key] = (base / j[key].get<std::string>()).lexically_normal().string();
    }
    if (!model.empty()) j["model"] = model;
    if (!corpus.empty()) j["corpus"] = corpus;
    if (!scales.empty()) j["scales"] = scales;
    if (!out.empty()) j["out_dir"] = out;
    if (seed) j["seed"] = *seed;
    if (episodes) j["episodes"] = *episodes;
    if (chunk_size) j["chunk_size"] = *chunk_size;
    if (salient_rate) j["salient_rate"] = *salient_rate;
    if (quality) j["quality"] = *quality;
    apply_overrides(j, overrides);
    RunConfig cfg = config_from_json(j);
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string item = list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("not a number in value list: '" + item + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return values;
}

/// Run configuration for a plan-consuming command: the plan's echoed settings, with the model
/// (and optionally corpus/scales) supplied on the command line.
RunConfig config_for_plan(const PlanFile& plan, const std::string& model, const std::string& corpus,
                          const std::string& scales) {
  nlohmann::json j = plan.config;
  j.erase("allocator");
  j["model"] = model;
  if (!corpus.empty()) j["corpus"] = corpus;
  if (!scales.empty()) j["scales"] = scales;
  RunConfig cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

int cmd_train_proxy(const std::string& corpus_path, const std::string& out, const std::string& arch_file,
                    const TrainConfig& tc) {
  ProxyArch arch;
  if (!arch_file.empty()) arch = read_json_file(arch_file).get<ProxyArch>();
  arch.validate();
  const Corpus corpus = load_corpus(corpus_path, arch.vocab);
  std::cout << "corpus: " << corpus.tokens.size() << " characters, held-out from " << corpus.eval_offset << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport rep;
  const FloatProxy model = train_proxy(corpus, arch, tc, &rep, [&](int step, double loss) {
    if (step % 250 == 0) std::cout << "step " << step << " train loss " << loss << std::endl;
  });
  ProxyMeta meta;
  meta.arch = arch;
  meta.corpus = fs::absolute(corpus_path).lexically_normal().string();
  meta.training = {{"seed", tc.seed},
                   {"steps", tc.steps},
                   {"batch", tc.batch},
                   {"lr", tc.lr},
                   {"initial_loss", rep.initial_loss},
                   {"final_loss", rep.final_loss},
                   {"loss_bar", rep.loss_bar}};
  save_proxy(model, meta, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "held-out loss " << rep.initial_loss << " -> " << rep.final_loss << " (bar " << rep.loss_bar << ") in "
            << secs << " s\nwrote " << out << "\n";
  return 0;
}

int cmd_calibrate(const ConfigArgs& args, const std::string& out) {
  RunConfig cfg = args.resolve();
  cfg.scales.clear();
  auto ws = open_workspace(cfg, false);
  save_scales(ws->scales, out);
  std::cout << "scales for " << ws->scales.size() << " tensors from " << cfg.calib_windows << " windows -> " << out
            << "\n";
  return 0;
}

int cmd_run(const ConfigArgs& args, bool resume, std::optional<std::size_t> pause_after) {
  RunConfig cfg = args.resolve();
  if (cfg.scales.empty()) cfg.scales = (fs::path(cfg.out_dir) / "scales.json").string();
  auto ws = open_workspace(cfg);
  RunOptions opt;
  opt.resume = resume;
  opt.progress = &std::cout;
  opt.pause_after = pause_after;
  const RunResult r = run_rl(*ws, opt);
  if (r.paused) {
    std::cout << "paused after " << r.episodes.size() << " episodes; continue with --resume\n";
    return 0;
  }
  std::cout << "selected plan (" << r.best_source << "): avg bits " << r.best_metrics.avg_bits << ", rho "
            << r.best_metrics.rho << ", reward " << r.best_reward << "\n";
  std::cout << "greedy plan: avg bits " << r.greedy_metrics.avg_bits << ", rho " << r.greedy_metrics.rho << "\n";
  std::cout << "wrote " << (fs::path(cfg.out_dir) / kPlanFile).string() << "\n";
  return 0;
}

int cmd_heuristic(const ConfigArgs& args, std::optional<double> target, const std::string& plan_out) {
  RunConfig cfg = args.resolve();
  if (target) cfg.heuristic_target = *target;
  cfg.validate();
  auto ws = open_workspace(cfg);
  const auto plan = run_heuristic(*ws);
  const fs::path out = plan_out.empty() ? fs::path(cfg.out_dir) / "heuristic_plan.json" : fs::path(plan_out);
  save_plan(make_plan_file(*ws, plan, {{"kind", "heuristic"}, {"target", cfg.heuristic_target}}), out);
  const ProxyMetrics m = ws->quality()(*ws->engine, plan);
  std::cout << "heuristic plan: avg bits " << m.avg_bits << ", rho " << m.rho << "\nwrote " << out.string() << "\n";
  return 0;
}

int cmd_apply(const std::string& plan_path, const std::string& model, const std::string& scales,
              const std::string& corpus, const std::string& out) {
  const PlanFile plan = load_plan(plan_path);
  RunConfig cfg = config_for_plan(plan, model, corpus, scales);
  cfg.quality = QualityMode::Surrogate;  // no evaluation needed
  auto ws = open_workspace(cfg);
  if (ws->hash != plan.model_hash) throw ValidationError("plan was made for a different model (hash mismatch)");
  const ModelStore applied = apply_plan(ws->store, *ws->engine, plan.units);
  save_model(applied, out);
  if (fs::exists(fs::path(model) / kProxyMetaName))
    fs::copy_file(fs::path(model) / kProxyMetaName, fs::path(out) / kProxyMetaName, fs::copy_options::overwrite_existing);

  std::map<std::string, std::pair<std::int64_t, std::size_t>> per_tensor;
  for (const auto& d : plan.units) {
    per_tensor[d.tensor_name].first += d.effective_centibits;
    per_tensor[d.tensor_name].second += d.n;
  }
  std::cout << "tensor                 effective bits\n";
  for (const auto& [name, acc] : per_tensor) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s %8.4f\n", name.c_str(),
                  static_cast<double>(acc.first) / (100.0 * static_cast<double>(acc.second)));
    std::cout << line;
  }
  std::cout << "average bits " << avg_bits(plan.units) << "\nwrote " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& plan_path, const std::string& model, const std::string& scales,
             const std::string& corpus, const std::string& out, std::optional<std::string> quality) {
  const PlanFile plan = load_plan(plan_path);
  RunConfig cfg = config_for_plan(plan, model, corpus, scales);
  if (quality) cfg.quality = *quality == "proxy" ? QualityMode::Proxy : QualityMode::Surrogate;
  auto ws = open_workspace(cfg);
  if (ws->hash != plan.model_hash) throw ValidationError("plan was made for a different model (hash mismatch)");
  const ProxyMetrics m = ws->quality()(*ws->engine, plan.units);
  if (!m.finite()) throw RuntimeFailure("evaluation produced non-finite metrics");
  nlohmann::json j = metrics_json(m);
  j["quality"] = cfg.quality == QualityMode::Proxy ? "proxy" : "surrogate";
  j["summary"] = summary_json(summarize(plan.units));
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return 0;
}

int cmd_report(const std::string& plan_path, bool as_json) {
  const PlanFile plan = load_plan(plan_path);
  const PlanSummary s = summarize(plan.units);
  if (as_json) {
    nlohmann::json j = summary_json(s);
    j["upper_3bit_percent"] = s.upper_percent();
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << render_report(s);
  }
  return 0;
}

int cmd_sweep(const ConfigArgs& args, const std::string& axis_name, const std::string& values, const std::string& csv) {
  RunConfig cfg = args.resolve();
  if (cfg.scales.empty()) cfg.scales = (fs::path(cfg.out_dir) / "scales.json").string();
  const SweepAxis axis = parse_axis(axis_name);
  const auto rows = run_sweep(cfg, axis, parse_values(values), &std::cout);
  const std::string text = sweep_csv(axis, rows);
  const fs::path out = csv.empty() ? fs::path(cfg.out_dir) / ("sweep_" + axis_name + ".csv") : fs::path(csv);
  write_text(out, text);
  std::cout << text << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted mixed-precision weight quantization with a learned allocation policy"};
  app.require_subcommand(1);

  std::string corpus_path = "data/sonnets.txt";
  std::string proxy_out;
  std::string arch_file;
  TrainConfig tc;
  auto* train = app.add_subcommand("train-proxy", "train the character-level proxy model");
  train->add_option("--corpus", corpus_path, "training text")->capture_default_str();
  train->add_option("-o,--out", proxy_out, "output model-store directory")->required();
  train->add_option("--arch", arch_file, "JSON proxy architecture")->check(CLI::ExistingFile);
  train->add_option("--seed", tc.seed, "random seed")->capture_default_str();
  train->add_option("--steps", tc.steps, "optimizer steps")->capture_default_str();
  train->add_option("--batch", tc.batch, "windows per step")->capture_default_str();
  train->add_option("--lr", tc.lr, "peak learning rate")->capture_default_str();

  ConfigArgs calib_args;
  std::string scales_out;
  auto* calibrate = app.add_subcommand("calibrate", "collect per-channel activation scales");
  calib_args.add_to(calibrate, false);
  calibrate->add_option("-o,--out", scales_out, "output scales file")->required();

  ConfigArgs run_args;
  bool resume = false;
  auto* run = app.add_subcommand("run", "train the allocation policy and write the selected plan");
  run_args.add_to(run);
  run->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
  std::optional<std::size_t> pause_after;
  run->add_option("--pause-after", pause_after, "save state and stop once this many episodes are done");

  ConfigArgs heur_args;
  std::optional<double> heur_target;
  std::string heur_plan;
  auto* heuristic = app.add_subcommand("heuristic", "saliency-ranked baseline allocation");
  heur_args.add_to(heuristic);
  heuristic->add_option("--target", heur_target, "target average bits");
  heuristic->add_option("--plan", heur_plan, "output plan path");

  std::string plan_path, model_path, scales_path, corpus_opt, out_path;
  std::optional<std::string> eval_quality;
  auto* apply = app.add_subcommand("apply", "write a store with the plan's dequantized weights");
  apply->add_option("-p,--plan", plan_path, "plan file")->required();
  apply->add_option("-m,--model", model_path, "source model store")->required();
  apply->add_option("--scales", scales_path, "activation scales file");
  apply->add_option("--corpus", corpus_opt, "corpus for calibration when no scales are given");
  apply->add_option("-o,--out", out_path, "output model-store directory")->required();

  auto* eval = app.add_subcommand("eval", "quality metrics of a plan");
  eval->add_option("-p,--plan", plan_path, "plan file")->required();
  eval->add_option("-m,--model", model_path, "model store")->required();
  eval->add_option("--scales", scales_path, "activation scales file");
  eval->add_option("--corpus", corpus_opt, "evaluation corpus");
  eval->add_option("--quality", eval_quality, "proxy or surrogate")->check(CLI::IsMember({"proxy", "surrogate"}));
  eval->add_option("-o,--out", out_path, "metrics JSON path (stdout when omitted)");

  bool report_json = false;
  auto* report = app.add_subcommand("report", "action distribution of a plan");
  report->add_option("-p,--plan", plan_path, "plan file")->required();
  report->add_flag("--json", report_json, "machine-readable output");

  ConfigArgs sweep_args;
  std::string axis, values, csv;
  auto* sweep = app.add_subcommand("sweep", "one full run per value of a configuration axis");
  sweep_args.add_to(sweep);
  sweep->add_option("--axis", axis, "chunk_size, salient_rate or episodes")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--csv", csv, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train) return cmd_train_proxy(corpus_path, proxy_out, arch_file, tc);
    if (*calibrate) return cmd_calibrate(calib_args, scales_out);
    if (*run) return cmd_run(run_args, resume, pause_after);
    if (*heuristic) return cmd_heuristic(heur_args, heur_target, heur_plan);
    if (*apply) return cmd_apply(plan_path, model_path, scales_path, corpus_opt, out_path);
    if (*eval) return cmd_eval(plan_path, model_path, scales_path, corpus_opt, out_path, eval_quality);
    if (*report) return cmd_report(plan_path, report_json);
    if (*sweep) return cmd_sweep(sweep_args, axis, values, csv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
