// End-to-end checks of the command-line tool against the fixture proxy.

#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace windq;
using windq::testing::read_bytes;
using windq::testing::ScratchDir;

namespace {

const std::filesystem::path kFixture = WINDQ_FIXTURE_DIR;
const std::filesystem::path kSource = WINDQ_SOURCE_DIR;

struct Outcome {
  int code = -1;
  std::string out;
};

// Runs the tool with the given arguments; stdout and stderr are captured together.
Outcome tool(const std::string& args, const ScratchDir& dir) {
  const auto log = dir / "tool.log";
  const std::string cmd = std::string("\"") + WINDQ_TOOL + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = read_bytes(log);
  return o;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

std::string smoke(const std::filesystem::path& out) {
  return "run -c " + q(kSource / "configs" / "smoke.json") + " -m " + q(kFixture / "proxy") + " --scales " +
         q(kFixture / "scales.json") + " -o " + q(out);
}

std::size_t count_lines(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST(Cli, SmokeRunWritesAValidPlan) {
  ScratchDir dir("cli_smoke");
  const Outcome o = tool(smoke(dir / "run") + " --episodes 2", dir);
  ASSERT_EQ(o.code, 0) << o.out;
  const PlanFile plan = load_plan(dir / "run" / "plan.json");
  EXPECT_EQ(plan.model_hash, model_hash(load_model(kFixture / "proxy")));
  EXPECT_LE(summarize(plan.units).avg_bits, 2.0 + 1e-12);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "policy.ckpt"));
  EXPECT_EQ(count_lines(read_bytes(dir / "run" / "episodes.jsonl"), "\"terminal\":true"), 2u);
}

TEST(Cli, SameSeedGivesIdenticalPlans) {
  ScratchDir dir("cli_det");
  ASSERT_EQ(tool(smoke(dir / "a"), dir).code, 0);
  ASSERT_EQ(tool(smoke(dir / "b"), dir).code, 0);
  EXPECT_EQ(read_bytes(dir / "a" / "plan.json"), read_bytes(dir / "b" / "plan.json"));
  EXPECT_EQ(read_bytes(dir / "a" / "episodes.jsonl"), read_bytes(dir / "b" / "episodes.jsonl"));
  ASSERT_EQ(tool(smoke(dir / "c") + " --seed 8", dir).code, 0);
  EXPECT_NE(read_bytes(dir / "a" / "episodes.jsonl"), read_bytes(dir / "c" / "episodes.jsonl"));
}

TEST(Cli, PausedRunResumesToTheSamePlan) {
  ScratchDir dir("cli_resume");
  ASSERT_EQ(tool(smoke(dir / "full"), dir).code, 0);
  const Outcome paused = tool(smoke(dir / "split") + " --pause-after 2", dir);
  ASSERT_EQ(paused.code, 0) << paused.out;
  EXPECT_FALSE(std::filesystem::exists(dir / "split" / "plan.json"));
  const Outcome resumed = tool(smoke(dir / "split") + " --resume", dir);
  ASSERT_EQ(resumed.code, 0) << resumed.out;
  EXPECT_EQ(read_bytes(dir / "full" / "plan.json"), read_bytes(dir / "split" / "plan.json"));
  EXPECT_EQ(read_bytes(dir / "full" / "episodes.jsonl"), read_bytes(dir / "split" / "episodes.jsonl"));

  // A resume under a different configuration is refused.
  const Outcome other = tool(smoke(dir / "split") + " --resume --seed 99", dir);
  EXPECT_EQ(other.code, 1) << other.out;
  EXPECT_EQ(tool(smoke(dir / "nothing") + " --resume", dir).code, 1);
}

TEST(Cli, HeuristicReportAndEval) {
  ScratchDir dir("cli_heur");
  const auto common = " -m " + q(kFixture / "proxy") + " --scales " + q(kFixture / "scales.json") + " -o " + q(dir / "h");
  const Outcome h = tool("heuristic --target 2.0 --quality surrogate" + common, dir);
  ASSERT_EQ(h.code, 0) << h.out;
  const auto plan_path = dir / "h" / "heuristic_plan.json";
  const PlanFile plan = load_plan(plan_path);
  EXPECT_LE(summarize(plan.units).avg_bits, 2.0 + 1e-12);

  const Outcome r = tool("report -p " + q(plan_path), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("grouped: upper-3bit"), std::string::npos);
  const Outcome rj = tool("report --json -p " + q(plan_path), dir);
  ASSERT_EQ(rj.code, 0);
  const auto j = nlohmann::json::parse(rj.out);
  double pct = 0.0;
  for (const auto& [k, v] : j.at("weight_percent").items()) pct += v.get<double>();
  EXPECT_NEAR(pct, 100.0, 0.01);

  const Outcome e = tool("eval --quality proxy -p " + q(plan_path) + " -m " + q(kFixture / "proxy") + " --scales " +
                             q(kFixture / "scales.json") + " -o " + q(dir / "m.json"),
                         dir);
  ASSERT_EQ(e.code, 0) << e.out;
  const auto m = read_json_file(dir / "m.json");
  EXPECT_GT(m.at("rho").get<double>(), 1.0);
  EXPECT_EQ(m.at("quality"), "proxy");
  EXPECT_EQ(m.at("avg_bits").get<double>(), summarize(plan.units).avg_bits);
}

TEST(Cli, ApplyAllSkipReproducesTheStore) {
  ScratchDir dir("cli_apply");
  const ModelStore store = load_model(kFixture / "proxy");
  // Build an all-skip plan for the fixture partition by hand.
  RunConfig cfg;
  cfg.model = (kFixture / "proxy").string();
  cfg.scales = (kFixture / "scales.json").string();
  cfg.quality = QualityMode::Surrogate;
  auto ws = open_workspace(cfg);
  std::vector<UnitDecision> plan;
  for (std::size_t i = 0; i < ws->engine->size(); ++i) plan.push_back(ws->engine->decide(i, Action::Skip));
  save_plan(make_plan_file(*ws, plan), dir / "skip.json");

  const Outcome o = tool("apply -p " + q(dir / "skip.json") + " -m " + q(kFixture / "proxy") + " --scales " +
                             q(kFixture / "scales.json") + " -o " + q(dir / "applied"),
                         dir);
  ASSERT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("average bits 16"), std::string::npos) << o.out;
  for (const auto& t : store.tensors)
    EXPECT_EQ(read_bytes(dir / "applied" / (t.name + ".bin")), read_bytes(kFixture / "proxy" / (t.name + ".bin")))
        << t.name;
  EXPECT_TRUE(std::filesystem::exists(dir / "applied" / "proxy.json"));
}

TEST(Cli, InvalidInputsExitWithOne) {
  ScratchDir dir("cli_bad");
  // A plan whose model hash was altered is refused.
  ASSERT_EQ(tool(smoke(dir / "run") + " --episodes 1", dir).code, 0);
  auto j = read_json_file(dir / "run" / "plan.json");
  j["model_hash"] = hash_string(12345);
  std::ofstream(dir / "wrong_hash.json") << j.dump(2);
  const Outcome e = tool("eval -p " + q(dir / "wrong_hash.json") + " -m " + q(kFixture / "proxy") + " --scales " +
                             q(kFixture / "scales.json"),
                         dir);
  EXPECT_EQ(e.code, 1) << e.out;
  EXPECT_NE(e.out.find("hash mismatch"), std::string::npos) << e.out;

  // A corpus too short to hold the held-out split.
  std::ofstream(dir / "tiny.txt") << "Shall I compare thee to a summer's day?\n";
  EXPECT_EQ(tool(smoke(dir / "r2") + " --corpus " + q(dir / "tiny.txt") + " --quality proxy", dir).code, 1);

  EXPECT_EQ(tool("run -m " + q(dir / "no_such_model") + " -o " + q(dir / "r3"), dir).code, 1);
  EXPECT_EQ(tool(smoke(dir / "r4") + " --salient-rate 1.5", dir).code, 1);
  EXPECT_EQ(tool(smoke(dir / "r5") + " --set curriculum=[2.0,3.0]", dir).code, 1);
  EXPECT_EQ(tool("report -p " + q(dir / "absent.json"), dir).code, 1);
  EXPECT_EQ(tool("frobnicate", dir).code, 1);
  EXPECT_EQ(tool("sweep --axis colour --values 1,2" + std::string(" -m ") + q(kFixture / "proxy"), dir).code, 1);
  EXPECT_EQ(tool("--help", dir).code, 0);
}

TEST(Cli, SweepWritesOneRowPerValue) {
  ScratchDir dir("cli_sweep");
  const Outcome o = tool("sweep --axis chunk_size --values 128,512 -c " + q(kSource / "configs" / "smoke.json") +
                             " -m " + q(kFixture / "proxy") + " --scales " + q(kFixture / "scales.json") + " -o " +
                             q(dir / "s") + " --episodes 2",
                         dir);
  ASSERT_EQ(o.code, 0) << o.out;
  std::istringstream csv(read_bytes(dir / "s" / "sweep_chunk_size.csv"));
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "chunk_size,units,avg_bits,rho,seconds_per_episode,alloc_seconds_per_episode,best_reward");
  std::vector<std::size_t> units;
  while (std::getline(csv, line)) {
    std::size_t fields = 1;
    for (char c : line) fields += c == ',';
    EXPECT_EQ(fields, 7u) << line;
    units.push_back(std::stoul(line.substr(line.find(',') + 1)));
  }
  ASSERT_EQ(units.size(), 2u);
  EXPECT_GT(units[0], units[1]);
}

TEST(Cli, TrainProxyIsDeterministic) {
  ScratchDir dir("cli_train");
  const std::string args = "train-proxy --corpus " + q(kSource / "data" / "sonnets.txt") + " --steps 150 --seed 5";
  const Outcome a = tool(args + " -o " + q(dir / "a"), dir);
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(tool(args + " -o " + q(dir / "b"), dir).code, 0);
  EXPECT_EQ(model_hash(load_model(dir / "a")), model_hash(load_model(dir / "b")));
  EXPECT_EQ(tool("train-proxy --corpus " + q(dir / "missing.txt") + " -o " + q(dir / "c"), dir).code, 1);
  // Too few steps to clear the loss bar is a runtime failure, not a validation error.
  const Outcome short_run = tool("train-proxy --corpus " + q(kSource / "data" / "sonnets.txt") + " --steps 20 --seed 5 -o " + q(dir / "d"), dir);
  EXPECT_EQ(short_run.code, 2) << short_run.out;
}
