#include "support.hpp"

#include <gtest/gtest.h>

using namespace windq;
using windq::testing::ScratchDir;

namespace {

ActionMask all_open() {
  ActionMask m;
  m.fill(true);
  return m;
}

StateVector random_state(std::mt19937_64& rng) {
  StateVector s;
  for (auto& x : s) x = standard_normal(rng);
  return s;
}

ActionMask random_mask(std::mt19937_64& rng) {
  ActionMask m{};
  while (true) {
    for (auto& b : m) b = uniform01(rng) < 0.6;
    for (bool b : m)
      if (b) return m;
  }
}

PolicyNet perturbed(const PolicyArch& a, std::uint64_t seed, double sd = 0.3) {
  PolicyNet net = PolicyNet::initialize(a, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  for (auto& p : net.params) p += sd * standard_normal(rng);
  return net;
}

// Independent forward pass written with plain loops over the row-major parameter blocks.
struct Reference {
  std::vector<double> logits;
  double value = 0.0;
};

Reference reference_forward(const PolicyNet& net, const StateVector& s) {
  const PolicyLayout L = net.layout();
  const auto& p = net.params;
  const int I = net.arch.input, H = net.arch.hidden, A = net.arch.actions;
  const auto dense = [&](std::size_t w, std::size_t b, const std::vector<double>& x, int rows) {
    std::vector<double> y(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      double acc = p[b + static_cast<std::size_t>(r)];
      for (std::size_t c = 0; c < x.size(); ++c) acc += p[w + static_cast<std::size_t>(r) * x.size() + c] * x[c];
      y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
  };
  const auto norm_relu = [&](std::vector<double> z, std::size_t g, std::size_t b) {
    double mu = 0.0, var = 0.0;
    for (double v : z) mu += v / static_cast<double>(z.size());
    for (double v : z) var += (v - mu) * (v - mu) / static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      z[i] = std::max(0.0, p[g + i] * (z[i] - mu) / std::sqrt(var + net.arch.ln_eps) + p[b + i]);
    return z;
  };
  const std::vector<double> x(s.begin(), s.begin() + I);
  const auto h1 = norm_relu(dense(L.w1, L.b1, x, H), L.g1, L.c1);
  const auto h2 = norm_relu(dense(L.w2, L.b2, h1, H), L.g2, L.c2);
  Reference r;
  r.logits = dense(L.wa, L.ba, h2, A);
  r.value = dense(L.wv, L.bv, h2, 1)[0];
  return r;
}

std::vector<Sample> micro_batch(const PolicyNet& net, std::mt19937_64& rng, std::size_t n) {
  std::vector<Sample> batch(n);
  for (auto& s : batch) {
    s.state = random_state(rng);
    s.mask = random_mask(rng);
    const PolicyOutput out = net.forward(s.state, s.mask);
    std::vector<int> open;
    for (std::size_t k = 0; k < kNumActions; ++k)
      if (s.mask[k]) open.push_back(static_cast<int>(k));
    s.action = open[uniform_index(rng, open.size())];
    // Old log-probs scattered around the current ones put ratios on both sides of the clip range.
    s.old_log_prob = out.log_probs[static_cast<std::size_t>(s.action)] + 0.5 * standard_normal(rng);
    s.advantage = standard_normal(rng);
    s.ret = standard_normal(rng);
  }
  return batch;
}

// Largest per-tensor relative difference between analytic and central-difference gradients,
// over the coordinates selected by `pick` (all of them when it returns true everywhere).
double gradient_check(PolicyNet net, const std::vector<Sample>& batch, const PPOConfig& cfg,
                      const std::function<bool(std::size_t)>& pick) {
  std::vector<double> grad;
  ppo_loss(net, batch, cfg, &grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& [name, off, size] : net.layout().tensors()) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = off; i < off + size; ++i) {
      if (!pick(i)) continue;
      const double keep = net.params[i];
      net.params[i] = keep + h;
      const double up = ppo_loss(net, batch, cfg, nullptr).total;
      net.params[i] = keep - h;
      const double down = ppo_loss(net, batch, cfg, nullptr).total;
      net.params[i] = keep;
      const double fd = (up - down) / (2 * h);
      diff += (fd - grad[i]) * (fd - grad[i]);
      scale += fd * fd + grad[i] * grad[i];
    }
    if (scale > 1e-24) worst = std::max(worst, std::sqrt(diff) / std::sqrt(scale));
    EXPECT_LT(scale > 1e-24 ? std::sqrt(diff / scale) : 0.0, 1e-4) << name;
  }
  return worst;
}

}  // namespace

TEST(Forward, ZeroParametersGiveUniformPolicy) {
  const PolicyNet net;
  std::mt19937_64 rng(1);
  const PolicyOutput out = net.forward(random_state(rng), all_open());
  for (double p : out.probs) EXPECT_DOUBLE_EQ(p, 1.0 / 7.0);
  EXPECT_EQ(out.value, 0.0);
}

TEST(Forward, SingleOpenActionHasProbabilityOne) {
  const PolicyNet net = perturbed(PolicyArch{}, 3);
  std::mt19937_64 rng(2);
  for (std::size_t k = 0; k < kNumActions; ++k) {
    ActionMask m{};
    m[k] = true;
    const PolicyOutput out = net.forward(random_state(rng), m);
    EXPECT_EQ(out.probs[k], 1.0);
    EXPECT_EQ(out.log_probs[k], 0.0);
    for (std::size_t j = 0; j < kNumActions; ++j)
      if (j != k) {
        EXPECT_EQ(out.probs[j], 0.0);
      }
  }
  EXPECT_THROW(net.forward(random_state(rng), ActionMask{}), ValidationError);
}

TEST(Forward, MatchesReferenceSoftmax) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PolicyArch a;
    a.hidden = 16 + static_cast<int>(seed % 3) * 24;
    const PolicyNet net = perturbed(a, seed);
    const StateVector s = random_state(rng);
    const ActionMask m = random_mask(rng);
    const PolicyOutput out = net.forward(s, m);
    const Reference r = reference_forward(net, s);
    double z = 0.0;
    for (std::size_t k = 0; k < kNumActions; ++k)
      if (m[k]) z += std::exp(r.logits[k]);
    double total = 0.0;
    for (std::size_t k = 0; k < kNumActions; ++k) {
      EXPECT_NEAR(out.probs[k], m[k] ? std::exp(r.logits[k]) / z : 0.0, 1e-9);
      total += out.probs[k];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    EXPECT_NEAR(out.value, r.value, 1e-9);
  }
}

TEST(Sampling, FrequenciesMatchProbabilities) {
  PolicyOutput out;
  out.probs = {0.05, 0.0, 0.25, 0.1, 0.3, 0.0, 0.3};
  for (std::size_t k = 0; k < kNumActions; ++k)
    out.log_probs[k] = out.probs[k] > 0 ? std::log(out.probs[k]) : -std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(11);
  const int draws = 70000;
  std::array<int, kNumActions> counts{};
  for (int i = 0; i < draws; ++i) {
    const auto [a, lp] = sample_action(out, rng);
    ++counts[static_cast<std::size_t>(a)];
    ASSERT_EQ(lp, out.log_probs[static_cast<std::size_t>(a)]);
  }
  for (std::size_t k = 0; k < kNumActions; ++k) {
    const double p = out.probs[k];
    const double sd = std::sqrt(draws * p * (1 - p));
    EXPECT_NEAR(counts[k], draws * p, 3 * sd + 1e-9) << k;
  }
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_action(out, a).first, sample_action(out, b).first);
}

TEST(Sampling, GreedyTiesGoToLowestIndex) {
  EXPECT_EQ(greedy_action({0.1, 0.3, 0.3, 0.1, 0.1, 0.1, 0.0}), 1);
  EXPECT_EQ(greedy_action({0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0}), 6);
  EXPECT_EQ(greedy_action({1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7}), 0);
}

TEST(Entropy, Bounds) {
  std::mt19937_64 rng(12);
  const PolicyNet net = perturbed(PolicyArch{}, 9, 1.0);
  for (int i = 0; i < 500; ++i) {
    const ActionMask m = random_mask(rng);
    std::size_t k = 0;
    for (bool b : m) k += b;
    const double h = entropy(net.forward(random_state(rng), m));
    EXPECT_GE(h, -1e-12);
    EXPECT_LE(h, std::log(static_cast<double>(k)) + 1e-12);
  }
  EXPECT_NEAR(entropy(PolicyNet{}.forward(random_state(rng), all_open())), std::log(7.0), 1e-12);
}

TEST(Gae, HandRecursion) {
  const GaeResult r = gae({1.0, 0.0}, {0.5, 0.5}, 0.0, 0.99, 0.95);
  EXPECT_NEAR(r.advantages[0], 0.52475, 1e-12);
  EXPECT_NEAR(r.advantages[1], -0.5, 1e-12);
  EXPECT_NEAR(r.returns[0], 1.02475, 1e-12);
}

TEST(Gae, LambdaZeroIsOneStepTd) {
  const std::vector<double> rew = {0.3, -1.0, 2.0};
  const std::vector<double> val = {0.1, 0.7, -0.2};
  const GaeResult r = gae(rew, val, 0.0, 0.9, 0.0);
  EXPECT_NEAR(r.advantages[0], 0.3 + 0.9 * 0.7 - 0.1, 1e-15);
  EXPECT_NEAR(r.advantages[1], -1.0 + 0.9 * -0.2 - 0.7, 1e-15);
  EXPECT_NEAR(r.advantages[2], 2.0 + 0.2, 1e-15);
  const GaeResult z = gae({0, 0, 0}, {0, 0, 0}, 0.0, 0.99, 0.95);
  for (double a : z.advantages) EXPECT_EQ(a, 0.0);
  EXPECT_THROW(gae({1.0}, {}, 0.0, 0.99, 0.95), ValidationError);
}

TEST(Gae, MatchesForwardSumDefinition) {
  // Reference: A_t = sum_k (gamma lambda)^k delta_{t+k}, evaluated forwards.
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + uniform_index(rng, 60);
    std::vector<double> rew(T), val(T);
    for (std::size_t t = 0; t < T; ++t) rew[t] = standard_normal(rng), val[t] = standard_normal(rng);
    const double gamma = 0.8 + 0.2 * uniform01(rng);
    const double lam = uniform01(rng);
    const GaeResult r = gae(rew, val, 0.0, gamma, lam);
    for (std::size_t t = 0; t < T; ++t) {
      double a = 0.0, w = 1.0;
      for (std::size_t k = t; k < T; ++k) {
        const double next = k + 1 < T ? val[k + 1] : 0.0;
        a += w * (rew[k] + gamma * next - val[k]);
        w *= gamma * lam;
      }
      EXPECT_NEAR(r.advantages[t], a, 1e-10);
      EXPECT_NEAR(r.returns[t], a + val[t], 1e-10);
    }
  }
}

TEST(Gradients, FullCheckOnSmallNetwork) {
  PolicyArch a;
  a.hidden = 8;
  const PPOConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PolicyNet net = perturbed(a, 100 + seed);
    std::mt19937_64 rng(seed);
    const auto batch = micro_batch(net, rng, 6);
    gradient_check(net, batch, cfg, [](std::size_t) { return true; });
  }
}

TEST(Gradients, SampledCheckOnDefaultWidth) {
  const PPOConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PolicyNet net = perturbed(PolicyArch{}, 200 + seed, 0.05);
    std::mt19937_64 rng(seed);
    const auto batch = micro_batch(net, rng, 4);
    std::mt19937_64 pick_rng(seed + 7);
    std::vector<bool> chosen(net.params.size());
    for (const auto& [name, off, size] : net.layout().tensors())
      for (std::size_t i = 0; i < std::min<std::size_t>(size, 24); ++i) chosen[off + uniform_index(pick_rng, size)] = true;
    gradient_check(net, batch, cfg, [&](std::size_t i) { return chosen[i]; });
  }
}

TEST(Gradients, MaskedActionsGetNoActorGradient) {
  const PolicyNet net = perturbed(PolicyArch{}, 31);
  std::mt19937_64 rng(31);
  auto batch = micro_batch(net, rng, 16);
  for (auto& s : batch) {
    s.mask[1] = s.mask[5] = false;
    if (s.action == 1 || s.action == 5) s.action = 0, s.mask[0] = true;
    s.old_log_prob = net.forward(s.state, s.mask).log_probs[static_cast<std::size_t>(s.action)];
  }
  std::vector<double> grad;
  ppo_loss(net, batch, PPOConfig{}, &grad);
  const PolicyLayout L = net.layout();
  const auto H = static_cast<std::size_t>(net.arch.hidden);
  for (std::size_t k : {1u, 5u}) {
    EXPECT_EQ(grad[L.ba + k], 0.0);
    for (std::size_t j = 0; j < H; ++j) EXPECT_EQ(grad[L.wa + k * H + j], 0.0);
  }
  EXPECT_NE(grad[L.ba + 0], 0.0);
}

TEST(Gradients, ZeroAdvantageLeavesOnlyValueAndEntropy) {
  const PolicyNet net = perturbed(PolicyArch{}, 32);
  std::mt19937_64 rng(32);
  auto batch = micro_batch(net, rng, 8);
  for (auto& s : batch) s.advantage = 0.0;
  PPOConfig cfg;
  cfg.entropy_coeff = 0.0;
  std::vector<double> grad;
  const LossStats st = ppo_loss(net, batch, cfg, &grad);
  EXPECT_EQ(st.policy, 0.0);
  const PolicyLayout L = net.layout();
  for (std::size_t i = L.wa; i < L.wv; ++i) EXPECT_EQ(grad[i], 0.0);  // actor head untouched
}

TEST(Update, LossFallsOnAFixedBatch) {
  PolicyNet net = PolicyNet::initialize(PolicyArch{}, 41);
  std::mt19937_64 rng(41);
  auto batch = micro_batch(net, rng, 64);
  for (auto& s : batch) s.old_log_prob = net.forward(s.state, s.mask).log_probs[static_cast<std::size_t>(s.action)];
  PPOConfig cfg;
  cfg.entropy_coeff = 0.0;
  auto normalized = batch;
  normalize_advantages(normalized);
  const double before = ppo_loss(net, normalized, cfg, nullptr).total;
  AdamState adam;
  const LossStats st = ppo_update(net, adam, batch, cfg, rng);
  EXPECT_FALSE(st.aborted);
  EXPECT_LT(ppo_loss(net, normalized, cfg, nullptr).total, before);
}

TEST(Update, NonFiniteLossRestoresParameters) {
  PolicyNet net = PolicyNet::initialize(PolicyArch{}, 42);
  std::mt19937_64 rng(42);
  auto batch = micro_batch(net, rng, 8);
  batch[3].ret = std::numeric_limits<double>::infinity();
  const auto before = net.params;
  AdamState adam;
  const LossStats st = ppo_update(net, adam, batch, PPOConfig{}, rng);
  EXPECT_TRUE(st.aborted);
  EXPECT_EQ(net.params, before);
  EXPECT_EQ(adam.t, 0);
}

TEST(Checkpoint, RoundTrip) {
  ScratchDir dir("ckpt");
  PolicyNet net = perturbed(PolicyArch{}, 50);
  AdamState adam;
  std::mt19937_64 rng(50);
  ppo_update(net, adam, micro_batch(net, rng, 16), PPOConfig{}, rng);
  save_checkpoint(net, &adam, dir / "p.ckpt");

  AdamState back_adam;
  const PolicyNet back = load_checkpoint(dir / "p.ckpt", &back_adam);
  EXPECT_EQ(back.arch, net.arch);
  EXPECT_EQ(back.params, net.params);
  EXPECT_EQ(back_adam.t, adam.t);
  EXPECT_EQ(back_adam.m, adam.m);
  EXPECT_EQ(back_adam.v, adam.v);

  // Without the optimizer state only the float parameters are read.
  const PolicyNet light = load_checkpoint(dir / "p.ckpt");
  for (std::size_t i = 0; i < net.params.size(); ++i)
    EXPECT_EQ(light.params[i], static_cast<double>(static_cast<float>(net.params[i])));

  std::filesystem::resize_file(dir / "p.ckpt", 40);
  EXPECT_THROW(load_checkpoint(dir / "p.ckpt"), LoadError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), LoadError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), LoadError);
}
