#pragma once

// Actor-critic MLP with a masked categorical head, GAE, and the clipped-surrogate PPO update.
// Gradients are derived by hand for the fixed architecture and checked against finite
// differences in the test suite.

#include "windq/budget.hpp"
#include "windq/common.hpp"
#include "windq/environment.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

namespace windq {

struct PolicyArch {
  int input = static_cast<int>(kStateDim);
  int hidden = 128;
  int actions = static_cast<int>(kNumActions);
  double ln_eps = 1e-5;

  bool operator==(const PolicyArch& o) const {
    return input == o.input && hidden == o.hidden && actions == o.actions;
  }
};

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double value_coeff = 0.5;
  double entropy_coeff = 0.05;
  int epochs = 3;
  double lr = 5e-4;
  std::size_t minibatch = 64;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ValidationError("GAE lambda must be in [0, 1]");
    if (!(clip > 0.0)) throw ValidationError("clip must be > 0");
    if (!(value_coeff >= 0.0) || !(entropy_coeff >= 0.0)) throw ValidationError("loss coefficients must be >= 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
    if (minibatch < 1) throw ValidationError("minibatch must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const PPOConfig& c) {
  j = {{"gamma", c.gamma},
       {"gae_lambda", c.gae_lambda},
       {"clip", c.clip},
       {"value_coeff", c.value_coeff},
       {"entropy_coeff", c.entropy_coeff},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"minibatch", c.minibatch}};
}

inline void from_json(const nlohmann::json& j, PPOConfig& c) {
  const PPOConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.gae_lambda = j.value("gae_lambda", d.gae_lambda);
  c.clip = j.value("clip", d.clip);
  c.value_coeff = j.value("value_coeff", d.value_coeff);
  c.entropy_coeff = j.value("entropy_coeff", d.entropy_coeff);
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.minibatch = j.value("minibatch", d.minibatch);
}

using ActionProbs = std::array<double, kNumActions>;

struct PolicyOutput {
  ActionProbs probs{};
  ActionProbs log_probs{};  // -inf for masked actions
  double value = 0.0;
};

/// Offsets of each parameter tensor inside the flat parameter vector.
struct PolicyLayout {
  std::size_t w1, b1, g1, c1, w2, b2, g2, c2, wa, ba, wv, bv, total;

  explicit PolicyLayout(const PolicyArch& a) {
    const auto I = static_cast<std::size_t>(a.input);
    const auto H = static_cast<std::size_t>(a.hidden);
    const auto A = static_cast<std::size_t>(a.actions);
    std::size_t o = 0;
    w1 = o, o += H * I;
    b1 = o, o += H;
    g1 = o, o += H;
    c1 = o, o += H;
    w2 = o, o += H * H;
    b2 = o, o += H;
    g2 = o, o += H;
    c2 = o, o += H;
    wa = o, o += A * H;
    ba = o, o += A;
    wv = o, o += H;
    bv = o, o += 1;
    total = o;
  }

  /// (name, offset, size) of every tensor, in storage order.
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> tensors() const {
    return {{"hidden1.weight", w1, b1 - w1}, {"hidden1.bias", b1, g1 - b1}, {"norm1.gain", g1, c1 - g1},
            {"norm1.bias", c1, w2 - c1},     {"hidden2.weight", w2, b2 - w2}, {"hidden2.bias", b2, g2 - b2},
            {"norm2.gain", g2, c2 - g2},     {"norm2.bias", c2, wa - c2},   {"actor.weight", wa, ba - wa},
            {"actor.bias", ba, wv - ba},     {"critic.weight", wv, bv - wv}, {"critic.bias", bv, total - bv}};
  }
};

/// One decision of a rollout, with everything PPO needs.
struct Transition {
  StateVector state{};
  ActionMask mask{};
  int action = 0;
  double log_prob = 0.0;  // under the sampling-time parameters
  double value = 0.0;
  double reward = 0.0;
};

/// A transition ready for the update: advantage and return attached.
struct Sample {
  StateVector state{};
  ActionMask mask{};
  int action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct LossStats {
  double total = 0.0;
  double policy = 0.0;   // the clipped surrogate objective term (already negated)
  double value = 0.0;    // c1-weighted
  double entropy = 0.0;  // mean entropy, unweighted
  double clip_frac = 0.0;
  bool aborted = false;
};

class PolicyNet {
 public:
  PolicyArch arch;
  std::vector<double> params;

  PolicyNet() : PolicyNet(PolicyArch{}) {}
  explicit PolicyNet(const PolicyArch& a) : arch(a), params(PolicyLayout(a).total, 0.0) {}

  PolicyLayout layout() const { return PolicyLayout(arch); }

  /// Orthogonal hidden layers (gain sqrt 2), 0.01-scaled actor head, unit-gain critic head,
  /// zero biases and identity layer-norm affine.
  static PolicyNet initialize(const PolicyArch& a, std::uint64_t seed) {
    if (a.input < 1 || a.hidden < 1 || a.actions != static_cast<int>(kNumActions))
      throw ValidationError("invalid policy architecture");
    PolicyNet net(a);
    const PolicyLayout L(a);
    std::mt19937_64 rng(seed);
    const auto fill = [&](std::size_t off, int rows, int cols, double gain) {
      const int big = std::max(rows, cols);
      Matrix g(big, big);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
      Eigen::HouseholderQR<Matrix> qr(g);
      Matrix q = qr.householderQ();
      // Fix column signs so the decomposition is unique.
      const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int j = 0; j < big; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          net.params[off + static_cast<std::size_t>(i * cols + j)] = gain * q(i, j);
    };
    fill(L.w1, a.hidden, a.input, std::sqrt(2.0));
    fill(L.w2, a.hidden, a.hidden, std::sqrt(2.0));
    fill(L.wa, a.actions, a.hidden, 0.01);
    fill(L.wv, 1, a.hidden, 1.0);
    for (int i = 0; i < a.hidden; ++i) {
      net.params[L.g1 + static_cast<std::size_t>(i)] = 1.0;
      net.params[L.g2 + static_cast<std::size_t>(i)] = 1.0;
    }
    return net;
  }

  /// Per-sample activations kept for the backward pass.
  struct Cache {
    Vector x, z1, xh1, h1, z2, xh2, h2;
    double inv_std1 = 0.0, inv_std2 = 0.0;
    PolicyOutput out;
  };

  PolicyOutput forward(const StateVector& s, const ActionMask& mask) const {
    Cache c;
    forward(s, mask, c);
    return c.out;
  }

  void forward(const StateVector& s, const ActionMask& mask, Cache& c) const {
    bool any = false;
    for (bool m : mask) any = any || m;
    if (!any) throw ValidationError("policy forward with every action masked");
    const PolicyLayout L = layout();
    const auto H = arch.hidden;
    const auto I = arch.input;
    const auto A = arch.actions;
    c.x = Eigen::Map<const Vector>(s.data(), I);
    c.z1 = mat(L.w1, H, I) * c.x + vec(L.b1, H);
    layer_norm(c.z1, vec(L.g1, H), vec(L.c1, H), c.xh1, c.h1, c.inv_std1);
    c.z2 = mat(L.w2, H, H) * c.h1 + vec(L.b2, H);
    layer_norm(c.z2, vec(L.g2, H), vec(L.c2, H), c.xh2, c.h2, c.inv_std2);
    const Vector logits = mat(L.wa, A, H) * c.h2 + vec(L.ba, A);
    c.out.value = vec(L.wv, H).dot(c.h2) + params[L.bv];

    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < A; ++k)
      if (mask[static_cast<std::size_t>(k)]) mx = std::max(mx, logits(k));
    double z = 0.0;
    for (int k = 0; k < A; ++k)
      if (mask[static_cast<std::size_t>(k)]) z += std::exp(logits(k) - mx);
    const double log_z = mx + std::log(z);
    for (int k = 0; k < A; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (mask[kk]) {
        c.out.log_probs[kk] = logits(k) - log_z;
        c.out.probs[kk] = std::exp(c.out.log_probs[kk]);
      } else {
        c.out.log_probs[kk] = -std::numeric_limits<double>::infinity();
        c.out.probs[kk] = 0.0;
      }
    }
  }

  /// Accumulates d(loss)/d(params) given upstream gradients on the logits and the value.
  void backward(const Cache& c, const Vector& dlogits, double dvalue, std::vector<double>& grad) const {
    const PolicyLayout L = layout();
    const auto H = arch.hidden;
    const auto I = arch.input;
    const auto A = arch.actions;
    gmat(grad, L.wa, A, H).noalias() += dlogits * c.h2.transpose();
    gvec(grad, L.ba, A) += dlogits;
    gvec(grad, L.wv, H) += dvalue * c.h2;
    grad[L.bv] += dvalue;

    Vector dh2 = mat(L.wa, A, H).transpose() * dlogits + dvalue * vec(L.wv, H);
    const Vector dz2 = layer_norm_backward(dh2, c.xh2, c.h2, c.inv_std2, vec(L.g2, H), grad, L.g2, L.c2);
    gmat(grad, L.w2, H, H).noalias() += dz2 * c.h1.transpose();
    gvec(grad, L.b2, H) += dz2;

    Vector dh1 = mat(L.w2, H, H).transpose() * dz2;
    const Vector dz1 = layer_norm_backward(dh1, c.xh1, c.h1, c.inv_std1, vec(L.g1, H), grad, L.g1, L.c1);
    gmat(grad, L.w1, H, I).noalias() += dz1 * c.x.transpose();
    gvec(grad, L.b1, H) += dz1;
  }

 private:
  using MatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<const Vector>;

  MatMap mat(std::size_t off, int rows, int cols) const { return MatMap(params.data() + off, rows, cols); }
  VecMap vec(std::size_t off, int n) const { return VecMap(params.data() + off, n); }
  static Eigen::Map<Matrix> gmat(std::vector<double>& g, std::size_t off, int rows, int cols) {
    return Eigen::Map<Matrix>(g.data() + off, rows, cols);
  }
  static Eigen::Map<Vector> gvec(std::vector<double>& g, std::size_t off, int n) {
    return Eigen::Map<Vector>(g.data() + off, n);
  }

  void layer_norm(const Vector& z, const VecMap& gain, const VecMap& bias, Vector& xh, Vector& h,
                  double& inv_std) const {
    const double mu = z.mean();
    const double var = (z.array() - mu).square().mean();
    inv_std = 1.0 / std::sqrt(var + arch.ln_eps);
    xh = (z.array() - mu) * inv_std;
    h = (gain.array() * xh.array() + bias.array()).max(0.0);
  }

  // h = relu(gain * xh + bias); returns d(loss)/dz.
  static Vector layer_norm_backward(const Vector& dh, const Vector& xh, const Vector& h, double inv_std,
                                    const VecMap& gain, std::vector<double>& grad, std::size_t g_off,
                                    std::size_t b_off) {
    const auto n = static_cast<int>(dh.size());
    const Vector dy = (h.array() > 0.0).select(dh, 0.0);
    gvec(grad, g_off, n) += dy.cwiseProduct(xh);
    gvec(grad, b_off, n) += dy;
    const Vector dxh = dy.cwiseProduct(gain);
    const double m1 = dxh.mean();
    const double m2 = dxh.cwiseProduct(xh).mean();
    return inv_std * (dxh.array() - m1 - xh.array() * m2).matrix();
  }
};

/// Draws an action from a distribution; returns (index, log probability).
inline std::pair<int, double> sample_action(const PolicyOutput& out, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t k = 0; k < kNumActions; ++k) {
    if (out.probs[k] <= 0.0) continue;
    last = static_cast<int>(k);
    acc += out.probs[k];
    if (u < acc) return {last, out.log_probs[k]};
  }
  if (last < 0) throw ValidationError("sampling from an empty distribution");
  return {last, out.log_probs[static_cast<std::size_t>(last)]};
}

/// Most likely action, ties to the lowest index.
inline int greedy_action(const ActionProbs& probs) {
  int best = 0;
  for (std::size_t k = 1; k < kNumActions; ++k)
    if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

inline double entropy(const PolicyOutput& out) {
  double h = 0.0;
  for (std::size_t k = 0; k < kNumActions; ++k)
    if (out.probs[k] > 0.0) h -= out.probs[k] * out.log_probs[k];
  return h;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values, double terminal_value,
                     double gamma, double lambda) {
  if (rewards.size() != values.size()) throw ValidationError("rewards and values differ in length");
  if (rewards.empty()) throw ValidationError("GAE on an empty trajectory");
  const std::size_t T = rewards.size();
  GaeResult r;
  r.advantages.assign(T, 0.0);
  r.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double next_value = t + 1 < T ? values[t + 1] : terminal_value;
    const double delta = rewards[t] + gamma * next_value - values[t];
    next_adv = delta + gamma * lambda * next_adv;
    r.advantages[t] = next_adv;
    r.returns[t] = next_adv + values[t];
  }
  return r;
}

/// Turns a finished trajectory (terminal reward already folded into the last step) into samples.
inline std::vector<Sample> make_samples(const std::vector<Transition>& traj, const PPOConfig& cfg) {
  std::vector<double> rewards;
  std::vector<double> values;
  for (const auto& t : traj) {
    rewards.push_back(t.reward);
    values.push_back(t.value);
  }
  const GaeResult g = gae(rewards, values, 0.0, cfg.gamma, cfg.gae_lambda);
  std::vector<Sample> out(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out[i].state = traj[i].state;
    out[i].mask = traj[i].mask;
    out[i].action = traj[i].action;
    out[i].old_log_prob = traj[i].log_prob;
    out[i].advantage = g.advantages[i];
    out[i].ret = g.returns[i];
  }
  return out;
}

/// Zero mean, unit variance advantages (population std, floored at 1e-8).
inline void normalize_advantages(std::vector<Sample>& batch) {
  if (batch.empty()) return;
  double mean = 0.0;
  for (const auto& s : batch) mean += s.advantage;
  mean /= static_cast<double>(batch.size());
  double var = 0.0;
  for (const auto& s : batch) var += (s.advantage - mean) * (s.advantage - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(batch.size())), 1e-8);
  for (auto& s : batch) s.advantage = (s.advantage - mean) / sd;
}

/// PPO loss over a minibatch (advantages used as given). Fills `grad` when non-null.
inline LossStats ppo_loss(const PolicyNet& net, const std::vector<Sample>& batch, const PPOConfig& cfg,
                          std::vector<double>* grad) {
  if (batch.empty()) throw ValidationError("PPO loss on an empty batch");
  if (grad) grad->assign(net.params.size(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  LossStats st;
  PolicyNet::Cache c;
  Vector dlogits(static_cast<Eigen::Index>(kNumActions));
  for (const auto& s : batch) {
    net.forward(s.state, s.mask, c);
    const auto a = static_cast<std::size_t>(s.action);
    if (!s.mask[a]) throw ValidationError("sample holds a masked action");
    const double logp = c.out.log_probs[a];
    const double ratio = std::exp(logp - s.old_log_prob);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double surr1 = ratio * s.advantage;
    const double surr2 = clipped * s.advantage;
    const bool use_unclipped = surr1 <= surr2;
    if (!use_unclipped) st.clip_frac += inv_m;
    const double h = entropy(c.out);
    const double verr = c.out.value - s.ret;
    st.policy -= inv_m * std::min(surr1, surr2);
    st.value += inv_m * cfg.value_coeff * verr * verr;
    st.entropy += inv_m * h;
    if (!grad) continue;

    const double g_logp = use_unclipped ? -inv_m * s.advantage * ratio : 0.0;
    for (std::size_t k = 0; k < kNumActions; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (!s.mask[k]) {
        dlogits(kk) = 0.0;
        continue;
      }
      const double p = c.out.probs[k];
      dlogits(kk) = g_logp * ((k == a ? 1.0 : 0.0) - p) + inv_m * cfg.entropy_coeff * p * (c.out.log_probs[k] + h);
    }
    net.backward(c, dlogits, 2.0 * inv_m * cfg.value_coeff * verr, *grad);
  }
  st.total = st.policy + st.value - cfg.entropy_coeff * st.entropy;
  return st;
}

/// Clipped-surrogate update over shuffled minibatches. On a non-finite loss or gradient the
/// parameters and optimizer state are restored and the stats report `aborted`.
inline LossStats ppo_update(PolicyNet& net, AdamState& adam, std::vector<Sample> batch, const PPOConfig& cfg,
                            std::mt19937_64& rng) {
  cfg.validate();
  if (batch.empty()) throw ValidationError("PPO update on an empty batch");
  normalize_advantages(batch);
  const std::vector<double> saved_params = net.params;
  const AdamState saved_adam = adam;
  adam.lr = cfg.lr;

  std::vector<std::size_t> order(batch.size());
  std::vector<double> grad;
  LossStats last;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      std::vector<Sample> mb;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.minibatch); ++k) mb.push_back(batch[order[k]]);
      last = ppo_loss(net, mb, cfg, &grad);
      bool finite = std::isfinite(last.total);
      for (double g : grad) finite = finite && std::isfinite(g);
      if (!finite) {
        net.params = saved_params;
        adam = saved_adam;
        last.aborted = true;
        return last;
      }
      adam.step(net.params.data(), grad.data(), grad.size());
    }
  }
  return last;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints: "WQPC", u32 version, u32 input/hidden/actions, u64 count, f32 parameters.
// An optional trailer "ADAM" carries f64 parameters and optimizer moments for exact resume.

inline constexpr char kCheckpointMagic[4] = {'W', 'Q', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw LoadError("truncated checkpoint: " + what);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const PolicyNet& net, const AdamState* adam, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 4);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint32_t>(net.arch.input));
  detail::put(out, static_cast<std::uint32_t>(net.arch.hidden));
  detail::put(out, static_cast<std::uint32_t>(net.arch.actions));
  detail::put(out, static_cast<std::uint64_t>(net.params.size()));
  for (double p : net.params) detail::put(out, static_cast<float>(p));
  if (adam) {
    out.write("ADAM", 4);
    detail::put(out, adam->t);
    for (double p : net.params) detail::put(out, p);
    const std::vector<double> zeros(net.params.size(), 0.0);
    const auto& m = adam->m.empty() ? zeros : adam->m;
    const auto& v = adam->v.empty() ? zeros : adam->v;
    for (double x : m) detail::put(out, x);
    for (double x : v) detail::put(out, x);
  }
}

/// Loads a checkpoint. When `adam` is non-null and the file has the optimizer trailer, the
/// full-precision parameters and moments are restored.
inline PolicyNet load_checkpoint(const std::filesystem::path& path, AdamState* adam = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw LoadError("not a policy checkpoint: " + path.string());
  if (detail::get<std::uint32_t>(in, "version") != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version: " + path.string());
  PolicyArch arch;
  arch.input = static_cast<int>(detail::get<std::uint32_t>(in, "input"));
  arch.hidden = static_cast<int>(detail::get<std::uint32_t>(in, "hidden"));
  arch.actions = static_cast<int>(detail::get<std::uint32_t>(in, "actions"));
  if (arch.input != static_cast<int>(kStateDim) || arch.actions != static_cast<int>(kNumActions) || arch.hidden < 1)
    throw LoadError("checkpoint architecture does not match the allocator: " + path.string());
  PolicyNet net(arch);
  if (detail::get<std::uint64_t>(in, "count") != net.params.size())
    throw LoadError("checkpoint parameter count mismatch: " + path.string());
  for (auto& p : net.params) p = detail::get<float>(in, "parameters");
  char tag[4];
  in.read(tag, 4);
  if (in && std::memcmp(tag, "ADAM", 4) == 0 && adam) {
    adam->t = detail::get<std::int64_t>(in, "adam step");
    for (auto& p : net.params) p = detail::get<double>(in, "parameters");
    adam->m.assign(net.params.size(), 0.0);
    adam->v.assign(net.params.size(), 0.0);
    for (auto& x : adam->m) x = detail::get<double>(in, "adam moments");
    for (auto& x : adam->v) x = detail::get<double>(in, "adam moments");
  }
  return net;
}

}  // namespace windq
