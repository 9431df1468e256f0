#pragma once

// Character-level transformer used as the desk-scale quality oracle.
//
// Every quantizable layer is a plain dense matrix W (out x in) applied as y = W x and stored
// under the names `layers.{i}.attn.{q,k,v,o}` and `layers.{i}.mlp.{gate,up,down}`. Embeddings
// and the output projection are stored as `tok_emb`, `pos_emb` and `lm_head`. Gradients are
// computed by hand-written reverse-mode differentiation of this fixed architecture.

#include "windq/common.hpp"
#include "windq/tensor_store.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace windq {

/// 64 symbols: newline, space, punctuation, upper and lower case letters.
inline const std::string kAlphabet =
    "\n !'(),-.:;?ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

struct ProxyArch {
  int vocab = 64;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int context = 32;
  int mlp_hidden = 512;

  void validate() const {
    if (vocab < 2 || vocab > 128) throw ValidationError("proxy vocab must be in [2, 128]");
    if (dim < 1 || heads < 1 || dim % heads != 0)
      throw ValidationError("proxy dim must be a positive multiple of heads");
    if (layers < 1 || context < 1 || mlp_hidden < 1)
      throw ValidationError("proxy layers, context and mlp_hidden must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ProxyArch& a) {
  j = {{"vocab", a.vocab},   {"dim", a.dim},         {"layers", a.layers},
       {"heads", a.heads},   {"context", a.context}, {"mlp_hidden", a.mlp_hidden}};
}
inline void from_json(const nlohmann::json& j, ProxyArch& a) {
  ProxyArch d;
  a.vocab = j.value("vocab", d.vocab);
  a.dim = j.value("dim", d.dim);
  a.layers = j.value("layers", d.layers);
  a.heads = j.value("heads", d.heads);
  a.context = j.value("context", d.context);
  a.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
}

inline std::vector<int> encode_text(const std::string& text, int vocab = 64) {
  std::array<int, 256> lut;
  const int space = static_cast<int>(kAlphabet.find(' '));
  lut.fill(space);
  for (std::size_t i = 0; i < kAlphabet.size() && static_cast<int>(i) < vocab; ++i)
    lut[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(lut[static_cast<unsigned char>(c)]);
  return out;
}

/// Tokenized corpus with a fixed-offset held-out tail.
struct Corpus {
  std::vector<int> tokens;
  std::size_t eval_offset = 0;

  std::size_t train_size() const { return eval_offset; }
  std::size_t eval_size() const { return tokens.size() - eval_offset; }
};

inline constexpr std::size_t kMinCorpusChars = 50000;
inline constexpr double kDefaultEvalFraction = 0.1;

inline Corpus load_corpus(const std::filesystem::path& path, int vocab = 64,
                          double eval_fraction = kDefaultEvalFraction) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open corpus: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.size() < kMinCorpusChars)
    throw ValidationError("corpus too small (" + std::to_string(text.size()) + " chars, need " +
                          std::to_string(kMinCorpusChars) + "): " + path.string());
  Corpus c;
  c.tokens = encode_text(text, vocab);
  c.eval_offset = static_cast<std::size_t>(static_cast<double>(c.tokens.size()) * (1.0 - eval_fraction));
  return c;
}

/// Observer of linear-layer inputs during a forward pass. `input` is (T x in).
template <typename Scalar>
using LinearInputObserver = std::function<void(
    const std::string& name,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& input)>;

template <typename Scalar>
class ProxyModel {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  struct Block {
    Mat q, k, v, o, gate, up, down;
  };

  ProxyArch arch;
  Mat tok_emb;
  Mat pos_emb;
  std::vector<Block> blocks;
  Mat lm_head;

  ProxyModel() = default;

  explicit ProxyModel(const ProxyArch& a) : arch(a) {
    arch.validate();
    const int d = arch.dim;
    const int h = arch.mlp_hidden;
    tok_emb = Mat::Zero(arch.vocab, d);
    pos_emb = Mat::Zero(arch.context, d);
    lm_head = Mat::Zero(arch.vocab, d);
    blocks.resize(static_cast<std::size_t>(arch.layers));
    for (auto& b : blocks) {
      b.q = b.k = b.v = b.o = Mat::Zero(d, d);
      b.gate = b.up = Mat::Zero(h, d);
      b.down = Mat::Zero(d, h);
    }
  }

  static ProxyModel random(const ProxyArch& a, std::uint64_t seed) {
    ProxyModel m(a);
    std::mt19937_64 rng(seed);
    const auto fill = [&rng](Mat& w, double stddev) {
      for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = static_cast<Scalar>(stddev * standard_normal(rng));
    };
    const double d = a.dim;
    const double residual = 1.0 / std::sqrt(2.0 * a.layers);
    fill(m.tok_emb, 0.1);
    fill(m.pos_emb, 0.02);
    for (auto& b : m.blocks) {
      fill(b.q, 1.0 / std::sqrt(d));
      fill(b.k, 1.0 / std::sqrt(d));
      fill(b.v, 1.0 / std::sqrt(d));
      fill(b.o, residual / std::sqrt(d));
      fill(b.gate, 1.0 / std::sqrt(d));
      fill(b.up, 1.0 / std::sqrt(d));
      fill(b.down, residual / std::sqrt(static_cast<double>(a.mlp_hidden)));
    }
    fill(m.lm_head, 0.02);
    return m;
  }

  ProxyModel zeros_like() const { return ProxyModel(arch); }

  /// (name, matrix) pairs in canonical store order.
  std::vector<std::pair<std::string, Mat*>> named_params() {
    std::vector<std::pair<std::string, Mat*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& b = blocks[i];
      out.emplace_back(p + "attn.q", &b.q);
      out.emplace_back(p + "attn.k", &b.k);
      out.emplace_back(p + "attn.v", &b.v);
      out.emplace_back(p + "attn.o", &b.o);
      out.emplace_back(p + "mlp.gate", &b.gate);
      out.emplace_back(p + "mlp.up", &b.up);
      out.emplace_back(p + "mlp.down", &b.down);
    }
    out.emplace_back("lm_head", &lm_head);
    return out;
  }

  std::vector<std::pair<std::string, const Mat*>> named_params() const {
    std::vector<std::pair<std::string, const Mat*>> out;
    for (auto& [name, ptr] : const_cast<ProxyModel*>(this)->named_params()) out.emplace_back(name, ptr);
    return out;
  }

  Mat* param(const std::string& name) {
    for (auto& [n, p] : named_params())
      if (n == name) return p;
    return nullptr;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : named_params()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  ModelStore to_store() const {
    ModelStore store;
    for (const auto& [name, p] : named_params()) {
      Tensor t;
      t.name = name;
      t.rows = static_cast<std::size_t>(p->rows());
      t.cols = static_cast<std::size_t>(p->cols());
      t.data.resize(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<float>(p->data()[i]);
      store.tensors.push_back(std::move(t));
    }
    return store;
  }

  static ProxyModel from_store(const ModelStore& store, const ProxyArch& a) {
    ProxyModel m(a);
    for (auto& [name, p] : m.named_params()) {
      const Tensor* t = store.find(name);
      if (!t) throw ValidationError("store is missing proxy tensor " + name);
      if (t->rows != static_cast<std::size_t>(p->rows()) || t->cols != static_cast<std::size_t>(p->cols()))
        throw ValidationError("shape mismatch for proxy tensor " + name);
      for (std::size_t i = 0; i < t->size(); ++i) p->data()[i] = static_cast<Scalar>(t->data[i]);
    }
    return m;
  }

  /// Summed next-token cross-entropy over `length` targets: inputs tokens[0..length),
  /// targets tokens[1..length]. Accumulates parameter gradients of the sum into `grads` when
  /// non-null. `observer` sees every linear layer's input.
  double sequence_loss(const int* tokens, int length, ProxyModel* grads = nullptr,
                       const LinearInputObserver<Scalar>* observer = nullptr) const;

 private:
  static constexpr Scalar kNormEps = Scalar(1e-5);

  struct LayerCache {
    Mat x_in, n1, q, k, v, attn, x_mid, n2, gate, up, act;
    RowVec r1, r2;
    std::vector<Mat> probs;  // per head, T x T
  };

  static void rms_norm(const Mat& x, Mat& y, RowVec& inv_rms) {
    const auto T = x.rows();
    const auto d = x.cols();
    y.resize(T, d);
    inv_rms.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar ms = x.row(t).squaredNorm() / static_cast<Scalar>(d);
      inv_rms(t) = Scalar(1) / std::sqrt(ms + kNormEps);
      y.row(t) = x.row(t) * inv_rms(t);
    }
  }

  static void rms_norm_backward(const Mat& x, const RowVec& inv_rms, const Mat& dy, Mat& dx) {
    const auto T = x.rows();
    const auto d = static_cast<Scalar>(x.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar r = inv_rms(t);
      const Scalar dot = x.row(t).dot(dy.row(t));
      dx.row(t) += r * dy.row(t) - (r * r * r * dot / d) * x.row(t);
    }
  }

  static Scalar sigmoid(Scalar z) { return Scalar(1) / (Scalar(1) + std::exp(-z)); }
};

template <typename Scalar>
double ProxyModel<Scalar>::sequence_loss(const int* tokens, int length, ProxyModel* grads,
                                         const LinearInputObserver<Scalar>* observer) const {
  const int T = length;
  const int d = arch.dim;
  const int heads = arch.heads;
  const int hd = d / heads;
  const Scalar att_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  if (T < 1 || T > arch.context) throw ValidationError("sequence length outside [1, context]");

  Mat x(T, d);
  for (int t = 0; t < T; ++t) x.row(t) = tok_emb.row(tokens[t]) + pos_emb.row(t);

  const bool train = grads != nullptr;
  std::vector<LayerCache> caches(blocks.size());
  for (std::size_t li = 0; li < blocks.size(); ++li) {
    const Block& b = blocks[li];
    LayerCache& c = caches[li];
    const std::string prefix = "layers." + std::to_string(li) + ".";
    c.x_in = x;
    rms_norm(x, c.n1, c.r1);
    if (observer) {
      (*observer)(prefix + "attn.q", c.n1);
      (*observer)(prefix + "attn.k", c.n1);
      (*observer)(prefix + "attn.v", c.n1);
    }
    c.q.noalias() = c.n1 * b.q.transpose();
    c.k.noalias() = c.n1 * b.k.transpose();
    c.v.noalias() = c.n1 * b.v.transpose();
    c.attn = Mat::Zero(T, d);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Mat s = c.q.middleCols(h * hd, hd) * c.k.middleCols(h * hd, hd).transpose() * att_scale;
      Mat& p = c.probs[static_cast<std::size_t>(h)];
      p = Mat::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        Scalar mx = s(i, 0);
        for (int j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
        Scalar z = 0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(s(i, j) - mx);
          z += p(i, j);
        }
        for (int j = 0; j <= i; ++j) p(i, j) /= z;
      }
      c.attn.middleCols(h * hd, hd).noalias() = p * c.v.middleCols(h * hd, hd);
    }
    if (observer) (*observer)(prefix + "attn.o", c.attn);
    x.noalias() += c.attn * b.o.transpose();
    c.x_mid = x;
    rms_norm(x, c.n2, c.r2);
    if (observer) {
      (*observer)(prefix + "mlp.gate", c.n2);
      (*observer)(prefix + "mlp.up", c.n2);
    }
    c.gate.noalias() = c.n2 * b.gate.transpose();
    c.up.noalias() = c.n2 * b.up.transpose();
    c.act.resize(T, arch.mlp_hidden);
    for (Eigen::Index i = 0; i < c.act.size(); ++i) {
      const Scalar g = c.gate.data()[i];
      c.act.data()[i] = g * sigmoid(g) * c.up.data()[i];
    }
    if (observer) (*observer)(prefix + "mlp.down", c.act);
    x.noalias() += c.act * b.down.transpose();
  }

  Mat nf;
  RowVec rf;
  rms_norm(x, nf, rf);
  Mat logits = nf * lm_head.transpose();

  double loss = 0.0;
  Mat dlogits(T, arch.vocab);
  for (int t = 0; t < T; ++t) {
    const Scalar mx = logits.row(t).maxCoeff();
    Scalar z = 0;
    for (int j = 0; j < arch.vocab; ++j) z += std::exp(logits(t, j) - mx);
    const Scalar lse = mx + std::log(z);
    const int target = tokens[t + 1];
    loss += static_cast<double>(lse - logits(t, target));
    if (train) {
      for (int j = 0; j < arch.vocab; ++j) dlogits(t, j) = std::exp(logits(t, j) - lse);
      dlogits(t, target) -= Scalar(1);
    }
  }
  if (!train) return loss;

  // Backward pass.
  grads->lm_head.noalias() += dlogits.transpose() * nf;
  Mat dnf = dlogits * lm_head;
  Mat dx = Mat::Zero(T, d);
  rms_norm_backward(x, rf, dnf, dx);

  for (std::size_t li = blocks.size(); li-- > 0;) {
    const Block& b = blocks[li];
    Block& gb = grads->blocks[li];
    const LayerCache& c = caches[li];

    // MLP: x_out = x_mid + act * down^T
    gb.down.noalias() += dx.transpose() * c.act;
    Mat dact = dx * b.down;
    Mat dgate(T, arch.mlp_hidden);
    Mat dup(T, arch.mlp_hidden);
    for (Eigen::Index i = 0; i < dact.size(); ++i) {
      const Scalar g = c.gate.data()[i];
      const Scalar sg = sigmoid(g);
      const Scalar silu = g * sg;
      dup.data()[i] = dact.data()[i] * silu;
      dgate.data()[i] = dact.data()[i] * c.up.data()[i] * sg * (Scalar(1) + g * (Scalar(1) - sg));
    }
    gb.gate.noalias() += dgate.transpose() * c.n2;
    gb.up.noalias() += dup.transpose() * c.n2;
    Mat dn2 = dgate * b.gate;
    dn2.noalias() += dup * b.up;
    rms_norm_backward(c.x_mid, c.r2, dn2, dx);

    // Attention: x_mid = x_in + attn * o^T
    gb.o.noalias() += dx.transpose() * c.attn;
    Mat dattn = dx * b.o;
    Mat dq = Mat::Zero(T, d);
    Mat dk = Mat::Zero(T, d);
    Mat dv = Mat::Zero(T, d);
    for (int h = 0; h < heads; ++h) {
      const Mat& p = c.probs[static_cast<std::size_t>(h)];
      const auto dah = dattn.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd).noalias() += p.transpose() * dah;
      Mat dp = dah * c.v.middleCols(h * hd, hd).transpose();
      Mat ds = Mat::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        Scalar dot = 0;
        for (int j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
        for (int j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * att_scale;
      }
      dq.middleCols(h * hd, hd).noalias() += ds * c.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() += ds.transpose() * c.q.middleCols(h * hd, hd);
    }
    gb.q.noalias() += dq.transpose() * c.n1;
    gb.k.noalias() += dk.transpose() * c.n1;
    gb.v.noalias() += dv.transpose() * c.n1;
    Mat dn1 = dq * b.q;
    dn1.noalias() += dk * b.k;
    dn1.noalias() += dv * b.v;
    rms_norm_backward(c.x_in, c.r1, dn1, dx);
  }

  for (int t = 0; t < T; ++t) {
    grads->tok_emb.row(tokens[t]) += dx.row(t);
    grads->pos_emb.row(t) += dx.row(t);
  }
  return loss;
}

using FloatProxy = ProxyModel<float>;

/// Start offsets of non-overlapping windows covering up to `max_targets` held-out targets.
/// Each window spans context + 1 tokens and scores `context` targets.
inline std::vector<std::size_t> eval_windows(const Corpus& corpus, int context, std::size_t max_targets) {
  std::vector<std::size_t> starts;
  const auto ctx = static_cast<std::size_t>(context);
  for (std::size_t s = corpus.eval_offset; s + ctx + 1 <= corpus.tokens.size(); s += ctx) {
    if ((starts.size() + 1) * ctx > max_targets) break;
    starts.push_back(s);
  }
  return starts;
}

/// Seeded random windows from the held-out region.
inline std::vector<std::size_t> random_eval_windows(const Corpus& corpus, int context, std::size_t count,
                                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto ctx = static_cast<std::size_t>(context);
  const std::size_t span = corpus.eval_size() - ctx;
  std::vector<std::size_t> starts(count);
  for (auto& s : starts) s = corpus.eval_offset + uniform_index(rng, span);
  return starts;
}

/// Seeded random windows from the training region.
inline std::vector<std::size_t> train_windows(const Corpus& corpus, int context, std::size_t count,
                                              std::mt19937_64& rng) {
  const auto ctx = static_cast<std::size_t>(context);
  const std::size_t span = corpus.train_size() - ctx;
  std::vector<std::size_t> starts(count);
  for (auto& s : starts) s = uniform_index(rng, span);
  return starts;
}

/// Mean per-target cross-entropy (nats) over the given windows.
template <typename Scalar>
double mean_loss(const ProxyModel<Scalar>& model, const Corpus& corpus, const std::vector<std::size_t>& starts) {
  if (starts.empty()) throw ValidationError("no evaluation windows");
  double total = 0.0;
  for (std::size_t s : starts) total += model.sequence_loss(corpus.tokens.data() + s, model.arch.context);
  return total / static_cast<double>(starts.size() * static_cast<std::size_t>(model.arch.context));
}

struct TrainConfig {
  std::uint64_t seed = 42;
  int steps = 3000;
  int batch = 16;
  double lr = 3e-3;
  double loss_bar_fraction = 0.7;  // held-out loss must end below fraction * ln(vocab)
  std::size_t eval_targets = 8192;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double loss_bar = 0.0;
  int steps = 0;
};

/// Trains a proxy from scratch on the corpus' training split. Throws RuntimeFailure when the
/// held-out loss does not reach the bar.
inline FloatProxy train_proxy(const Corpus& corpus, const ProxyArch& arch, const TrainConfig& cfg,
                              TrainReport* report = nullptr,
                              const std::function<void(int, double)>& progress = {}) {
  arch.validate();
  if (cfg.steps < 0 || cfg.batch < 1) throw ValidationError("train steps must be >= 0 and batch >= 1");
  FloatProxy model = FloatProxy::random(arch, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto held_out = eval_windows(corpus, arch.context, cfg.eval_targets);

  TrainReport rep;
  rep.loss_bar = cfg.loss_bar_fraction * std::log(static_cast<double>(arch.vocab));
  rep.initial_loss = mean_loss(model, corpus, held_out);

  AdamState adam;
  adam.lr = cfg.lr;
  adam.beta2 = 0.99;
  std::vector<float> flat_params;
  std::vector<float> flat_grads;
  for (int step = 0; step < cfg.steps; ++step) {
    FloatProxy grads = model.zeros_like();
    double batch_loss = 0.0;
    for (std::size_t s : train_windows(corpus, arch.context, static_cast<std::size_t>(cfg.batch), rng))
      batch_loss += model.sequence_loss(corpus.tokens.data() + s, arch.context, &grads);
    const float norm = 1.0f / static_cast<float>(cfg.batch * arch.context);
    // Cosine decay to 10% of the base rate.
    const double progress_frac = static_cast<double>(step) / std::max(1, cfg.steps);
    adam.lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(M_PI * progress_frac)));

    flat_params.clear();
    flat_grads.clear();
    auto params = model.named_params();
    auto gparams = grads.named_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* p = params[i].second;
      const auto* g = gparams[i].second;
      flat_params.insert(flat_params.end(), p->data(), p->data() + p->size());
      for (Eigen::Index k = 0; k < g->size(); ++k) flat_grads.push_back(g->data()[k] * norm);
    }
    adam.step(flat_params.data(), flat_grads.data(), flat_params.size());
    std::size_t offset = 0;
    for (auto& [name, p] : params) {
      std::copy_n(flat_params.data() + offset, p->size(), p->data());
      offset += static_cast<std::size_t>(p->size());
    }
    if (progress) progress(step, batch_loss / static_cast<double>(cfg.batch * arch.context));
  }
  rep.steps = cfg.steps;
  rep.final_loss = mean_loss(model, corpus, held_out);
  if (report) *report = rep;
  if (!(rep.final_loss < rep.loss_bar)) {
    std::ostringstream msg;
    msg << "proxy training did not reach the loss bar: held-out loss " << rep.final_loss << " (initial "
        << rep.initial_loss << ") >= " << rep.loss_bar << " after " << cfg.steps << " steps";
    throw RuntimeFailure(msg.str());
  }
  return model;
}

/// Proxy metadata persisted next to the store manifest.
inline constexpr const char* kProxyMetaName = "proxy.json";

struct ProxyMeta {
  ProxyArch arch;
  std::string corpus;
  double eval_fraction = kDefaultEvalFraction;
  nlohmann::json training;
};

inline void save_proxy(const FloatProxy& model, const ProxyMeta& meta, const std::filesystem::path& dir) {
  save_model(model.to_store(), dir);
  nlohmann::json j;
  j["arch"] = meta.arch;
  j["alphabet"] = kAlphabet;
  j["corpus"] = meta.corpus;
  j["eval_fraction"] = meta.eval_fraction;
  j["training"] = meta.training;
  std::ofstream out(dir / kProxyMetaName, std::ios::trunc);
  out << j.dump(2) << "\n";
}

inline ProxyMeta load_proxy_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / kProxyMetaName);
  if (!in) throw LoadError("missing proxy metadata: " + (dir / kProxyMetaName).string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed proxy metadata: ") + e.what());
  }
  ProxyMeta meta;
  meta.arch = j.at("arch").get<ProxyArch>();
  meta.corpus = j.value("corpus", std::string());
  meta.eval_fraction = j.value("eval_fraction", kDefaultEvalFraction);
  meta.training = j.value("training", nlohmann::json::object());
  return meta;
}

}  // namespace windq
