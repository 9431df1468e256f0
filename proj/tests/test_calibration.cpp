#include "support.hpp"

#include <gtest/gtest.h>

using namespace windq;
using windq::testing::gaussian_unit;

namespace {

ProxyArch tiny_arch() {
  ProxyArch a;
  a.dim = 16;
  a.layers = 1;
  a.heads = 2;
  a.context = 8;
  a.mlp_hidden = 32;
  return a;
}

Corpus tiny_corpus(std::uint64_t seed, std::size_t n = 400) {
  std::mt19937_64 rng(seed);
  Corpus c;
  c.tokens.resize(n);
  for (auto& t : c.tokens) t = static_cast<int>(uniform_index(rng, 64));
  c.eval_offset = n * 9 / 10;
  return c;
}

}  // namespace

TEST(Scales, MatchTwoPassReference) {
  const FloatProxy model = FloatProxy::random(tiny_arch(), 3);
  const Corpus corpus = tiny_corpus(5);
  const std::vector<std::size_t> windows = {0, 17, 101, 250};
  const ActivationScales scales = collect_activation_scales(model, corpus, windows);

  // Reference: record every input row first, then average.
  std::map<std::string, std::vector<std::vector<double>>> rows;
  const LinearInputObserver<float> record = [&rows](const std::string& name, const auto& input) {
    for (Eigen::Index t = 0; t < input.rows(); ++t) {
      std::vector<double> r(static_cast<std::size_t>(input.cols()));
      for (Eigen::Index j = 0; j < input.cols(); ++j) r[static_cast<std::size_t>(j)] = static_cast<double>(input(t, j));
      rows[name].push_back(std::move(r));
    }
  };
  for (std::size_t s : windows) model.sequence_loss(corpus.tokens.data() + s, model.arch.context, nullptr, &record);

  ASSERT_EQ(scales.size(), rows.size());
  for (const auto& [name, rs] : rows) {
    const auto& got = scales.at(name);
    ASSERT_EQ(got.size(), rs.front().size()) << name;
    for (std::size_t j = 0; j < got.size(); ++j) {
      double sum = 0.0;
      for (const auto& r : rs) sum += std::abs(r[j]);
      EXPECT_NEAR(got[j], sum / static_cast<double>(rs.size()), 1e-10) << name << "[" << j << "]";
      EXPECT_GE(got[j], 0.0);
    }
  }
  // Every linear layer of the block is observed, with its input width.
  for (const auto& [name, p] : model.named_params())
    if (is_quantizable_name(name)) {
      EXPECT_EQ(scales.at(name).size(), static_cast<std::size_t>(p->cols())) << name;
    }
}

TEST(Scales, EmptyBatchAndOverrunAreErrors) {
  const FloatProxy model = FloatProxy::random(tiny_arch(), 3);
  const Corpus corpus = tiny_corpus(5);
  EXPECT_THROW(collect_activation_scales(model, corpus, {}), ValidationError);
  EXPECT_THROW(collect_activation_scales(model, corpus, {corpus.tokens.size() - 3}), ValidationError);
}

TEST(Scales, ValidationAgainstStore) {
  const auto store = windq::testing::synthetic_store(1);
  auto scales = windq::testing::synthetic_scales(store, 2);
  EXPECT_NO_THROW(validate_scales(scales, store, is_quantizable_name));
  scales.erase("embed");  // not quantizable, not needed
  EXPECT_NO_THROW(validate_scales(scales, store, is_quantizable_name));
  scales["layers.0.attn.q"].pop_back();
  EXPECT_THROW(validate_scales(scales, store, is_quantizable_name), ValidationError);
  scales.erase("layers.0.attn.q");
  EXPECT_THROW(validate_scales(scales, store, is_quantizable_name), ValidationError);
}

TEST(Saliency, ElementwiseProduct) {
  std::mt19937_64 rng(11);
  WeightUnit u = gaussian_unit(5, 6, rng);
  u.col_start = 2;
  u.col_end = 8;
  ActivationScales scales;
  scales[u.tensor_name].resize(10);
  for (auto& s : scales[u.tensor_name]) s = uniform01(rng);
  scales[u.tensor_name][4] = 0.0;
  const Matrix sal = saliency(u, scales);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 6; ++j)
      EXPECT_EQ(sal(i, j), std::abs(u.weights(i, j)) * scales[u.tensor_name][static_cast<std::size_t>(j) + 2]);
  EXPECT_EQ(sal.col(2).norm(), 0.0);

  for (auto& s : scales[u.tensor_name]) s = 1.0;
  EXPECT_EQ(saliency(u, scales), u.weights.cwiseAbs());
  scales.clear();
  EXPECT_THROW(saliency(u, scales), ValidationError);
}

TEST(Protection, CountsAndEdgeRates) {
  std::mt19937_64 rng(4);
  const WeightUnit u = gaussian_unit(16, 16, rng);
  const Matrix sal = u.weights.cwiseAbs();
  EXPECT_EQ(select_protected(u, sal, 0.0).count(), 0u);
  EXPECT_EQ(select_protected(u, sal, 0.03).count(), 8u);  // round(7.68)
  EXPECT_EQ(select_protected(u, sal, 1.0).count(), 256u);
  EXPECT_THROW(select_protected(u, sal, 1.5), ValidationError);
  EXPECT_THROW(select_protected(u, sal, -0.1), ValidationError);
  for (double r : {0.01, 0.02, 0.05, 0.5})
    EXPECT_EQ(select_protected(u, sal, r).count(), static_cast<std::size_t>(std::llround(r * 256)));
}

TEST(Protection, DominantElementIsSelected) {
  std::mt19937_64 rng(5);
  WeightUnit u = gaussian_unit(4, 10, rng, 1e-3);
  u.weights(2, 7) = 100.0;
  const auto p = select_protected(u, u.weights.cwiseAbs(), 0.025);  // round(1.0) = 1
  ASSERT_EQ(p.count(), 1u);
  EXPECT_EQ(p.indices[0], 2u * 10 + 7);
  EXPECT_DOUBLE_EQ(p.int8_scale, 100.0 / 127.0);
}

TEST(Protection, MatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const WeightUnit u = gaussian_unit(16, 16, rng);
    Matrix sal = u.weights.cwiseAbs();
    for (Eigen::Index i = 0; i < sal.size(); i += 5) sal.data()[i] = 0.5;  // ties
    const auto p = select_protected(u, sal, 0.03);
    std::vector<std::size_t> order(256);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sal.data()[a] > sal.data()[b]; });
    std::vector<std::size_t> want(order.begin(), order.begin() + 8);
    std::sort(want.begin(), want.end());
    EXPECT_EQ(p.indices, want);
    // Scaling every saliency by a positive constant leaves the selection unchanged.
    EXPECT_EQ(select_protected(u, sal * 3.7, 0.03).indices, p.indices);
  }
}

TEST(Protection, ZeroUnitUsesUnitScale) {
  WeightUnit u;
  u.col_end = 4;
  u.weights = Matrix::Zero(2, 4);
  const auto p = select_protected(u, u.weights, 0.5);
  EXPECT_EQ(p.count(), 4u);
  EXPECT_EQ(p.int8_scale, 1.0);
}

TEST(Int8, OnGridAndClamp) {
  WeightUnit u;
  u.col_end = 3;
  u.weights.resize(1, 3);
  const double s = 0.25;
  u.weights << 5 * s, 200 * s, -300 * s;
  ProtectionSet p;
  p.indices = {0, 1, 2};
  p.int8_scale = s;
  const auto q = quantize_protected(u, p);
  EXPECT_EQ(q.codes[0], 5);
  EXPECT_EQ(q.values[0], 5 * s);
  EXPECT_EQ(q.codes[1], 127);
  EXPECT_EQ(q.codes[2], -127);
}

TEST(Int8, HalfStepBound) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    std::mt19937_64 rng(seed);
    const WeightUnit u = gaussian_unit(4, 8, rng);
    const double rate = 0.05 + 0.9 * uniform01(rng);
    Matrix sal = u.weights.cwiseAbs();
    for (Eigen::Index i = 0; i < sal.size(); ++i) sal.data()[i] *= uniform01(rng);
    const auto p = select_protected(u, sal, rate);
    const auto q = quantize_protected(u, p);
    for (std::size_t k = 0; k < p.count(); ++k) {
      const double w = u.weights.data()[p.indices[k]];
      ASSERT_LE(std::abs(w), 127.0 * p.int8_scale * (1 + 1e-12));  // the max defines the scale
      EXPECT_LE(std::abs(w - q.values[k]), 0.5 * p.int8_scale * (1 + 1e-12));
    }
  }
}

TEST(ScalesFile, RoundTrip) {
  windq::testing::ScratchDir dir("scales");
  const auto store = windq::testing::synthetic_store(8);
  const auto scales = windq::testing::synthetic_scales(store, 9);
  save_scales(scales, dir / "s.json");
  EXPECT_EQ(load_scales(dir / "s.json"), scales);
  std::ofstream(dir / "bad.json") << "{\"a\": [1, -2]}";
  EXPECT_THROW(load_scales(dir / "bad.json"), ValidationError);
}
