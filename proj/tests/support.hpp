#pragma once

// Shared helpers for the test binaries: scratch directories, synthetic stores and units.

#include "windq/windq.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace windq::testing {

/// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("windq_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Tensor gaussian_tensor(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                              double sd = 1.0) {
  Tensor t;
  t.name = name;
  t.rows = rows;
  t.cols = cols;
  t.data.resize(rows * cols);
  for (auto& v : t.data) v = static_cast<float>(sd * standard_normal(rng));
  return t;
}

/// A small store shaped like a one-block transformer, plus an unquantized embedding.
inline ModelStore synthetic_store(std::uint64_t seed, std::size_t dim = 16, std::size_t hidden = 40) {
  std::mt19937_64 rng(seed);
  ModelStore s;
  s.tensors.push_back(gaussian_tensor("embed", 8, dim, rng));
  for (const char* p : {"q", "k", "v", "o"})
    s.tensors.push_back(gaussian_tensor(std::string("layers.0.attn.") + p, dim, dim, rng, 0.2));
  s.tensors.push_back(gaussian_tensor("layers.0.mlp.gate", hidden, dim, rng, 0.2));
  s.tensors.push_back(gaussian_tensor("layers.0.mlp.up", hidden, dim, rng, 0.2));
  s.tensors.push_back(gaussian_tensor("layers.0.mlp.down", dim, hidden, rng, 0.2));
  return s;
}

/// Positive random activation scales for every tensor of a store.
inline ActivationScales synthetic_scales(const ModelStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ActivationScales scales;
  for (const auto& t : store.tensors) {
    auto& v = scales[t.name];
    v.resize(t.cols);
    for (auto& x : v) x = 0.1 + uniform01(rng);
  }
  return scales;
}

inline WeightUnit gaussian_unit(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  WeightUnit u;
  u.tensor_name = "layers.0.mlp.up";
  u.is_mlp = true;
  u.col_end = cols;
  u.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < u.weights.size(); ++i) u.weights.data()[i] = sd * standard_normal(rng);
  return u;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return gaussian_unit(rows, cols, rng).weights;
}

}  // namespace windq::testing
