#pragma once

// Model store I/O and column-chunk partitioning.
//
// A store is a directory holding `manifest.json` plus one raw little-endian f32 row-major
// file per tensor.

#include "windq/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace windq {

static_assert(std::endian::native == std::endian::little, "store I/O assumes a little-endian host");

struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;  // row-major, rows * cols

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return rows * cols; }
};

struct ModelStore {
  std::vector<Tensor> tensors;  // manifest order

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  Tensor* find(std::string_view name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const Tensor& get(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw ValidationError("tensor not found in store: " + std::string(name));
  }
};

inline constexpr const char* kManifestName = "manifest.json";

inline std::string tensor_file_name(const std::string& name) { return name + ".bin"; }

inline ModelStore load_model(const std::filesystem::path& store_dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = store_dir / kManifestName;
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("missing manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw LoadError("manifest has no tensor list: " + manifest_path.string());

  ModelStore store;
  std::set<std::string> seen;
  for (const auto& entry : manifest["tensors"]) {
    Tensor t;
    std::string file;
    try {
      t.name = entry.at("name").get<std::string>();
      t.rows = entry.at("rows").get<std::size_t>();
      t.cols = entry.at("cols").get<std::size_t>();
      file = entry.at("file").get<std::string>();
      if (entry.value("dtype", std::string("f32")) != "f32")
        throw LoadError("unsupported dtype for tensor " + t.name);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("bad manifest entry " + entry.dump() + ": " + e.what());
    }
    if (!seen.insert(t.name).second) throw LoadError("duplicate tensor name: " + t.name);
    if (t.rows == 0 || t.cols == 0) throw LoadError("empty tensor: " + t.name);

    const fs::path path = store_dir / file;
    std::error_code ec;
    const auto bytes = fs::file_size(path, ec);
    if (ec) throw LoadError("missing tensor file for " + t.name + ": " + path.string());
    if (bytes != t.size() * sizeof(float))
      throw LoadError("size mismatch for " + t.name + ": expected " +
                      std::to_string(t.size() * sizeof(float)) + " bytes, found " +
                      std::to_string(bytes));
    t.data.resize(t.size());
    std::ifstream bin(path, std::ios::binary);
    bin.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw LoadError("failed reading tensor file for " + t.name);
    store.tensors.push_back(std::move(t));
  }
  return store;
}

inline void save_model(const ModelStore& store, const std::filesystem::path& store_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(store_dir);
  nlohmann::json manifest;
  manifest["format"] = "windq-store";
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : store.tensors) {
    if (t.data.size() != t.size()) throw ValidationError("tensor data size mismatch: " + t.name);
    const std::string file = tensor_file_name(t.name);
    manifest["tensors"].push_back(
        {{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"file", file}, {"dtype", "f32"}});
    std::ofstream bin(store_dir / file, std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!bin) throw Error("failed writing tensor file for " + t.name);
  }
  std::ofstream out(store_dir / kManifestName, std::ios::trunc);
  out << manifest.dump(2) << "\n";
}

/// 64-bit FNV-1a over the concatenated tensor bytes in manifest order.
inline std::uint64_t model_hash(const ModelStore& store) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : store.tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
    for (std::size_t i = 0; i < t.data.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

/// Structural flags parsed from names of the form `layers.{i}.{attn|mlp}.{proj}`.
struct TensorRole {
  int layer_index = 0;
  bool is_attention = false;
  bool is_mlp = false;
  bool parsed = false;
};

inline TensorRole parse_tensor_name(std::string_view name) {
  TensorRole role;
  constexpr std::string_view prefix = "layers.";
  if (!name.starts_with(prefix)) return role;
  std::string_view rest = name.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos || dot == 0) return role;
  int index = 0;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + dot, index);
  if (ec != std::errc{} || ptr != rest.data() + dot) return role;
  rest = rest.substr(dot + 1);
  const auto dot2 = rest.find('.');
  if (dot2 == std::string_view::npos || dot2 + 1 >= rest.size()) return role;
  const std::string_view block = rest.substr(0, dot2);
  if (block != "attn" && block != "mlp") return role;
  role.layer_index = index;
  role.parsed = true;
  role.is_attention = name.find("attn") != std::string_view::npos;
  role.is_mlp = name.find("mlp") != std::string_view::npos;
  return role;
}

/// One column chunk of one weight matrix.
struct WeightUnit {
  std::string tensor_name;
  int layer_index = 0;
  bool is_attention = false;
  bool is_mlp = false;
  std::size_t chunk_index = 0;
  std::size_t col_start = 0;
  std::size_t col_end = 0;
  Matrix weights;  // rows x (col_end - col_start)

  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t width() const { return col_end - col_start; }
  std::size_t n() const { return rows() * width(); }
  std::string id() const { return tensor_name + "#" + std::to_string(chunk_index); }
};

/// Tensors included by default: the transformer linear layers (`layers.*`).
inline bool is_quantizable_name(std::string_view name) { return parse_tensor_name(name).parsed; }

inline std::vector<WeightUnit> partition_units(
    const ModelStore& store, std::size_t chunk_size,
    const std::function<bool(std::string_view)>& include = [](std::string_view) { return true; }) {
  if (chunk_size == 0) throw ValidationError("chunk size must be >= 1");
  std::vector<WeightUnit> units;
  for (const auto& t : store.tensors) {
    if (!include(t.name)) continue;
    const TensorRole role = parse_tensor_name(t.name);
    for (std::size_t start = 0, chunk = 0; start < t.cols; start += chunk_size, ++chunk) {
      WeightUnit u;
      u.tensor_name = t.name;
      u.layer_index = role.layer_index;
      u.is_attention = role.is_attention;
      u.is_mlp = role.is_mlp;
      u.chunk_index = chunk;
      u.col_start = start;
      u.col_end = std::min(t.cols, start + chunk_size);
      u.weights.resize(static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(u.width()));
      for (std::size_t r = 0; r < t.rows; ++r)
        for (std::size_t c = u.col_start; c < u.col_end; ++c)
          u.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - start)) = t.at(r, c);
      units.push_back(std::move(u));
    }
  }
  std::stable_sort(units.begin(), units.end(), [](const WeightUnit& a, const WeightUnit& b) {
    if (a.layer_index != b.layer_index) return a.layer_index < b.layer_index;
    if (a.tensor_name != b.tensor_name) return a.tensor_name < b.tensor_name;
    return a.chunk_index < b.chunk_index;
  });
  return units;
}

struct WeightStats {
  double mean = 0.0;
  double std = 0.0;
  double abs_mean = 0.0;
  double sparsity = 0.0;
  double outlier_frac = 0.0;
};

inline constexpr double kSparsityEpsilon = 1e-6;

/// Nearest-rank percentile of a sorted ascending sequence.
inline double nearest_rank(const std::vector<double>& sorted, double pct) {
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline WeightStats unit_stats(const WeightUnit& unit) {
  const auto n = unit.n();
  if (n == 0) throw ValidationError("unit_stats on an empty unit: " + unit.id());
  const double* w = unit.weights.data();
  const double inv_n = 1.0 / static_cast<double>(n);

  WeightStats s;
  std::vector<double> mags(n);
  std::size_t zeros = 0;
  double sum = 0.0;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += w[i];
    mags[i] = std::abs(w[i]);
    abs_sum += mags[i];
    if (mags[i] < kSparsityEpsilon) ++zeros;
  }
  s.mean = sum * inv_n;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (w[i] - s.mean) * (w[i] - s.mean);
  s.std = std::sqrt(var * inv_n);
  s.abs_mean = abs_sum * inv_n;
  s.sparsity = static_cast<double>(zeros) * inv_n;

  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  const double cut = 0.5 * nearest_rank(sorted, 99.0);
  std::size_t outliers = 0;
  for (double m : mags)
    if (m > cut) ++outliers;
  s.outlier_frac = static_cast<double>(outliers) * inv_n;
  return s;
}

}  // namespace windq
