#pragma once

// Activation-scale calibration, saliency and INT8 salient-weight protection.

#include "windq/common.hpp"
#include "windq/proxy_model.hpp"
#include "windq/tensor_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace windq {

/// Per-input-channel mean absolute activation, keyed by tensor name.
using ActivationScales = std::map<std::string, std::vector<double>>;

/// Mean |input activation| per input channel of every linear layer over the calibration windows.
template <typename Scalar>
ActivationScales collect_activation_scales(const ProxyModel<Scalar>& model, const Corpus& corpus,
                                           const std::vector<std::size_t>& window_starts) {
  if (window_starts.empty()) throw ValidationError("calibration batch is empty");
  std::map<std::string, std::vector<double>> sums;
  std::size_t positions = 0;
  const LinearInputObserver<Scalar> observer = [&sums](const std::string& name, const auto& input) {
    auto& acc = sums[name];
    if (acc.empty()) acc.assign(static_cast<std::size_t>(input.cols()), 0.0);
    for (Eigen::Index t = 0; t < input.rows(); ++t)
      for (Eigen::Index j = 0; j < input.cols(); ++j)
        acc[static_cast<std::size_t>(j)] += std::abs(static_cast<double>(input(t, j)));
  };
  const int ctx = model.arch.context;
  for (std::size_t s : window_starts) {
    if (s + static_cast<std::size_t>(ctx) + 1 > corpus.tokens.size())
      throw ValidationError("calibration window runs past the corpus end");
    model.sequence_loss(corpus.tokens.data() + s, ctx, nullptr, &observer);
    positions += static_cast<std::size_t>(ctx);
  }
  for (auto& [name, acc] : sums)
    for (auto& v : acc) v /= static_cast<double>(positions);
  return sums;
}

/// Checks that every tensor in `store` accepted by `include` has scales of matching length.
inline void validate_scales(const ActivationScales& scales, const ModelStore& store,
                            const std::function<bool(std::string_view)>& include) {
  for (const auto& t : store.tensors) {
    if (!include(t.name)) continue;
    const auto it = scales.find(t.name);
    if (it == scales.end()) throw ValidationError("no activation scales for tensor " + t.name);
    if (it->second.size() != t.cols)
      throw ValidationError("activation scale length mismatch for tensor " + t.name);
  }
}

inline void save_scales(const ActivationScales& scales, const std::filesystem::path& path) {
  nlohmann::json j = scales;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write scales file: " + path.string());
  out << j.dump() << "\n";
}

inline ActivationScales load_scales(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing scales file: " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    auto scales = j.get<ActivationScales>();
    for (const auto& [name, v] : scales)
      for (double x : v)
        if (!(x >= 0.0) || !std::isfinite(x)) throw LoadError("negative or non-finite scale for tensor " + name);
    return scales;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed scales file " + path.string() + ": " + e.what());
  }
}

inline const std::vector<double>& unit_scales(const WeightUnit& unit, const ActivationScales& scales) {
  const auto it = scales.find(unit.tensor_name);
  if (it == scales.end()) throw ValidationError("no activation scales for tensor " + unit.tensor_name);
  if (it->second.size() < unit.col_end)
    throw ValidationError("activation scales too short for unit " + unit.id());
  return it->second;
}

/// saliency(i, j) = |W(i, j)| * s(col_start + j)
inline Matrix saliency(const WeightUnit& unit, const ActivationScales& scales) {
  const auto& s = unit_scales(unit, scales);
  Matrix out(unit.weights.rows(), unit.weights.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = std::abs(unit.weights(i, j)) * s[unit.col_start + static_cast<std::size_t>(j)];
  return out;
}

/// Protected weights of one unit. Indices are flat row-major positions within the unit.
struct ProtectionSet {
  std::vector<std::size_t> indices;  // ascending
  double int8_scale = 1.0;

  std::size_t count() const { return indices.size(); }
};

/// round(rate * n), half away from zero.
inline std::size_t protected_count(double rate, std::size_t n) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("salient rate must lie in [0, 1]");
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

inline ProtectionSet select_protected(const WeightUnit& unit, const Matrix& sal, double rate) {
  const std::size_t n = unit.n();
  if (static_cast<std::size_t>(sal.size()) != n) throw ValidationError("saliency shape mismatch for " + unit.id());
  const std::size_t k = protected_count(rate, n);
  ProtectionSet p;
  if (k > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* s = sal.data();
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [s](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    p.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(p.indices.begin(), p.indices.end());
  }
  double max_abs = 0.0;
  for (std::size_t i : p.indices) max_abs = std::max(max_abs, std::abs(unit.weights.data()[i]));
  p.int8_scale = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
  return p;
}

struct ProtectedValues {
  std::vector<std::int8_t> codes;  // aligned with ProtectionSet::indices
  std::vector<double> values;
};

inline std::int8_t int8_code(double w, double scale) {
  return static_cast<std::int8_t>(std::clamp(std::round(w / scale), -127.0, 127.0));
}

inline ProtectedValues quantize_protected(const WeightUnit& unit, const ProtectionSet& protection) {
  ProtectedValues out;
  out.codes.reserve(protection.count());
  out.values.reserve(protection.count());
  for (std::size_t i : protection.indices) {
    if (i >= unit.n()) throw ValidationError("protected index out of range for " + unit.id());
    const std::int8_t code = int8_code(unit.weights.data()[i], protection.int8_scale);
    out.codes.push_back(code);
    out.values.push_back(static_cast<double>(code) * protection.int8_scale);
  }
  return out;
}

}  // namespace windq
