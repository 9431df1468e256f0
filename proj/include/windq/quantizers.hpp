#pragma once

// Per-unit weight quantizers with local scale fitting.
//
//   Binary1     codes {-1, +1}, scale = mean|w|, elastic sign binarization
//   Ternary158  codes {-1, 0, +1}, magnitude threshold tied to the scale
//   Two2        codes {-2, -1, 0, 1}, uniform kernel with asymmetric clamp
//   Lsq3/4/8    codes [-Q, Q], Q = 2^(b-1) - 1, uniform kernel
//
// Scales are refined by a few Adam steps on the squared reconstruction error (log-scale
// parameterization, straight-through rounding) keeping the best iterate.

#include "windq/calibration.hpp"
#include "windq/common.hpp"

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace windq {

enum class QuantizerKind { Binary1, Ternary158, Two2, Lsq3, Lsq4, Lsq8 };

inline constexpr std::array<QuantizerKind, 6> kQuantizerLadder = {
    QuantizerKind::Binary1, QuantizerKind::Ternary158, QuantizerKind::Two2,
    QuantizerKind::Lsq3,    QuantizerKind::Lsq4,       QuantizerKind::Lsq8};

/// Nominal bit-width in hundredths of a bit (1.58 bits -> 158).
inline constexpr int kind_centibits(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::Binary1: return 100;
    case QuantizerKind::Ternary158: return 158;
    case QuantizerKind::Two2: return 200;
    case QuantizerKind::Lsq3: return 300;
    case QuantizerKind::Lsq4: return 400;
    case QuantizerKind::Lsq8: return 800;
  }
  return 0;
}

inline constexpr double nominal_bits(QuantizerKind k) { return kind_centibits(k) / 100.0; }

inline constexpr std::string_view kind_name(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::Binary1: return "binary1";
    case QuantizerKind::Ternary158: return "ternary158";
    case QuantizerKind::Two2: return "two2";
    case QuantizerKind::Lsq3: return "lsq3";
    case QuantizerKind::Lsq4: return "lsq4";
    case QuantizerKind::Lsq8: return "lsq8";
  }
  return "?";
}

/// Inclusive code range. Binary additionally excludes 0.
struct LevelRange {
  int lo;
  int hi;
};

inline constexpr LevelRange level_range(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::Binary1: return {-1, 1};
    case QuantizerKind::Ternary158: return {-1, 1};
    case QuantizerKind::Two2: return {-2, 1};
    case QuantizerKind::Lsq3: return {-3, 3};
    case QuantizerKind::Lsq4: return {-7, 7};
    case QuantizerKind::Lsq8: return {-127, 127};
  }
  return {0, 0};
}

inline constexpr bool in_level_set(QuantizerKind k, int code) {
  const auto r = level_range(k);
  if (code < r.lo || code > r.hi) return false;
  return k != QuantizerKind::Binary1 || code != 0;
}

inline std::optional<QuantizerKind> next_rung(QuantizerKind k) {
  for (std::size_t i = 0; i + 1 < kQuantizerLadder.size(); ++i)
    if (kQuantizerLadder[i] == k) return kQuantizerLadder[i + 1];
  return std::nullopt;
}

struct FitOptions {
  int steps = 10;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double fallback_threshold = 0.95;
};

/// Fit of one operator to a flat list of weights.
struct ScalarFit {
  double scale = 1.0;
  std::vector<int> codes;
  double sq_error = 0.0;
  double init_scale = 1.0;
  double init_sq_error = 0.0;
  int steps = 0;
};

namespace detail {

inline double sq_norm(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return s;
}

inline double mean_abs(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += std::abs(x);
  return w.empty() ? 0.0 : s / static_cast<double>(w.size());
}

inline int uniform_code(double w, double s, int lo, int hi) {
  return static_cast<int>(std::clamp(std::round(w / s), static_cast<double>(lo), static_cast<double>(hi)));
}

inline double uniform_error(std::span<const double> w, double s, int lo, int hi) {
  double e = 0.0;
  for (double x : w) {
    const double r = s * uniform_code(x, s, lo, hi) - x;
    e += r * r;
  }
  return e;
}

inline int ternary_code(double w, double threshold) {
  if (std::abs(w) <= threshold) return 0;
  return w > 0 ? 1 : -1;
}

inline double ternary_error(std::span<const double> w, double s, double threshold) {
  double e = 0.0;
  for (double x : w) {
    const double r = s * ternary_code(x, threshold) - x;
    e += r * r;
  }
  return e;
}

/// Adam on u = log(scale). `grad_scale(s)` returns dE/ds; `error(s)` the objective.
template <typename GradFn, typename ErrFn>
void refine_log_scale(double& best_scale, double& best_error, int& steps_taken, const FitOptions& opt,
                      GradFn&& grad_scale, ErrFn&& error) {
  double u = std::log(best_scale);
  double m = 0.0;
  double v = 0.0;
  for (int t = 1; t <= opt.steps; ++t) {
    const double s = std::exp(u);
    const double g = grad_scale(s) * s;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
    const double mh = m / (1.0 - std::pow(opt.beta1, t));
    const double vh = v / (1.0 - std::pow(opt.beta2, t));
    u -= opt.lr * mh / (std::sqrt(vh) + 1e-12);
    steps_taken = t;
    const double s_new = std::exp(u);
    const double e = error(s_new);
    if (e < best_error) {
      best_error = e;
      best_scale = s_new;
    }
  }
}

}  // namespace detail

inline ScalarFit fit_binary_values(std::span<const double> w, const FitOptions& opt = {}) {
  ScalarFit f;
  f.codes.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) f.codes[i] = w[i] >= 0.0 ? 1 : -1;
  // mean|w| is the L2-optimal scale for sign codes.
  f.scale = f.init_scale = detail::mean_abs(w);
  const auto error = [&](double s) {
    double e = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double r = s * f.codes[i] - w[i];
      e += r * r;
    }
    return e;
  };
  f.sq_error = f.init_sq_error = error(f.scale);
  if (f.scale > 0.0) {
    const auto grad = [&](double s) {
      double g = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) g += 2.0 * (s * f.codes[i] - w[i]) * f.codes[i];
      return g;
    };
    detail::refine_log_scale(f.scale, f.sq_error, f.steps, opt, grad, error);
  }
  return f;
}

inline ScalarFit fit_ternary_values(std::span<const double> w, const FitOptions& opt = {}) {
  ScalarFit f;
  const double threshold0 = 0.75 * detail::mean_abs(w);
  double sum = 0.0;
  std::size_t count = 0;
  for (double x : w)
    if (std::abs(x) > threshold0) {
      sum += std::abs(x);
      ++count;
    }
  f.scale = f.init_scale = count > 0 ? sum / static_cast<double>(count) : 1.0;
  // The threshold moves with the scale at a fixed ratio.
  const double ratio = threshold0 / f.scale;
  const auto error = [&](double s) { return detail::ternary_error(w, s, ratio * s); };
  f.sq_error = f.init_sq_error = error(f.scale);
  if (count > 0) {
    const auto grad = [&](double s) {
      const double t = ratio * s;
      double g = 0.0;
      for (double x : w) {
        const int c = detail::ternary_code(x, t);
        g += 2.0 * (s * c - x) * c;
      }
      return g;
    };
    detail::refine_log_scale(f.scale, f.sq_error, f.steps, opt, grad, error);
  }
  const double t = ratio * f.scale;
  f.codes.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) f.codes[i] = detail::ternary_code(w[i], t);
  return f;
}

/// Uniform (LSQ-style) kernel with codes clamp(round(w / s), lo, hi).
inline ScalarFit fit_uniform_values(std::span<const double> w, int lo, int hi, const FitOptions& opt = {}) {
  ScalarFit f;
  const double mabs = detail::mean_abs(w);
  if (mabs == 0.0) {
    f.codes.assign(w.size(), 0);
    return f;
  }
  const double q = static_cast<double>(hi);
  f.init_scale = 2.0 * mabs / std::sqrt(q);
  f.init_sq_error = detail::uniform_error(w, f.init_scale, lo, hi);

  // Coarse log-spaced scan around the LSQ initialization before gradient refinement: the
  // LSQ start is up to ~5x too large at 8 bits, beyond what a few small steps can recover.
  f.scale = f.init_scale;
  f.sq_error = f.init_sq_error;
  constexpr int kPerOctave = 32;
  for (int k = -5 * kPerOctave; k <= kPerOctave; ++k) {
    if (k == 0) continue;
    const double s = f.init_scale * std::exp2(static_cast<double>(k) / kPerOctave);
    const double e = detail::uniform_error(w, s, lo, hi);
    if (e < f.sq_error) {
      f.sq_error = e;
      f.scale = s;
    }
  }

  const auto grad = [&](double s) {
    // Straight-through gradient of s * clamp(round(w / s)) with respect to s.
    double g = 0.0;
    for (double x : w) {
      const double ratio = x / s;
      const int c = detail::uniform_code(x, s, lo, hi);
      const double local = (ratio > lo && ratio < hi) ? c - ratio : static_cast<double>(c);
      g += 2.0 * (s * c - x) * local;
    }
    return g;
  };
  const auto error = [&](double s) { return detail::uniform_error(w, s, lo, hi); };
  detail::refine_log_scale(f.scale, f.sq_error, f.steps, opt, grad, error);

  f.codes.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) f.codes[i] = detail::uniform_code(w[i], f.scale, lo, hi);
  return f;
}

inline ScalarFit fit_kind_values(QuantizerKind kind, std::span<const double> w, const FitOptions& opt = {}) {
  switch (kind) {
    case QuantizerKind::Binary1: return fit_binary_values(w, opt);
    case QuantizerKind::Ternary158: return fit_ternary_values(w, opt);
    default: {
      const auto r = level_range(kind);
      return fit_uniform_values(w, r.lo, r.hi, opt);
    }
  }
}

/// Quantized form of one unit.
struct QuantResult {
  QuantizerKind kind = QuantizerKind::Binary1;           // requested operator
  QuantizerKind realized_kind = QuantizerKind::Binary1;  // after fallback
  double scale = 1.0;
  std::vector<int> codes;            // flat row-major; protected positions hold INT8 codes
  std::vector<bool> protected_mask;  // flat row-major
  std::size_t n_protected = 0;
  Matrix reconstructed;
  double rel_error = 0.0;   // over non-protected weights
  double total_rel_error = 0.0;  // over all weights
  int fitted_steps = 0;
  bool fell_back = false;
};

namespace detail {

inline double relative_l2(double err_sq, double norm_sq) {
  return norm_sq > 0.0 ? std::sqrt(err_sq / norm_sq) : 0.0;
}

inline QuantResult assemble(const Matrix& weights, QuantizerKind kind, const ProtectionSet& protection,
                            const ProtectedValues& pv, const std::vector<double>& free_values,
                            const std::vector<std::size_t>& free_index, const ScalarFit& fit) {
  QuantResult r;
  r.kind = r.realized_kind = kind;
  r.scale = fit.scale;
  r.fitted_steps = fit.steps;
  const auto n = static_cast<std::size_t>(weights.size());
  r.codes.assign(n, 0);
  r.protected_mask.assign(n, false);
  r.reconstructed.resize(weights.rows(), weights.cols());
  double* rec = r.reconstructed.data();
  for (std::size_t k = 0; k < protection.indices.size(); ++k) {
    const std::size_t i = protection.indices[k];
    r.codes[i] = pv.codes[k];
    r.protected_mask[i] = true;
    rec[i] = pv.values[k];
  }
  r.n_protected = protection.count();
  for (std::size_t k = 0; k < free_index.size(); ++k) {
    r.codes[free_index[k]] = fit.codes[k];
    rec[free_index[k]] = fit.scale * fit.codes[k];
  }
  r.rel_error = relative_l2(fit.sq_error, sq_norm(free_values));
  const double total_sq = (r.reconstructed - weights).squaredNorm();
  r.total_rel_error = relative_l2(total_sq, weights.squaredNorm());
  return r;
}

}  // namespace detail

/// Quantizes a unit: protected weights through the INT8 path, the rest through `kind`,
/// escalating one rung when the free-weight relative error exceeds the fallback threshold.
inline QuantResult fit_unit(const WeightUnit& unit, QuantizerKind kind, const ProtectionSet& protection,
                            const FitOptions& opt = {}) {
  const ProtectedValues pv = quantize_protected(unit, protection);
  const auto n = unit.n();
  std::vector<bool> is_protected(n, false);
  for (std::size_t i : protection.indices) is_protected[i] = true;
  std::vector<double> free_values;
  std::vector<std::size_t> free_index;
  free_values.reserve(n - protection.count());
  free_index.reserve(n - protection.count());
  for (std::size_t i = 0; i < n; ++i)
    if (!is_protected[i]) {
      free_values.push_back(unit.weights.data()[i]);
      free_index.push_back(i);
    }

  QuantResult r = detail::assemble(unit.weights, kind, protection, pv, free_values, free_index,
                                   fit_kind_values(kind, free_values, opt));
  if (r.rel_error > opt.fallback_threshold) {
    if (const auto up = next_rung(kind)) {
      r = detail::assemble(unit.weights, *up, protection, pv, free_values, free_index,
                           fit_kind_values(*up, free_values, opt));
      r.kind = kind;
      r.fell_back = true;
    }
  }
  return r;
}

/// Unprotected convenience wrappers over a dense matrix.
inline QuantResult fit_matrix(const Matrix& weights, QuantizerKind kind, const FitOptions& opt = {}) {
  WeightUnit u;
  u.weights = weights;
  u.col_end = static_cast<std::size_t>(weights.cols());
  FitOptions no_fallback = opt;
  no_fallback.fallback_threshold = std::numeric_limits<double>::infinity();
  return fit_unit(u, kind, ProtectionSet{}, no_fallback);
}

inline QuantResult fit_binary(const Matrix& w, const FitOptions& opt = {}) {
  return fit_matrix(w, QuantizerKind::Binary1, opt);
}
inline QuantResult fit_ternary(const Matrix& w, const FitOptions& opt = {}) {
  return fit_matrix(w, QuantizerKind::Ternary158, opt);
}
inline QuantResult fit_lsq(const Matrix& w, int bits, const FitOptions& opt = {}) {
  switch (bits) {
    case 2: return fit_matrix(w, QuantizerKind::Two2, opt);
    case 3: return fit_matrix(w, QuantizerKind::Lsq3, opt);
    case 4: return fit_matrix(w, QuantizerKind::Lsq4, opt);
    case 8: return fit_matrix(w, QuantizerKind::Lsq8, opt);
    default: throw ValidationError("LSQ bit-width must be 2, 3, 4 or 8");
  }
}

}  // namespace windq
