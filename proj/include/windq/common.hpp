#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace windq {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input, configuration, or a violated module contract. The CLI maps it to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Model-store or file load failure; always names the offending entry.
class LoadError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A computation could not complete (training did not converge, non-finite metrics).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

/// Adam moment estimates for a flat parameter vector.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }

  template <typename Param, typename Grad>
  void step(Param* params, const Grad* grads, std::size_t n) {
    if (m.size() != n) resize(n);
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(grads[i]);
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      params[i] = static_cast<Param>(static_cast<double>(params[i]) - lr * mh / (std::sqrt(vh) + eps));
    }
  }
};

/// Uniform double in [0, 1) built from raw engine bits, so draws do not depend on the
/// standard library's distribution implementation.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal draw (Box-Muller on uniform01).
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace windq
