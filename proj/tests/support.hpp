#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cloq::testing {

/// Deterministic generator for test fixtures. Uniform doubles are derived
/// from raw 53-bit draws and normals from Box-Muller, so fixtures do not
/// depend on the standard library's distribution implementations.
struct Rng {
  std::mt19937_64 engine;

  explicit Rng(std::uint64_t seed) : engine(seed) {}

  double uniform() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
    return lo + static_cast<std::int64_t>(engine() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal();
    return m;
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n, double scale = 1.0) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * normal();
    return v;
  }

  Eigen::MatrixXd orthonormal(Eigen::Index n) {
    const Eigen::MatrixXd g = gaussian(n, n);
    return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  }

  /// Activations with correlated features: X = G * C where C has the given
  /// condition number (singular values log-spaced over [1/cond, 1]).
  Eigen::MatrixXd correlated_activations(Eigen::Index rows, Eigen::Index m, double cond) {
    Eigen::VectorXd sv(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double t = m > 1 ? static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
      sv(i) = std::pow(cond, -t);
    }
    const Eigen::MatrixXd c = orthonormal(m) * sv.asDiagonal() * orthonormal(m);
    return gaussian(rows, m) * c;
  }
};

inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

inline double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double scale = std::max(want.norm(), 1e-300);
  return (got - want).norm() / scale;
}

inline std::uint64_t fnv1a(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 1469598103934665603ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace cloq::testing
