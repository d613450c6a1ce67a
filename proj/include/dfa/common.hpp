#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

// Invalid or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data: bad labels, empty sets, shape mismatches.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically undefined operation (e.g. normalizing a zero vector).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by the trainer when a loss term turns NaN/Inf. Carries the name of
// the offending term so the runner can dump diagnostics and exit nonzero.
struct NanAbort : std::runtime_error {
  std::string term;
  long iteration;
  NanAbort(std::string term_name, long iter, const std::string& detail)
      : std::runtime_error("non-finite loss in term '" + term_name +
                           "' at iteration " + std::to_string(iter) + ": " + detail),
        term(std::move(term_name)),
        iteration(iter) {}
};

// FNV-1a, used to derive independent RNG streams and to hash configs.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic sub-seed for a named stream. Keeps the RNG consumption of one
// concern (data order, init, perturbation probes) from shifting another.
inline std::uint64_t sub_seed(std::uint64_t base, std::string_view stream) {
  std::uint64_t h = fnv1a(stream);
  h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::string_view stream) {
  return std::mt19937_64(sub_seed(base, stream));
}

constexpr double kUnitNormTol = 1e-6;
constexpr double kDegenerateNorm = 1e-12;

inline bool is_unit_norm(const Eigen::Ref<const Vector>& v, double tol = kUnitNormTol) {
  return std::abs(v.norm() - 1.0) <= tol;
}

// Normalize to unit length; rejects vectors too short to define a direction.
// A non-finite norm is let through so it surfaces as a NaN loss, which the
// trainer reports with the offending term's name.
inline Vector normalize_or_throw(const Eigen::Ref<const Vector>& v, const char* what) {
  double n = v.norm();
  if (n < kDegenerateNorm) {
    throw NumericError(std::string(what) + ": vector norm " + std::to_string(n) +
                       " below " + std::to_string(kDegenerateNorm) + ", direction undefined");
  }
  return v / n;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

// Angle in radians between two nonzero vectors.
inline double angle_between(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  double c = a.dot(b) / (a.norm() * b.norm());
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c);
}

}  // namespace dfa
