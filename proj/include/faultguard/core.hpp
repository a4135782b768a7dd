#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace faultguard {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// One window of telemetry, rows are time steps and columns are features.
using Window = Matrix;

inline constexpr int kNumFeatures = 51;
inline constexpr int kNumFaultTypes = 11;
inline constexpr int kNumFaultZones = 4;
inline constexpr int kDefaultWindowLen = 16;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss or gradient stops being finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

enum class Task { FaultType, FaultZone };

inline int num_classes(Task task) { return task == Task::FaultType ? kNumFaultTypes : kNumFaultZones; }

inline std::string to_string(Task task) { return task == Task::FaultType ? "type" : "zone"; }

inline Task parse_task(const std::string& s) {
  if (s == "type" || s == "fault_type") return Task::FaultType;
  if (s == "zone" || s == "fault_zone") return Task::FaultZone;
  throw ConfigError("unknown task '" + s + "' (expected type|zone)");
}

/// FNV-1a over raw bytes; used for config hashes and dataset fingerprints.
class Fingerprint {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(const Matrix& m) {
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    update(dims, sizeof(dims));
    update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// sign with sign(0) = 0.
inline double sign0(double x) { return static_cast<double>((x > 0) - (x < 0)); }

/// Independent seed stream for a named purpose (splitmix64 of base ^ salt hash).
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& salt) {
  Fingerprint fp;
  fp.update(salt);
  std::uint64_t z = base ^ fp.value();
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Writes a one-line warning to stderr.
void warn(const std::string& message);

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace faultguard
