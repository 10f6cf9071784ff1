#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kklfdi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument (dimension, range, ordering) was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values or otherwise diverged.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration / artifact.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable, corrupt or mismatched artifact file.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
};

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `stream`, item `index` of a base seed. Independent of
/// call order, so parallel or reordered work draws identical randomness.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(base) ^ stream) ^ (index * 0xd1b54a32d192ed03ULL));
}

// Fixed stream tags.
namespace streams {
inline constexpr std::uint64_t kProcessNoise = 0x70726f63ULL;
inline constexpr std::uint64_t kMeasurementNoise = 0x6d656173ULL;
inline constexpr std::uint64_t kFaultNoise = 0x6661756cULL;
inline constexpr std::uint64_t kPlantParams = 0x706c6e74ULL;
inline constexpr std::uint64_t kTrainSet = 0x74726e73ULL;
inline constexpr std::uint64_t kTestSet = 0x74737473ULL;
inline constexpr std::uint64_t kTraining = 0x7472616eULL;
inline constexpr std::uint64_t kCalibration = 0x63616c69ULL;
inline constexpr std::uint64_t kPsi = 0x70736931ULL;
inline constexpr std::uint64_t kScenario = 0x7363656eULL;
inline constexpr std::uint64_t kVerify = 0x76657269ULL;
}  // namespace streams

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
template <class Engine>
double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// 64-bit FNV-1a, used to fingerprint artifacts.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// 17 significant digits: enough for an exact double round-trip.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

}  // namespace kklfdi
