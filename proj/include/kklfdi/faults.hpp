#pragma once

#include "kklfdi/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace kklfdi {

/// phi_i = 0 from onset on.
struct CompleteFailure {};

/// zeta_i = level from onset on.
struct StepBias {
  double level = 1.0;
};

/// zeta_i = level / (1 + exp(-rate (t - center))) from onset on.
struct Sigmoid {
  double level = 2.0;
  double rate = 2.0;
  double center = 8.0;
};

/// White noise whose standard deviation ramps linearly from 0 to
/// `final_sigma` over `ramp` time units after onset. Draw k comes from a
/// generator seeded by (seed, k).
struct GrowingWhiteNoise {
  double ramp = 10.0;
  double final_sigma = 1.0;
  std::uint64_t seed = 0;
};

/// amplitude(t) sin(2 pi frequency (t - onset)); amplitude ramps linearly
/// from 0 to `final_amplitude` over `ramp` time units.
struct GrowingSinusoid {
  double final_amplitude = 5.0;
  double frequency = 2.0;  // cycles per time unit
  double ramp = 10.0;
};

using FaultKind = std::variant<CompleteFailure, StepBias, Sigmoid, GrowingWhiteNoise, GrowingSinusoid>;

inline std::string kind_name(const FaultKind& k) {
  struct {
    std::string operator()(const CompleteFailure&) const { return "complete_failure"; }
    std::string operator()(const StepBias&) const { return "step_bias"; }
    std::string operator()(const Sigmoid&) const { return "sigmoid"; }
    std::string operator()(const GrowingWhiteNoise&) const { return "growing_white_noise"; }
    std::string operator()(const GrowingSinusoid&) const { return "growing_sinusoid"; }
  } v;
  return std::visit(v, k);
}

struct FaultEvent {
  std::size_t sensor = 1;  // 1-based
  double onset = 0.0;
  FaultKind kind;
};

struct FaultProfile {
  std::vector<FaultEvent> events;

  bool empty() const { return events.empty(); }

  void validate(std::size_t n_y) const {
    for (const auto& e : events) {
      require(e.sensor >= 1 && e.sensor <= n_y,
              "fault profile: sensor index " + std::to_string(e.sensor) + " outside [1, " +
                  std::to_string(n_y) + "]");
      require(e.onset >= 0.0, "fault profile: onset must be nonnegative");
    }
  }
};

struct FaultSignals {
  Vec phi;
  Vec zeta;
};

namespace detail {

inline double ramp_fraction(double elapsed, double ramp) {
  if (ramp <= 0.0) return 1.0;
  return std::clamp(elapsed / ramp, 0.0, 1.0);
}

inline double degradation(const FaultKind& kind, double t, double onset, std::size_t k) {
  const double elapsed = t - onset;
  if (const auto* s = std::get_if<StepBias>(&kind)) return s->level;
  if (const auto* s = std::get_if<Sigmoid>(&kind))
    return s->level / (1.0 + std::exp(-s->rate * (t - s->center)));
  if (const auto* s = std::get_if<GrowingWhiteNoise>(&kind)) {
    const double sigma = s->final_sigma * ramp_fraction(elapsed, s->ramp);
    if (sigma == 0.0) return 0.0;
    std::mt19937_64 eng(derive_seed(s->seed, streams::kFaultNoise, k));
    std::normal_distribution<double> gauss(0.0, 1.0);
    return sigma * gauss(eng);
  }
  if (const auto* s = std::get_if<GrowingSinusoid>(&kind))
    return s->final_amplitude * ramp_fraction(elapsed, s->ramp) *
           std::sin(2.0 * std::numbers::pi * s->frequency * elapsed);
  return 0.0;
}

}  // namespace detail

/// phi(t) and zeta(t) at time t (sample index k) for an n_y-sensor plant.
/// Events persist once active.
inline FaultSignals fault_signals(const FaultProfile& profile, std::size_t n_y, double t,
                                  std::size_t k) {
  const auto n = static_cast<Eigen::Index>(n_y);
  FaultSignals sig{Vec::Ones(n), Vec::Zero(n)};
  for (const auto& e : profile.events) {
    if (t < e.onset) continue;
    const auto i = static_cast<Eigen::Index>(e.sensor - 1);
    require(i >= 0 && i < n, "fault_signals: sensor index out of range");
    if (std::holds_alternative<CompleteFailure>(e.kind))
      sig.phi[i] = 0.0;
    else
      sig.zeta[i] += detail::degradation(e.kind, t, e.onset, k);
  }
  return sig;
}

/// y_i = phi_i (y_clean_i + v_i + zeta_i).
inline Vec apply_faults(const Vec& y_clean, const Vec& v, const Vec& phi, const Vec& zeta) {
  require(v.size() == y_clean.size() && phi.size() == y_clean.size() &&
              zeta.size() == y_clean.size(),
          "apply_faults: dimension mismatch");
  return (phi.array() * (y_clean + v + zeta).array()).matrix();
}

}  // namespace kklfdi
