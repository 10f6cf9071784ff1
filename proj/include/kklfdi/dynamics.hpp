#pragma once

#include "kklfdi/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

namespace kklfdi {

/// Autonomous vector field x -> f(x).
using VectorField = std::function<Vec(const Vec&)>;
/// Time-dependent vector field (t, x) -> f(t, x).
using TimeVectorField = std::function<Vec(double, const Vec&)>;
/// Output map x -> h(x).
using OutputMap = std::function<Vec(const Vec&)>;

/// Plant: x' = f(x) + w, y = h(x) + v. The Lipschitz constants of h feed the
/// residual thresholds; for a coordinate-selection h they are exactly 1.
struct System {
  std::size_t state_dim = 0;
  std::size_t output_dim = 0;
  VectorField vector_field;
  OutputMap output_map;
  double output_lipschitz = 1.0;
  Vec sensor_lipschitz;  // per output component

  Mat outputs(const Mat& states) const {
    Mat y(output_dim, states.cols());
    for (Eigen::Index k = 0; k < states.cols(); ++k) y.col(k) = output_map(states.col(k));
    return y;
  }
};

struct KuramotoParams {
  Vec omega;         // natural frequencies
  Mat coupling;      // a_ij >= 0, zero diagonal
  std::uint64_t seed = 0;
  // true:  theta_i' = omega_i + sum_j a_ij sin(theta_j - theta_i)
  // false: theta_i' = omega_i + sum_j a_ij sin(theta_i - theta_j)
  bool attractive = true;

  std::size_t size() const { return static_cast<std::size_t>(omega.size()); }

  static KuramotoParams random(std::size_t n, std::uint64_t seed,
                               Interval omega_range = {-1.0, 1.0},
                               Interval coupling_range = {0.0, 1.0},
                               bool attractive = true) {
    require(n >= 1, "kuramoto: need at least one node");
    require(coupling_range.lo >= 0.0 && coupling_range.hi >= coupling_range.lo,
            "kuramoto: coupling range must be nonnegative and ordered");
    require(omega_range.hi >= omega_range.lo, "kuramoto: omega range inverted");
    std::mt19937_64 eng(seed);
    KuramotoParams p;
    p.seed = seed;
    p.attractive = attractive;
    p.omega.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      p.omega[static_cast<Eigen::Index>(i)] =
          omega_range.lo + omega_range.length() * uniform01(eng);
    p.coupling = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double u = uniform01(eng);  // drawn for every pair to keep the stream layout fixed
        if (i != j)
          p.coupling(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              coupling_range.lo + coupling_range.length() * u;
      }
    return p;
  }
};

/// Kuramoto vector field. Uses sin(a - b) = sin a cos b - cos a sin b so the
/// coupling sum costs two matrix-vector products.
inline Vec kuramoto_rhs(const Vec& theta, const KuramotoParams& p) {
  require(static_cast<std::size_t>(theta.size()) == p.size(),
          "kuramoto_rhs: state length does not match node count");
  const Vec s = theta.array().sin().matrix();
  const Vec c = theta.array().cos().matrix();
  // sum_j a_ij sin(theta_i - theta_j)
  Vec coupled = (s.array() * (p.coupling * c).array() - c.array() * (p.coupling * s).array()).matrix();
  if (p.attractive) coupled = -coupled;
  return p.omega + coupled;
}

/// Kuramoto plant measuring the first `n_outputs` phases.
inline System kuramoto_system(const KuramotoParams& p, std::size_t n_outputs) {
  require(n_outputs >= 1 && n_outputs <= p.size(), "kuramoto_system: bad output count");
  System sys;
  sys.state_dim = p.size();
  sys.output_dim = n_outputs;
  sys.vector_field = [p](const Vec& x) { return kuramoto_rhs(x, p); };
  sys.output_map = [n_outputs](const Vec& x) -> Vec {
    return x.head(static_cast<Eigen::Index>(n_outputs));
  };
  sys.output_lipschitz = 1.0;
  sys.sensor_lipschitz = Vec::Ones(static_cast<Eigen::Index>(n_outputs));
  return sys;
}

/// Estimate of the Lipschitz constants of a smooth output map by sampling the
/// spectral norm of its finite-difference Jacobian over a box. An estimate,
/// not a certificate.
inline void estimate_output_lipschitz(System& sys, std::span<const Interval> box,
                                      std::size_t samples, std::uint64_t seed) {
  require(box.size() == sys.state_dim, "estimate_output_lipschitz: box dimension");
  std::mt19937_64 eng(seed);
  const auto nx = static_cast<Eigen::Index>(sys.state_dim);
  const auto ny = static_cast<Eigen::Index>(sys.output_dim);
  double l_h = 0.0;
  Vec l_hi = Vec::Zero(ny);
  for (std::size_t s = 0; s < samples; ++s) {
    Vec x(nx);
    for (Eigen::Index d = 0; d < nx; ++d)
      x[d] = box[static_cast<std::size_t>(d)].lo +
             box[static_cast<std::size_t>(d)].length() * uniform01(eng);
    Mat jac(ny, nx);
    for (Eigen::Index d = 0; d < nx; ++d) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[d]));
      Vec xp = x, xm = x;
      xp[d] += h;
      xm[d] -= h;
      jac.col(d) = (sys.output_map(xp) - sys.output_map(xm)) / (2.0 * h);
    }
    l_h = std::max(l_h, Eigen::JacobiSVD<Mat>(jac).singularValues()(0));
    for (Eigen::Index i = 0; i < ny; ++i) l_hi[i] = std::max(l_hi[i], jac.row(i).norm());
  }
  sys.output_lipschitz = l_h;
  sys.sensor_lipschitz = l_hi;
}

/// Latin hypercube design: in every dimension each of the n equal-width
/// strata holds exactly one point.
inline std::vector<Vec> latin_hypercube(std::size_t n_points, std::span<const Interval> bounds,
                                        std::uint64_t seed) {
  require(n_points >= 1, "latin_hypercube: need at least one point");
  require(!bounds.empty(), "latin_hypercube: empty bounds list");
  for (const auto& b : bounds)
    require(b.hi > b.lo, "latin_hypercube: interval must be nonempty and ordered");

  const auto dim = static_cast<Eigen::Index>(bounds.size());
  std::vector<Vec> pts(n_points, Vec(dim));
  std::mt19937_64 eng(seed);
  std::vector<std::size_t> perm(n_points);
  for (Eigen::Index d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    // Fisher-Yates with explicit draws so the design does not depend on the
    // standard library's shuffle.
    for (std::size_t i = n_points; i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(eng) * static_cast<double>(i));
      std::swap(perm[i - 1], perm[std::min(j, i - 1)]);
    }
    const Interval b = bounds[static_cast<std::size_t>(d)];
    const double width = b.length() / static_cast<double>(n_points);
    for (std::size_t p = 0; p < n_points; ++p) {
      const double u = uniform01(eng);
      double v = b.lo + (static_cast<double>(perm[p]) + u) * width;
      // guard the upper stratum edge against rounding
      const double stratum_hi = b.lo + static_cast<double>(perm[p] + 1) * width;
      if (v >= stratum_hi) v = std::nextafter(stratum_hi, b.lo);
      pts[p][d] = v;
    }
  }
  return pts;
}

/// One classical Runge-Kutta step.
inline Vec rk4_step(const TimeVectorField& rhs, const Vec& x, double t, double delta) {
  require(delta > 0.0, "rk4_step: step must be positive");
  const Vec k1 = rhs(t, x);
  const Vec k2 = rhs(t + 0.5 * delta, x + 0.5 * delta * k1);
  const Vec k3 = rhs(t + 0.5 * delta, x + 0.5 * delta * k2);
  const Vec k4 = rhs(t + delta, x + delta * k3);
  return x + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vec rk4_step(const VectorField& f, const Vec& x, double delta) {
  return rk4_step([&f](double, const Vec& s) { return f(s); }, x, 0.0, delta);
}

/// Noise levels as variances, plus the essential bounds used by the
/// threshold formulas.
struct NoiseSpec {
  double process_var = 0.0;
  double meas_var = 0.0;
  double w_bar = 0.0;
  double v_bar = 0.0;

  /// Bounds set to `sigmas` standard deviations.
  static NoiseSpec gaussian(double process_var, double meas_var, double sigmas = 3.0) {
    require(process_var >= 0.0 && meas_var >= 0.0, "NoiseSpec: negative variance");
    return {process_var, meas_var, sigmas * std::sqrt(process_var), sigmas * std::sqrt(meas_var)};
  }
  bool noise_free() const { return process_var == 0.0 && meas_var == 0.0; }
};

/// Uniformly sampled trajectory. Column k of `states` (and `outputs`, when
/// present) is the sample at t0 + k * delta.
struct Trajectory {
  double t0 = 0.0;
  double delta = 1.0;
  Mat states;
  Mat outputs;

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * delta; }
  bool has_outputs() const { return outputs.size() > 0; }
};

/// Sample spacing when `n_samples` includes both endpoints of the span.
inline double sample_spacing(Interval span, std::size_t n_samples) {
  require(n_samples >= 2, "sample_spacing: need at least two samples");
  require(span.hi > span.lo, "sample_spacing: span must have positive length");
  return span.length() / static_cast<double>(n_samples - 1);
}

/// Integrates x' = f(x) + w with RK4, one step per sample interval. w is drawn
/// from N(0, process_var) at the start of each step and held over all four
/// stages. Deterministic in (x0, span, n_samples, noise, seed).
inline Trajectory simulate(const VectorField& f, const Vec& x0, Interval span,
                           std::size_t n_samples, const NoiseSpec& noise, std::uint64_t seed) {
  const double delta = sample_spacing(span, n_samples);
  Trajectory traj;
  traj.t0 = span.lo;
  traj.delta = delta;
  traj.states.resize(x0.size(), static_cast<Eigen::Index>(n_samples));
  traj.states.col(0) = x0;

  std::mt19937_64 eng(derive_seed(seed, streams::kProcessNoise));
  std::normal_distribution<double> gauss(0.0, std::sqrt(noise.process_var));
  Vec w = Vec::Zero(x0.size());
  Vec x = x0;
  for (std::size_t k = 1; k < n_samples; ++k) {
    if (noise.process_var > 0.0)
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = gauss(eng);
    if (noise.process_var > 0.0)
      x = rk4_step([&](double, const Vec& s) -> Vec { return f(s) + w; }, x, 0.0, delta);
    else
      x = rk4_step(f, x, delta);
    traj.states.col(static_cast<Eigen::Index>(k)) = x;
  }
  return traj;
}

/// Measurement noise samples v(t_k) ~ N(0, meas_var), one column per sample.
inline Mat measurement_noise(std::size_t n_y, std::size_t n_samples, double meas_var,
                             std::uint64_t seed) {
  Mat v = Mat::Zero(static_cast<Eigen::Index>(n_y), static_cast<Eigen::Index>(n_samples));
  if (meas_var <= 0.0) return v;
  std::mt19937_64 eng(derive_seed(seed, streams::kMeasurementNoise));
  std::normal_distribution<double> gauss(0.0, std::sqrt(meas_var));
  for (Eigen::Index k = 0; k < v.cols(); ++k)
    for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, k) = gauss(eng);
  return v;
}

/// Simulates the plant and fills outputs with h(x) + v.
inline Trajectory simulate(const System& sys, const Vec& x0, Interval span, std::size_t n_samples,
                           const NoiseSpec& noise, std::uint64_t seed) {
  require(static_cast<std::size_t>(x0.size()) == sys.state_dim, "simulate: x0 dimension");
  Trajectory traj = simulate(sys.vector_field, x0, span, n_samples, noise, seed);
  traj.outputs = sys.outputs(traj.states) +
                 measurement_noise(sys.output_dim, n_samples, noise.meas_var, seed);
  return traj;
}

/// CSV with header `t,x1..xn[,y1..ym]`, 17 significant digits.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const auto nx = traj.states.rows();
  const auto ny = traj.has_outputs() ? traj.outputs.rows() : 0;
  os << 't';
  for (Eigen::Index i = 0; i < nx; ++i) os << ",x" << (i + 1);
  for (Eigen::Index i = 0; i < ny; ++i) os << ",y" << (i + 1);
  os << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    os << format_double(traj.time(k));
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << format_double(traj.states(i, kk));
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << format_double(traj.outputs(i, kk));
    os << '\n';
  }
}

}  // namespace kklfdi
