#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/observer.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace kklfdi {

/// Residuals and differentiated residuals of one run. Row i is sensor i+1;
/// column k of `r` is t0 + k delta, column j of `r_tilde` is t0 + (j+1) delta.
struct ResidualSeries {
  double t0 = 0.0;
  double delta = 1.0;
  Mat r;
  Mat r_tilde;
};

/// r_i(t_k) = |y_i(t_k) - yhat_i(t_k)|.
inline Mat residuals(const Mat& y_meas, const Mat& y_pred) {
  require(y_meas.rows() == y_pred.rows() && y_meas.cols() == y_pred.cols(),
          "residuals: measured and predicted series differ in shape");
  return (y_meas - y_pred).cwiseAbs();
}

/// rtilde_i(t_k) = |r_i(t_k) - r_i(t_{k-1})| / delta for k >= 1.
inline Mat differentiated_residuals(const Mat& r, double delta) {
  require(r.cols() >= 2, "differentiated_residuals: need at least two samples");
  require(delta > 0.0, "differentiated_residuals: delta must be positive");
  const Eigen::Index n = r.cols() - 1;
  return (r.rightCols(n) - r.leftCols(n)).cwiseAbs() / delta;
}

inline ResidualSeries residual_series(const Mat& y_meas, const Mat& y_pred, double t0,
                                      double delta) {
  ResidualSeries s{t0, delta, residuals(y_meas, y_pred), Mat()};
  s.r_tilde = differentiated_residuals(s.r, delta);
  return s;
}

/// Inputs of the residual bounds.
struct ThresholdParams {
  double v_bar = 0.0;
  double w_bar = 0.0;
  double psi_wbar = 0.0;       // psi(w_bar)
  double l_h = 1.0;            // Lipschitz constant of h
  Vec l_hi;                    // per-sensor Lipschitz constants of h_i
  double kappa_V = 1.0;
  double c = 1.0;
  double norm_B = 0.0;
  double eps_star_hat = 0.0;
  Vec eps_output;              // per-sensor max |h_i(x) - h_i(D(z))|; empty: l_hi eps_star_hat
  double l_theta = 0.0;
  double l_eta = 0.0;
  double xi_bound = 0.0;
  double xi_star_bound = 0.0;

  double sensor_lipschitz(std::size_t i) const {
    return l_hi.size() > static_cast<Eigen::Index>(i) ? l_hi[static_cast<Eigen::Index>(i)] : l_h;
  }
  /// (kappa / c) ||B|| (l_h psi + sqrt(n_y) v_bar): the steady-state latent error bound.
  double latent_steady_state(std::size_t n_y) const {
    return kappa_V / c * norm_B *
           (l_h * psi_wbar + std::sqrt(static_cast<double>(n_y)) * v_bar);
  }
};

/// tau_i = v_bar + l_hi [eps* + (kappa/c) ||B|| (l_h psi(w_bar) + sqrt(n_y) v_bar)].
/// With per-sensor output errors e_i the decoder term l_hi eps* becomes e_i.
inline Vec theoretical_thresholds(const ThresholdParams& p, std::size_t n_y) {
  if (!(p.c > 0.0)) throw InvalidArgument("theoretical_thresholds: decay rate c must be positive");
  const bool per_sensor = p.eps_output.size() > 0;
  if (per_sensor && p.eps_output.size() != static_cast<Eigen::Index>(n_y))
    throw InvalidArgument("theoretical_thresholds: eps_output has the wrong length");
  const double latent = p.latent_steady_state(n_y);
  Vec tau(static_cast<Eigen::Index>(n_y));
  for (std::size_t i = 0; i < n_y; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double l = p.sensor_lipschitz(i);
    tau[k] = p.v_bar + (per_sensor ? p.eps_output[k] + l * latent : l * (p.eps_star_hat + latent));
  }
  return tau;
}

/// Fault-free residual bound for contracting encoder/decoder pairs:
/// l_hi (l_eta xi + xi*) / (1 - l_theta l_eta) + v_bar. `sensor` is 0-based.
inline double bound_contraction(const ThresholdParams& p, double xi_bound, double xi_star_bound,
                                std::size_t sensor) {
  const double prod = p.l_theta * p.l_eta;
  if (!(prod < 1.0))
    throw InvalidArgument("bound_contraction: l_theta * l_eta = " + format_double(prod) +
                          " >= 1, contraction hypothesis fails");
  return p.sensor_lipschitz(sensor) * (p.l_eta * xi_bound + xi_star_bound) / (1.0 - prod) +
         p.v_bar;
}

/// ||z_tilde(t)|| <= kappa e^{-ct} ||z_tilde0|| + (kappa/c) ||B|| (1 - e^{-ct}) (l_h psi + sqrt(n_y) v_bar).
inline double bound_ztilde(const ThresholdParams& p, double z_tilde0_norm, double t,
                           std::size_t n_y) {
  require(t >= 0.0, "bound_ztilde: time must be nonnegative");
  require(p.c > 0.0, "bound_ztilde: decay rate c must be positive");
  const double decay = std::exp(-p.c * t);
  return p.kappa_V * decay * z_tilde0_norm + (1.0 - decay) * p.latent_steady_state(n_y);
}

/// General fault-free residual bound at time t (0-based sensor):
/// v_bar + l_hi [xi* + l_eta kappa e^{-ct} ||z_tilde0|| + (kappa/c)||B||(1 - e^{-ct})(...)].
inline double bound_general(const ThresholdParams& p, double xi_star, double z_tilde0_norm,
                            double t, std::size_t sensor, std::size_t n_y) {
  require(t >= 0.0, "bound_general: time must be nonnegative");
  require(p.c > 0.0, "bound_general: decay rate c must be positive");
  const double decay = std::exp(-p.c * t);
  return p.v_bar +
         p.sensor_lipschitz(sensor) * (xi_star + p.l_eta * p.kappa_V * decay * z_tilde0_norm +
                                       (1.0 - decay) * p.latent_steady_state(n_y));
}

inline double spectral_norm2(const Mat& M) {
  if (M.size() == 0) return 0.0;
  if (M.cols() <= M.rows()) {
    const Mat G = M.transpose() * M;
    return std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Mat>(G, Eigen::EigenvaluesOnly)
                                       .eigenvalues()
                                       .maxCoeff()));
  }
  return spectral_norm2(M.transpose());
}

struct ExpInequalityPoint {
  double t = 0.0;
  double exp_norm = 0.0;        // ||exp(A t)||
  double exp_bound = 0.0;       // kappa e^{-ct}
  double integral = 0.0;        // int_0^t ||exp(A s) B|| ds
  double integral_bound = 0.0;  // (kappa/c) ||B|| (1 - e^{-ct})
};

struct ExpInequalityReport {
  bool applicable = true;
  bool holds = true;
  double kappa_V = 0.0;
  double c = 0.0;
  double worst_ratio = 0.0;  // max over points of lhs / rhs (both inequalities)
  std::string message;
  std::vector<ExpInequalityPoint> points;
};

/// Checks ||exp(At)|| <= kappa(V) e^{-ct} and
/// int_0^t ||exp(As) B|| ds <= (kappa/c) ||B|| (1 - e^{-ct}) on a time grid.
/// exp(At) by scaling and squaring (Pade); the integral by composite Simpson
/// with about `quad_intervals` subintervals over the whole grid.
inline ExpInequalityReport verify_exp_inequalities(const Mat& A, const Mat& B,
                                                   std::span<const double> t_grid,
                                                   std::size_t quad_intervals = 10000,
                                                   double kappa_cap = 1e8, double rel_tol = 1e-9) {
  require(A.rows() == A.cols() && B.rows() == A.rows(), "verify_exp_inequalities: shape mismatch");
  require(!t_grid.empty(), "verify_exp_inequalities: empty time grid");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    require(t_grid[i] >= 0.0, "verify_exp_inequalities: negative time");
    require(i == 0 || t_grid[i] > t_grid[i - 1], "verify_exp_inequalities: grid must increase");
  }
  ExpInequalityReport rep;
  Eigen::EigenSolver<Mat> es(A, true);
  if (es.info() != Eigen::Success) {
    rep.applicable = false;
    rep.message = "eigen-decomposition failed";
    return rep;
  }
  if (es.eigenvalues().real().maxCoeff() >= 0.0) {
    rep.applicable = false;
    rep.message = "A is not Hurwitz";
    return rep;
  }
  try {
    rep.kappa_V = condition_number(es.eigenvectors());
  } catch (const InvalidArgument&) {
    rep.kappa_V = std::numeric_limits<double>::infinity();
  }
  if (!(rep.kappa_V <= kappa_cap)) {
    rep.applicable = false;
    rep.message = "A is not (numerically) diagonalizable: kappa(V) above cap";
    return rep;
  }
  rep.c = es.eigenvalues().real().cwiseAbs().minCoeff();
  const double normB = spectral_norm2(B);
  const double t_max = t_grid.back();

  double integral = 0.0;
  double t_prev = 0.0;
  Mat G = B;  // exp(A s) B at the current quadrature node
  double g_prev = spectral_norm2(G);
  for (double t : t_grid) {
    const double seg = t - t_prev;
    if (seg > 0.0) {
      auto m = static_cast<std::size_t>(
          std::ceil(static_cast<double>(quad_intervals) * seg / std::max(t_max, 1e-300)));
      m = std::max<std::size_t>(2, m + (m % 2));
      const double h = seg / static_cast<double>(m);
      const Mat step = (A * h).exp();
      double acc = g_prev;
      for (std::size_t j = 1; j <= m; ++j) {
        G = step * G;
        const double g = spectral_norm2(G);
        acc += (j == m ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0)) * g;
        if (j == m) g_prev = g;
      }
      integral += acc * h / 3.0;
      // restart from a direct exponential so round-off does not accumulate
      const Mat E = (A * t).exp();
      G = E * B;
      g_prev = spectral_norm2(G);
    }
    t_prev = t;

    ExpInequalityPoint pt;
    pt.t = t;
    const Mat Et = (A * t).exp();
    pt.exp_norm = spectral_norm2(Et);
    pt.exp_bound = rep.kappa_V * std::exp(-rep.c * t);
    pt.integral = integral;
    pt.integral_bound = rep.kappa_V / rep.c * normB * (1.0 - std::exp(-rep.c * t));
    auto ok = [rel_tol](double lhs, double rhs) { return lhs <= rhs * (1.0 + rel_tol) + 1e-14; };
    if (!ok(pt.exp_norm, pt.exp_bound) || !ok(pt.integral, pt.integral_bound)) rep.holds = false;
    if (pt.exp_bound > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, pt.exp_norm / pt.exp_bound);
    if (pt.integral_bound > 0.0)
      rep.worst_ratio = std::max(rep.worst_ratio, pt.integral / pt.integral_bound);
    rep.points.push_back(pt);
  }
  if (!rep.holds) rep.message = "inequality violated on the grid";
  return rep;
}

/// r_Delta = max over runs, sensors and samples with t_k >= t_c of rtilde.
inline double empirical_threshold(std::span<const ResidualSeries> runs, double t_c) {
  require(!runs.empty(), "empirical_threshold: no runs");
  double r_delta = 0.0;
  bool any = false;
  for (const auto& run : runs) {
    for (Eigen::Index j = 0; j < run.r_tilde.cols(); ++j) {
      const double t = run.t0 + static_cast<double>(j + 1) * run.delta;
      if (t < t_c) continue;
      r_delta = std::max(r_delta, run.r_tilde.col(j).maxCoeff());
      any = true;
    }
  }
  require(any, "empirical_threshold: no samples at or after t_c");
  return r_delta;
}

struct FdiEvent {
  enum class Kind { Detection, Isolation };
  Kind kind = Kind::Detection;
  std::vector<std::size_t> sensors;  // 1-based
  std::size_t k = 0;                 // sample index of onset
  double t = 0.0;                    // onset time
  std::size_t end_k = 0;             // last sample of the (coalesced) event
  double magnitude = 0.0;            // peak signal value over the event
  double threshold = 0.0;            // threshold of the sensor attaining the peak
};

/// Detection: samples t_k >= t_c where any r_i > tau_i. Consecutive
/// exceeding samples coalesce into one event listing every sensor that
/// exceeded during it.
inline std::vector<FdiEvent> detect(const ResidualSeries& s, const Vec& tau, double t_c) {
  require(tau.size() == s.r.rows(), "detect: threshold count differs from sensor count");
  std::vector<FdiEvent> events;
  bool open = false;
  for (Eigen::Index k = 0; k < s.r.cols(); ++k) {
    const double t = s.t0 + static_cast<double>(k) * s.delta;
    bool hit = false;
    if (t >= t_c)
      for (Eigen::Index i = 0; i < s.r.rows(); ++i) {
        if (!(s.r(i, k) > tau[i])) continue;
        if (!hit && !open) {
          events.push_back({FdiEvent::Kind::Detection, {}, static_cast<std::size_t>(k), t,
                            static_cast<std::size_t>(k), 0.0, 0.0});
        }
        hit = true;
        auto& ev = events.back();
        const auto sensor = static_cast<std::size_t>(i + 1);
        if (std::find(ev.sensors.begin(), ev.sensors.end(), sensor) == ev.sensors.end())
          ev.sensors.push_back(sensor);
        ev.end_k = static_cast<std::size_t>(k);
        if (s.r(i, k) > ev.magnitude) {
          ev.magnitude = s.r(i, k);
          ev.threshold = tau[i];
        }
      }
    open = hit;
  }
  for (auto& ev : events) std::sort(ev.sensors.begin(), ev.sensors.end());
  return events;
}

/// Isolation: one event per (sensor, t_k) with t_k >= t_c and rtilde_i > r_Delta.
inline std::vector<FdiEvent> isolate(const ResidualSeries& s, double r_delta, double t_c) {
  std::vector<FdiEvent> events;
  for (Eigen::Index j = 0; j < s.r_tilde.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j + 1);
    const double t = s.t0 + static_cast<double>(k) * s.delta;
    if (t < t_c) continue;
    for (Eigen::Index i = 0; i < s.r_tilde.rows(); ++i)
      if (s.r_tilde(i, j) > r_delta)
        events.push_back({FdiEvent::Kind::Isolation, {static_cast<std::size_t>(i + 1)}, k, t, k,
                          s.r_tilde(i, j), r_delta});
  }
  return events;
}

}  // namespace kklfdi
