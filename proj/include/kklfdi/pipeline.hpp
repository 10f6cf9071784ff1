#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/faults.hpp"
#include "kklfdi/fdi.hpp"
#include "kklfdi/io.hpp"
#include "kklfdi/observer.hpp"
#include "kklfdi/training.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace kklfdi {

using io::Model;

/// How the latent filter is started. Truncation runs the burn-in over the
/// plant's own (noise-free) past, the same way the training data are built.
enum class ObserverInit { Zero, Truncation };

struct RunSpec {
  Vec x0;
  Interval span{0.0, 30.0};
  std::size_t n_samples = 4000;
  NoiseSpec noise;
  FaultProfile faults;
  std::uint64_t seed = 0;
  ObserverInit init = ObserverInit::Truncation;
  double t_pre = 0.5;
};

struct Thresholds {
  Vec tau;
  double r_delta = 0.0;
  double t_c = 0.0;
  ThresholdParams params;
  NoiseSpec noise;
  std::optional<double> eps_hat;
  bool contraction_applicable = false;
  std::size_t calibration_runs = 0;
  std::string model_fingerprint;
  std::string test_fingerprint;
};

struct FdiReport {
  double t0 = 0.0;
  double delta = 1.0;
  Vec x0;
  Mat states;
  Mat y_meas;
  Mat x_hat;
  Mat y_pred;
  ResidualSeries series;
  std::vector<FdiEvent> detections;
  std::vector<FdiEvent> isolations;
};

inline void check_compatible(const System& sys, const Model& model) {
  if (sys.state_dim != model.observer.n_x || sys.output_dim != model.observer.n_y)
    throw InvalidArgument("model dimensions (n_x=" + std::to_string(model.observer.n_x) +
                          ", n_y=" + std::to_string(model.observer.n_y) +
                          ") do not match the plant (n_x=" + std::to_string(sys.state_dim) +
                          ", n_y=" + std::to_string(sys.output_dim) + ")");
}

/// Plant -> faults -> latent filter -> decoder -> predicted outputs ->
/// residuals -> detection and isolation. Pure in (inputs, spec.seed).
inline FdiReport run_pipeline(const System& sys, const Model& model, const Thresholds& th,
                              const RunSpec& spec) {
  check_compatible(sys, model);
  require(static_cast<std::size_t>(spec.x0.size()) == sys.state_dim, "run_pipeline: x0 dimension");
  require(th.tau.size() == static_cast<Eigen::Index>(sys.output_dim),
          "run_pipeline: threshold count differs from sensor count");
  spec.faults.validate(sys.output_dim);

  FdiReport rep;
  rep.x0 = spec.x0;
  const Trajectory traj =
      simulate(sys.vector_field, spec.x0, spec.span, spec.n_samples, spec.noise, spec.seed);
  if (!traj.states.allFinite()) throw NumericalError("run_pipeline: plant simulation diverged");
  rep.t0 = traj.t0;
  rep.delta = traj.delta;
  const Mat y_clean = sys.outputs(traj.states);
  const Mat v = measurement_noise(sys.output_dim, spec.n_samples, spec.noise.meas_var, spec.seed);
  rep.y_meas.resize(y_clean.rows(), y_clean.cols());
  for (Eigen::Index k = 0; k < y_clean.cols(); ++k) {
    const auto sig = fault_signals(spec.faults, sys.output_dim, traj.time(static_cast<std::size_t>(k)),
                                   static_cast<std::size_t>(k));
    rep.y_meas.col(k) = apply_faults(y_clean.col(k), v.col(k), sig.phi, sig.zeta);
  }

  Vec z0 = Vec::Zero(static_cast<Eigen::Index>(model.observer.n_z));
  if (spec.init == ObserverInit::Truncation) {
    const auto z = latent_at_origin(sys, model.observer, spec.x0, spec.t_pre, traj.delta);
    if (!z) throw NumericalError("run_pipeline: observer burn-in diverged");
    z0 = *z;
  }
  const Mat zhat = run_latent_filter(model.observer, rep.y_meas, z0, traj.delta);
  rep.x_hat = model.decoder.forward(zhat);
  rep.y_pred = sys.outputs(rep.x_hat);
  rep.series = residual_series(rep.y_meas, rep.y_pred, traj.t0, traj.delta);
  rep.detections = detect(rep.series, th.tau, th.t_c);
  rep.isolations = isolate(rep.series, th.r_delta, th.t_c);
  rep.states = traj.states;
  return rep;
}

/// psi(w_bar) estimate: max over paired noisy / noise-free runs (same x0) of
/// ||x_noisy(t) - x_clean(t)||.
inline double estimate_psi(const System& sys, const Dataset& clean, const NoiseSpec& noise,
                           std::uint64_t seed) {
  if (noise.process_var == 0.0) return 0.0;
  const Interval span{clean.t0, clean.t0 + clean.delta * static_cast<double>(clean.samples_per_trajectory() - 1)};
  const NoiseSpec process_only{noise.process_var, 0.0, noise.w_bar, 0.0};
  double psi = 0.0;
  for (std::size_t j = 0; j < clean.trajectories.size(); ++j) {
    const auto& tr = clean.trajectories[j];
    const Trajectory noisy = simulate(sys.vector_field, Vec(tr.x.col(0)), span,
                                      static_cast<std::size_t>(tr.x.cols()), process_only,
                                      derive_seed(seed, streams::kPsi, j));
    psi = std::max(psi, (noisy.states - tr.x).colwise().norm().maxCoeff());
  }
  return psi;
}

/// Per-sensor max |h_i(x) - h_i(D(z))| over a clean data set.
inline Vec estimate_output_errors(const System& sys, const Mlp& decoder, const Dataset& clean) {
  Vec e = Vec::Zero(static_cast<Eigen::Index>(sys.output_dim));
  for (const auto& tr : clean.trajectories) {
    const Mat xh = decoder.forward(tr.z);
    for (Eigen::Index k = 0; k < tr.x.cols(); ++k)
      e = e.cwiseMax((sys.output_map(tr.x.col(k)) - sys.output_map(xh.col(k))).cwiseAbs());
  }
  return e;
}

enum class DecoderErrorBound { Output, State };

/// Folded: max of rtilde itself. Signed: max of |e_k - e_{k-1}| / delta with
/// e = y - yhat, which bounds rtilde and does not shrink when the residual
/// straddles zero, as it does in well tracked fault-free runs.
enum class RDeltaSource { Signed, Folded };

struct CalibrationOptions {
  NoiseSpec noise;
  std::optional<double> t_c;           // default 5 / c
  std::optional<double> psi_override;
  std::uint64_t seed = 0;
  ObserverInit init = ObserverInit::Truncation;
  double t_pre = 0.5;
  std::size_t max_runs = 0;            // 0: every test trajectory
  std::size_t replays = 10;            // noisy replays per trajectory
  DecoderErrorBound decoder_error = DecoderErrorBound::Output;
  RDeltaSource r_delta_from = RDeltaSource::Signed;
};

struct Calibration {
  Thresholds thresholds;
  ApproxErrors errors;
  std::vector<double> run_max;         // per-run max after t_c
};

/// tau_i from the closed-form bound and r_Delta from fault-free noisy replays
/// of the test set.
inline Calibration calibrate(const System& sys, const Model& model, const Dataset& test,
                             const CalibrationOptions& opt) {
  check_compatible(sys, model);
  require(!test.trajectories.empty(), "calibrate: missing test set");
  require(test.n_x == model.observer.n_x && test.n_z == model.observer.n_z,
          "calibrate: test set dimensions do not match the model");
  Calibration cal;
  auto& th = cal.thresholds;
  const auto& obs = model.observer;

  cal.errors = estimate_errors(model.encoder ? &*model.encoder : nullptr, model.decoder, test);
  th.eps_hat = cal.errors.eps_hat;
  th.noise = opt.noise;
  th.t_c = opt.t_c.value_or(5.0 / obs.c);

  auto& p = th.params;
  p.v_bar = opt.noise.v_bar;
  p.w_bar = opt.noise.w_bar;
  p.psi_wbar = opt.psi_override ? *opt.psi_override : estimate_psi(sys, test, opt.noise, opt.seed);
  p.l_h = sys.output_lipschitz;
  p.l_hi = sys.sensor_lipschitz;
  p.kappa_V = obs.kappa_V;
  p.c = obs.c;
  p.norm_B = spectral_norm2(obs.B);
  p.eps_star_hat = cal.errors.eps_star_hat;
  if (opt.decoder_error == DecoderErrorBound::Output)
    p.eps_output = estimate_output_errors(sys, model.decoder, test);
  p.xi_star_bound = cal.errors.eps_star_hat;
  p.xi_bound = cal.errors.eps_hat.value_or(0.0);
  p.l_eta = model.decoder.lipschitz_bound();
  p.l_theta = model.encoder ? model.encoder->lipschitz_bound() : 0.0;
  th.contraction_applicable = model.encoder.has_value() && p.l_theta * p.l_eta < 1.0;
  th.tau = theoretical_thresholds(p, sys.output_dim);

  const std::size_t runs = opt.max_runs == 0 ? test.trajectories.size()
                                             : std::min(opt.max_runs, test.trajectories.size());
  const std::size_t n = test.samples_per_trajectory();
  const Interval span{test.t0, test.t0 + test.delta * static_cast<double>(n - 1)};
  require(opt.replays >= 1, "calibrate: replays must be at least 1");
  Thresholds probe = th;  // r_delta is not known yet; isolation output is ignored here
  for (std::size_t i = 0; i < runs * opt.replays; ++i) {
    const std::size_t j = i % runs;
    RunSpec rs;
    rs.x0 = test.trajectories[j].x.col(0);
    rs.span = span;
    rs.n_samples = n;
    rs.noise = opt.noise;
    rs.seed = derive_seed(opt.seed, streams::kCalibration, i);
    rs.init = opt.init;
    rs.t_pre = opt.t_pre;
    FdiReport rep = run_pipeline(sys, model, probe, rs);
    if (opt.r_delta_from == RDeltaSource::Signed)
      rep.series.r_tilde = differentiated_residuals(rep.y_meas - rep.y_pred, rep.delta);
    cal.run_max.push_back(empirical_threshold(std::span(&rep.series, 1), th.t_c));
  }
  th.r_delta = *std::max_element(cal.run_max.begin(), cal.run_max.end());
  th.calibration_runs = cal.run_max.size();
  return cal;
}

}  // namespace kklfdi
