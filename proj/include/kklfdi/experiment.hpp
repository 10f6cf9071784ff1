#pragma once

#include "kklfdi/config.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/fdi.hpp"
#include "kklfdi/io.hpp"
#include "kklfdi/observer.hpp"
#include "kklfdi/pipeline.hpp"
#include "kklfdi/training.hpp"
#include "kklfdi/verify.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace kklfdi {

namespace fs = std::filesystem;

/// A property suite failed.
class VerificationFailure : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Reference value quoted for the empirical threshold of the original
/// experiment; used for an order-of-magnitude comparison only.
inline constexpr double kReferenceRDelta = 4.74;

namespace files {
inline constexpr const char* kTrain = "train.kds";
inline constexpr const char* kTest = "test.kds";
inline constexpr const char* kGeneration = "generation_report.json";
inline constexpr const char* kModel = "model.kklm";
inline constexpr const char* kLossCurve = "loss_curve.csv";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kThresholds = "thresholds.json";
inline constexpr const char* kVerify = "verify_report.json";
inline constexpr const char* kReport = "report.json";
inline std::string run_dir(const std::string& scenario) { return "run_" + scenario; }
}  // namespace files

inline System make_system(const ExperimentConfig& cfg) {
  const auto& p = cfg.plant;
  const auto params = KuramotoParams::random(p.nodes, p.param_seed, p.omega_range, p.coupling_range,
                                             p.attractive);
  return kuramoto_system(params, p.outputs);
}

inline ObserverMatrices make_observer(const ExperimentConfig& cfg) {
  ObserverMatrices obs = build_matrices(cfg.plant.nodes, cfg.plant.outputs, cfg.observer.eig_range.lo,
                                        cfg.observer.eig_range.hi);
  if (!obs.controllable)
    throw ConfigError("observer.eig_range: (A, B) is not controllable; the eigenvalues must be distinct");
  return obs;
}

inline std::vector<Vec> initial_conditions(const ExperimentConfig& cfg, std::size_t count,
                                           std::uint64_t seed) {
  const std::vector<Interval> box(cfg.plant.nodes, cfg.plant.x0_box);
  return latin_hypercube(count, box, seed);
}

inline Vec scenario_x0(const ExperimentConfig& cfg, const ScenarioConfig& sc) {
  if (sc.x0) return *sc.x0;
  return initial_conditions(cfg, 1, derive_seed(cfg.scenario_x0_seed, streams::kScenario)).front();
}

// ---------------------------------------------------------------- generate

struct GenerateResult {
  GenerationReport train;
  GenerationReport test;
};

inline json to_json(const GenerationReport& r) {
  return {{"requested", r.requested},
          {"kept", r.kept},
          {"discarded", r.discarded},
          {"reasons", r.reasons},
          {"discard_fraction", r.discard_fraction()}};
}

inline GenerateResult cmd_generate(const ExperimentConfig& cfg, const fs::path& out) {
  const System sys = make_system(cfg);
  const ObserverMatrices obs = make_observer(cfg);
  const auto& p = cfg.plant;
  GenerateResult res;
  const auto train_x0 = initial_conditions(cfg, p.train_trajectories, derive_seed(p.train_seed, streams::kTrainSet));
  const auto test_x0 = initial_conditions(cfg, p.test_trajectories, derive_seed(p.test_seed, streams::kTestSet));
  const Dataset train = generate_training_data(sys, obs, train_x0, cfg.observer.t_pre, p.t_span, p.n_samples, &res.train);
  const Dataset test = generate_training_data(sys, obs, test_x0, cfg.observer.t_pre, p.t_span, p.n_samples, &res.test);

  json rep;
  rep["train"] = to_json(res.train);
  rep["test"] = to_json(res.test);
  rep["n_samples"] = p.n_samples;
  rep["delta"] = train.delta;
  rep["n_z"] = obs.n_z;
  rep["c"] = obs.c;
  rep["controllable"] = obs.controllable;
  rep["max_discard_fraction"] = cfg.generation.max_discard_fraction;
  io::write_file(out / files::kGeneration, io::dump(rep));

  const double worst = std::max(res.train.discard_fraction(), res.test.discard_fraction());
  if (worst > cfg.generation.max_discard_fraction)
    throw NumericalError("generate: discarded fraction " + format_double(worst) +
                         " exceeds generation.max_discard_fraction");
  io::save_dataset(out / files::kTrain, train);
  io::save_dataset(out / files::kTest, test);
  return res;
}

// ------------------------------------------------------------------- train

inline json to_json(const TrainReport& r) {
  return {{"epochs_run", r.epoch_loss.size()},
          {"epoch_loss", r.epoch_loss},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"train_rmse", r.train_rmse},
          {"train_max", r.train_max},
          {"heldout_rmse", r.heldout_rmse},
          {"heldout_max", r.heldout_max},
          {"diverged", r.diverged},
          {"message", r.message}};
}

inline json train_config_json(const TrainConfig& t) {
  return {{"hidden", t.hidden},         {"epochs", t.epochs},
          {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"lr_decay", t.lr_decay},     {"decay_interval", t.decay_interval},
          {"beta1", t.beta1},           {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},     {"chi", t.chi},
          {"lambda", t.lambda},         {"seed", t.seed},
          {"enable_physics_loss", t.enable_physics_loss},
          {"train_encoder", t.train_encoder}};
}

inline TrainReport cmd_train(const ExperimentConfig& cfg, const fs::path& out, const fs::path& dataset) {
  const System sys = make_system(cfg);
  const ObserverMatrices obs = make_observer(cfg);
  const Dataset ds = io::load_dataset(dataset);
  if (ds.n_x != obs.n_x || ds.n_z != obs.n_z)
    throw ArtifactError("train: dataset dimensions do not match the configured plant/observer");
  TrainResult tr = train(ds, cfg.training, &sys, &obs);

  std::ostringstream csv;
  csv << "epoch,learning_rate,loss\n";
  for (std::size_t e = 0; e < tr.report.epoch_loss.size(); ++e)
    csv << (e + 1) << ',' << format_double(tr.report.epoch_lr[e]) << ','
        << format_double(tr.report.epoch_loss[e]) << '\n';
  io::write_file(out / files::kLossCurve, csv.str());
  json rep = to_json(tr.report);
  rep["config"] = train_config_json(cfg.training);
  rep["train_fingerprint"] = cfg.training.fingerprint();
  rep["dataset_fingerprint"] = io::file_fingerprint(dataset);
  if (tr.report.diverged) {
    io::write_file(out / files::kTrainReport, io::dump(rep));
    throw TrainingDiverged("train: " + tr.report.message);
  }
  io::Model m;
  m.observer = obs;
  m.decoder = std::move(tr.decoder);
  m.encoder = std::move(tr.encoder);
  m.train_fingerprint = cfg.training.fingerprint();
  m.train_config = train_config_json(cfg.training);
  io::save_model(out / files::kModel, m);
  rep["model_fingerprint"] = io::file_fingerprint(out / files::kModel);
  rep["decoder_lipschitz_bound"] = m.decoder.lipschitz_bound();
  io::write_file(out / files::kTrainReport, io::dump(rep));
  return tr.report;
}

// --------------------------------------------------------------- calibrate

inline json to_json(const Thresholds& th) {
  const auto& p = th.params;
  json j;
  j["format_version"] = io::kFormatVersion;
  j["tau"] = io::to_json(th.tau);
  j["r_delta"] = th.r_delta;
  j["t_c"] = th.t_c;
  j["params"] = {{"v_bar", p.v_bar},       {"w_bar", p.w_bar},
                 {"psi_wbar", p.psi_wbar}, {"l_h", p.l_h},
                 {"l_hi", io::to_json(p.l_hi)}, {"kappa_V", p.kappa_V},
                 {"c", p.c},               {"norm_B", p.norm_B},
                 {"eps_star_hat", p.eps_star_hat}, {"l_theta", p.l_theta},
                 {"l_eta", p.l_eta},       {"xi_bound", p.xi_bound},
                 {"xi_star_bound", p.xi_star_bound},
                 {"eps_output", p.eps_output.size() ? io::to_json(p.eps_output) : json(nullptr)}};
  j["noise"] = {{"process_var", th.noise.process_var}, {"meas_var", th.noise.meas_var},
                {"w_bar", th.noise.w_bar}, {"v_bar", th.noise.v_bar}};
  j["eps_hat"] = th.eps_hat ? json(*th.eps_hat) : json(nullptr);
  j["contraction_applicable"] = th.contraction_applicable;
  j["calibration_runs"] = th.calibration_runs;
  j["model_fingerprint"] = th.model_fingerprint;
  j["test_fingerprint"] = th.test_fingerprint;
  return j;
}

inline Thresholds thresholds_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != io::kFormatVersion)
      throw ArtifactError("thresholds: unsupported format version");
    Thresholds th;
    th.tau = io::vec_from_json(j.at("tau"));
    th.r_delta = j.at("r_delta").get<double>();
    th.t_c = j.at("t_c").get<double>();
    const auto& p = j.at("params");
    auto& q = th.params;
    q.v_bar = p.at("v_bar").get<double>();
    q.w_bar = p.at("w_bar").get<double>();
    q.psi_wbar = p.at("psi_wbar").get<double>();
    q.l_h = p.at("l_h").get<double>();
    q.l_hi = io::vec_from_json(p.at("l_hi"));
    q.kappa_V = p.at("kappa_V").get<double>();
    q.c = p.at("c").get<double>();
    q.norm_B = p.at("norm_B").get<double>();
    q.eps_star_hat = p.at("eps_star_hat").get<double>();
    q.l_theta = p.at("l_theta").get<double>();
    q.l_eta = p.at("l_eta").get<double>();
    q.xi_bound = p.at("xi_bound").get<double>();
    q.xi_star_bound = p.at("xi_star_bound").get<double>();
    if (!p.at("eps_output").is_null()) q.eps_output = io::vec_from_json(p.at("eps_output"));
    const auto& n = j.at("noise");
    th.noise = {n.at("process_var").get<double>(), n.at("meas_var").get<double>(),
                n.at("w_bar").get<double>(), n.at("v_bar").get<double>()};
    if (!j.at("eps_hat").is_null()) th.eps_hat = j.at("eps_hat").get<double>();
    th.contraction_applicable = j.at("contraction_applicable").get<bool>();
    th.calibration_runs = j.at("calibration_runs").get<std::size_t>();
    th.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    th.test_fingerprint = j.at("test_fingerprint").get<std::string>();
    return th;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("thresholds: malformed file: ") + e.what());
  }
}

inline Thresholds load_thresholds(const fs::path& p) {
  json j;
  try {
    j = json::parse(io::read_file(p));
  } catch (const json::parse_error& e) {
    throw ArtifactError(p.string() + ": " + e.what());
  }
  return thresholds_from_json(j);
}

inline CalibrationOptions calibration_options(const ExperimentConfig& cfg, const NoiseSpec& noise) {
  CalibrationOptions opt;
  opt.noise = noise;
  opt.t_c = cfg.thresholds.t_c;
  opt.psi_override = cfg.thresholds.psi_override;
  opt.seed = derive_seed(cfg.seed, streams::kCalibration);
  opt.init = cfg.observer.init;
  opt.t_pre = cfg.observer.t_pre;
  opt.max_runs = cfg.thresholds.calibration_runs;
  opt.replays = cfg.thresholds.replays;
  opt.decoder_error = cfg.thresholds.decoder_error;
  opt.r_delta_from = cfg.thresholds.r_delta_from;
  return opt;
}

inline Calibration cmd_calibrate(const ExperimentConfig& cfg, const fs::path& out,
                                 const fs::path& model_path, const fs::path& test_path) {
  if (!fs::exists(test_path)) throw ArtifactError("calibrate: missing test set " + test_path.string());
  const System sys = make_system(cfg);
  const io::Model model = io::load_model(model_path);
  const Dataset test = io::load_dataset(test_path);
  Calibration cal = calibrate(sys, model, test, calibration_options(cfg, cfg.noise.spec()));
  cal.thresholds.model_fingerprint = io::file_fingerprint(model_path);
  cal.thresholds.test_fingerprint = io::file_fingerprint(test_path);
  json j = to_json(cal.thresholds);
  j["run_max"] = cal.run_max;
  j["reference_r_delta"] = kReferenceRDelta;
  j["r_delta_ratio_to_reference"] = cal.thresholds.r_delta / kReferenceRDelta;
  io::write_file(out / files::kThresholds, io::dump(j));
  return cal;
}

// --------------------------------------------------------------------- run

inline json to_json(const FdiEvent& e) {
  json j{{"kind", e.kind == FdiEvent::Kind::Detection ? "detection" : "isolation"},
         {"sensors", e.sensors},
         {"onset_index", e.k},
         {"onset_time", e.t},
         {"end_index", e.end_k},
         {"peak", e.magnitude},
         {"threshold", e.threshold}};
  return j;
}

/// Fault profile with white-noise fault draws re-seeded per run.
inline FaultProfile seeded_profile(FaultProfile profile, std::uint64_t run_seed) {
  for (auto& e : profile.events)
    if (auto* f = std::get_if<GrowingWhiteNoise>(&e.kind))
      f->seed = derive_seed(f->seed, streams::kFaultNoise, run_seed);
  return profile;
}

inline RunSpec scenario_spec(const ExperimentConfig& cfg, const std::string& scenario) {
  auto it = cfg.scenarios.find(scenario);
  if (it == cfg.scenarios.end()) throw ConfigError("unknown scenario \"" + scenario + "\"");
  RunSpec rs;
  rs.x0 = scenario_x0(cfg, it->second);
  rs.span = cfg.plant.t_span;
  rs.n_samples = cfg.plant.n_samples;
  rs.noise = cfg.noise.spec();
  rs.seed = derive_seed(cfg.seed, streams::kScenario, static_cast<std::uint64_t>(scenario[0]));
  rs.faults = seeded_profile(it->second.profile, rs.seed);
  rs.init = cfg.observer.init;
  rs.t_pre = cfg.observer.t_pre;
  return rs;
}

inline void write_series_csv(std::ostream& os, const FdiReport& r) {
  const auto ny = r.y_meas.rows();
  os << 't';
  for (const char* p : {"y", "yhat", "r", "rtilde"})
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << p << (i + 1);
  os << '\n';
  for (Eigen::Index k = 0; k < r.y_meas.cols(); ++k) {
    os << format_double(r.t0 + static_cast<double>(k) * r.delta);
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << format_double(r.y_meas(i, k));
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << format_double(r.y_pred(i, k));
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << format_double(r.series.r(i, k));
    for (Eigen::Index i = 0; i < ny; ++i) {
      os << ',';
      if (k > 0) os << format_double(r.series.r_tilde(i, k - 1));
    }
    os << '\n';
  }
}

inline json events_json(const std::string& scenario, const RunSpec& rs, const FdiReport& r,
                        const Thresholds& th) {
  json j;
  j["scenario"] = scenario;
  j["seed"] = rs.seed;
  j["x0"] = io::to_json(rs.x0);
  json faults = json::array();
  for (const auto& e : rs.faults.events) faults.push_back(detail::event_to_json(e));
  j["faults"] = faults;
  j["tau"] = io::to_json(th.tau);
  j["r_delta"] = th.r_delta;
  j["t_c"] = th.t_c;
  j["model_fingerprint"] = th.model_fingerprint;
  json det = json::array(), iso = json::array();
  for (const auto& e : r.detections) det.push_back(to_json(e));
  for (const auto& e : r.isolations) iso.push_back(to_json(e));
  j["detections"] = det;
  j["isolations"] = iso;
  return j;
}

inline FdiReport cmd_run(const ExperimentConfig& cfg, const fs::path& out, const fs::path& model_path,
                         const fs::path& thresholds_path, const std::string& scenario) {
  const io::Model model = io::load_model(model_path);
  const Thresholds th = load_thresholds(thresholds_path);
  const std::string fp = io::file_fingerprint(model_path);
  if (th.model_fingerprint != fp)
    throw ArtifactError("run: thresholds were calibrated for model " + th.model_fingerprint +
                        ", not for the supplied model " + fp);
  const System sys = make_system(cfg);
  const RunSpec rs = scenario_spec(cfg, scenario);
  const FdiReport rep = run_pipeline(sys, model, th, rs);
  const fs::path dir = out / files::run_dir(scenario);
  std::ostringstream series;
  write_series_csv(series, rep);
  io::write_file(dir / "series.csv", series.str());
  Trajectory traj{rep.t0, rep.delta, rep.states, rep.y_meas};
  std::ostringstream tcsv;
  write_trajectory_csv(tcsv, traj);
  io::write_file(dir / "trajectory.csv", tcsv.str());
  io::write_file(dir / "events.json", io::dump(events_json(scenario, rs, rep, th)));
  return rep;
}

// ------------------------------------------------------------------ verify

inline verify::Report run_verification(const ExperimentConfig& cfg) {
  const System sys = make_system(cfg);
  const ObserverMatrices obs = make_observer(cfg);
  const NoiseSpec noise = cfg.noise.spec();
  const std::uint64_t base = derive_seed(cfg.seed, streams::kVerify);
  verify::Report rep;
  rep.suites.push_back(verify::rk4_order());
  rep.suites.push_back(verify::gradient_check(derive_seed(base, 1)));
  rep.suites.push_back(verify::jacobian_check(derive_seed(base, 2)));
  rep.suites.push_back(verify::exp_inequalities(obs, cfg.verify.random_matrices, cfg.verify.grid_points,
                                                cfg.verify.quad_intervals, derive_seed(base, 3)));
  rep.suites.push_back(verify::ztilde_bound(sys, obs, cfg.plant.x0_box, cfg.plant.t_span, cfg.plant.n_samples,
                                            noise, cfg.observer.t_pre, cfg.verify.mc_runs, derive_seed(base, 4)));
  ThresholdParams p;
  p.v_bar = noise.v_bar;
  p.w_bar = noise.w_bar;
  p.psi_wbar = noise.w_bar;
  p.l_h = sys.output_lipschitz;
  p.l_hi = sys.sensor_lipschitz;
  p.kappa_V = obs.kappa_V;
  p.c = obs.c;
  p.norm_B = spectral_norm2(obs.B);
  p.eps_star_hat = 0.1;
  p.l_eta = 1.0;
  rep.suites.push_back(verify::threshold_limit(p, sys.output_dim, derive_seed(base, 5)));
  const double expected_c = std::min(std::abs(cfg.observer.eig_range.lo), std::abs(cfg.observer.eig_range.hi));
  rep.suites.push_back(verify::observer_constants(obs, expected_c));
  return rep;
}

inline verify::Report cmd_verify(const ExperimentConfig& cfg, const fs::path& out) {
  verify::Report rep = run_verification(cfg);
  io::write_file(out / files::kVerify, io::dump(rep.to_json()));
  if (!rep.passed()) {
    std::string failed;
    for (const auto& s : rep.suites)
      if (!s.passed) failed += (failed.empty() ? "" : ", ") + s.name;
    throw VerificationFailure("verify: failed suites: " + failed);
  }
  return rep;
}

// ------------------------------------------------------------------ report

inline json read_json_if_present(const fs::path& p) {
  if (!fs::exists(p)) return nullptr;
  try {
    return json::parse(io::read_file(p));
  } catch (const json::parse_error& e) {
    throw ArtifactError(p.string() + ": " + e.what());
  }
}

/// Collects the artifacts present in `out` into one summary.
inline json cmd_report(const ExperimentConfig& cfg, const fs::path& out) {
  json r;
  r["config"] = to_json(cfg);
  r["generation"] = read_json_if_present(out / files::kGeneration);
  if (json t = read_json_if_present(out / files::kTrainReport); !t.is_null()) {
    t.erase("epoch_loss");
    r["training"] = t;
  } else {
    r["training"] = nullptr;
  }
  if (json th = read_json_if_present(out / files::kThresholds); !th.is_null()) {
    th.erase("run_max");
    r["thresholds"] = th;
  } else {
    r["thresholds"] = nullptr;
  }
  json v = read_json_if_present(out / files::kVerify);
  if (!v.is_null()) {
    json s = json::object();
    for (const auto& suite : v.at("suites")) s[suite.at("name").get<std::string>()] = suite.at("passed");
    r["verification"] = {{"passed", v.at("passed")}, {"suites", s}};
  } else {
    r["verification"] = nullptr;
  }
  json runs = json::object();
  for (const auto& [id, sc] : cfg.scenarios) {
    json ev = read_json_if_present(out / files::run_dir(id) / "events.json");
    if (ev.is_null()) continue;
    json summary;
    const auto& det = ev.at("detections");
    const auto& iso = ev.at("isolations");
    summary["detections"] = det.size();
    summary["first_detection_time"] = det.empty() ? json(nullptr) : det[0].at("onset_time");
    json per_sensor = json::object();
    for (const auto& e : iso) {
      const std::string s = std::to_string(e.at("sensors")[0].get<std::size_t>());
      if (!per_sensor.contains(s)) per_sensor[s] = json::array();
      per_sensor[s].push_back(e.at("onset_time"));
    }
    summary["isolation_times_by_sensor"] = per_sensor;
    summary["faults"] = ev.at("faults");
    runs[id] = summary;
  }
  r["runs"] = runs;
  io::write_file(out / files::kReport, io::dump(r));
  return r;
}

}  // namespace kklfdi
