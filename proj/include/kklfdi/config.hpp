#pragma once

#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/faults.hpp"
#include "kklfdi/pipeline.hpp"
#include "kklfdi/training.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kklfdi {

using json = nlohmann::json;

struct PlantConfig {
  std::size_t nodes = 10;
  std::size_t outputs = 5;
  std::uint64_t param_seed = 1;
  Interval omega_range{-1.0, 1.0};
  Interval coupling_range{0.0, 1.0};
  bool attractive = true;  // sin(theta_j - theta_i); false flips the coupling sign
  Interval x0_box{-2.0, 2.0};
  Interval t_span{0.0, 30.0};
  std::size_t n_samples = 4000;
  std::size_t train_trajectories = 50;
  std::size_t test_trajectories = 100;
  std::uint64_t train_seed = 2;
  std::uint64_t test_seed = 3;
};

struct ObserverConfig {
  Interval eig_range{-15.0, -21.0};
  double t_pre = 0.5;
  ObserverInit init = ObserverInit::Truncation;
};

enum class NoiseReading { StdDev, Variance };

struct NoiseConfig {
  double process = 0.02;
  double measurement = 0.02;
  NoiseReading reading = NoiseReading::StdDev;
  double bound_sigmas = 3.0;

  double as_variance(double v) const { return reading == NoiseReading::Variance ? v : v * v; }
  NoiseSpec spec() const {
    return NoiseSpec::gaussian(as_variance(process), as_variance(measurement), bound_sigmas);
  }
};

struct ThresholdConfig {
  std::optional<double> t_c;
  std::optional<double> psi_override;
  std::size_t calibration_runs = 0;  // 0: the whole test set
  std::size_t replays = 10;
  DecoderErrorBound decoder_error = DecoderErrorBound::Output;
  RDeltaSource r_delta_from = RDeltaSource::Signed;
};

struct ScenarioConfig {
  FaultProfile profile;
  std::optional<Vec> x0;
};

struct VerifyConfig {
  std::size_t mc_runs = 100;
  std::size_t random_matrices = 20;
  std::size_t grid_points = 100;
  std::size_t quad_intervals = 10000;
};

struct GenerationConfig {
  double max_discard_fraction = 0.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  PlantConfig plant;
  ObserverConfig observer;
  NoiseConfig noise;
  TrainConfig training;
  ThresholdConfig thresholds;
  std::uint64_t scenario_x0_seed = 5;
  std::map<std::string, ScenarioConfig> scenarios;
  GenerationConfig generation;
  VerifyConfig verify;
};

inline std::map<std::string, ScenarioConfig> default_scenarios() {
  std::map<std::string, ScenarioConfig> s;
  s["a"].profile.events = {{4, 5.0, CompleteFailure{}}};
  s["b"].profile.events = {{1, 5.0, StepBias{1.0}}, {5, 15.0, StepBias{1.0}}};
  s["c"].profile.events = {{2, 5.0, Sigmoid{}}};
  s["d"].profile.events = {{3, 5.0, GrowingWhiteNoise{10.0, 1.0, 17}}};
  s["e"].profile.events = {{3, 5.0, GrowingSinusoid{}}};
  return s;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.training.seed = 4;
  c.scenarios = default_scenarios();
  return c;
}

namespace detail {

/// Reads an object while tracking which keys were consumed; leftovers are
/// rejected by `finish`.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const json* v = get(key)) out = convert<T>(*v, where(key));
  }

  void read_interval(const std::string& key, Interval& out) {
    if (const json* v = get(key)) {
      if (!v->is_array() || v->size() != 2) throw ConfigError(where(key) + ": expected [lo, hi]");
      out = {convert<double>((*v)[0], where(key)), convert<double>((*v)[1], where(key))};
    }
  }

  template <class T>
  void read_optional(const std::string& key, std::optional<T>& out) {
    if (const json* v = get(key)) {
      if (v->is_null())
        out.reset();
      else
        out = convert<T>(*v, where(key));
    }
  }

  Section child(const std::string& key) {
    const json* v = get(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, where(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()))
        throw ConfigError(where + ": expected a nonnegative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw ConfigError(where + ": expected a finite number");
      return d;
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array()) throw ConfigError(where + ": expected an array");
      std::vector<std::size_t> out;
      for (const auto& e : v) out.push_back(convert<std::size_t>(e, where));
      return out;
    } else if constexpr (std::is_same_v<T, Vec>) {
      if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
      Vec out(static_cast<Eigen::Index>(v.size()));
      for (std::size_t i = 0; i < v.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = convert<double>(v[i], where);
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline FaultEvent parse_event(const json& j, const std::string& path) {
  Section s(j, path);
  FaultEvent e;
  s.read("sensor", e.sensor);
  s.read("onset", e.onset);
  std::string kind;
  if (const json* k = s.get("kind"))
    kind = Section::convert<std::string>(*k, s.where("kind"));
  else
    throw ConfigError(path + ": missing \"kind\"");
  if (kind == "complete_failure") {
    e.kind = CompleteFailure{};
  } else if (kind == "step_bias") {
    StepBias f;
    s.read("level", f.level);
    e.kind = f;
  } else if (kind == "sigmoid") {
    Sigmoid f;
    s.read("level", f.level);
    s.read("rate", f.rate);
    s.read("center", f.center);
    e.kind = f;
  } else if (kind == "growing_white_noise") {
    GrowingWhiteNoise f;
    s.read("ramp", f.ramp);
    s.read("final_sigma", f.final_sigma);
    s.read("seed", f.seed);
    if (f.ramp < 0.0 || f.final_sigma < 0.0) throw ConfigError(path + ": ramp and sigma must be nonnegative");
    e.kind = f;
  } else if (kind == "growing_sinusoid") {
    GrowingSinusoid f;
    s.read("final_amplitude", f.final_amplitude);
    s.read("frequency", f.frequency);
    s.read("ramp", f.ramp);
    if (f.ramp < 0.0) throw ConfigError(path + ": ramp must be nonnegative");
    e.kind = f;
  } else {
    throw ConfigError(path + ".kind: unknown fault kind \"" + kind + "\"");
  }
  s.finish();
  return e;
}

inline json event_to_json(const FaultEvent& e) {
  json j{{"sensor", e.sensor}, {"onset", e.onset}, {"kind", kind_name(e.kind)}};
  if (const auto* f = std::get_if<StepBias>(&e.kind)) j["level"] = f->level;
  if (const auto* f = std::get_if<Sigmoid>(&e.kind)) {
    j["level"] = f->level;
    j["rate"] = f->rate;
    j["center"] = f->center;
  }
  if (const auto* f = std::get_if<GrowingWhiteNoise>(&e.kind)) {
    j["ramp"] = f->ramp;
    j["final_sigma"] = f->final_sigma;
    j["seed"] = f->seed;
  }
  if (const auto* f = std::get_if<GrowingSinusoid>(&e.kind)) {
    j["final_amplitude"] = f->final_amplitude;
    j["frequency"] = f->frequency;
    j["ramp"] = f->ramp;
  }
  return j;
}

}  // namespace detail

/// Semantic checks; also run on defaults so a partial file cannot leave an
/// inconsistent configuration behind.
inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  const auto& p = c.plant;
  if (p.nodes == 0) fail("plant.nodes must be positive");
  if (p.outputs == 0 || p.outputs > p.nodes) fail("plant.outputs must be in [1, plant.nodes]");
  if (!(p.omega_range.lo <= p.omega_range.hi)) fail("plant.omega_range must satisfy lo <= hi");
  if (!(p.coupling_range.lo <= p.coupling_range.hi)) fail("plant.coupling_range must satisfy lo <= hi");
  if (!(p.x0_box.lo < p.x0_box.hi)) fail("plant.x0_box must satisfy lo < hi");
  if (!(p.t_span.lo < p.t_span.hi)) fail("plant.t_span must satisfy start < end");
  if (p.n_samples < 2) fail("plant.n_samples must be at least 2");
  if (p.train_trajectories == 0) fail("plant.train_trajectories must be positive");
  if (p.test_trajectories == 0) fail("plant.test_trajectories must be positive");
  const auto& o = c.observer;
  if (!(o.t_pre > 0.0)) fail("observer.t_pre must be positive");
  if (!(c.noise.process >= 0.0 && c.noise.measurement >= 0.0)) fail("noise levels must be nonnegative");
  if (!(c.noise.bound_sigmas > 0.0)) fail("noise.bound_sigmas must be positive");
  try {
    c.training.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
  if (c.thresholds.t_c && !(*c.thresholds.t_c >= 0.0)) fail("thresholds.t_c must be nonnegative");
  if (c.thresholds.psi_override && !(*c.thresholds.psi_override >= 0.0))
    fail("thresholds.psi_override must be nonnegative");
  if (!(c.generation.max_discard_fraction >= 0.0 && c.generation.max_discard_fraction <= 1.0))
    fail("generation.max_discard_fraction must be in [0, 1]");
  if (c.verify.grid_points < 2 || c.verify.quad_intervals < 2 || c.verify.quad_intervals % 2 != 0)
    fail("verify: grid_points >= 2 and an even quad_intervals >= 2 are required");
  for (const auto& [id, sc] : c.scenarios) {
    try {
      sc.profile.validate(p.outputs);
    } catch (const InvalidArgument& e) {
      fail("scenarios." + id + ": " + e.what());
    }
    if (sc.x0 && static_cast<std::size_t>(sc.x0->size()) != p.nodes)
      fail("scenarios." + id + ".x0 must have plant.nodes entries");
  }
}

inline ExperimentConfig parse_config(const json& j) {
  using detail::Section;
  ExperimentConfig c = default_config();
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);

  {
    Section s = root.child("plant");
    auto& p = c.plant;
    s.read("nodes", p.nodes);
    s.read("outputs", p.outputs);
    s.read("param_seed", p.param_seed);
    s.read_interval("omega_range", p.omega_range);
    s.read_interval("coupling_range", p.coupling_range);
    std::string sign = p.attractive ? "attractive" : "repulsive";
    s.read("coupling_sign", sign);
    if (sign != "attractive" && sign != "repulsive")
      throw ConfigError("plant.coupling_sign: expected \"attractive\" or \"repulsive\"");
    p.attractive = sign == "attractive";
    s.read_interval("x0_box", p.x0_box);
    s.read_interval("t_span", p.t_span);
    s.read("n_samples", p.n_samples);
    s.read("train_trajectories", p.train_trajectories);
    s.read("test_trajectories", p.test_trajectories);
    s.read("train_seed", p.train_seed);
    s.read("test_seed", p.test_seed);
    s.finish();
  }
  {
    Section s = root.child("observer");
    s.read_interval("eig_range", c.observer.eig_range);
    s.read("t_pre", c.observer.t_pre);
    std::string init = c.observer.init == ObserverInit::Zero ? "zero" : "truncation";
    s.read("init", init);
    if (init != "zero" && init != "truncation")
      throw ConfigError("observer.init: expected \"zero\" or \"truncation\"");
    c.observer.init = init == "zero" ? ObserverInit::Zero : ObserverInit::Truncation;
    s.finish();
  }
  {
    Section s = root.child("noise");
    s.read("process", c.noise.process);
    s.read("measurement", c.noise.measurement);
    std::string reading = c.noise.reading == NoiseReading::Variance ? "variance" : "std";
    s.read("interpretation", reading);
    if (reading != "std" && reading != "variance")
      throw ConfigError("noise.interpretation: expected \"std\" or \"variance\"");
    c.noise.reading = reading == "variance" ? NoiseReading::Variance : NoiseReading::StdDev;
    s.read("bound_sigmas", c.noise.bound_sigmas);
    s.finish();
  }
  {
    Section s = root.child("training");
    auto& t = c.training;
    s.read("hidden", t.hidden);
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("learning_rate", t.learning_rate);
    s.read("lr_decay", t.lr_decay);
    s.read("decay_interval", t.decay_interval);
    s.read("beta1", t.beta1);
    s.read("beta2", t.beta2);
    s.read("adam_eps", t.adam_eps);
    s.read("chi", t.chi);
    s.read("lambda", t.lambda);
    s.read("seed", t.seed);
    s.read("enable_physics_loss", t.enable_physics_loss);
    s.read("train_encoder", t.train_encoder);
    s.finish();
  }
  {
    Section s = root.child("thresholds");
    s.read_optional("t_c", c.thresholds.t_c);
    s.read_optional("psi_override", c.thresholds.psi_override);
    s.read("calibration_runs", c.thresholds.calibration_runs);
    s.read("replays", c.thresholds.replays);
    if (c.thresholds.replays == 0) throw ConfigError("thresholds.replays: must be at least 1");
    std::string bound = c.thresholds.decoder_error == DecoderErrorBound::State ? "state" : "output";
    s.read("decoder_error", bound);
    if (bound != "state" && bound != "output")
      throw ConfigError("thresholds.decoder_error: expected \"output\" or \"state\"");
    c.thresholds.decoder_error = bound == "state" ? DecoderErrorBound::State : DecoderErrorBound::Output;
    std::string from = c.thresholds.r_delta_from == RDeltaSource::Folded ? "folded" : "signed";
    s.read("r_delta_from", from);
    if (from != "signed" && from != "folded")
      throw ConfigError("thresholds.r_delta_from: expected \"signed\" or \"folded\"");
    c.thresholds.r_delta_from = from == "folded" ? RDeltaSource::Folded : RDeltaSource::Signed;
    s.finish();
  }
  if (root.has("scenarios")) {
    Section s = root.child("scenarios");
    s.read("x0_seed", c.scenario_x0_seed);
    const json& raw = *j.find("scenarios");
    for (auto it = raw.begin(); it != raw.end(); ++it) {
      if (it.key() == "x0_seed") continue;
      const std::string& id = it.key();
      if (id.size() != 1 || id[0] < 'a' || id[0] > 'z')
        throw ConfigError("scenarios." + id + ": scenario ids are single lowercase letters");
      Section sc = s.child(id);
      ScenarioConfig out;
      if (const json* ev = sc.get("events")) {
        if (!ev->is_array()) throw ConfigError(sc.where("events") + ": expected an array");
        for (std::size_t i = 0; i < ev->size(); ++i)
          out.profile.events.push_back(
              detail::parse_event((*ev)[i], sc.where("events") + "[" + std::to_string(i) + "]"));
      }
      sc.read_optional("x0", out.x0);
      sc.finish();
      c.scenarios[id] = std::move(out);
    }
    s.finish();
  }
  {
    Section s = root.child("generation");
    s.read("max_discard_fraction", c.generation.max_discard_fraction);
    s.finish();
  }
  {
    Section s = root.child("verify");
    s.read("mc_runs", c.verify.mc_runs);
    s.read("random_matrices", c.verify.random_matrices);
    s.read("grid_points", c.verify.grid_points);
    s.read("quad_intervals", c.verify.quad_intervals);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path))
    throw ConfigError(path.string() + ": configuration file not found");
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

/// Canonical form of a configuration; parse_config(to_json(c)) == c.
inline json to_json(const ExperimentConfig& c) {
  auto iv = [](Interval i) { return json::array({i.lo, i.hi}); };
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& p = c.plant;
  j["plant"] = {{"nodes", p.nodes},
                {"outputs", p.outputs},
                {"param_seed", p.param_seed},
                {"omega_range", iv(p.omega_range)},
                {"coupling_range", iv(p.coupling_range)},
                {"coupling_sign", p.attractive ? "attractive" : "repulsive"},
                {"x0_box", iv(p.x0_box)},
                {"t_span", iv(p.t_span)},
                {"n_samples", p.n_samples},
                {"train_trajectories", p.train_trajectories},
                {"test_trajectories", p.test_trajectories},
                {"train_seed", p.train_seed},
                {"test_seed", p.test_seed}};
  j["observer"] = {{"eig_range", iv(c.observer.eig_range)},
                   {"t_pre", c.observer.t_pre},
                   {"init", c.observer.init == ObserverInit::Zero ? "zero" : "truncation"}};
  j["noise"] = {{"process", c.noise.process},
                {"measurement", c.noise.measurement},
                {"interpretation", c.noise.reading == NoiseReading::Variance ? "variance" : "std"},
                {"bound_sigmas", c.noise.bound_sigmas}};
  const auto& t = c.training;
  j["training"] = {{"hidden", t.hidden},         {"epochs", t.epochs},
                   {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                   {"lr_decay", t.lr_decay},     {"decay_interval", t.decay_interval},
                   {"beta1", t.beta1},           {"beta2", t.beta2},
                   {"adam_eps", t.adam_eps},     {"chi", t.chi},
                   {"lambda", t.lambda},         {"seed", t.seed},
                   {"enable_physics_loss", t.enable_physics_loss},
                   {"train_encoder", t.train_encoder}};
  j["thresholds"] = {{"t_c", c.thresholds.t_c ? json(*c.thresholds.t_c) : json(nullptr)},
                     {"psi_override", c.thresholds.psi_override ? json(*c.thresholds.psi_override) : json(nullptr)},
                     {"calibration_runs", c.thresholds.calibration_runs},
                     {"replays", c.thresholds.replays},
                     {"decoder_error", c.thresholds.decoder_error == DecoderErrorBound::State ? "state" : "output"},
                     {"r_delta_from", c.thresholds.r_delta_from == RDeltaSource::Folded ? "folded" : "signed"}};
  json sc = {{"x0_seed", c.scenario_x0_seed}};
  for (const auto& [id, s] : c.scenarios) {
    json ev = json::array();
    for (const auto& e : s.profile.events) ev.push_back(detail::event_to_json(e));
    sc[id] = {{"events", ev}, {"x0", s.x0 ? io::to_json(*s.x0) : json(nullptr)}};
  }
  j["scenarios"] = sc;
  j["generation"] = {{"max_discard_fraction", c.generation.max_discard_fraction}};
  j["verify"] = {{"mc_runs", c.verify.mc_runs},
                 {"random_matrices", c.verify.random_matrices},
                 {"grid_points", c.verify.grid_points},
                 {"quad_intervals", c.verify.quad_intervals}};
  return j;
}

}  // namespace kklfdi
