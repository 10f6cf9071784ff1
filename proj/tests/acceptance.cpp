// End-to-end acceptance run at the full experiment scale. Prints one
// PASS/FAIL line per criterion and exits non-zero if any fails.

#include "kklfdi/kklfdi.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sys/wait.h>

using namespace kklfdi;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kAcceptance = 0x61636365ULL;

struct Verdict {
  int id;
  std::string name;
  bool pass;
  json detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t first_index_at(double t, const FdiReport& r) {
  return static_cast<std::size_t>(std::ceil((t - r.t0) / r.delta - 1e-9));
}

RunSpec fault_free_spec(const ExperimentConfig& cfg, const Vec& x0, const NoiseSpec& noise, std::uint64_t seed) {
  RunSpec rs;
  rs.x0 = x0;
  rs.span = cfg.plant.t_span;
  rs.n_samples = cfg.plant.n_samples;
  rs.noise = noise;
  rs.seed = seed;
  rs.init = cfg.observer.init;
  rs.t_pre = cfg.observer.t_pre;
  return rs;
}

std::vector<FdiReport> scenario_reruns(const ExperimentConfig& cfg, const System& sys, const io::Model& model,
                                       const Thresholds& th, const std::string& id, std::size_t reruns) {
  std::vector<FdiReport> out;
  for (std::size_t s = 0; s < reruns; ++s) {
    ExperimentConfig c = cfg;
    c.seed = derive_seed(cfg.seed, kAcceptance, 100 + s);
    out.push_back(run_pipeline(sys, model, th, scenario_spec(c, id)));
  }
  return out;
}

bool has_isolation(const FdiReport& r, std::size_t sensor, std::size_t lo, std::size_t hi) {
  for (const auto& e : r.isolations)
    if (e.sensors.front() == sensor && e.k >= lo && e.k <= hi) return true;
  return false;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KKLFDI_CLI) + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

bool same_tree(const fs::path& a, const fs::path& b, json& diffs) {
  bool same = true;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++n;
    if (!fs::exists(b / rel) || io::read_file(e.path()) != io::read_file(b / rel)) {
      diffs.push_back(rel.string());
      same = false;
    }
  }
  return same && n > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  fs::path work = "acceptance";
  fs::path config_path;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--config", config_path, "Experiment configuration")->required()->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  std::vector<Verdict> verdicts;
  auto report = [&](Verdict v) {
    std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << "criterion " << v.id << " " << v.name << ": " << v.detail.dump()
              << std::endl;
    verdicts.push_back(std::move(v));
  };

  try {
    const ExperimentConfig cfg = load_config(config_path);
    fs::remove_all(work);
    const fs::path main_dir = work / "main";
    fs::create_directories(main_dir);

    // Generate, train, calibrate.
    const auto t_start = std::chrono::steady_clock::now();
    cmd_generate(cfg, main_dir);
    const double t_gen = seconds_since(t_start);
    const TrainReport trep = cmd_train(cfg, main_dir, main_dir / files::kTrain);
    const double t_train = seconds_since(t_start) - t_gen;
    const Calibration cal = cmd_calibrate(cfg, main_dir, main_dir / files::kModel, main_dir / files::kTest);
    const double t_pipeline = seconds_since(t_start);
    std::cout << "pipeline: generate " << t_gen << " s, train " << t_train << " s, total " << t_pipeline << " s"
              << std::endl;

    const System sys = make_system(cfg);
    const io::Model model = io::load_model(main_dir / files::kModel);
    const Thresholds& th = cal.thresholds;
    const Dataset test = io::load_dataset(main_dir / files::kTest);
    const std::size_t n_y = sys.output_dim;

    // 1: thresholds and runs at measurement/process variance 0.02.
    {
      ExperimentConfig vcfg = cfg;
      vcfg.noise.reading = NoiseReading::Variance;
      vcfg.noise.process = 0.02;
      vcfg.noise.measurement = 0.02;
      const NoiseSpec vnoise = vcfg.noise.spec();
      const Calibration vcal = calibrate(sys, model, test, calibration_options(vcfg, vnoise));
      const auto x0s = initial_conditions(cfg, 10, derive_seed(cfg.seed, kAcceptance, 1));
      Vec within = Vec::Zero(static_cast<Eigen::Index>(n_y));
      double counted = 0.0;
      for (std::size_t j = 0; j < x0s.size(); ++j) {
        const auto rep = run_pipeline(sys, model, vcal.thresholds,
                                      fault_free_spec(cfg, x0s[j], vnoise, derive_seed(cfg.seed, kAcceptance, 10 + j)));
        for (Eigen::Index k = 0; k < rep.series.r.cols(); ++k) {
          if (rep.t0 + static_cast<double>(k) * rep.delta < vcal.thresholds.t_c) continue;
          counted += 1.0;
          for (Eigen::Index i = 0; i < rep.series.r.rows(); ++i)
            within[i] += rep.series.r(i, k) <= vcal.thresholds.tau[i] ? 1.0 : 0.0;
        }
      }
      const Vec frac = within / counted;
      const bool pass = frac.minCoeff() >= 0.99 && t_pipeline < 3600.0;
      report({1, "observer quality",  pass,
              {{"fraction_within_tau", io::to_json(frac)},
               {"tau", io::to_json(vcal.thresholds.tau)},
               {"pipeline_seconds", t_pipeline},
               {"heldout_rmse", trep.heldout_rmse}}});
    }

    // 2-5: fault scenarios, 10 seeded reruns each.
    const std::size_t reruns = 10;
    {
      const auto runs = scenario_reruns(cfg, sys, model, th, "a", reruns);
      std::size_t ok = 0;
      json per = json::array();
      for (const auto& r : runs) {
        const std::size_t kf = first_index_at(5.0, r);
        bool det = false;
        for (const auto& e : r.detections)
          if (e.k >= kf && e.k <= kf + 5) det = true;
        const bool iso = has_isolation(r, 4, kf, kf);
        ok += det && iso ? 1 : 0;
        per.push_back({{"detected", det}, {"isolated", iso}});
      }
      report({2, "scenario a complete failure", ok >= 9, {{"passing_reruns", ok}, {"runs", per}}});
    }
    {
      const auto runs = scenario_reruns(cfg, sys, model, th, "b", reruns);
      std::size_t ok = 0;
      json per = json::array();
      for (const auto& r : runs) {
        const std::size_t k1 = first_index_at(5.0, r), k5 = first_index_at(15.0, r);
        const bool iso1 = has_isolation(r, 1, k1 - 5, k1 + 5);
        const bool iso5 = has_isolation(r, 5, k5 - 5, k5 + 5);
        bool spurious = false;
        for (double onset : {5.0, 15.0}) {
          const std::size_t lo = first_index_at(onset - 1.0, r), hi = first_index_at(onset + 1.0, r);
          for (std::size_t s = 2; s <= 4; ++s) spurious = spurious || has_isolation(r, s, lo, hi);
        }
        ok += iso1 && iso5 && !spurious ? 1 : 0;
        per.push_back({{"sensor1", iso1}, {"sensor5", iso5}, {"spurious", spurious}});
      }
      report({3, "scenario b step degradation", ok >= 9, {{"passing_reruns", ok}, {"runs", per}}});
    }
    {
      const auto runs = scenario_reruns(cfg, sys, model, th, "c", reruns);
      std::size_t ok = 0;
      json per = json::array();
      for (const auto& r : runs) {
        const std::size_t kf = first_index_at(5.0, r);
        bool det = false;
        for (const auto& e : r.detections)
          if (e.end_k >= kf) det = true;
        ok += det && r.isolations.empty() ? 1 : 0;
        per.push_back({{"detected", det}, {"isolations", r.isolations.size()}});
      }
      report({4, "scenario c sigmoid", ok >= 9, {{"passing_reruns", ok}, {"runs", per}}});
    }
    {
      std::size_t ok = 0;
      json per = json::object();
      bool all = true;
      for (const std::string id : {"d", "e"}) {
        const auto runs = scenario_reruns(cfg, sys, model, th, id, reruns);
        const auto& ev = cfg.scenarios.at(id).profile.events.front();
        const double ramp = std::visit(
            [](const auto& f) -> double {
              if constexpr (requires { f.ramp; }) return f.ramp;
              return 0.0;
            },
            ev.kind);
        std::size_t good = 0;
        json arr = json::array();
        for (const auto& r : runs) {
          const std::size_t kf = first_index_at(ev.onset, r);
          bool det = false;
          for (const auto& e : r.detections)
            if (e.end_k >= kf) det = true;
          double delay = -1.0;
          for (const auto& e : r.isolations)
            if (e.k >= kf && e.sensors.front() == ev.sensor) {
              delay = e.t - ev.onset;
              break;
            }
          const bool pass = det && delay > 0.0 && delay < ramp;
          good += pass ? 1 : 0;
          arr.push_back({{"detected", det}, {"isolation_delay", delay}});
        }
        all = all && good >= 9;
        ok += good;
        per[id] = {{"passing_reruns", good}, {"runs", arr}};
      }
      report({5, "scenarios d/e growing faults", all, per});
    }

    // 6: fault-free exceedance of r_Delta.
    {
      const NoiseSpec noise = cfg.noise.spec();
      const auto x0s = initial_conditions(cfg, 20, derive_seed(cfg.seed, kAcceptance, 2));
      double above = 0.0, counted = 0.0;
      for (std::size_t j = 0; j < x0s.size(); ++j) {
        const auto rep =
            run_pipeline(sys, model, th, fault_free_spec(cfg, x0s[j], noise, derive_seed(cfg.seed, kAcceptance, 50 + j)));
        const auto& rt = rep.series.r_tilde;
        for (Eigen::Index c = 0; c < rt.cols(); ++c) {
          if (rep.t0 + static_cast<double>(c + 1) * rep.delta < th.t_c) continue;
          for (Eigen::Index i = 0; i < rt.rows(); ++i) {
            counted += 1.0;
            above += rt(i, c) > th.r_delta ? 1.0 : 0.0;
          }
        }
      }
      const double frac = above / counted;
      const double ratio = th.r_delta / kReferenceRDelta;
      report({6, "empirical threshold", frac <= 1e-3 && ratio >= 0.1 && ratio <= 10.0,
              {{"exceedance_fraction", frac}, {"r_delta", th.r_delta}, {"reference", kReferenceRDelta},
               {"ratio", ratio}}});
    }

    // 7: property suites.
    {
      const auto t0 = std::chrono::steady_clock::now();
      const verify::Report vr = cmd_verify(cfg, main_dir);
      const double secs = seconds_since(t0);
      json s = json::object();
      for (const auto& suite : vr.suites) s[suite.name] = suite.passed;
      report({7, "numerical properties", vr.passed() && secs < 600.0, {{"suites", s}, {"seconds", secs}}});
    }

    // 8: reruns through the command-line tool are byte-identical.
    {
      json detail = json::object();
      bool pass = true;
      const fs::path a = work / "rerun_a", b = work / "rerun_b";
      const std::string cfgarg = " --config " + config_path.string();
      for (const fs::path& d : {a, b}) {
        fs::create_directories(d);
        fs::copy_file(main_dir / files::kModel, d / files::kModel);
        int rc = run_cli("generate" + cfgarg + " --out " + d.string());
        rc = rc ? rc : run_cli("calibrate" + cfgarg + " --out " + d.string());
        for (const char* s : {"a", "b", "c", "d", "e"})
          rc = rc ? rc : run_cli(std::string("run --scenario ") + s + cfgarg + " --out " + d.string());
        rc = rc ? rc : run_cli("verify" + cfgarg + " --out " + d.string());
        rc = rc ? rc : run_cli("report" + cfgarg + " --out " + d.string());
        pass = pass && rc == 0;
        detail["exit_" + d.filename().string()] = rc;
      }
      json diffs = json::array();
      pass = pass && same_tree(a, b, diffs);
      for (const char* f : {files::kTrain, files::kTest, files::kThresholds})
        if (io::read_file(a / f) != io::read_file(main_dir / f)) {
          diffs.push_back(std::string("main vs rerun: ") + f);
          pass = false;
        }
      // Training twice on the full training set with a short schedule.
      ExperimentConfig short_cfg = cfg;
      short_cfg.training.epochs = 1;
      for (const fs::path& d : {work / "train_a", work / "train_b"}) {
        fs::create_directories(d);
        cmd_train(short_cfg, d, main_dir / files::kTrain);
      }
      for (const char* f : {files::kModel, files::kLossCurve, files::kTrainReport})
        if (io::read_file(work / "train_a" / f) != io::read_file(work / "train_b" / f)) {
          diffs.push_back(std::string("train: ") + f);
          pass = false;
        }
      detail["differences"] = diffs;
      report({8, "determinism", pass, detail});
    }
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
  }

  for (int id = 1; id <= 8; ++id) {
    bool seen = false;
    for (const auto& v : verdicts) seen = seen || v.id == id;
    if (!seen) report({id, "not evaluated", false, json::object()});
  }
  json out = json::array();
  bool all = true;
  for (const auto& v : verdicts) {
    out.push_back({{"criterion", v.id}, {"name", v.name}, {"pass", v.pass}, {"detail", v.detail}});
    all = all && v.pass;
  }
  io::write_file(work / "acceptance_report.json", io::dump(out));
  std::cout << (all ? "acceptance: all criteria passed" : "acceptance: some criteria failed") << std::endl;
  return all ? 0 : 1;
}
