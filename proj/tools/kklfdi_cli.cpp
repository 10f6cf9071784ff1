// kklfdi: experiment driver (generate | train | calibrate | run | verify | report).

#include "kklfdi/kklfdi.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kConfig = 2,
  kDiverged = 3,
  kVerifyFailed = 4,
  kArtifact = 5,
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string scenario;
  std::string out;
  std::string model;
  std::string thresholds;
  std::string dataset;
};

kklfdi::ExperimentConfig load(const Options& o) {
  auto cfg = o.config.empty() ? kklfdi::default_config() : kklfdi::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

std::filesystem::path out_dir(const Options& o, const kklfdi::ExperimentConfig& cfg) {
  return o.out.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(o.out);
}

std::filesystem::path or_default(const std::string& given, const std::filesystem::path& fallback) {
  return given.empty() ? fallback : std::filesystem::path(given);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run(const std::string& cmd, const Options& o) {
  using namespace kklfdi;
  const auto cfg = load(o);
  const auto out = out_dir(o, cfg);
  const auto t0 = std::chrono::steady_clock::now();

  if (cmd == "generate") {
    const auto r = cmd_generate(cfg, out);
    std::printf("generate: %zu/%zu training and %zu/%zu test trajectories kept (%.1f s)\n", r.train.kept,
                r.train.requested, r.test.kept, r.test.requested, seconds_since(t0));
  } else if (cmd == "train") {
    const auto r = cmd_train(cfg, out, or_default(o.dataset, out / files::kTrain));
    std::printf("train: final loss %.6g, held-out rmse %.6g (%.1f s)\n", r.final_loss, r.heldout_rmse,
                seconds_since(t0));
  } else if (cmd == "calibrate") {
    const auto c = cmd_calibrate(cfg, out, or_default(o.model, out / files::kModel),
                                 or_default(o.dataset, out / files::kTest));
    std::printf("calibrate: r_delta %.6g, tau_1 %.6g (%.1f s)\n", c.thresholds.r_delta,
                c.thresholds.tau.size() ? c.thresholds.tau[0] : 0.0, seconds_since(t0));
  } else if (cmd == "run") {
    if (o.scenario.empty()) throw ConfigError("run: --scenario is required");
    const auto r = cmd_run(cfg, out, or_default(o.model, out / files::kModel),
                           or_default(o.thresholds, out / files::kThresholds), o.scenario);
    std::printf("run %s: %zu detection events, %zu isolation events\n", o.scenario.c_str(),
                r.detections.size(), r.isolations.size());
  } else if (cmd == "verify") {
    const auto r = cmd_verify(cfg, out);
    for (const auto& s : r.suites) std::printf("  %-20s %s\n", s.name.c_str(), s.passed ? "pass" : "FAIL");
    std::printf("verify: all suites passed (%.1f s)\n", seconds_since(t0));
  } else if (cmd == "report") {
    cmd_report(cfg, out);
    std::printf("report: %s\n", (out / files::kReport).string().c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor fault detection and isolation with a learned KKL observer"};
  app.require_subcommand(1, 1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Global seed, overrides the configuration");
    sub->add_option("--out", o.out, "Output directory (default: output_dir from the configuration)");
  };
  auto* gen = app.add_subcommand("generate", "Simulate training and test trajectories");
  auto* trn = app.add_subcommand("train", "Train the observer's learned maps");
  auto* cal = app.add_subcommand("calibrate", "Compute theoretical and empirical thresholds");
  auto* rn = app.add_subcommand("run", "Replay a fault scenario through the detector");
  auto* ver = app.add_subcommand("verify", "Run the numerical property suites");
  auto* rep = app.add_subcommand("report", "Summarise the artifacts in the output directory");
  for (auto* s : {gen, trn, cal, rn, ver, rep}) add_common(s);
  trn->add_option("--dataset", o.dataset, "Training set (default: <out>/train.kds)");
  cal->add_option("--model", o.model, "Model file (default: <out>/model.kklm)");
  cal->add_option("--dataset", o.dataset, "Test set (default: <out>/test.kds)");
  rn->add_option("--scenario", o.scenario, "Scenario id (a..e, or any id in the configuration)")->required();
  rn->add_option("--model", o.model, "Model file (default: <out>/model.kklm)");
  rn->add_option("--thresholds", o.thresholds, "Thresholds file (default: <out>/thresholds.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  for (auto* s : app.get_subcommands())
    if (s->count("--seed") > 0) o.seed = seed;

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, o);
  } catch (const kklfdi::VerificationFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const kklfdi::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const kklfdi::ArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kArtifact;
  } catch (const kklfdi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const kklfdi::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed artifact: " << e.what() << '\n';
    return kArtifact;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
