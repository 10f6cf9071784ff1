#include "kklfdi/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace kklfdi;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kklfdi_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset random_dataset() {
  std::mt19937_64 eng(1);
  std::normal_distribution<double> n;
  Dataset ds;
  ds.n_x = 3;
  ds.n_z = 4;
  ds.t0 = 0.5;
  ds.delta = 1.0 / 3.0;
  for (std::size_t j = 0; j < 3; ++j) {
    TrajectoryPairs tp{j * 7, Mat(3, 11), Mat(4, 11)};
    for (Eigen::Index i = 0; i < tp.x.size(); ++i) tp.x.data()[i] = n(eng) * 1e3;
    for (Eigen::Index i = 0; i < tp.z.size(); ++i) tp.z.data()[i] = n(eng) * 1e-7;
    ds.trajectories.push_back(tp);
  }
  return ds;
}

io::Model small_model(bool with_encoder) {
  io::Model m;
  m.observer = build_matrices(2, 1, -2.0, -6.0);
  m.decoder = Mlp({5, 6, 2}, 3);
  m.decoder.input_norm() = {Vec::Constant(5, 0.1), Vec::Constant(5, 3.0)};
  if (with_encoder) m.encoder = Mlp({2, 4, 5}, 4);
  m.train_fingerprint = "abc";
  m.train_config = {{"epochs", 3}};
  return m;
}

json parse(const std::string& s) { return json::parse(s); }

}  // namespace

TEST(DatasetIo, BitExactRoundTrip) {
  const auto dir = temp_dir("ds");
  const Dataset ds = random_dataset();
  io::save_dataset(dir / "d.kds", ds);
  const Dataset back = io::load_dataset(dir / "d.kds");
  EXPECT_EQ(back.n_x, 3u);
  EXPECT_EQ(back.n_z, 4u);
  EXPECT_EQ(back.t0, ds.t0);
  EXPECT_EQ(back.delta, ds.delta);
  ASSERT_EQ(back.trajectories.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(back.trajectories[j].id, ds.trajectories[j].id);
    EXPECT_EQ(back.trajectories[j].x, ds.trajectories[j].x);
    EXPECT_EQ(back.trajectories[j].z, ds.trajectories[j].z);
  }
  EXPECT_EQ(io::encode_dataset(back), io::read_file(dir / "d.kds"));
}

TEST(DatasetIo, CorruptFilesAreArtifactErrors) {
  const std::string good = io::encode_dataset(random_dataset());
  EXPECT_THROW(io::decode_dataset("nonsense"), ArtifactError);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_dataset(bad_magic), ArtifactError);
  EXPECT_THROW(io::decode_dataset(good.substr(0, good.size() - 8)), ArtifactError);
  EXPECT_THROW(io::decode_dataset(good + "extra"), ArtifactError);
  std::string bad_header = good;
  bad_header[16] = '[';
  bad_header[17] = '[';
  EXPECT_THROW(io::decode_dataset(bad_header), ArtifactError);
  EXPECT_THROW(io::load_dataset("/nonexistent/file.kds"), ArtifactError);
  EXPECT_THROW(io::decode_model(good), ArtifactError);
}

TEST(ModelIo, BitExactRoundTripWithAndWithoutEncoder) {
  for (bool enc : {false, true}) {
    const auto m = small_model(enc);
    const std::string bytes = io::encode_model(m);
    const auto back = io::decode_model(bytes);
    EXPECT_EQ(back.observer.A, m.observer.A);
    EXPECT_EQ(back.observer.B, m.observer.B);
    EXPECT_EQ(back.observer.c, m.observer.c);
    EXPECT_TRUE(back.decoder == m.decoder);
    EXPECT_EQ(back.encoder.has_value(), enc);
    if (enc) EXPECT_TRUE(*back.encoder == *m.encoder);
    EXPECT_EQ(back.train_fingerprint, "abc");
    EXPECT_EQ(io::encode_model(back), bytes);
  }
}

TEST(ModelIo, DimensionMismatchRejected) {
  auto m = small_model(false);
  m.decoder = Mlp({4, 3, 2}, 1);  // observer has n_z = 5
  EXPECT_THROW(io::decode_model(io::encode_model(m)), ArtifactError);
}

TEST(Fingerprint, FnvOfFileBytes) {
  const auto dir = temp_dir("fp");
  io::write_file(dir / "a" / "b.txt", "hello");
  // FNV-1a 64 of "hello"
  EXPECT_EQ(io::file_fingerprint(dir / "a" / "b.txt"), "a430d84680aabd0b");
  EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
}

TEST(Config, EmptyObjectGivesDefaults) {
  const auto c = parse_config(json::object());
  EXPECT_EQ(to_json(c), to_json(default_config()));
  EXPECT_EQ(c.plant.nodes, 10u);
  EXPECT_EQ(c.plant.n_samples, 4000u);
  EXPECT_EQ(c.observer.eig_range.lo, -15.0);
  EXPECT_EQ(c.training.hidden, (std::vector<std::size_t>{250, 250, 250}));
  EXPECT_EQ(c.scenarios.size(), 5u);
  EXPECT_EQ(c.noise.reading, NoiseReading::StdDev);
  EXPECT_DOUBLE_EQ(c.noise.spec().meas_var, 0.02 * 0.02);
}

TEST(Config, CanonicalFormRoundTrips) {
  auto j = parse(R"({"seed": 9, "noise": {"interpretation": "variance", "measurement": 0.05},
    "plant": {"coupling_sign": "repulsive", "nodes": 6, "outputs": 5},
    "observer": {"init": "zero"},
    "thresholds": {"t_c": 1.0, "decoder_error": "state", "r_delta_from": "folded"},
    "scenarios": {"b": {"events": [{"sensor": 3, "onset": 2.0, "kind": "step_bias", "level": -0.5}],
                        "x0": [0, 1, 2, 3, 4, 5]},
                  "f": {"events": [{"sensor": 1, "onset": 1.0, "kind": "growing_sinusoid", "frequency": 0.5}]}}})");
  const auto c = parse_config(j);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.plant.attractive);
  EXPECT_EQ(c.observer.init, ObserverInit::Zero);
  EXPECT_DOUBLE_EQ(c.noise.spec().meas_var, 0.05);
  EXPECT_EQ(c.thresholds.decoder_error, DecoderErrorBound::State);
  EXPECT_EQ(c.thresholds.r_delta_from, RDeltaSource::Folded);
  ASSERT_EQ(c.scenarios.count("f"), 1u);
  const auto& ev = c.scenarios.at("b").profile.events.at(0);
  EXPECT_EQ(ev.sensor, 3u);
  EXPECT_EQ(std::get<StepBias>(ev.kind).level, -0.5);
  const json canon = to_json(c);
  EXPECT_EQ(to_json(parse_config(canon)), canon);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  const std::vector<std::string> bad{
      R"({"sed": 1})",
      R"({"plant": {"node": 10}})",
      R"({"plant": {"nodes": "ten"}})",
      R"({"plant": {"nodes": -3}})",
      R"({"plant": {"outputs": 11}})",
      R"({"noise": {"interpretation": "sigma"}})",
      R"({"noise": {"measurement": -1}})",
      R"({"observer": {"t_pre": 0}})",
      R"({"training": {"epochs": 0}})",
      R"({"training": {"hidden": []}})",
      R"({"thresholds": {"decoder_error": "both"}})",
      R"({"thresholds": {"r_delta_from": "abs"}})",
      R"({"thresholds": {"replays": 0}})",
      R"({"scenarios": {"a": {"events": [{"sensor": 9, "onset": 1, "kind": "step_bias"}]}}})",
      R"({"scenarios": {"a": {"events": [{"sensor": 1, "onset": 1, "kind": "explode"}]}}})",
      R"({"scenarios": {"a": {"events": [{"sensor": 1, "onset": 1}]}}})",
      R"({"scenarios": {"a": {"x0": [1, 2]}}})",
      R"({"scenarios": {"AB": {}}})",
      R"({"verify": {"quad_intervals": 7}})",
      R"([1, 2])",
  };
  for (const auto& s : bad) EXPECT_THROW(parse_config(parse(s)), ConfigError) << s;
}

TEST(Config, FileLoading) {
  const auto dir = temp_dir("cfg");
  io::write_file(dir / "ok.json", R"({"seed": 3})");
  EXPECT_EQ(load_config(dir / "ok.json").seed, 3u);
  io::write_file(dir / "broken.json", "{\"seed\": ");
  EXPECT_THROW(load_config(dir / "broken.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(ThresholdFile, RoundTripAndVersionCheck) {
  Thresholds th;
  th.tau = Vec{{0.5, 0.25}};
  th.r_delta = 4.5;
  th.t_c = 1.0 / 3.0;
  th.params.l_hi = Vec{{1.0, 1.0}};
  th.params.c = 15.0;
  th.params.eps_output = Vec{{0.1, 0.2}};
  th.noise = NoiseSpec::gaussian(0.02, 0.02);
  th.eps_hat = 0.7;
  th.model_fingerprint = "m";
  th.test_fingerprint = "t";
  th.calibration_runs = 12;
  const json j = to_json(th);
  const Thresholds back = thresholds_from_json(j);
  EXPECT_EQ(back.tau, th.tau);
  EXPECT_EQ(back.t_c, th.t_c);
  EXPECT_EQ(back.params.eps_output, th.params.eps_output);
  EXPECT_EQ(*back.eps_hat, 0.7);
  EXPECT_EQ(to_json(back), j);
  json old = j;
  old["format_version"] = 99;
  EXPECT_THROW(thresholds_from_json(old), ArtifactError);
  json missing = j;
  missing.erase("tau");
  EXPECT_THROW(thresholds_from_json(missing), ArtifactError);
}
