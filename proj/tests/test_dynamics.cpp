#include "kklfdi/dynamics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

using namespace kklfdi;

namespace {

// Plain double loop, no trig identities.
Vec naive_kuramoto(const Vec& th, const KuramotoParams& p, bool attractive) {
  Vec d = p.omega;
  for (Eigen::Index i = 0; i < th.size(); ++i)
    for (Eigen::Index j = 0; j < th.size(); ++j)
      d[i] += p.coupling(i, j) * (attractive ? std::sin(th[j] - th[i]) : std::sin(th[i] - th[j]));
  return d;
}

Vec random_vec(Eigen::Index n, std::mt19937_64& eng, double lo, double hi) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = lo + (hi - lo) * uniform01(eng);
  return v;
}

}  // namespace

TEST(Kuramoto, MatchesNaiveDoubleSum) {
  std::mt19937_64 eng(7);
  for (bool attractive : {false, true}) {
    const auto p = KuramotoParams::random(10, 11, {-1, 1}, {0, 1}, attractive);
    for (int rep = 0; rep < 20; ++rep) {
      const Vec th = random_vec(10, eng, -7.0, 7.0);
      const Vec ref = naive_kuramoto(th, p, attractive);
      EXPECT_LT((kuramoto_rhs(th, p) - ref).cwiseAbs().maxCoeff(), 1e-13);
    }
  }
}

TEST(Kuramoto, ParameterDrawsRespectRangesAndSeed) {
  const auto p = KuramotoParams::random(10, 3);
  EXPECT_EQ(p.size(), 10u);
  EXPECT_TRUE((p.omega.array() >= -1.0).all() && (p.omega.array() <= 1.0).all());
  EXPECT_TRUE((p.coupling.array() >= 0.0).all() && (p.coupling.array() <= 1.0).all());
  EXPECT_EQ(p.coupling.diagonal().cwiseAbs().maxCoeff(), 0.0);
  const auto q = KuramotoParams::random(10, 3);
  EXPECT_EQ(p.omega, q.omega);
  EXPECT_EQ(p.coupling, q.coupling);
  EXPECT_NE(p.omega, KuramotoParams::random(10, 4).omega);
}

TEST(Kuramoto, SynchronizedStateRotatesAtOmega) {
  // Equal phases make every coupling term vanish.
  const auto p = KuramotoParams::random(6, 5);
  const Vec th = Vec::Constant(6, 0.37);
  EXPECT_LT((kuramoto_rhs(th, p) - p.omega).norm(), 1e-15);
}

TEST(Kuramoto, SystemMeasuresLeadingPhases) {
  const auto sys = kuramoto_system(KuramotoParams::random(10, 1), 5);
  const Vec x = Vec::LinSpaced(10, 0.0, 9.0);
  EXPECT_EQ(sys.output_map(x), x.head(5));
  EXPECT_EQ(sys.output_lipschitz, 1.0);
  EXPECT_EQ(sys.sensor_lipschitz, Vec::Ones(5));
  EXPECT_THROW(kuramoto_system(KuramotoParams::random(3, 1), 4), InvalidArgument);
  EXPECT_THROW(kuramoto_rhs(Vec::Zero(4), KuramotoParams::random(3, 1)), InvalidArgument);
}

TEST(OutputLipschitz, SamplingEstimateOfSelectionAndScaledMaps) {
  auto sys = kuramoto_system(KuramotoParams::random(4, 1), 2);
  const std::vector<Interval> box(4, Interval{-2, 2});
  estimate_output_lipschitz(sys, box, 50, 1);
  EXPECT_NEAR(sys.output_lipschitz, 1.0, 1e-6);
  sys.output_map = [](const Vec& x) -> Vec { return Vec{{2.0 * x[0], x[1] + x[2]}}; };
  estimate_output_lipschitz(sys, box, 50, 1);
  EXPECT_NEAR(sys.sensor_lipschitz[0], 2.0, 1e-6);
  EXPECT_NEAR(sys.sensor_lipschitz[1], std::sqrt(2.0), 1e-6);
  EXPECT_NEAR(sys.output_lipschitz, 2.0, 1e-6);
}

TEST(LatinHypercube, OnePointPerStratumInEveryDimension) {
  const std::vector<Interval> box{{-2, 2}, {0, 1}, {-5, 3}};
  const std::size_t n = 50;
  const auto pts = latin_hypercube(n, box, 9);
  ASSERT_EQ(pts.size(), n);
  for (std::size_t d = 0; d < box.size(); ++d) {
    std::set<long> strata;
    for (const auto& p : pts) {
      const double u = (p[static_cast<Eigen::Index>(d)] - box[d].lo) / box[d].length();
      ASSERT_GE(u, 0.0);
      ASSERT_LT(u, 1.0);
      strata.insert(static_cast<long>(std::floor(u * static_cast<double>(n))));
    }
    EXPECT_EQ(strata.size(), n);
  }
}

TEST(LatinHypercube, DeterministicAndValidated) {
  const std::vector<Interval> box(10, Interval{-2, 2});
  const auto a = latin_hypercube(7, box, 1), b = latin_hypercube(7, box, 1), c = latin_hypercube(7, box, 2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a[0], c[0]);
  EXPECT_THROW(latin_hypercube(0, box, 1), InvalidArgument);
  const std::vector<Interval> bad{{1, 1}};
  EXPECT_THROW(latin_hypercube(3, bad, 1), InvalidArgument);
}

TEST(Rk4, OneStepOnLinearSystemIsFourthOrderTaylorPolynomial) {
  Mat A(3, 3);
  A << -1.0, 2.0, 0.5, 0.0, -3.0, 1.0, 0.3, 0.2, -0.7;
  const Vec x{{1.0, -2.0, 0.5}};
  const double h = 0.13;
  const VectorField f = [&A](const Vec& s) -> Vec { return A * s; };
  const Mat I = Mat::Identity(3, 3);
  const Mat hA = h * A;
  const Mat P = I + hA + hA * hA / 2.0 + hA * hA * hA / 6.0 + hA * hA * hA * hA / 24.0;
  EXPECT_LT((rk4_step(f, x, h) - P * x).norm(), 1e-14);
}

TEST(Rk4, ExactForCubicTimeForcing) {
  const TimeVectorField f = [](double t, const Vec&) -> Vec { return Vec::Constant(1, t * t * t - 2.0 * t); };
  const double t0 = 0.4, h = 0.3;
  auto F = [](double t) { return t * t * t * t / 4.0 - t * t; };
  EXPECT_NEAR(rk4_step(f, Vec::Zero(1), t0, h)[0], F(t0 + h) - F(t0), 1e-15);
}

TEST(Rk4, FourthOrderConvergenceOnNonlinearOde) {
  // x' = -x^2, x(0) = 1  =>  x(t) = 1 / (1 + t)
  const VectorField f = [](const Vec& x) -> Vec { return -x.cwiseProduct(x); };
  std::vector<double> err;
  for (int n : {8, 16, 32, 64}) {
    Vec x = Vec::Ones(1);
    for (int k = 0; k < n; ++k) x = rk4_step(f, x, 2.0 / n);
    err.push_back(std::abs(x[0] - 1.0 / 3.0));
  }
  for (std::size_t i = 0; i + 1 < err.size(); ++i) EXPECT_NEAR(std::log2(err[i] / err[i + 1]), 4.0, 0.2);
}

TEST(Simulate, NoiseFreeMatchesManualRk4Loop) {
  const auto p = KuramotoParams::random(10, 1);
  const VectorField f = [&p](const Vec& x) { return kuramoto_rhs(x, p); };
  const Vec x0 = Vec::LinSpaced(10, -2.0, 2.0);
  const auto traj = simulate(f, x0, {0.0, 3.0}, 301, NoiseSpec{}, 0);
  EXPECT_EQ(traj.size(), 301u);
  EXPECT_DOUBLE_EQ(traj.delta, 0.01);
  EXPECT_DOUBLE_EQ(traj.time(300), 3.0);
  Vec x = x0;
  for (int k = 1; k <= 300; ++k) x = rk4_step(f, x, 0.01);
  EXPECT_EQ(traj.states.col(300), x);
}

TEST(Simulate, DefaultGridSpacing) {
  EXPECT_DOUBLE_EQ(sample_spacing({0.0, 30.0}, 4000), 30.0 / 3999.0);
  EXPECT_THROW(sample_spacing({0.0, 30.0}, 1), InvalidArgument);
  EXPECT_THROW(sample_spacing({1.0, 1.0}, 10), InvalidArgument);
}

TEST(Simulate, ProcessNoiseIsHeldOverEachStep) {
  // With f = 0 every RK4 stage sees the same w, so x_{k+1} - x_k = delta w_k.
  const VectorField zero = [](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  const double var = 0.04;
  const std::size_t n = 20001;
  const auto traj = simulate(zero, Vec::Zero(2), {0.0, 2.0}, n, NoiseSpec::gaussian(var, 0.0), 5);
  const Mat inc = (traj.states.rightCols(n - 1) - traj.states.leftCols(n - 1)) / traj.delta;
  const double sample_var = inc.array().square().mean();
  EXPECT_NEAR(sample_var, var, 5.0 * var * std::sqrt(2.0 / static_cast<double>(inc.size())));
}

TEST(Simulate, SeededNoiseIsReproducible) {
  const auto sys = kuramoto_system(KuramotoParams::random(10, 1), 5);
  const auto noise = NoiseSpec::gaussian(4e-4, 4e-4);
  const Vec x0 = Vec::Constant(10, 0.5);
  const auto a = simulate(sys, x0, {0, 1}, 101, noise, 42);
  const auto b = simulate(sys, x0, {0, 1}, 101, noise, 42);
  const auto c = simulate(sys, x0, {0, 1}, 101, noise, 43);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.outputs, b.outputs);
  EXPECT_NE(a.outputs, c.outputs);
  EXPECT_THROW(simulate(sys, Vec::Zero(3), {0, 1}, 10, noise, 1), InvalidArgument);
}

TEST(Simulate, MeasurementNoiseVariance) {
  const double var = 0.02;
  const Mat v = measurement_noise(5, 40000, var, 3);
  const double m = v.mean();
  const double s2 = v.array().square().mean();
  const double n = static_cast<double>(v.size());
  EXPECT_NEAR(m, 0.0, 5.0 * std::sqrt(var / n));
  EXPECT_NEAR(s2, var, 5.0 * var * std::sqrt(2.0 / n));
  EXPECT_EQ(measurement_noise(5, 10, 0.0, 3), Mat::Zero(5, 10));
}

TEST(NoiseSpec, GaussianBoundsAreSigmaMultiples) {
  const auto n = NoiseSpec::gaussian(0.04, 0.0004, 3.0);
  EXPECT_DOUBLE_EQ(n.w_bar, 0.6);
  EXPECT_DOUBLE_EQ(n.v_bar, 0.06);
  EXPECT_FALSE(n.noise_free());
  EXPECT_TRUE(NoiseSpec{}.noise_free());
  EXPECT_THROW(NoiseSpec::gaussian(-1.0, 0.0), InvalidArgument);
}

TEST(TrajectoryCsv, HeaderAndFullPrecision) {
  Trajectory t;
  t.t0 = 0.0;
  t.delta = 0.1;
  t.states = Mat(2, 2);
  t.states << 1.0 / 3.0, 2.0, -1.0, 0.5;
  t.outputs = t.states.topRows(1);
  std::ostringstream os;
  write_trajectory_csv(os, t);
  std::istringstream in(os.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "t,x1,x2,y1");
  const double parsed = std::stod(row.substr(row.find(',') + 1));
  EXPECT_EQ(parsed, 1.0 / 3.0);
}
