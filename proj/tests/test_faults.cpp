#include "kklfdi/faults.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace kklfdi;

TEST(Faults, NoEventsLeaveOutputsUntouched) {
  const auto s = fault_signals({}, 5, 10.0, 100);
  EXPECT_EQ(s.phi, Vec::Ones(5));
  EXPECT_EQ(s.zeta, Vec::Zero(5));
  const Vec y{{1, 2, 3, 4, 5}}, v{{0.1, 0, 0, 0, -0.1}};
  EXPECT_EQ(apply_faults(y, v, s.phi, s.zeta), y + v);
}

TEST(Faults, CompleteFailureZeroesTheSensorFromOnset) {
  FaultProfile p{{{4, 5.0, CompleteFailure{}}}};
  const Vec y = Vec::Constant(5, 2.0), v = Vec::Constant(5, 0.1);
  auto before = fault_signals(p, 5, 4.99, 0);
  auto at = fault_signals(p, 5, 5.0, 1);
  EXPECT_EQ(apply_faults(y, v, before.phi, before.zeta)[3], 2.1);
  const Vec out = apply_faults(y, v, at.phi, at.zeta);
  EXPECT_EQ(out[3], 0.0);
  EXPECT_EQ(out[0], 2.1);
}

TEST(Faults, StepBiasPersists) {
  FaultProfile p{{{1, 5.0, StepBias{1.0}}, {5, 15.0, StepBias{1.0}}}};
  EXPECT_EQ(fault_signals(p, 5, 4.9, 0).zeta, Vec::Zero(5));
  EXPECT_EQ(fault_signals(p, 5, 5.0, 0).zeta, (Vec{{1, 0, 0, 0, 0}}));
  EXPECT_EQ(fault_signals(p, 5, 29.0, 0).zeta, (Vec{{1, 0, 0, 0, 1}}));
}

TEST(Faults, SigmoidFormula) {
  Sigmoid s{2.0, 2.0, 8.0};
  FaultProfile p{{{2, 5.0, s}}};
  for (double t : {5.0, 7.0, 8.0, 12.0}) {
    const double expect = 2.0 / (1.0 + std::exp(-2.0 * (t - 8.0)));
    EXPECT_DOUBLE_EQ(fault_signals(p, 5, t, 0).zeta[1], expect);
  }
  EXPECT_EQ(fault_signals(p, 5, 4.0, 0).zeta[1], 0.0);
  EXPECT_DOUBLE_EQ(fault_signals(p, 5, 8.0, 0).zeta[1], 1.0);
}

TEST(Faults, GrowingSinusoidRampsToFinalAmplitude) {
  GrowingSinusoid g{5.0, 2.0, 10.0};
  FaultProfile p{{{3, 5.0, g}}};
  auto zeta = [&](double t) { return fault_signals(p, 5, t, 0).zeta[2]; };
  EXPECT_EQ(zeta(5.0), 0.0);
  const double t = 7.5 + 0.125;  // quarter period past a whole number of periods
  EXPECT_NEAR(zeta(t), 5.0 * (t - 5.0) / 10.0 * std::sin(2.0 * std::numbers::pi * 2.0 * (t - 5.0)), 1e-12);
  const double late = 20.125;
  EXPECT_NEAR(zeta(late), 5.0 * std::sin(2.0 * std::numbers::pi * 2.0 * (late - 5.0)), 1e-12);
}

TEST(Faults, GrowingWhiteNoiseIsIndexedBySample) {
  GrowingWhiteNoise g{10.0, 1.0, 99};
  FaultProfile p{{{3, 5.0, g}}};
  EXPECT_EQ(fault_signals(p, 5, 5.0, 700).zeta[2], 0.0);  // zero spread at onset
  const double a = fault_signals(p, 5, 12.0, 1600).zeta[2];
  const double b = fault_signals(p, 5, 12.0, 1600).zeta[2];
  const double c = fault_signals(p, 5, 12.0, 1601).zeta[2];
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  // Spread after the ramp: sample standard deviation of many draws ~ final_sigma.
  double s2 = 0.0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double z = fault_signals(p, 5, 20.0, static_cast<std::size_t>(k)).zeta[2];
    s2 += z * z;
  }
  EXPECT_NEAR(s2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Faults, ValidationRejectsBadSensors) {
  FaultProfile p{{{6, 5.0, StepBias{}}}};
  EXPECT_THROW(p.validate(5), InvalidArgument);
  FaultProfile q{{{0, 5.0, StepBias{}}}};
  EXPECT_THROW(q.validate(5), InvalidArgument);
  FaultProfile r{{{1, -1.0, StepBias{}}}};
  EXPECT_THROW(r.validate(5), InvalidArgument);
  EXPECT_THROW(apply_faults(Vec::Zero(2), Vec::Zero(3), Vec::Ones(2), Vec::Zero(2)), InvalidArgument);
}

TEST(Faults, KindNames) {
  EXPECT_EQ(kind_name(CompleteFailure{}), "complete_failure");
  EXPECT_EQ(kind_name(GrowingSinusoid{}), "growing_sinusoid");
}
