#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "phil/shaping.hpp"

using namespace phil;
using namespace phil::shaping;

namespace {

TabularMdp two_state(bool first_bad, bool second_bad) {
  auto m = TabularMdp::empty(2, 1, 0.95);
  m.p(0, 0, 1) = 1;
  m.p(1, 0, 0) = 1;
  m.unacceptable = {first_bad, second_bad};
  return m;
}

// 0 = trap, 4 = goal, both absorbing; action 0 left, 1 right.
TabularMdp chain() {
  auto m = TabularMdp::empty(5, 2, 0.9);
  for (int s = 0; s < 5; ++s) {
    if (s == 0 || s == 4) {
      m.p(s, 0, s) = m.p(s, 1, s) = 1;
      continue;
    }
    m.p(s, 0, s - 1) = 1;
    m.p(s, 1, s + 1) = 1;
  }
  m.r(1, 0, 0) = -10;
  m.r(3, 1, 4) = 10;
  return m;
}

}  // namespace

TEST(Potential, Values) {
  const auto m = two_state(false, true);
  EXPECT_EQ(potential(0, m, -10), 0.0);
  EXPECT_NEAR(potential(1, m, -10), -10.0 / 0.95, 1e-15);
  EXPECT_NEAR(potential(1, m, -10), -10.5263, 1e-4);
  EXPECT_EQ(potential(1, m, 0.0), 0.0);
  EXPECT_THROW(potential(1, m, 1.0), ConfigError);
}

TEST(ShapingTerm, Transitions) {
  const auto m = two_state(false, true);
  EXPECT_NEAR(shaping_term(0, 0, 1, m, -10), -10.0, 1e-12);
  EXPECT_NEAR(shaping_term(1, 0, 0, m, -10), 10.0 / 0.95, 1e-12);
  EXPECT_NEAR(shaping_term(1, 0, 0, m, -10), 10.5263, 1e-4);
  const auto ok = two_state(false, false);
  EXPECT_EQ(shaping_term(0, 0, 1, ok, -10), 0.0);
  for (int s : {0, 1})
    for (int s2 : {0, 1}) EXPECT_EQ(shaping_term(s, 0, s2, m, 0.0), 0.0);
}

TEST(ValueIteration, GeometricSeries) {
  auto m = TabularMdp::empty(1, 1, 0.5);
  m.p(0, 0, 0) = 1;
  m.r(0, 0, 0) = 1;
  const auto sol = value_iteration(m, 1e-12);
  EXPECT_NEAR(sol.Q(0, 0), 2.0, 1e-12);
  EXPECT_LT(sol.residual, 1e-12);
}

TEST(ValueIteration, ZeroRewards) {
  auto m = random_mdp(3);
  std::fill(m.R.begin(), m.R.end(), 0.0);
  EXPECT_EQ(value_iteration(m, 1e-10).Q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ValueIteration, ChainMovesToGoal) {
  const auto sol = value_iteration(chain(), 1e-10);
  for (int s = 1; s <= 3; ++s) EXPECT_EQ(sol.policy[s], 1) << s;
  EXPECT_NEAR(sol.Q(3, 1), 10.0, 1e-9);
  EXPECT_NEAR(sol.Q(2, 1), 9.0, 1e-9);
}

TEST(ValueIteration, TiesGoToLowestIndex) {
  auto m = TabularMdp::empty(1, 3, 0.5);
  for (int a = 0; a < 3; ++a) m.p(0, a, 0) = 1;
  EXPECT_EQ(value_iteration(m, 1e-10).policy[0], 0);
}

TEST(Mdp, ValidateRows) {
  auto m = TabularMdp::empty(2, 1, 0.9);
  m.p(0, 0, 0) = 0.5;
  m.p(1, 0, 1) = 1;
  EXPECT_THROW(m.validate(), ConfigError);
  m.p(0, 0, 1) = 0.5;
  EXPECT_NO_THROW(m.validate());
  m.gamma = 1.0;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Invariance, ZeroPenaltyTrivial) {
  const auto rep = check_invariance(0.0, 1e-8, 20, 100);
  EXPECT_EQ(rep.invariant_count(), 20);
  EXPECT_LT(rep.max_dev(), 1e-8);
}

TEST(Invariance, StartBadGoal) {
  // start: action 0 grabs +1 and lands in bad, action 1 takes 0.5 to goal.
  auto m = TabularMdp::empty(3, 2, 0.95);
  m.p(0, 0, 1) = 1;
  m.r(0, 0, 1) = 1;
  m.p(0, 1, 2) = 1;
  m.r(0, 1, 2) = 0.5;
  m.p(1, 0, 0) = m.p(1, 1, 0) = 1;
  m.r(1, 0, 0) = m.r(1, 1, 0) = -0.2;
  m.p(2, 0, 2) = m.p(2, 1, 2) = 1;
  m.unacceptable = {0, 1, 0};
  const auto r = check_instance(m, -10, 1e-8);
  EXPECT_TRUE(r.argmax_invariant);
  EXPECT_LT(r.max_dev, 1e-8);
  EXPECT_EQ(value_iteration(m, 1e-12).policy, value_iteration(shaped(m, -10), 1e-12).policy);
}

TEST(Invariance, HundredRandomMdps) {
  const auto rep = check_invariance(-10.0, 1e-8, 100, 2024);
  EXPECT_EQ(rep.invariant_count(), 100);
  EXPECT_LT(rep.max_dev(), 1e-8);
  for (const auto& r : rep.instances) {
    EXPECT_LE(r.n_states, 8);
    EXPECT_LE(r.n_actions, 3);
  }
}

// The shaped values sit below the originals by Phi(s); the opposite sign only
// fits when no state is unacceptable.
TEST(Invariance, ShiftIsMinusPotential) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto m = random_mdp(seed);
    const auto r = check_instance(m, -10, 1e-8);
    EXPECT_LT(r.max_dev, 1e-8);
    if (r.n_unacceptable > 0) EXPECT_GT(r.max_dev_plus, 1.0);
  }
}

TEST(Invariance, Telescoping) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = random_mdp(seed);
    for (int k = 0; k < 10; ++k) {
      const int s0 = std::uniform_int_distribution<int>(0, m.n_states - 1)(rng);
      const auto ro = rollout_shaping(m, -10, s0, 100, rng);
      const double expect = std::pow(m.gamma, 100) * potential(ro.sT, m, -10) - potential(ro.s0, m, -10);
      EXPECT_NEAR(ro.discounted_f, expect, 1e-6);
    }
  }
}

TEST(RandomMdp, Shapes) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto m = random_mdp(seed);
    EXPECT_NO_THROW(m.validate());
    EXPECT_GE(m.n_states, 2);
    EXPECT_LE(m.n_states, 8);
    for (double r : m.R) {
      EXPECT_GE(r, -1.0);
      EXPECT_LE(r, 1.0);
    }
  }
  EXPECT_EQ(random_mdp(9).P, random_mdp(9).P);
}

TEST(Report, Text) {
  const auto rep = check_invariance(-10.0, 1e-8, 3, 0);
  const auto t = rep.text();
  EXPECT_NE(t.find("invariant 3/3"), std::string::npos);
  EXPECT_NE(t.find("PASS"), std::string::npos);
}
