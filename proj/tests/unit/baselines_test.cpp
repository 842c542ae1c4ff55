#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sq/baselines.hpp"
#include "sq/generators.hpp"
#include "test_util.hpp"

namespace sq {
namespace {

using testing::constant_policy;
using testing::tabular_instance;

// Two states, two actions, deterministic transitions.
LowRankMdp deterministic_instance() {
  const std::vector<double> reward = {0.1, 0.2, 0.3, 0.05, 0.4, 0.0, 0.15, 0.25};
  std::vector<double> trans(2 * 2 * 2 * 2, 0.0);
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) trans[((h * 2 + s) * 2 + a) * 2 + (s + a) % 2] = 1.0;
  return tabular_instance(2, 2, 2, reward, trans, {0.5, 0.5});
}

TEST(VanillaStep, PerfectFitUnchanged) {
  LowRankMdp m = deterministic_instance();
  const auto vi = value_iteration(m);
  VanillaState st = VanillaState::zeros(m.H, m.d, 0.3);
  for (int h = 0; h < m.H; ++h)
    for (int s = 0; s < m.S; ++s)
      for (int a = 0; a < m.A; ++a) st.theta[h](s * m.A + a) = vi.q.at(h, s, a);
  const VanillaState before = st;
  Rng rng(1);
  auto pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  run_vanilla(m, *pi, 1000, st, rng, [](const Trajectory&) {});
  for (int h = 0; h < m.H; ++h) EXPECT_LE((st.theta[h] - before.theta[h]).norm(), 1e-15);
}

TEST(VanillaStep, ScalarContraction) {
  // H = 1, phi = 1, reward r: theta_k = r (1 - (1 - lr)^k).
  LowRankMdp m = tabular_instance(1, 1, 1, {0.7}, {1.0}, {1.0});
  for (double lr : {0.1, 0.5, 1.5}) {
    VanillaState st = VanillaState::zeros(1, 1, lr);
    for (int k = 1; k <= 400; ++k) {
      ASSERT_TRUE(vanilla_step(st, m, 0, 0, 0, 0.7, 0));
      EXPECT_NEAR(st.theta[0](0), 0.7 * (1.0 - std::pow(1.0 - lr, k)), 1e-12);
    }
    EXPECT_NEAR(st.theta[0](0), 0.7, 1e-9);
  }
}

TEST(VanillaStep, ZeroRewardsStayZero) {
  LowRankMdp m = gen_tabular(3, 2, 4, 5);
  std::fill(m.reward.begin(), m.reward.end(), 0.0);
  Rng rng(2);
  auto pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  VanillaState st = VanillaState::zeros(m.H, m.d, 0.5);
  auto rep = run_vanilla(m, *pi, 10000, st, rng, [](const Trajectory&) {});
  EXPECT_EQ(rep.final_max_norm, 0.0);
  EXPECT_EQ(rep.first_divergence_step, -1);
}

TEST(RunVanilla, DivergesOnDivergenceInstance) {
  LowRankMdp m = gen_divergence_instance();
  Rng rng(3);
  auto rep = run_vanilla(m, *constant_policy(m.H, m.S, m.A, 0), 100000, 0.1, rng);
  EXPECT_GT(rep.first_divergence_step, 0);
  EXPECT_LE(rep.first_divergence_step, 100000);
  EXPECT_GE(rep.first_divergence_episode, 1);
  EXPECT_TRUE(rep.nonfinite || rep.final_max_norm > kDivergenceNorm);
}

TEST(RunVanilla, SmallStepBoundedOnTabular) {
  LowRankMdp m = gen_tabular(4, 3, 3, 8);
  Rng rng(4);
  auto pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  auto rep = run_vanilla(m, *pi, 100000, 0.05, rng);
  EXPECT_EQ(rep.steps, 100000);
  EXPECT_FALSE(rep.nonfinite);
  EXPECT_EQ(rep.first_divergence_step, -1);
  // One-hot features: every coordinate is a running average of values in [0, H].
  for (double n : rep.max_norm_per_episode) EXPECT_LE(n, m.H * std::sqrt(static_cast<double>(m.d)));
}

TEST(RunVanilla, StepCountAndEpisodes) {
  LowRankMdp m = gen_tabular(2, 2, 3, 1);
  Rng rng(5);
  auto pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  auto rep = run_vanilla(m, *pi, 10, 0.1, rng);
  EXPECT_EQ(rep.steps, 10);
  EXPECT_EQ(rep.episodes, 4);
  EXPECT_EQ(rep.max_norm_per_episode.size(), 4u);
}

// With the next level frozen, the expected update over the sampling
// distribution is -lr times the gradient of the population squared loss.
TEST(VanillaStep, ExpectedUpdateIsNegativeGradient) {
  LowRankMdp m = gen_lowrank(5, 3, 3, 4, 12);
  Rng rng(6);
  auto pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  const auto occ = occupancy(m, *pi);
  const double lr = 0.2;
  VanillaState st = VanillaState::zeros(m.H, m.d, lr);
  for (auto& t : st.theta) t = rng.unit_ball(m.d);

  for (int h = 0; h < m.H; ++h) {
    Vec expected = Vec::Zero(m.d);
    Mat gram = Mat::Zero(m.d, m.d);
    Vec cross = Vec::Zero(m.d);
    for (int s = 0; s < m.S; ++s)
      for (int a = 0; a < m.A; ++a) {
        const double w = occ[h][s * m.A + a];
        if (w == 0.0) continue;
        const Vec& phi = m.feature(h, s, a);
        const auto p = m.next_dist(h, s, a);
        double y = m.mean_reward(h, s, a);
        for (int sn = 0; sn < m.S; ++sn) {
          if (p[sn] == 0.0) continue;
          VanillaState copy = st;
          vanilla_step(copy, m, h, s, a, m.mean_reward(h, s, a), sn);
          expected += w * p[sn] * (copy.theta[h] - st.theta[h]);
          y += p[sn] * vanilla_next_max(m, st, h + 1, sn);
        }
        gram += w * phi * phi.transpose();
        cross += w * y * phi;
      }
    const Vec grad = gram * st.theta[h] - cross;
    EXPECT_LE((expected + lr * grad).norm(), 1e-10) << "h=" << h;
  }
}

}  // namespace
}  // namespace sq
