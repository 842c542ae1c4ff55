#pragma once

// First-order semi-gradient Q-learning with linear features and no
// projection or clipping:
//   theta_h <- theta_h - lr (<phi_h, theta_h> - r - max_a' <phi_{h+1}(s', a'), theta_{h+1}>) phi_h.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sq/mdp.hpp"
#include "sq/rng.hpp"

namespace sq {

inline constexpr double kDivergenceNorm = 1e6;

struct VanillaState {
  std::vector<Vec> theta;  // per h, unconstrained
  double lr = 0.1;
  bool diverged = false;   // set once any entry becomes non-finite

  static VanillaState zeros(int H, int d, double lr) {
    return {std::vector<Vec>(H, Vec::Zero(d)), lr, false};
  }

  double max_norm() const {
    double m = 0.0;
    for (const auto& t : theta) {
      const double n = t.norm();
      if (!std::isfinite(n)) return std::numeric_limits<double>::infinity();
      m = std::max(m, n);
    }
    return m;
  }
};

template <FeatureEnvironment Env>
double vanilla_next_max(const Env& env, const VanillaState& st, int h_next, int s_next) {
  if (h_next >= env.horizon()) return 0.0;
  double best = env.feature(h_next, s_next, 0).dot(st.theta[h_next]);
  for (int a = 1; a < env.num_actions(); ++a) best = std::max(best, env.feature(h_next, s_next, a).dot(st.theta[h_next]));
  return best;
}

// Returns false when the update produced a non-finite parameter.
template <FeatureEnvironment Env>
bool vanilla_step(VanillaState& st, const Env& env, int h, int s, int a, double r, int s_next) {
  const Vec& phi = env.feature(h, s, a);
  const double err = phi.dot(st.theta[h]) - r - vanilla_next_max(env, st, h + 1, s_next);
  st.theta[h].noalias() -= st.lr * err * phi;
  if (!st.theta[h].allFinite()) {
    st.diverged = true;
    return false;
  }
  return true;
}

struct VanillaReport {
  std::int64_t steps = 0;
  std::int64_t episodes = 0;
  std::vector<double> max_norm_per_episode;
  std::int64_t first_divergence_step = -1;  // first step with |theta| > 1e6 or non-finite
  std::int64_t first_divergence_episode = -1;
  bool nonfinite = false;
  double final_max_norm = 0.0;
};

// Rolls episodes under the behavior policy, applying one update per visited
// timestep in order h = 0..H-1, until `steps` updates have been made.
template <FeatureEnvironment Env, class OnEpisode>
VanillaReport run_vanilla(const Env& env, const Policy& behavior, std::int64_t steps, VanillaState& st, Rng& rng,
                          OnEpisode&& on_episode) {
  VanillaReport rep;
  const int H = env.horizon();
  while (rep.steps < steps && !st.diverged) {
    const Trajectory t = sample_episode(env, behavior, rng);
    ++rep.episodes;
    for (int h = 0; h < H && rep.steps < steps; ++h) {
      const bool ok = vanilla_step(st, env, h, t.states[h], t.actions[h], t.rewards[h], t.states[h + 1]);
      ++rep.steps;
      if (rep.first_divergence_step < 0 && (!ok || st.theta[h].norm() > kDivergenceNorm)) {
        rep.first_divergence_step = rep.steps;
        rep.first_divergence_episode = rep.episodes;
      }
      if (!ok) break;
    }
    rep.max_norm_per_episode.push_back(st.max_norm());
    on_episode(t);
  }
  rep.nonfinite = st.diverged;
  rep.final_max_norm = st.max_norm();
  return rep;
}

template <FeatureEnvironment Env>
VanillaReport run_vanilla(const Env& env, const Policy& behavior, std::int64_t steps, double lr, Rng& rng) {
  VanillaState st = VanillaState::zeros(env.horizon(), env.dim(), lr);
  return run_vanilla(env, behavior, steps, st, rng, [](const Trajectory&) {});
}

}  // namespace sq
