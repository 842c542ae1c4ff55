#pragma once

// Stabilized, second-order, streaming Q-learning under a fixed controller.
//
// Epoch e plays 2^e episodes per level, sweeping levels H-1 down to 0. Level
// l regresses the TD target r + max_a' Q^tar_{l+1}(s', a') on phi_l(s, a)
// with one Sherman-Morrison step per episode, then commits the ball-projected
// solution as the new frozen target for level l. After each full epoch the
// targets are saved as the best approximator.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "sq/mdp.hpp"
#include "sq/qfunc.hpp"
#include "sq/rng.hpp"
#include "sq/streamls.hpp"

namespace sq {

inline constexpr std::int64_t kRunForever = std::numeric_limits<std::int64_t>::max();

inline double td_error(double r, double qtar_next_max, double phi_dot_theta) {
  return r + qtar_next_max - phi_dot_theta;
}

// Projected level entry, evaluated as <phi, theta> or min{1, <phi, theta> + b}.
inline TargetLevel commit_target(const Vec& theta_hat, const Mat& sigma, std::shared_ptr<const Bonus> bonus,
                                 bool clip) {
  TargetLevel l;
  l.theta = linalg::project_ball(theta_hat, sigma);
  l.clipped = clip;
  l.bonus = std::move(bonus);
  return l;
}

struct S3qConfig {
  double lambda = 1.0;
  std::int64_t budget = kRunForever;  // trajectories, checked at episode boundaries
  bool log_samples = false;
};

struct LoggedSample {
  int level = 0;
  int epoch = 0;
  Vec phi;
  double target = 0.0;
};

struct S3qStats {
  int e_tot = 0;                       // completed epochs
  std::vector<std::int64_t> n_level;   // samples behind each level of Qbest
  std::int64_t trajectories = 0;
  bool zero_epoch = false;             // stopped before the first full epoch
  std::vector<double> commit_norms;    // |theta^tar| of every commit, in order
};

struct S3qResult {
  std::shared_ptr<const TargetNetworks> qbest;
  std::vector<Mat> sigma_ref;  // lambda I + sum of phi phi^T over every rolled episode
  S3qStats stats;
  std::vector<LoggedSample> samples;
};

namespace detail {

template <FeatureEnvironment Env>
double max_next_value(const Env& env, const TargetNetworks& q, int h_next, int s_next) {
  if (h_next >= env.horizon()) return 0.0;
  double best = q.value(h_next, env.feature(h_next, s_next, 0));
  for (int a = 1; a < env.num_actions(); ++a) best = std::max(best, q.value(h_next, env.feature(h_next, s_next, a)));
  return best;
}

}  // namespace detail

// on_episode(const Trajectory&) is called after every rolled episode.
template <FeatureEnvironment Env, class OnEpisode>
S3qResult run_s3q(const Env& env, const Policy& controller, std::shared_ptr<const Bonus> bonus,
                  const S3qConfig& cfg, Rng& rng, OnEpisode&& on_episode) {
  if (!(cfg.lambda > 0.0)) throw ConfigError("run_s3q: lambda must be positive");
  if (cfg.budget < 0) throw ConfigError("run_s3q: budget must be nonnegative");
  const int H = env.horizon();
  const int d = env.dim();
  const bool clip = static_cast<bool>(bonus);

  S3qResult out;
  out.sigma_ref.assign(H, cfg.lambda * Mat::Identity(d, d));
  out.stats.n_level.assign(H, 0);
  out.stats.zero_epoch = true;
  out.qbest = std::make_shared<const TargetNetworks>(TargetNetworks::zeros(H, d, bonus));
  TargetNetworks qtar = TargetNetworks::zeros(H, d, bonus);

  for (int e = 1;; ++e) {
    const std::int64_t per_level = std::int64_t{1} << e;
    for (int l = H - 1; l >= 0; --l) {
      SlsState st = sls_init(d, cfg.lambda);
      for (std::int64_t k = 0; k < per_level; ++k) {
        if (out.stats.trajectories >= cfg.budget) return out;
        const Trajectory t = sample_episode(env, controller, rng);
        ++out.stats.trajectories;
        for (int h = 0; h < H; ++h) {
          const Vec& f = env.feature(h, t.states[h], t.actions[h]);
          out.sigma_ref[h].noalias() += f * f.transpose();
        }
        on_episode(t);
        const Vec& phi = env.feature(l, t.states[l], t.actions[l]);
        const double target = t.rewards[l] + detail::max_next_value(env, qtar, l + 1, t.states[l + 1]);
        sls_step_inplace(st, phi, target);
        if (cfg.log_samples) out.samples.push_back({l, e, phi, target});
      }
      TargetLevel lv;
      lv.theta = sls_finalize(st);
      lv.clipped = clip;
      lv.bonus = bonus;
      out.stats.commit_norms.push_back(lv.theta.norm());
      qtar.levels[l] = std::move(lv);
    }
    out.qbest = std::make_shared<const TargetNetworks>(qtar);
    out.stats.e_tot = e;
    out.stats.zero_epoch = false;
    std::fill(out.stats.n_level.begin(), out.stats.n_level.end(), per_level);
  }
}

template <FeatureEnvironment Env>
S3qResult run_s3q(const Env& env, const Policy& controller, std::shared_ptr<const Bonus> bonus,
                  const S3qConfig& cfg, Rng& rng) {
  return run_s3q(env, controller, std::move(bonus), cfg, rng, [](const Trajectory&) {});
}

}  // namespace sq
