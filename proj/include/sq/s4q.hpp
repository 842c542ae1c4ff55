#pragma once

// Exploration by policy replay. Each phase replays the stored policies as an
// episode-level mixture, fits optimistic clipped Q-networks with S3Q under
// the current bonus, then plays the greedy policy while accumulating
// sum |phi|^2_{(Sigma_ref)^{-1}} per timestep until one accumulator reaches
// the trigger value. The phase ends by storing (policy, trajectory count) and
// rebuilding the bonus from the phase covariance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sq/errors.hpp"
#include "sq/mdp.hpp"
#include "sq/qfunc.hpp"
#include "sq/rng.hpp"
#include "sq/s3q.hpp"

namespace sq {

// c (sqrt(d ln(d p n / delta)) + sqrt(lambda)).
inline double alpha_param(int d, int p, double n_1p, double delta, double lambda, double c_bonus) {
  if (d < 1 || p < 1 || !(n_1p > 0.0) || !(delta > 0.0) || !(lambda > 0.0))
    throw ConfigError("alpha_param: arguments must be positive");
  if (c_bonus < 0.0) throw ConfigError("alpha_param: c_bonus must be nonnegative");
  const double arg = d * static_cast<double>(p) * n_1p / delta;
  if (!(arg > 1.0)) throw ConfigError("alpha_param: log argument must exceed 1");
  return c_bonus * (std::sqrt(d * std::log(arg)) + std::sqrt(lambda));
}

// 32 c_sn(delta') + 8 c_n(delta') with c_sn = 2 ln(4/delta'),
// c_n = (7/3) ln(4/delta') and delta' = delta / (2 n^2 p).
inline double trig_threshold(double delta, double n, int p) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("trig_threshold: delta must lie in (0, 1)");
  if (!(n >= 1.0) || p < 1) throw ConfigError("trig_threshold: n and p must be >= 1");
  const double dp = delta / (2.0 * n * n * p);
  const double l = std::log(4.0 / dp);
  return 32.0 * 2.0 * l + 8.0 * (7.0 / 3.0) * l;
}

struct ReplayEntry {
  std::shared_ptr<const Policy> policy;
  std::shared_ptr<const TargetNetworks> q;
  std::int64_t m = 0;
};

struct ReplayMemory {
  std::vector<ReplayEntry> entries;

  std::int64_t m_tot() const {
    std::int64_t t = 0;
    for (const auto& e : entries) t += e.m;
    return t;
  }

  Policy controller() const {
    detail::require(!entries.empty(), "mixture_sample: replay memory is empty");
    const double tot = static_cast<double>(m_tot());
    MixturePolicy mix;
    for (const auto& e : entries) mix.parts.emplace_back(e.policy, static_cast<double>(e.m) / tot);
    return Policy{std::move(mix)};
  }
};

// Component j with probability m_j / m_tot.
inline const Policy& mixture_sample(const ReplayMemory& mem, Rng& rng) {
  detail::require(!mem.entries.empty(), "mixture_sample: replay memory is empty");
  std::vector<double> w;
  w.reserve(mem.entries.size());
  for (const auto& e : mem.entries) w.push_back(static_cast<double>(e.m));
  return *mem.entries[rng.categorical(w)].policy;
}

struct PhaseState {
  int p = 1;
  std::vector<double> T;        // accumulators
  std::vector<Mat> sigma_hat;   // Sigma_ref + this phase's outer products
  std::vector<Mat> ref_inv;     // (Sigma_ref)^{-1}, frozen for the phase
  std::int64_t m = 0;

  void start(const std::vector<Mat>& sigma_ref) {
    const int H = static_cast<int>(sigma_ref.size());
    T.assign(H, 0.0);
    sigma_hat = sigma_ref;
    ref_inv.resize(H);
    for (int h = 0; h < H; ++h) ref_inv[h] = linalg::inverse_spd(sigma_ref[h]);
    m = 0;
  }

  double max_T() const { return T.empty() ? 0.0 : *std::max_element(T.begin(), T.end()); }
};

// O(d^2): accumulator increment plus rank-one covariance update.
inline void trigger_step(PhaseState& st, int h, const Vec& phi) {
  st.T[h] += linalg::quad_form(st.ref_inv[h], phi);
  st.sigma_hat[h].noalias() += phi * phi.transpose();
}

struct S4qConfig {
  double delta = 0.1;
  double lambda = 0.0;   // <= 0 selects max(1, ln(4 d K / delta))
  double c_bonus = 1.0;
  double c_stop = 1.0;
  double c_trig = 1.0;   // multiplier on the trigger value

  double resolved_lambda(int d, std::int64_t K) const {
    if (lambda > 0.0) return lambda;
    return std::max(1.0, std::log(4.0 * d * static_cast<double>(K) / delta));
  }

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("s4q: delta must lie in (0, 1)");
    if (c_bonus < 0.0) throw ConfigError("s4q: c_bonus must be nonnegative");
    if (!(c_stop > 0.0)) throw ConfigError("s4q: c_stop must be positive");
    if (!(c_trig > 0.0)) throw ConfigError("s4q: c_trig must be positive");
  }
};

enum class EpisodeSource { s3q_subroutine, s4q_main, baseline };

inline const char* source_name(EpisodeSource s) {
  switch (s) {
    case EpisodeSource::s3q_subroutine: return "s3q-subroutine";
    case EpisodeSource::s4q_main: return "s4q-main";
    case EpisodeSource::baseline: return "baseline";
  }
  return "?";
}

struct LedgerRow {
  std::int64_t episode = 0;  // 1-based
  int phase = 0;
  EpisodeSource source = EpisodeSource::s4q_main;
  double inst_regret = 0.0;
  double cum_regret = 0.0;
  std::int64_t mem_entries = 0;
  std::int64_t mem_bytes = 0;
};

struct PhaseInfo {
  int p = 0;
  std::int64_t first_episode = 0;
  std::int64_t s3q_episodes = 0;
  std::int64_t m = 0;               // greedy trajectories played
  bool completed = false;
  double trigger_value = 0.0;
  double max_T = 0.0;
  double alpha = 0.0;               // bonus scale in force during the phase
  double policy_value = 0.0;        // exact E_rho V^pi of the greedy policy
  std::shared_ptr<const TargetNetworks> q;  // optimistic network of the phase
  S3qStats s3q;
};

struct S4qResult {
  std::vector<LedgerRow> ledger;
  std::vector<PhaseInfo> phases;
  std::int64_t completed_phases = 0;
  double lambda = 0.0;
  double optimal_value = 0.0;
};

// Modeled resident size of the algorithm state, in bytes of doubles: every
// stored policy keeps d H parameters plus its per-timestep bonus (d^2 + 1)
// and a count; the working state holds the accumulators, live and reference
// covariances, current bonus and S3Q regressions.
inline std::int64_t memory_bytes(std::int64_t entries, int d, int H) {
  const std::int64_t dd = static_cast<std::int64_t>(d) * d;
  const std::int64_t per_policy = static_cast<std::int64_t>(d) * H + H * (dd + 1) + 1;
  const std::int64_t working = H                    // T_h
                               + 2 * H * dd         // Sigma_hat, (Sigma_ref)^{-1}
                               + H * (dd + 1)       // current bonus
                               + H * (dd + d)       // streaming regressions
                               + H * d              // targets
                               + H * dd;            // Sigma_ref accumulation
  return 8 * (entries * per_policy + working);
}

// Every episode, including those inside the S3Q call, is charged its exact
// regret E_rho V* - E_rho V^pi against the finite model.
inline S4qResult run_s4q(const LowRankMdp& mdp, std::int64_t K, const S4qConfig& cfg, Rng& rng) {
  cfg.validate();
  if (K < 1) throw ConfigError("s4q: episode budget must be >= 1");
  const int H = mdp.H;
  const int d = mdp.d;
  S4qResult out;
  out.lambda = cfg.resolved_lambda(d, K);
  const double lambda = out.lambda;
  out.optimal_value = value_iteration(mdp).start_value;
  out.ledger.reserve(static_cast<std::size_t>(K));

  ReplayMemory memory;
  std::vector<double> entry_values;
  double cum = 0.0;

  auto charge = [&](int phase, EpisodeSource src, double value) {
    LedgerRow row;
    row.episode = static_cast<std::int64_t>(out.ledger.size()) + 1;
    row.phase = phase;
    row.source = src;
    row.inst_regret = out.optimal_value - value;
    cum += row.inst_regret;
    row.cum_regret = cum;
    row.mem_entries = static_cast<std::int64_t>(memory.entries.size());
    row.mem_bytes = memory_bytes(row.mem_entries, d, H);
    out.ledger.push_back(row);
  };
  auto remaining = [&] { return K - static_cast<std::int64_t>(out.ledger.size()); };

  std::shared_ptr<const Bonus> bonus =
      std::make_shared<const Bonus>(Bonus::isotropic(H, d, alpha_param(d, 1, 1.0, cfg.delta, lambda, cfg.c_bonus), lambda));
  std::vector<Mat> sigma_ref(H, lambda * Mat::Identity(d, d));

  for (int p = 1; remaining() > 0; ++p) {
    PhaseInfo info;
    info.p = p;
    info.first_episode = static_cast<std::int64_t>(out.ledger.size()) + 1;
    info.alpha = bonus->alpha.empty() ? 0.0 : bonus->alpha[0];

    std::shared_ptr<const TargetNetworks> q;
    if (memory.entries.empty()) {
      q = std::make_shared<const TargetNetworks>(TargetNetworks::zeros(H, d, bonus));
      sigma_ref.assign(H, lambda * Mat::Identity(d, d));
    } else {
      const Policy controller = memory.controller();
      double mix_value = 0.0;
      const double tot = static_cast<double>(memory.m_tot());
      for (std::size_t j = 0; j < memory.entries.size(); ++j)
        mix_value += static_cast<double>(memory.entries[j].m) / tot * entry_values[j];
      S3qConfig sc;
      sc.lambda = lambda;
      const double want = std::ceil(cfg.c_stop * H * static_cast<double>(memory.m_tot()));
      sc.budget = std::min<std::int64_t>(static_cast<std::int64_t>(want), remaining());
      auto res = run_s3q(mdp, controller, bonus, sc, rng,
                         [&](const Trajectory&) { charge(p, EpisodeSource::s3q_subroutine, mix_value); });
      info.s3q_episodes = res.stats.trajectories;
      info.s3q = res.stats;
      q = res.qbest;
      sigma_ref = std::move(res.sigma_ref);
      if (remaining() == 0) {
        info.q = q;
        out.phases.push_back(std::move(info));
        break;
      }
    }
    info.q = q;

    auto policy = Policy::greedy(q);
    const double value = policy_value(mdp, *policy);
    info.policy_value = value;

    const double n_so_far = std::max<double>(1.0, static_cast<double>(out.ledger.size()));
    const double L = cfg.c_trig * trig_threshold(cfg.delta, n_so_far, p);
    info.trigger_value = L;

    PhaseState st;
    st.p = p;
    st.start(sigma_ref);
    bool fired = false;
    while (remaining() > 0 && !fired) {
      const Trajectory t = sample_episode(mdp, *policy, rng);
      for (int h = 0; h < H; ++h) trigger_step(st, h, mdp.feature(h, t.states[h], t.actions[h]));
      ++st.m;
      charge(p, EpisodeSource::s4q_main, value);
      fired = st.max_T() >= L;
    }
    info.m = st.m;
    info.max_T = st.max_T();
    info.completed = fired;
    out.phases.push_back(info);
    if (!fired) break;

    memory.entries.push_back({policy, q, st.m});
    entry_values.push_back(value);
    ++out.completed_phases;

    auto nb = std::make_shared<Bonus>();
    const double a = alpha_param(d, p + 1, static_cast<double>(out.ledger.size()), cfg.delta, lambda, cfg.c_bonus);
    nb->alpha.assign(H, a);
    nb->inv.resize(H);
    for (int h = 0; h < H; ++h) nb->inv[h] = linalg::inverse_spd(st.sigma_hat[h]);
    bonus = std::move(nb);
  }
  return out;
}

}  // namespace sq
