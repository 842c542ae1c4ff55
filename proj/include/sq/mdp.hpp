#pragma once

// Finite-horizon low-rank MDPs, policies, rollouts and the exact
// dynamic-programming oracles (value iteration, policy evaluation, Bellman
// backups, occupancy measures).
//
// Timesteps are 0-based: h = 0..H-1, with the convention Q_H = 0. Instances
// may carry an absorbing terminal state with zero features and zero reward.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sq/errors.hpp"
#include "sq/linalg.hpp"
#include "sq/qfunc.hpp"
#include "sq/rng.hpp"

namespace sq {

struct RewardNoise {
  enum class Kind { none, bounded } kind = Kind::none;
  double half_width = 0.0;
};

struct InstanceMeta {
  std::string generator;
  std::uint64_t seed = 0;
  std::string version;
  std::string verification;  // free-form report written by the generator
};

struct LowRankMdp {
  int H = 0;
  int S = 0;  // including the terminal state, if any
  int A = 0;
  int d = 0;
  int terminal = -1;

  std::vector<Vec> phi;          // [H][S][A]
  std::vector<Mat> mu;           // [H] d x S; empty when not low rank
  std::vector<Vec> reward_w;     // [H]; empty when rewards are tabular only
  std::vector<double> reward;    // [H][S][A] mean rewards
  std::vector<double> trans;     // [H][S][A][S]
  Vec start;                     // [S]
  RewardNoise noise;
  InstanceMeta meta;

  std::size_t sa(int h, int s, int a) const {
    return (static_cast<std::size_t>(h) * S + s) * A + a;
  }

  int horizon() const { return H; }
  int num_actions() const { return A; }
  int dim() const { return d; }
  const Vec& feature(int h, int s, int a) const { return phi[sa(h, s, a)]; }
  double mean_reward(int h, int s, int a) const { return reward[sa(h, s, a)]; }
  std::span<const double> next_dist(int h, int s, int a) const {
    return {trans.data() + sa(h, s, a) * S, static_cast<std::size_t>(S)};
  }
  std::span<double> next_dist(int h, int s, int a) {
    return {trans.data() + sa(h, s, a) * S, static_cast<std::size_t>(S)};
  }

  int initial_state(Rng& rng) const { return rng.categorical({start.data(), static_cast<std::size_t>(S)}); }

  // Realized reward and next state.
  std::pair<double, int> transition(int h, int s, int a, Rng& rng) const {
    if (s == terminal) return {0.0, terminal};
    double r = mean_reward(h, s, a);
    if (noise.kind == RewardNoise::Kind::bounded)
      r = std::clamp(r + rng.uniform(-noise.half_width, noise.half_width), -1.0, 1.0);
    return {r, rng.categorical(next_dist(h, s, a))};
  }

  void allocate(int horizon, int states, int actions, int dim_) {
    H = horizon;
    S = states;
    A = actions;
    d = dim_;
    const std::size_t n = static_cast<std::size_t>(H) * S * A;
    phi.assign(n, Vec::Zero(d));
    reward.assign(n, 0.0);
    trans.assign(n * S, 0.0);
    start = Vec::Zero(S);
  }
};

// Interface the learners are written against: features and sampled
// transitions only, no access to the model.
template <class E>
concept FeatureEnvironment = requires(const E& e, int h, int s, int a, Rng& rng) {
  { e.horizon() } -> std::convertible_to<int>;
  { e.num_actions() } -> std::convertible_to<int>;
  { e.dim() } -> std::convertible_to<int>;
  { e.feature(h, s, a) } -> std::convertible_to<const Vec&>;
  { e.initial_state(rng) } -> std::convertible_to<int>;
  { e.transition(h, s, a, rng) } -> std::convertible_to<std::pair<double, int>>;
};

static_assert(FeatureEnvironment<LowRankMdp>);

// ---------------------------------------------------------------------------
// Policies

struct GreedyLinear {
  std::shared_ptr<const TargetNetworks> q;
};

// Per-(h, s) action distributions, [H][S][A].
struct TabularPolicy {
  int H = 0, S = 0, A = 0;
  std::vector<double> prob;

  double p(int h, int s, int a) const { return prob[(static_cast<std::size_t>(h) * S + s) * A + a]; }

  static TabularPolicy deterministic(int H, int S, int A, std::span<const int> actions) {
    detail::require(actions.size() == static_cast<std::size_t>(H) * S, "TabularPolicy: action table size");
    TabularPolicy t{H, S, A, std::vector<double>(static_cast<std::size_t>(H) * S * A, 0.0)};
    for (std::size_t i = 0; i < actions.size(); ++i) {
      detail::require(actions[i] >= 0 && actions[i] < A, "TabularPolicy: action out of range");
      t.prob[i * A + actions[i]] = 1.0;
    }
    return t;
  }

  static TabularPolicy uniform(int H, int S, int A) {
    return {H, S, A, std::vector<double>(static_cast<std::size_t>(H) * S * A, 1.0 / A)};
  }
};

struct Policy;

struct MixturePolicy {
  std::vector<std::pair<std::shared_ptr<const Policy>, double>> parts;
};

struct Policy {
  std::variant<GreedyLinear, TabularPolicy, MixturePolicy> kind;

  static std::shared_ptr<const Policy> greedy(std::shared_ptr<const TargetNetworks> q) {
    return std::make_shared<const Policy>(Policy{GreedyLinear{std::move(q)}});
  }
  static std::shared_ptr<const Policy> tabular(TabularPolicy t) {
    return std::make_shared<const Policy>(Policy{std::move(t)});
  }
  static std::shared_ptr<const Policy> mixture(MixturePolicy m) {
    double total = 0.0;
    for (const auto& [p, w] : m.parts) {
      detail::require(p != nullptr, "mixture: null component");
      detail::require(w > 0.0, "mixture: weights must be positive");
      total += w;
    }
    detail::require(!m.parts.empty(), "mixture: no components");
    detail::require(std::abs(total - 1.0) <= 1e-9, "mixture: weights must sum to 1");
    return std::make_shared<const Policy>(Policy{std::move(m)});
  }
};

// Greedy action w.r.t. the target networks, lowest index on ties.
template <FeatureEnvironment Env>
int greedy_action(const Env& env, const TargetNetworks& q, int h, int s) {
  int best = 0;
  double best_v = q.value(h, env.feature(h, s, 0));
  for (int a = 1; a < env.num_actions(); ++a) {
    const double v = q.value(h, env.feature(h, s, a));
    if (v > best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

// Mixtures are resolved once per episode into a non-mixture component.
inline const Policy& resolve_episode_policy(const Policy& pi, Rng& rng) {
  const Policy* cur = &pi;
  while (const auto* m = std::get_if<MixturePolicy>(&cur->kind)) {
    std::vector<double> w;
    w.reserve(m->parts.size());
    for (const auto& part : m->parts) w.push_back(part.second);
    cur = m->parts[rng.categorical(w)].first.get();
  }
  return *cur;
}

template <FeatureEnvironment Env>
int policy_action(const Env& env, const Policy& leaf, int h, int s, Rng& rng) {
  if (const auto* g = std::get_if<GreedyLinear>(&leaf.kind)) return greedy_action(env, *g->q, h, s);
  if (const auto* t = std::get_if<TabularPolicy>(&leaf.kind)) {
    const double* row = t->prob.data() + (static_cast<std::size_t>(h) * t->S + s) * t->A;
    for (int a = 0; a < t->A; ++a)
      if (row[a] == 1.0) return a;
    return rng.categorical({row, static_cast<std::size_t>(t->A)});
  }
  throw ContractViolation("policy_action: mixture must be resolved per episode");
}

// ---------------------------------------------------------------------------
// Rollouts

struct Trajectory {
  std::vector<int> states;      // H + 1 entries
  std::vector<int> actions;     // H
  std::vector<double> rewards;  // H

  double total_reward() const {
    double t = 0.0;
    for (double r : rewards) t += r;
    return t;
  }
};

template <FeatureEnvironment Env>
Trajectory sample_episode(const Env& env, const Policy& pi, Rng& rng) {
  const Policy& leaf = resolve_episode_policy(pi, rng);
  const int H = env.horizon();
  Trajectory t;
  t.states.reserve(H + 1);
  t.actions.reserve(H);
  t.rewards.reserve(H);
  int s = env.initial_state(rng);
  for (int h = 0; h < H; ++h) {
    const int a = policy_action(env, leaf, h, s, rng);
    auto [r, next] = env.transition(h, s, a, rng);
    t.states.push_back(s);
    t.actions.push_back(a);
    t.rewards.push_back(r);
    s = next;
  }
  t.states.push_back(s);
  return t;
}

// ---------------------------------------------------------------------------
// Exact oracles

struct QTable {
  int H = 0, S = 0, A = 0;
  std::vector<double> values;  // [H+1][S][A], last level is zero

  QTable() = default;
  QTable(int h, int s, int a)
      : H(h), S(s), A(a), values(static_cast<std::size_t>(h + 1) * s * a, 0.0) {}

  double& at(int h, int s, int a) { return values[(static_cast<std::size_t>(h) * S + s) * A + a]; }
  double at(int h, int s, int a) const { return values[(static_cast<std::size_t>(h) * S + s) * A + a]; }
  std::span<const double> level(int h) const {
    return {values.data() + static_cast<std::size_t>(h) * S * A, static_cast<std::size_t>(S) * A};
  }
  std::span<double> level(int h) {
    return {values.data() + static_cast<std::size_t>(h) * S * A, static_cast<std::size_t>(S) * A};
  }
};

// (T_h V')(s, a) = r_h(s, a) + sum_s' P_h(s'|s, a) V'(s').
inline std::vector<double> backup_values(const LowRankMdp& m, int h, std::span<const double> vnext) {
  detail::require(h >= 0 && h < m.H, "bellman_backup: timestep out of range");
  detail::require(vnext.size() == static_cast<std::size_t>(m.S), "bellman_backup: value size");
  std::vector<double> out(static_cast<std::size_t>(m.S) * m.A);
  for (int s = 0; s < m.S; ++s) {
    for (int a = 0; a < m.A; ++a) {
      if (s == m.terminal) {
        out[s * m.A + a] = 0.0;
        continue;
      }
      const auto p = m.next_dist(h, s, a);
      double acc = 0.0;
      for (int t = 0; t < m.S; ++t) acc += p[t] * vnext[t];
      out[s * m.A + a] = m.mean_reward(h, s, a) + acc;
    }
  }
  return out;
}

// Greedy backup of Q' given as an [S][A] table. Q' at the terminal is
// treated as zero, matching every linear or clipped-linear function of the
// zero feature vector.
inline std::vector<double> bellman_backup(const LowRankMdp& m, int h, std::span<const double> qnext) {
  detail::require(qnext.size() == static_cast<std::size_t>(m.S) * m.A, "bellman_backup: table size");
  std::vector<double> v(m.S, 0.0);
  if (h + 1 < m.H) {
    for (int s = 0; s < m.S; ++s) {
      if (s == m.terminal) continue;
      v[s] = *std::max_element(qnext.begin() + s * m.A, qnext.begin() + (s + 1) * m.A);
    }
  }
  return backup_values(m, h, v);
}

// Policy-evaluation backup: V'(s') = sum_a' pi_{h+1}(a'|s') Q'(s', a').
inline std::vector<double> bellman_backup(const LowRankMdp& m, int h, std::span<const double> qnext,
                                          const TabularPolicy& pi) {
  detail::require(qnext.size() == static_cast<std::size_t>(m.S) * m.A, "bellman_backup: table size");
  std::vector<double> v(m.S, 0.0);
  if (h + 1 < m.H) {
    for (int s = 0; s < m.S; ++s) {
      if (s == m.terminal) continue;
      for (int a = 0; a < m.A; ++a) v[s] += pi.p(h + 1, s, a) * qnext[s * m.A + a];
    }
  }
  return backup_values(m, h, v);
}

struct ValueIterationResult {
  QTable q;
  std::vector<std::vector<double>> v;  // [H+1][S]
  double start_value = 0.0;            // E_rho V*_0
};

inline ValueIterationResult value_iteration(const LowRankMdp& m) {
  ValueIterationResult out;
  out.q = QTable(m.H, m.S, m.A);
  out.v.assign(m.H + 1, std::vector<double>(m.S, 0.0));
  for (int h = m.H - 1; h >= 0; --h) {
    const auto q = backup_values(m, h, out.v[h + 1]);
    std::copy(q.begin(), q.end(), out.q.level(h).begin());
    for (int s = 0; s < m.S; ++s)
      out.v[h][s] = *std::max_element(q.begin() + s * m.A, q.begin() + (s + 1) * m.A);
  }
  for (int s = 0; s < m.S; ++s) out.start_value += m.start(s) * out.v[0][s];
  return out;
}

inline TabularPolicy greedy_table(const LowRankMdp& m, const QTable& q) {
  std::vector<int> act(static_cast<std::size_t>(m.H) * m.S);
  for (int h = 0; h < m.H; ++h)
    for (int s = 0; s < m.S; ++s) {
      int best = 0;
      for (int a = 1; a < m.A; ++a)
        if (q.at(h, s, a) > q.at(h, s, best)) best = a;
      act[static_cast<std::size_t>(h) * m.S + s] = best;
    }
  return TabularPolicy::deterministic(m.H, m.S, m.A, act);
}

// Action distributions of a non-mixture policy on a finite instance.
inline TabularPolicy action_table(const LowRankMdp& m, const Policy& leaf) {
  if (const auto* t = std::get_if<TabularPolicy>(&leaf.kind)) {
    detail::require(t->H == m.H && t->S == m.S && t->A == m.A, "action_table: policy shape mismatch");
    return *t;
  }
  if (const auto* g = std::get_if<GreedyLinear>(&leaf.kind)) {
    std::vector<int> act(static_cast<std::size_t>(m.H) * m.S);
    for (int h = 0; h < m.H; ++h)
      for (int s = 0; s < m.S; ++s) act[static_cast<std::size_t>(h) * m.S + s] = greedy_action(m, *g->q, h, s);
    return TabularPolicy::deterministic(m.H, m.S, m.A, act);
  }
  throw ContractViolation("action_table: mixtures have no per-step action table");
}

// Q^pi for a non-mixture policy.
inline QTable policy_q(const LowRankMdp& m, const TabularPolicy& pi) {
  QTable q(m.H, m.S, m.A);
  for (int h = m.H - 1; h >= 0; --h) {
    std::vector<double> next(q.level(h + 1).begin(), q.level(h + 1).end());
    const auto cur = bellman_backup(m, h, next, pi);
    std::copy(cur.begin(), cur.end(), q.level(h).begin());
  }
  return q;
}

inline double tabular_value(const LowRankMdp& m, const TabularPolicy& pi) {
  const QTable q = policy_q(m, pi);
  double v = 0.0;
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) v += m.start(s) * pi.p(0, s, a) * q.at(0, s, a);
  return v;
}

// E_{s0 ~ rho} V^pi_0(s0); mixtures are expanded by episode-level weights.
inline double policy_value(const LowRankMdp& m, const Policy& pi) {
  if (const auto* mix = std::get_if<MixturePolicy>(&pi.kind)) {
    double v = 0.0;
    for (const auto& [p, w] : mix->parts) v += w * policy_value(m, *p);
    return v;
  }
  return tabular_value(m, action_table(m, pi));
}

// Per-h state-action visitation probabilities, [H][S*A].
inline std::vector<std::vector<double>> occupancy(const LowRankMdp& m, const Policy& pi) {
  std::vector<std::vector<double>> occ(m.H, std::vector<double>(static_cast<std::size_t>(m.S) * m.A, 0.0));
  if (const auto* mix = std::get_if<MixturePolicy>(&pi.kind)) {
    for (const auto& [p, w] : mix->parts) {
      const auto part = occupancy(m, *p);
      for (int h = 0; h < m.H; ++h)
        for (std::size_t i = 0; i < occ[h].size(); ++i) occ[h][i] += w * part[h][i];
    }
    return occ;
  }
  const TabularPolicy t = action_table(m, pi);
  std::vector<double> state(m.S);
  for (int s = 0; s < m.S; ++s) state[s] = m.start(s);
  for (int h = 0; h < m.H; ++h) {
    std::vector<double> next(m.S, 0.0);
    for (int s = 0; s < m.S; ++s) {
      if (state[s] == 0.0) continue;
      for (int a = 0; a < m.A; ++a) {
        const double w = state[s] * t.p(h, s, a);
        occ[h][s * m.A + a] = w;
        if (w == 0.0) continue;
        if (s == m.terminal) {
          next[s] += w;
          continue;
        }
        const auto p = m.next_dist(h, s, a);
        for (int u = 0; u < m.S; ++u) next[u] += w * p[u];
      }
    }
    state = std::move(next);
  }
  return occ;
}

}  // namespace sq
