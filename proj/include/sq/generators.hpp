#pragma once

// Random instance generators and the structural checks every generated
// instance must pass.
//
// Continuation mass is routed through an absorbing zero-feature terminal
// state: latent index z moves to a real state with probability c and to the
// terminal otherwise. With |theta^r_h| <= rho and c = (0.95 - rho) / sqrt(d),
// the exact backup of any Q' with values in [-1, 1] is represented by
// theta^r_h + sum_s' mu_h(s') V'(s'), whose norm is at most 0.95.

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sq/errors.hpp"
#include "sq/mdp.hpp"
#include "sq/rng.hpp"

namespace sq {

inline constexpr double kClosureNormBound = 0.95;  // unit ball minus the 0.05 margin
inline constexpr double kRewardRadius = 0.35;
inline constexpr int kClosureSamples = 50;
inline constexpr double kClosureResidualTol = 1e-8;
inline constexpr double kRowSumTol = 1e-10;

struct StructureReport {
  double max_row_error = 0.0;     // |sum_s' P - 1|
  double min_probability = 0.0;
  double max_feature_norm = 0.0;
  double vstar_min = 0.0;
  double vstar_max = 0.0;
  double max_lowrank_error = 0.0;  // |P - <phi, mu>|, when mu is stored
  double max_closure_residual = 0.0;
  double max_closure_norm = 0.0;
  bool lowrank_checked = false;
  bool ok = false;
  std::string failure;

  std::string summary() const {
    std::ostringstream os;
    os.precision(6);
    os << "rows=" << max_row_error << " minp=" << min_probability << " phi=" << max_feature_norm
       << " vstar=[" << vstar_min << "," << vstar_max << "]";
    if (lowrank_checked)
      os << " lowrank=" << max_lowrank_error << " closure_residual=" << max_closure_residual
         << " closure_norm=" << max_closure_norm;
    os << (ok ? " ok" : " FAILED: " + failure);
    return os.str();
  }
};

namespace detail {

inline Vec random_distribution(Rng& rng, int n) {
  Vec p(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    p(i) = -std::log(u);
  }
  return p / p.sum();
}

// Random clipped-range targets on the real states; terminal rows stay 0.
inline std::vector<double> random_target(const LowRankMdp& m, Rng& rng) {
  std::vector<double> q(static_cast<std::size_t>(m.S) * m.A, 0.0);
  for (int s = 0; s < m.S; ++s) {
    if (s == m.terminal) continue;
    for (int a = 0; a < m.A; ++a) q[s * m.A + a] = rng.uniform(-1.0, 1.0);
  }
  return q;
}

}  // namespace detail

// Row-stochasticity, feature norms, V* in [0, 1]; when mu is stored, the
// factorization P = <phi, mu> and numerical Bellman closure of the
// unit-ball class with margin.
inline StructureReport verify_structure(const LowRankMdp& m, std::uint64_t seed = 0) {
  StructureReport r;
  r.min_probability = 1.0;
  for (int h = 0; h < m.H; ++h)
    for (int s = 0; s < m.S; ++s)
      for (int a = 0; a < m.A; ++a) {
        r.max_feature_norm = std::max(r.max_feature_norm, m.feature(h, s, a).norm());
        if (s == m.terminal) continue;
        const auto p = m.next_dist(h, s, a);
        double sum = 0.0;
        for (double x : p) {
          sum += x;
          r.min_probability = std::min(r.min_probability, x);
        }
        r.max_row_error = std::max(r.max_row_error, std::abs(sum - 1.0));
        if (!m.mu.empty()) {
          const Vec model = m.mu[h].transpose() * m.feature(h, s, a);
          for (int t = 0; t < m.S; ++t) r.max_lowrank_error = std::max(r.max_lowrank_error, std::abs(model(t) - p[t]));
        }
      }
  const auto vi = value_iteration(m);
  r.vstar_min = 1e300;
  r.vstar_max = -1e300;
  for (int s = 0; s < m.S; ++s) {
    r.vstar_min = std::min(r.vstar_min, vi.v[0][s]);
    r.vstar_max = std::max(r.vstar_max, vi.v[0][s]);
  }

  if (!m.mu.empty()) {
    r.lowrank_checked = true;
    Rng rng(seed ^ 0x5eedc0deULL);
    std::vector<int> rows;
    for (int s = 0; s < m.S; ++s)
      if (s != m.terminal) rows.push_back(s);
    const int n = static_cast<int>(rows.size()) * m.A;
    for (int h = 0; h < m.H; ++h) {
      Mat X(n, m.d);
      for (int i = 0; i < static_cast<int>(rows.size()); ++i)
        for (int a = 0; a < m.A; ++a) X.row(i * m.A + a) = m.feature(h, rows[i], a).transpose();
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(X);
      for (int k = 0; k < kClosureSamples; ++k) {
        const auto q = detail::random_target(m, rng);
        const auto y_full = bellman_backup(m, h, q);
        Vec y(n);
        for (int i = 0; i < static_cast<int>(rows.size()); ++i)
          for (int a = 0; a < m.A; ++a) y(i * m.A + a) = y_full[rows[i] * m.A + a];
        const Vec theta = cod.solve(y);
        r.max_closure_residual = std::max(r.max_closure_residual, (X * theta - y).cwiseAbs().maxCoeff());
        r.max_closure_norm = std::max(r.max_closure_norm, theta.norm());
      }
    }
  }

  std::ostringstream fail;
  if (r.max_row_error > kRowSumTol) fail << "transition rows do not sum to 1; ";
  if (r.min_probability < 0.0) fail << "negative transition probability; ";
  if (r.max_feature_norm > 1.0 + 1e-12) fail << "feature norm exceeds 1; ";
  if (r.vstar_min < -1e-12 || r.vstar_max > 1.0 + 1e-12) fail << "V* outside [0, 1]; ";
  if (r.lowrank_checked) {
    if (r.max_lowrank_error > kRowSumTol) fail << "P differs from <phi, mu>; ";
    if (r.max_closure_residual > kClosureResidualTol) fail << "Bellman backup not linear in features; ";
    if (r.max_closure_norm > kClosureNormBound) fail << "backup parameter outside the margin ball (use a smaller reward scale); ";
  }
  r.failure = fail.str();
  r.ok = r.failure.empty();
  return r;
}

namespace detail {

// Shared construction once features are fixed: latent transition rows with a
// terminal exit, linear nonnegative rewards rescaled globally, verification.
inline LowRankMdp finish_lowrank(LowRankMdp m, int real_states, Rng& rng, const std::string& generator,
                                 std::uint64_t seed) {
  const double c = (kClosureNormBound - kRewardRadius) / std::sqrt(static_cast<double>(m.d));
  m.mu.assign(m.H, Mat::Zero(m.d, m.S));
  for (int h = 0; h < m.H; ++h)
    for (int z = 0; z < m.d; ++z) {
      const Vec q = random_distribution(rng, real_states);
      for (int s = 0; s < real_states; ++s) m.mu[h](z, s) = c * q(s);
      m.mu[h](z, m.terminal) = 1.0 - c;
    }

  m.reward_w.assign(m.H, Vec::Zero(m.d));
  double max_norm = 0.0;
  for (int h = 0; h < m.H; ++h) {
    for (int z = 0; z < m.d; ++z) m.reward_w[h](z) = rng.uniform();
    max_norm = std::max(max_norm, m.reward_w[h].norm());
  }
  if (max_norm > 0.0)
    for (auto& w : m.reward_w) w *= kRewardRadius / max_norm;

  auto fill = [&] {
    for (int h = 0; h < m.H; ++h)
      for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
          auto row = m.next_dist(h, s, a);
          if (s == m.terminal) {
            std::fill(row.begin(), row.end(), 0.0);
            row[m.terminal] = 1.0;
            m.reward[m.sa(h, s, a)] = 0.0;
            continue;
          }
          const Vec& f = m.feature(h, s, a);
          const Vec p = m.mu[h].transpose() * f;
          double sum = 0.0;
          for (int t = 0; t < m.S; ++t) {
            row[t] = p(t) < 0.0 ? 0.0 : p(t);
            sum += row[t];
          }
          for (int t = 0; t < m.S; ++t) row[t] /= sum;
          m.reward[m.sa(h, s, a)] = f.dot(m.reward_w[h]);
        }
  };
  fill();
  const auto v0 = value_iteration(m).v[0];
  const double vmax = *std::max_element(v0.begin(), v0.end());
  if (vmax > 1.0) {
    for (auto& w : m.reward_w) w /= vmax;
    fill();
  }

  m.meta.generator = generator;
  m.meta.seed = seed;
  m.meta.version = "1";
  const StructureReport rep = verify_structure(m, seed);
  m.meta.verification = rep.summary();
  if (!rep.ok) throw GenerationError(generator + ": " + rep.summary());
  return m;
}

}  // namespace detail

// One-hot features phi(s, a) = e_{sA + a}, d = S A. The returned instance has
// S + 1 states, the last being the absorbing terminal.
inline LowRankMdp gen_tabular(int S, int A, int H, std::uint64_t seed) {
  if (S < 1 || A < 1 || H < 1) throw ConfigError("gen_tabular: S, A, H must be >= 1");
  Rng rng(seed);
  LowRankMdp m;
  m.allocate(H, S + 1, A, S * A);
  m.terminal = S;
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) m.phi[m.sa(h, s, a)](s * A + a) = 1.0;
  for (int s = 0; s < S; ++s) m.start(s) = 1.0 / S;
  return detail::finish_lowrank(std::move(m), S, rng, "tabular", seed);
}

// Features on the probability simplex (nonnegative orthant directions
// normalized to sum 1), so P = phi^T mu is row-stochastic by construction.
inline LowRankMdp gen_lowrank(int S, int A, int H, int d, std::uint64_t seed) {
  if (S < 1 || A < 1 || H < 1 || d < 1) throw ConfigError("gen_lowrank: S, A, H, d must be >= 1");
  if (d > S * A) throw ConfigError("gen_lowrank: d must not exceed S*A");
  Rng rng(seed);
  LowRankMdp m;
  m.allocate(H, S + 1, A, d);
  m.terminal = S;
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        Vec f(d);
        for (int i = 0; i < d; ++i) f(i) = std::abs(rng.normal());
        m.phi[m.sa(h, s, a)] = f / f.sum();
      }
  for (int s = 0; s < S; ++s) m.start(s) = 1.0 / S;
  return detail::finish_lowrank(std::move(m), S, rng, "lowrank", seed);
}

inline constexpr double kDivergenceReward = 0.03;

// Single self-looping state, two actions with collinear features 0.5u and u
// in R^3. Not low rank (no mu reproduces P = 1 for both). A behavior policy
// that always plays action 0 makes the first-order update chase
// x_h = 2r + 2x_{h+1}, which blows up geometrically in H.
inline LowRankMdp gen_divergence_instance() {
  LowRankMdp m;
  m.allocate(30, 1, 2, 3);
  const Vec u = Vec::Ones(3) / std::sqrt(3.0);
  for (int h = 0; h < m.H; ++h) {
    m.phi[m.sa(h, 0, 0)] = 0.5 * u;
    m.phi[m.sa(h, 0, 1)] = u;
    for (int a = 0; a < 2; ++a) {
      m.reward[m.sa(h, 0, a)] = kDivergenceReward;
      m.next_dist(h, 0, a)[0] = 1.0;
    }
  }
  m.start(0) = 1.0;
  m.meta.generator = "divergence";
  m.meta.version = "divergence-v1";
  m.meta.verification = verify_structure(m).summary();
  return m;
}

}  // namespace sq
