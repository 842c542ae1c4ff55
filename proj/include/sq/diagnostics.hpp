#pragma once

// Exact analysis quantities on finite instances (best on-policy linear fit,
// comparator and transfer errors, uncertainty function, effective dimension)
// plus checks of the deterministic inequalities and Monte-Carlo harnesses for
// the concentration statements.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sq/errors.hpp"
#include "sq/linalg.hpp"
#include "sq/mdp.hpp"
#include "sq/qfunc.hpp"
#include "sq/rng.hpp"
#include "sq/streamls.hpp"

namespace sq {

// ---------------------------------------------------------------------------
// Quadratic minimization over the unit ball

// argmin_{|theta| <= 1} theta^T G theta - 2 rhs^T theta for PSD G. Directions
// with eigenvalue below `tol` times the largest are dropped, which is the
// minimal-norm limit of a vanishing ridge.
inline Vec ball_quadratic_min(const Mat& G, const Vec& rhs, double tol = 1e-10) {
  const int d = static_cast<int>(rhs.size());
  Eigen::SelfAdjointEigenSolver<Mat> eig(G);
  if (eig.info() != Eigen::Success) throw NumericalError("ball_quadratic_min: eigendecomposition failed");
  const Vec& ev = eig.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  Vec proj = eig.eigenvectors().transpose() * rhs;
  std::vector<bool> keep(d);
  for (int i = 0; i < d; ++i) keep[i] = ev(i) > tol * std::max(top, 1.0);
  auto coef = [&](double mu) {
    Vec c = Vec::Zero(d);
    for (int i = 0; i < d; ++i)
      if (keep[i]) c(i) = proj(i) / (ev(i) + mu);
    return c;
  };
  if (coef(0.0).norm() <= 1.0) return eig.eigenvectors() * coef(0.0);
  double lo = 0.0, hi = proj.norm();
  for (int it = 0; it < 400 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (coef(mid).norm() > 1.0 ? lo : hi) = mid;
  }
  return eig.eigenvectors() * coef(hi);
}

// ---------------------------------------------------------------------------
// Best predictor, comparator error, transfer error

// Values of a target network at timestep h as an [S][A] table.
inline std::vector<double> network_table(const LowRankMdp& m, const TargetNetworks& q, int h) {
  std::vector<double> t(static_cast<std::size_t>(m.S) * m.A, 0.0);
  if (h >= m.H) return t;
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) t[s * m.A + a] = q.value(h, m.feature(h, s, a));
  return t;
}

struct BestPredictor {
  Vec theta;
  double loss = 0.0;        // E_occ (<phi, theta> - y)^2
  bool unreachable = false; // no occupancy mass at h
};

// Constrained weighted least squares of the table y on phi_h under the
// occupancy weights w ([S][A]).
inline BestPredictor best_predictor_weighted(const LowRankMdp& m, int h, std::span<const double> w,
                                             std::span<const double> y) {
  BestPredictor bp;
  Mat G = Mat::Zero(m.d, m.d);
  Vec rhs = Vec::Zero(m.d);
  double mass = 0.0;
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) {
      const double wi = w[s * m.A + a];
      if (wi <= 0.0) continue;
      const Vec& f = m.feature(h, s, a);
      G.noalias() += wi * f * f.transpose();
      rhs.noalias() += wi * y[s * m.A + a] * f;
      mass += wi;
    }
  if (mass <= 0.0) {
    bp.theta = Vec::Zero(m.d);
    bp.unreachable = true;
    return bp;
  }
  bp.theta = ball_quadratic_min(G, rhs);
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) {
      const double wi = w[s * m.A + a];
      if (wi <= 0.0) continue;
      const double r = m.feature(h, s, a).dot(bp.theta) - y[s * m.A + a];
      bp.loss += wi * r * r;
    }
  return bp;
}

// Fit of T_h Q' under the occupancy of pi at h; qnext is an [S][A] table.
inline BestPredictor best_predictor(const LowRankMdp& m, const Policy& pi, std::span<const double> qnext, int h) {
  const auto occ = occupancy(m, pi);
  const auto y = bellman_backup(m, h, qnext);
  return best_predictor_weighted(m, h, occ[h], y);
}

// (T_h Q')(s, a) - <phi_h(s, a), theta*> as an [S][A] table.
inline std::vector<double> comparator_error(const LowRankMdp& m, const Policy& pi, std::span<const double> qnext,
                                            int h) {
  const auto y = bellman_backup(m, h, qnext);
  const auto bp = best_predictor_weighted(m, h, occupancy(m, pi)[h], y);
  std::vector<double> e(y.size());
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) e[s * m.A + a] = y[s * m.A + a] - m.feature(h, s, a).dot(bp.theta);
  return e;
}

enum class TransferMode { lin, all };

struct TransferEstimate {
  double value = 0.0;  // lower bound on the supremum over the full classes
  int argmax_policy = -1;
  int argmax_q = -1;
};

// max over (pibar, Q') of |sum_h E_{pibar}[Q_h - T_h Q'_{h+1}]| where Q_h is
// the best fit of T_h Q'_{h+1} under the occupancy of pi. Each candidate Q'
// is a QTable whose level h+1 is the next-step function.
inline TransferEstimate transfer_error_estimate(const LowRankMdp& m, const Policy& pi,
                                                const std::vector<std::shared_ptr<const Policy>>& pibars,
                                                const std::vector<QTable>& qs) {
  if (pibars.empty() || qs.empty()) throw ConfigError("transfer_error_estimate: empty candidate set");
  const auto occ_pi = occupancy(m, pi);
  std::vector<std::vector<std::vector<double>>> occ_bar;
  occ_bar.reserve(pibars.size());
  for (const auto& p : pibars) occ_bar.push_back(occupancy(m, *p));

  TransferEstimate out;
  out.value = -1.0;
  for (std::size_t j = 0; j < qs.size(); ++j) {
    // Residual table per h for this Q'.
    std::vector<std::vector<double>> resid(m.H);
    for (int h = 0; h < m.H; ++h) {
      std::vector<double> next(qs[j].level(h + 1).begin(), qs[j].level(h + 1).end());
      const auto y = bellman_backup(m, h, next);
      const auto bp = best_predictor_weighted(m, h, occ_pi[h], y);
      resid[h].resize(y.size());
      for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) resid[h][s * m.A + a] = m.feature(h, s, a).dot(bp.theta) - y[s * m.A + a];
    }
    for (std::size_t i = 0; i < pibars.size(); ++i) {
      double total = 0.0;
      for (int h = 0; h < m.H; ++h)
        for (std::size_t k = 0; k < resid[h].size(); ++k) total += occ_bar[i][h][k] * resid[h][k];
      if (std::abs(total) > out.value) {
        out.value = std::abs(total);
        out.argmax_policy = static_cast<int>(i);
        out.argmax_q = static_cast<int>(j);
      }
    }
  }
  return out;
}

// Random next-step candidates: linear functions with |theta| <= 1 (lin) or
// arbitrary tables with values in [-1, 1] (all). Terminal rows stay 0.
inline std::vector<QTable> random_q_candidates(const LowRankMdp& m, TransferMode mode, int count, Rng& rng) {
  std::vector<QTable> out;
  for (int k = 0; k < count; ++k) {
    QTable q(m.H, m.S, m.A);
    for (int h = 0; h < m.H; ++h) {
      const Vec theta = rng.unit_ball(m.d);
      for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
          if (s == m.terminal) continue;
          q.at(h, s, a) = mode == TransferMode::lin ? m.feature(h, s, a).dot(theta) : rng.uniform(-1.0, 1.0);
        }
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uncertainty function

struct UncertaintySpec {
  double n_star = 0.0;
  double delta_star = 0.0;
  double alpha_unit = 0.0;      // alpha-bar with c = 1
  double c = 1.0;
  std::vector<Mat> sigma_bar_inv;

  // c-free factor alpha_unit |phi|_{Sigma-bar^{-1}}.
  double unit(int h, const Vec& phi) const { return alpha_unit * linalg::mahalanobis(sigma_bar_inv[h], phi); }
  double eval(int h, const Vec& phi) const { return c * unit(h, phi); }
};

// n* = K / (4H), delta* = delta_master / (2 H e_tot^2 d),
// alpha-bar = c (sqrt(d log(d n* e H / delta*)) + sqrt(lambda)) with e Euler's
// number, and Sigma-bar_h = n* (E_pi phi phi^T + lambda I) from exact occupancy.
inline UncertaintySpec uncertainty_spec(const LowRankMdp& m, const Policy& pi, std::int64_t K, double delta_master,
                                        int e_tot, double lambda, double c) {
  if (e_tot < 1) throw ConfigError("uncertainty: at least one completed epoch is required");
  if (!(lambda > 0.0)) throw ConfigError("uncertainty: lambda must be positive");
  UncertaintySpec u;
  u.n_star = static_cast<double>(K) / (4.0 * m.H);
  if (!(u.n_star >= 1.0)) throw ConfigError("uncertainty: n* = K/(4H) must be >= 1");
  u.delta_star = delta_master / (2.0 * m.H * static_cast<double>(e_tot) * e_tot * m.d);
  u.alpha_unit = std::sqrt(m.d * std::log(m.d * u.n_star * M_E * m.H / u.delta_star)) + std::sqrt(lambda);
  u.c = c;
  const auto occ = occupancy(m, pi);
  u.sigma_bar_inv.resize(m.H);
  for (int h = 0; h < m.H; ++h) {
    Mat cov = lambda * Mat::Identity(m.d, m.d);
    for (int s = 0; s < m.S; ++s)
      for (int a = 0; a < m.A; ++a) {
        const double w = occ[h][s * m.A + a];
        if (w > 0.0) cov.noalias() += w * m.feature(h, s, a) * m.feature(h, s, a).transpose();
      }
    u.sigma_bar_inv[h] = linalg::inverse_spd(u.n_star * cov);
  }
  return u;
}

inline double uncertainty_eval(const LowRankMdp& m, const Policy& pi, std::int64_t K, double delta_master, int e_tot,
                               double lambda, double c, int h, int s, int a) {
  return uncertainty_spec(m, pi, K, delta_master, e_tot, lambda, c).eval(h, m.feature(h, s, a));
}

// Smallest c for which the pointwise bracket holds at every (h, s, a):
//   without bonus  |err + E| <= c u,
//   with bonus     min{0, -c u + b} <= err + E <= c u + b,
// where err = Qbest_h - T_h Qbest_{h+1} and E is the comparator error of
// the controller. Pairs with u = 0 must satisfy the bracket at c = 0 or the
// result is +inf.
struct BracketReport {
  double c_min = 0.0;
  double max_abs_sum = 0.0;  // max |err + E|
  int worst_h = -1, worst_s = -1, worst_a = -1;
};

inline BracketReport bracket_c_min(const LowRankMdp& m, const Policy& controller, const TargetNetworks& qbest,
                                   const UncertaintySpec& u) {
  BracketReport rep;
  const auto occ = occupancy(m, controller);
  for (int h = 0; h < m.H; ++h) {
    const auto qh = network_table(m, qbest, h);
    const auto qn = network_table(m, qbest, h + 1);
    const auto y = bellman_backup(m, h, qn);
    const auto bp = best_predictor_weighted(m, h, occ[h], y);
    const TargetLevel& lv = qbest.levels[h];
    for (int s = 0; s < m.S; ++s)
      for (int a = 0; a < m.A; ++a) {
        const Vec& f = m.feature(h, s, a);
        const int i = s * m.A + a;
        const double err = qh[i] - y[i];
        const double comp = y[i] - f.dot(bp.theta);
        const double x = err + comp;
        const double b = (lv.clipped && lv.bonus) ? lv.bonus->eval(h, f) : 0.0;
        const double un = u.unit(h, f);
        rep.max_abs_sum = std::max(rep.max_abs_sum, std::abs(x));
        double need = 0.0;
        const double slack = 1e-12;
        if (!(lv.clipped)) {
          if (std::abs(x) > slack) need = un > 0.0 ? std::abs(x) / un : std::numeric_limits<double>::infinity();
        } else {
          if (x - b > slack) need = un > 0.0 ? (x - b) / un : std::numeric_limits<double>::infinity();
          if (x < -slack && b - x > slack) {
            const double lo = un > 0.0 ? (b - x) / un : std::numeric_limits<double>::infinity();
            need = std::max(need, lo);
          }
        }
        if (need > rep.c_min) {
          rep.c_min = need;
          rep.worst_h = h;
          rep.worst_s = s;
          rep.worst_a = a;
        }
      }
  }
  return rep;
}

// Terms of the value sandwich
//   -E_{pi*} sum_h u - terr <= E_rho (Vhat_0 - V*_0) <= E_{pibar} sum_h u + terr.
struct ValueSandwich {
  double lower = 0.0;
  double middle = 0.0;
  double upper = 0.0;
  bool holds(double terr) const { return lower - terr <= middle + 1e-12 && middle <= upper + terr + 1e-12; }
};

inline ValueSandwich value_sandwich(const LowRankMdp& m, const TargetNetworks& qbest, const UncertaintySpec& u) {
  const auto vi = value_iteration(m);
  auto pistar = Policy::tabular(greedy_table(m, vi.q));
  auto pibar = Policy::greedy(std::make_shared<const TargetNetworks>(qbest));
  auto expected_u = [&](const Policy& p) {
    const auto occ = occupancy(m, p);
    double acc = 0.0;
    for (int h = 0; h < m.H; ++h)
      for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
          const double w = occ[h][s * m.A + a];
          if (w > 0.0) acc += w * u.eval(h, m.feature(h, s, a));
        }
    return acc;
  };
  ValueSandwich vs;
  const auto q0 = network_table(m, qbest, 0);
  for (int s = 0; s < m.S; ++s) {
    const double vhat = *std::max_element(q0.begin() + s * m.A, q0.begin() + (s + 1) * m.A);
    vs.middle += m.start(s) * (vhat - vi.v[0][s]);
  }
  vs.lower = -expected_u(*pistar);
  vs.upper = expected_u(*pibar);
  return vs;
}

// ---------------------------------------------------------------------------
// Effective dimension

struct EffectiveDimension {
  double lower = 0.0;
  double upper = 0.0;
  bool upper_guarded = false;  // d log(n/(d lambda)) was below the lower value
};

inline Mat expected_outer(const LowRankMdp& m, const Policy& pi, int h) {
  const auto occ = occupancy(m, pi);
  Mat cov = Mat::Zero(m.d, m.d);
  for (int s = 0; s < m.S; ++s)
    for (int a = 0; a < m.A; ++a) {
      const double w = occ[h][s * m.A + a];
      if (w > 0.0) cov.noalias() += w * m.feature(h, s, a) * m.feature(h, s, a).transpose();
    }
  return cov;
}

inline EffectiveDimension effective_dimension_from(const std::vector<Mat>& covs, int d, double n, double lambda) {
  detail::require(!covs.empty(), "effective_dimension: no policies");
  EffectiveDimension e;
  for (const Mat& c : covs)
    e.lower = std::max(e.lower, linalg::logdet(Mat::Identity(d, d) + (n / lambda) * c));
  const double formula = n > 0.0 ? d * std::log(n / (d * lambda)) : 0.0;
  e.upper = std::max(e.lower, formula);
  e.upper_guarded = formula < e.lower;
  return e;
}

inline EffectiveDimension effective_dimension(const LowRankMdp& m,
                                              const std::vector<std::shared_ptr<const Policy>>& policies, double n,
                                              double lambda, int h) {
  std::vector<Mat> covs;
  for (const auto& p : policies) covs.push_back(expected_outer(m, *p, h));
  return effective_dimension_from(covs, m.d, n, lambda);
}

// Bound on completed phases: sum_h d~_h / log(1 + L/8) with
// d~_h = d log(K / (d lambda)).
inline double phase_count_bound(int d, int H, double K, double lambda, double L_trig) {
  const double dt = d * std::log(K / (d * lambda));
  return H * dt / std::log(1.0 + L_trig / 8.0);
}

// ---------------------------------------------------------------------------
// Deterministic inequalities

struct InfoGainReport {
  double g = 0.0;  // log det(Sigma + alpha C) / det Sigma
  double u = 0.0;  // alpha tr(Sigma^{-1} C)
  double l = 0.0;  // log(1 + alpha tr(Sigma^{-1} C))
  bool lower_chain_applies = false;
  double worst_violation = 0.0;  // largest positive gap among the asserted inequalities
  bool ok(double slack = 1e-10) const { return worst_violation <= slack; }
};

inline InfoGainReport info_gain_check(const Mat& sigma, const Mat& cov, double alpha, double L) {
  InfoGainReport r;
  const Mat inv = linalg::inverse_spd(sigma);
  const double tr = (inv * cov).trace();
  r.g = linalg::logdet(sigma + alpha * cov) - linalg::logdet(sigma);
  r.u = alpha * tr;
  r.l = std::log1p(alpha * tr);
  r.worst_violation = std::max(r.l - r.g, r.g - r.u);
  if (L >= M_E - 1.0 && alpha * tr <= L) {
    r.lower_chain_applies = true;
    r.worst_violation = std::max(r.worst_violation, (alpha / L) * tr - r.g);
  }
  return r;
}

// L(theta) - L(theta*) - |theta - theta*|^2_{E XX^T} for the unconstrained
// minimizer on a discrete distribution; zero up to round-off.
inline double excess_loss_gap(const Mat& X, const Vec& y, const Vec& w, const Vec& theta) {
  Mat G = Mat::Zero(X.cols(), X.cols());
  Vec rhs = Vec::Zero(X.cols());
  for (int i = 0; i < X.rows(); ++i) {
    G.noalias() += w(i) * X.row(i).transpose() * X.row(i);
    rhs.noalias() += w(i) * y(i) * X.row(i).transpose();
  }
  const Vec star = G.ldlt().solve(rhs);
  auto loss = [&](const Vec& t) {
    double acc = 0.0;
    for (int i = 0; i < X.rows(); ++i) {
      const double r = X.row(i).dot(t) - y(i);
      acc += w(i) * r * r;
    }
    return acc;
  };
  const Vec diff = theta - star;
  return loss(theta) - loss(star) - diff.dot(G * diff);
}

// |w - w*|^2_{M E XX^T + lambda I} - 2M (L(w) - L(w*)) - lambda |w - w*|^2
// with L = E(<X,w> - Y)^2 / 2 and w* the unit-ball constrained minimizer;
// nonpositive for feasible w.
inline double excess_risk_reg_gap(const Mat& X, const Vec& y, const Vec& w, const Vec& wfeas, double M,
                                  double lambda) {
  const int d = static_cast<int>(X.cols());
  Mat G = Mat::Zero(d, d);
  Vec rhs = Vec::Zero(d);
  for (int i = 0; i < X.rows(); ++i) {
    G.noalias() += w(i) * X.row(i).transpose() * X.row(i);
    rhs.noalias() += w(i) * y(i) * X.row(i).transpose();
  }
  const Vec star = ball_quadratic_min(G, rhs, 0.0);
  auto loss = [&](const Vec& t) {
    double acc = 0.0;
    for (int i = 0; i < X.rows(); ++i) {
      const double r = X.row(i).dot(t) - y(i);
      acc += w(i) * r * r;
    }
    return 0.5 * acc;
  };
  const Vec diff = wfeas - star;
  const double lhs = diff.dot((M * G + lambda * Mat::Identity(d, d)) * diff);
  const double rhs_v = 2.0 * M * (loss(wfeas) - loss(star)) + lambda * diff.squaredNorm();
  return lhs - rhs_v;
}

// ---------------------------------------------------------------------------
// Monte-Carlo harnesses

struct TrialReport {
  std::int64_t trials = 0;
  std::int64_t failures = 0;
  double rate() const { return trials ? static_cast<double>(failures) / trials : 0.0; }
  // One-sided Clopper-Pearson upper bound on the failure probability.
  double upper(double confidence = 0.95) const {
    if (failures >= trials) return 1.0;
    return boost::math::ibeta_inv(static_cast<double>(failures + 1), static_cast<double>(trials - failures),
                                  confidence);
  }
  double fitted_c = 0.0;   // only set by the least-squares harness
  double max_ratio = 0.0;  // likewise: largest normalized error seen
};

enum class ConcentrationKind { matrix_chernoff, proportional, logdet };

struct DiscreteVectors {
  std::vector<Vec> atoms;    // |x| <= 1
  std::vector<double> prob;  // sums to 1

  Mat second_moment() const {
    Mat m = Mat::Zero(atoms[0].size(), atoms[0].size());
    for (std::size_t i = 0; i < atoms.size(); ++i) m.noalias() += prob[i] * atoms[i] * atoms[i].transpose();
    return m;
  }
  const Vec& draw(Rng& rng) const { return atoms[rng.categorical(prob)]; }

  static DiscreteVectors random(int d, int count, Rng& rng) {
    DiscreteVectors dv;
    for (int i = 0; i < count; ++i) {
      Vec v(d);
      for (int j = 0; j < d; ++j) v(j) = rng.normal();
      dv.atoms.push_back(v / v.norm() * std::sqrt(rng.uniform()));
      dv.prob.push_back(0.2 + rng.uniform());
    }
    double t = 0.0;
    for (double p : dv.prob) t += p;
    for (double& p : dv.prob) p /= t;
    return dv;
  }
};

inline bool loewner_le(const Mat& A, const Mat& B, double slack = 1e-9) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(B - A, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -slack;
}

// Matrix Chernoff: W = sum of K outer products x x^T (L_Z = 1) with
// lambda = 2 log(2d/delta) / log(36/35); fails unless
// (W + lambda I)/2 <= E W + lambda I <= 3(W + lambda I)/2.
inline TrialReport matrix_chernoff_trial(const DiscreteVectors& dist, int K, double delta, std::int64_t trials,
                                         Rng& rng) {
  const int d = static_cast<int>(dist.atoms[0].size());
  const double lambda = 2.0 * std::log(2.0 * d / delta) / std::log(36.0 / 35.0);
  const Mat ew = K * dist.second_moment() + lambda * Mat::Identity(d, d);
  TrialReport r;
  for (std::int64_t t = 0; t < trials; ++t) {
    Mat w = lambda * Mat::Identity(d, d);
    for (int k = 0; k < K; ++k) {
      const Vec& x = dist.draw(rng);
      w.noalias() += x * x.transpose();
    }
    ++r.trials;
    if (!(loewner_le(0.5 * w, ew) && loewner_le(ew, 1.5 * w))) ++r.failures;
  }
  return r;
}

// Trigger value for the scalar proportional estimate at sample size n.
inline double proportional_trigger(double delta, double n) {
  const double dp = delta / (2.0 * n * n);
  const double l = std::log(4.0 / dp);
  return 32.0 * 2.0 * l + 8.0 * (7.0 / 3.0) * l;
}

// Draws Z in [0, 1] from `draw` until sum Z >= L(delta / (2 n^2)), then
// checks S/2 <= E Z <= 3S/2 for the sample mean S. Trials that do not
// trigger within max_n draws are counted as passing trivially only when
// E Z = 0 (both sides vanish); otherwise they are failures.
template <class Draw>
TrialReport proportional_trial(Draw&& draw, double mean, double delta, std::int64_t trials, std::int64_t max_n,
                               Rng& rng) {
  TrialReport r;
  for (std::int64_t t = 0; t < trials; ++t) {
    double sum = 0.0;
    std::int64_t n = 0;
    bool fired = false;
    while (n < max_n) {
      sum += draw(rng);
      ++n;
      if (sum >= proportional_trigger(delta, static_cast<double>(n))) {
        fired = true;
        break;
      }
    }
    ++r.trials;
    if (!fired) {
      if (mean != 0.0) ++r.failures;
      continue;
    }
    const double s = sum / static_cast<double>(n);
    if (!(0.5 * s <= mean && mean <= 1.5 * s)) ++r.failures;
  }
  return r;
}

// Log-determinant concentration along one sequence of length n_max, jointly
// over n = 1..n_max, with G_1 = lambda I and lambda = max(1, log(d n_max / delta)).
inline TrialReport logdet_trial(const DiscreteVectors& dist, int n_max, double delta, std::int64_t trials, Rng& rng) {
  const int d = static_cast<int>(dist.atoms[0].size());
  const double lambda = std::max(1.0, std::log(d * static_cast<double>(n_max) / delta));
  const Mat second = dist.second_moment();
  const double base = d * std::log(lambda);
  TrialReport r;
  for (std::int64_t t = 0; t < trials; ++t) {
    Mat g = lambda * Mat::Identity(d, d);
    bool fail = false;
    for (int n = 1; n <= n_max && !fail; ++n) {
      const Vec& x = dist.draw(rng);
      g.noalias() += x * x.transpose();
      const double emp = linalg::logdet(g) - base;
      const double pop = linalg::logdet(lambda * Mat::Identity(d, d) + n * second) - base;
      const double lg = std::log(8.0 * n * n / delta);
      const double lo = 0.25 * pop - (8.0 * std::sqrt(2.0) + 4.0) * lg;
      const double hi = 8.0 * pop + 8.0 * lg;
      fail = !(lo <= emp + 1e-10 && emp <= hi + 1e-10);
    }
    ++r.trials;
    if (fail) ++r.failures;
  }
  return r;
}

// Discrete joint law of (x, y) with |x| <= 1 and |y| <= 1.
struct DiscretePairs {
  std::vector<Vec> x;
  std::vector<double> y;
  std::vector<double> prob;

  int dim() const { return static_cast<int>(x[0].size()); }

  // argmin_{|theta| <= 1} E(<x, theta> - y)^2.
  Vec population_minimizer() const {
    const int d = dim();
    Mat G = Mat::Zero(d, d);
    Vec rhs = Vec::Zero(d);
    for (std::size_t i = 0; i < x.size(); ++i) {
      G.noalias() += prob[i] * x[i] * x[i].transpose();
      rhs.noalias() += prob[i] * y[i] * x[i];
    }
    return ball_quadratic_min(G, rhs);
  }
  Mat second_moment() const {
    Mat m = Mat::Zero(dim(), dim());
    for (std::size_t i = 0; i < x.size(); ++i) m.noalias() += prob[i] * x[i] * x[i].transpose();
    return m;
  }
};

// Frequency with which |theta_hat - theta*|_{n E xx^T + lambda I} exceeds
// c (sqrt(d log(d n / delta)) + sqrt(lambda)); theta_hat is the ball-
// constrained ridge fit on n draws. fitted_c is the empirical (1 - delta)
// quantile of the normalized error.
inline TrialReport ls_population_convergence_trial(const DiscretePairs& law, int n, double lambda, double delta,
                                                   double c, std::int64_t trials, Rng& rng) {
  const int d = law.dim();
  const Vec star = law.population_minimizer();
  const Mat metric = n * law.second_moment() + lambda * Mat::Identity(d, d);
  const double scale =
      (n > 0 ? std::sqrt(d * std::log(std::max(d * static_cast<double>(n) / delta, 1.0))) : 0.0) + std::sqrt(lambda);
  TrialReport r;
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(trials));
  for (std::int64_t t = 0; t < trials; ++t) {
    SlsState st = sls_init(d, lambda);
    for (int k = 0; k < n; ++k) {
      const int i = rng.categorical(law.prob);
      sls_step_inplace(st, law.x[i], law.y[i]);
    }
    const Vec hat = sls_finalize(st);
    const Vec diff = hat - star;
    const double err = std::sqrt(std::max(0.0, diff.dot(metric * diff)));
    ratios.push_back(err / scale);
    ++r.trials;
    if (err > c * scale) ++r.failures;
  }
  std::sort(ratios.begin(), ratios.end());
  const auto idx = static_cast<std::size_t>(std::ceil((1.0 - delta) * static_cast<double>(ratios.size()))) - 1;
  r.fitted_c = ratios.empty() ? 0.0 : ratios[std::min(idx, ratios.size() - 1)];
  r.max_ratio = ratios.empty() ? 0.0 : ratios.back();
  return r;
}

}  // namespace sq
