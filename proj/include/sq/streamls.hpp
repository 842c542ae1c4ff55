#pragma once

// Streaming ball-constrained ridge regression. Each sample costs one
// Sherman-Morrison update; the constrained solution is only formed when a
// snapshot is requested. batch_ridge_constrained is the reference solver it
// must agree with, computed by a different route (normal equations plus an
// eigendecomposition of the Gram matrix).

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <vector>

#include "sq/errors.hpp"
#include "sq/linalg.hpp"

namespace sq {

inline constexpr double kDefaultTargetBound = 2.0;

struct Sample {
  Vec a;
  double b = 0.0;
};

struct SlsState {
  Vec theta;            // unprojected running iterate
  Mat inv;              // inverse of lambda I + sum a a^T
  std::int64_t count = 0;
  double lambda = 1.0;
  double target_bound = kDefaultTargetBound;

  int dim() const { return static_cast<int>(theta.size()); }
};

// Symmetrize the maintained inverse every this many updates.
inline constexpr std::int64_t kSymmetrizeEvery = 1024;

inline SlsState sls_init(int d, double lambda, double target_bound = kDefaultTargetBound) {
  if (d < 1) throw ConfigError("sls_init: dimension must be >= 1");
  if (!(lambda > 0.0)) throw ConfigError("sls_init: lambda must be positive");
  SlsState s;
  s.theta = Vec::Zero(d);
  s.inv = Mat::Identity(d, d) / lambda;
  s.lambda = lambda;
  s.target_bound = target_bound;
  return s;
}

inline void check_sample(const SlsState& state, const Vec& a, double b) {
  if (a.size() != state.theta.size()) throw ContractViolation("sls_step: feature dimension mismatch");
  if (a.norm() > 1.0 + 1e-12) throw ContractViolation("sls_step: feature norm exceeds 1");
  if (!std::isfinite(b) || std::abs(b) > state.target_bound) {
    std::ostringstream os;
    os << "sls_step: target " << b << " outside [-" << state.target_bound << ", " << state.target_bound << "]";
    throw ContractViolation(os.str());
  }
}

inline void sls_step_inplace(SlsState& state, const Vec& a, double b) {
  check_sample(state, a, b);
  const double td = b - a.dot(state.theta);
  linalg::sm_update_inplace(state.theta, state.inv, a, td);
  ++state.count;
  if (state.count % kSymmetrizeEvery == 0) linalg::symmetrize(state.inv);
}

inline SlsState sls_step(SlsState state, const Sample& s) {
  sls_step_inplace(state, s.a, s.b);
  return state;
}

// Projected snapshot; the state itself is left untouched so streaming can go on.
inline Vec sls_finalize(const SlsState& state) {
  if (state.theta.norm() <= 1.0) return state.theta;
  return linalg::project_ball(state.theta, linalg::inverse_spd(state.inv));
}

// min_{|theta| <= 1} sum (theta^T a_i - b_i)^2 + lambda |theta|^2.
inline Vec batch_ridge_constrained(std::span<const Sample> samples, int d, double lambda) {
  if (d < 1) throw ConfigError("batch_ridge_constrained: dimension must be >= 1");
  if (!(lambda > 0.0)) throw ConfigError("batch_ridge_constrained: lambda must be positive");
  Mat gram = lambda * Mat::Identity(d, d);
  Vec rhs = Vec::Zero(d);
  for (const auto& s : samples) {
    if (s.a.size() != d) throw ContractViolation("batch_ridge_constrained: feature dimension mismatch");
    gram.noalias() += s.a * s.a.transpose();
    rhs.noalias() += s.a * s.b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("batch_ridge_constrained: eigendecomposition failed");
  const Vec& ev = eig.eigenvalues();
  const Vec proj = eig.eigenvectors().transpose() * rhs;

  auto norm_at = [&](double mu) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = proj(i) / (ev(i) + mu);
      acc += c * c;
    }
    return std::sqrt(acc);
  };
  auto solve_at = [&](double mu) {
    Vec coef(d);
    for (int i = 0; i < d; ++i) coef(i) = proj(i) / (ev(i) + mu);
    return Vec(eig.eigenvectors() * coef);
  };

  if (norm_at(0.0) <= 1.0) return solve_at(0.0);
  // Secular equation |theta(mu)| = 1, monotone decreasing in mu.
  double lo = 0.0;
  double hi = proj.norm();
  for (int it = 0; it < 400 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (norm_at(mid) > 1.0)
      lo = mid;
    else
      hi = mid;
  }
  return solve_at(hi);
}

// Unconstrained ridge via normal equations; the reference for the running iterate.
inline Vec batch_ridge(std::span<const Sample> samples, int d, double lambda) {
  Mat gram = lambda * Mat::Identity(d, d);
  Vec rhs = Vec::Zero(d);
  for (const auto& s : samples) {
    gram.noalias() += s.a * s.a.transpose();
    rhs.noalias() += s.a * s.b;
  }
  return gram.ldlt().solve(rhs);
}

}  // namespace sq
