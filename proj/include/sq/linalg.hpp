#pragma once

// Small dense symmetric linear algebra used by the streaming regressions:
// Sherman-Morrison rank-one updates of a maintained inverse covariance,
// Mahalanobis norms, projection onto the unit ball in a quadratic metric,
// and log-determinants.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>

#include "sq/errors.hpp"

namespace sq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace linalg {

// Largest negative quadratic form tolerated as round-off before we declare
// the matrix indefinite.
inline constexpr double kQuadFormSlack = 1e-12;

inline constexpr double kProjectionTol = 1e-10;
inline constexpr int kProjectionMaxIter = 200;

struct SmResult {
  Vec theta;
  Mat inv;
};

inline void check_dims(const Mat& inv, const Vec& v, const char* who) {
  if (inv.rows() != inv.cols() || inv.rows() != v.size()) {
    std::ostringstream os;
    os << who << ": dimension mismatch (matrix " << inv.rows() << "x" << inv.cols()
       << ", vector " << v.size() << ")";
    throw ContractViolation(os.str());
  }
}

// phi^T inv phi, rejecting indefinite matrices.
inline double quad_form(const Mat& inv, const Vec& phi) {
  check_dims(inv, phi, "quad_form");
  const double q = phi.dot(inv * phi);
  if (!(q >= -kQuadFormSlack)) {
    std::ostringstream os;
    os << "quadratic form is negative (" << q << "): matrix lost positive definiteness";
    throw NumericalError(os.str());
  }
  return q < 0.0 ? 0.0 : q;
}

inline double mahalanobis(const Mat& inv, const Vec& phi) {
  return std::sqrt(quad_form(inv, phi));
}

// In-place Sherman-Morrison step: theta += inv phi td / (1 + |phi|^2_inv),
// inv -= inv phi phi^T inv / (1 + |phi|^2_inv). O(d^2).
inline void sm_update_inplace(Vec& theta, Mat& inv, const Vec& phi, double td) {
  check_dims(inv, phi, "sm_update");
  if (theta.size() != phi.size()) throw ContractViolation("sm_update: theta/phi dimension mismatch");
  const Vec g = inv * phi;
  const double q = phi.dot(g);
  if (!(q >= -kQuadFormSlack)) {
    std::ostringstream os;
    os << "sm_update: negative quadratic form " << q << " (inverse covariance not PD)";
    throw NumericalError(os.str());
  }
  const double denom = 1.0 + (q < 0.0 ? 0.0 : q);
  theta.noalias() += g * (td / denom);
  inv.noalias() -= (g * g.transpose()) / denom;
}

inline SmResult sm_update(const Vec& theta, const Mat& inv, const Vec& phi, double td) {
  SmResult out{theta, inv};
  sm_update_inplace(out.theta, out.inv, phi, td);
  return out;
}

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline Mat inverse_spd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("inverse_spd: matrix is not positive definite");
  Mat inv = llt.solve(Mat::Identity(m.rows(), m.cols()));
  symmetrize(inv);
  return inv;
}

inline double logdet(const Mat& sigma) {
  if (sigma.rows() != sigma.cols()) throw ContractViolation("logdet: matrix is not square");
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("logdet: matrix is not positive definite");
  const Mat& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double v = l(i, i);
    if (!(v > 0.0)) throw NumericalError("logdet: nonpositive pivot");
    acc += std::log(v);
  }
  return 2.0 * acc;
}

// argmin over |theta|_2 <= 1 of |theta - theta_hat|^2_sigma, where sigma is
// the covariance (not its inverse). Exterior points are handled by bisection
// on the Lagrange multiplier mu of (sigma + mu I) theta = sigma theta_hat;
// the returned point is always on the feasible side of the bracket.
inline Vec project_ball(const Vec& theta_hat, const Mat& sigma) {
  check_dims(sigma, theta_hat, "project_ball");
  if (theta_hat.norm() <= 1.0) return theta_hat;

  const Eigen::Index d = theta_hat.size();
  const Vec rhs = sigma * theta_hat;
  const Mat eye = Mat::Identity(d, d);
  auto solve_at = [&](double mu) {
    Eigen::LLT<Mat> llt(sigma + mu * eye);
    if (llt.info() != Eigen::Success) throw NumericalError("project_ball: sigma + mu I is not positive definite");
    return Vec(llt.solve(rhs));
  };

  // |theta(mu)| <= |rhs| / mu, so mu = 2 |rhs| is feasible with room for round-off.
  double lo = 0.0;
  double hi = std::max(2.0 * rhs.norm(), 1e-300);
  Vec best = solve_at(hi);
  for (int it = 0; it < kProjectionMaxIter; ++it) {
    if (1.0 - best.norm() <= kProjectionTol) return best;
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    Vec cand = solve_at(mid);
    if (cand.norm() > 1.0) {
      lo = mid;
    } else {
      hi = mid;
      best = std::move(cand);
    }
  }
  if (1.0 - best.norm() <= kProjectionTol) return best;
  std::ostringstream os;
  os << "project_ball: bisection did not converge (|theta_hat|=" << theta_hat.norm()
     << ", bracket=[" << lo << ", " << hi << "], |theta|=" << best.norm() << ")";
  throw NumericalError(os.str());
}

}  // namespace linalg
}  // namespace sq
