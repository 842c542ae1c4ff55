#pragma once

// Linear action-value approximators shared by both learners: the optimistic
// bonus b_h(s,a) = alpha_h |phi|_{Sigma_h^{-1}} and the per-timestep target
// networks Q_h(s,a) = <phi, theta_h> (optionally min{1, <phi, theta_h> + b_h}).

#include <algorithm>
#include <memory>
#include <vector>

#include "sq/errors.hpp"
#include "sq/linalg.hpp"

namespace sq {

struct Bonus {
  std::vector<double> alpha;  // per timestep, >= 0
  std::vector<Mat> inv;       // per timestep, inverse of the phase covariance

  int horizon() const { return static_cast<int>(alpha.size()); }

  double eval(int h, const Vec& phi) const {
    if (alpha[h] == 0.0) return 0.0;
    return alpha[h] * linalg::mahalanobis(inv[h], phi);
  }

  static Bonus isotropic(int horizon, int d, double alpha, double lambda) {
    Bonus b;
    b.alpha.assign(horizon, alpha);
    b.inv.assign(horizon, Mat::Identity(d, d) / lambda);
    return b;
  }
};

inline double bonus_eval(const Bonus& bonus, int h, const Vec& phi) {
  detail::require(h >= 0 && h < bonus.horizon(), "bonus_eval: timestep out of range");
  return bonus.eval(h, phi);
}

struct TargetLevel {
  Vec theta;
  bool clipped = false;
  std::shared_ptr<const Bonus> bonus;  // only read when clipped
};

// Levels 0..H-1; level H is the terminal convention Q_{H+1} = 0.
struct TargetNetworks {
  std::vector<TargetLevel> levels;

  int horizon() const { return static_cast<int>(levels.size()); }

  double value(int h, const Vec& phi) const {
    if (h >= horizon()) return 0.0;
    const TargetLevel& l = levels[h];
    double v = phi.dot(l.theta);
    if (l.clipped) {
      if (l.bonus) v += l.bonus->eval(h, phi);
      v = std::min(1.0, v);
    }
    return v;
  }

  static TargetNetworks zeros(int horizon, int d, std::shared_ptr<const Bonus> bonus = nullptr) {
    TargetNetworks q;
    q.levels.resize(horizon);
    for (auto& l : q.levels) {
      l.theta = Vec::Zero(d);
      l.clipped = static_cast<bool>(bonus);
      l.bonus = bonus;
    }
    return q;
  }
};

}  // namespace sq
