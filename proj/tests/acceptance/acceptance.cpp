// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Every constant and tolerance is pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "sq/sq.hpp"

using namespace sq;

namespace {

// Streaming/batch equivalence.
constexpr int kEquivInstances = 100;
constexpr int kEquivMaxDim = 16;
constexpr int kEquivMaxSamples = 500;
constexpr double kEquivTol = 1e-8;
constexpr double kEquivSeconds = 10.0;

// Projection.
constexpr int kProjInstances = 50;
constexpr double kProjGrid = 1e-3;
constexpr double kProjTol = 1e-3;
constexpr int kCertInstances = 50;
constexpr int kCertProbes = 2000;
constexpr double kCertSlack = 1e-9;
constexpr double kProjSeconds = 30.0;

// Deterministic inequalities.
constexpr int kIneqInstances = 10000;
constexpr double kIneqSlack = 1e-10;
constexpr double kIneqSeconds = 60.0;

// Concentration harnesses.
constexpr std::int64_t kConcTrials = 2000;
constexpr double kConcDelta = 0.1;
constexpr double kConcConfidence = 0.95;
constexpr double kConcSeconds = 300.0;

// Epoch accounting.
constexpr int kEpochSeedsPerCase = 5;

// Error brackets.
constexpr int kBracketSeeds = 50;
constexpr std::int64_t kBracketK = 1 << 14;
constexpr double kBracketDelta = 0.1;
constexpr double kBracketLambda = 1.0;
constexpr double kBracketC = 1.0;
constexpr double kBracketBonusN = 1000.0;
constexpr double kBracketSeconds = 600.0;

// Regret and memory.
constexpr int kRegretSeeds = 20;
constexpr std::int64_t kRegretK = 50000;
constexpr double kRegretSlopeMax = 0.9;
constexpr double kRegretCBonus = 0.05;
constexpr double kRegretCTrig = 0.01;
constexpr double kRegretLambda = 1.0;
constexpr double kRegretSeconds = 1800.0;
constexpr double kMemoryGrowth = 2.0;

// Near-optimism.
constexpr int kOptimismSeeds = 25;
constexpr std::int64_t kOptimismK = 20000;
constexpr double kOptimismCTrig = 0.01;
constexpr double kOptimismLambda = 1.0;
constexpr double kOptimismSlack = 1e-9;
constexpr double kOptimismMargin = 0.05;
constexpr int kOptimismMinPairs = 200;

// Stability contrast.
constexpr std::int64_t kVanillaSteps = 100000;
constexpr double kVanillaLr = 0.1;
constexpr double kVanillaNorm = 1e6;
constexpr double kStabilitySeconds = 60.0;

// Determinism.
constexpr int kDeterminismSeeds = 3;
constexpr std::int64_t kDeterminismK = 5000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%2d] %s  %s: %s\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Mat random_spd(Rng& rng, int d, double ridge) {
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / d + ridge * Mat::Identity(d, d);
}

std::shared_ptr<const Policy> uniform_policy(const LowRankMdp& m) {
  return Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
}

// ---------------------------------------------------------------------------

void streaming_batch_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst = 0.0;
  for (int t = 0; t < kEquivInstances; ++t) {
    const int d = 1 + rng.below(kEquivMaxDim);
    const int n = 1 + rng.below(kEquivMaxSamples);
    const double lambda = 0.1 + 2.0 * rng.uniform();
    const double yscale = 0.5 + 1.5 * rng.uniform();
    std::vector<Sample> samples;
    for (int k = 0; k < n; ++k) samples.push_back({rng.unit_ball(d), yscale * rng.uniform(-1.0, 1.0)});
    SlsState st = sls_init(d, lambda);
    for (const auto& s : samples) sls_step_inplace(st, s.a, s.b);
    worst = std::max(worst, (sls_finalize(st) - batch_ridge_constrained(samples, d, lambda)).norm());
  }
  const double secs = seconds_since(t0);
  report(1, worst <= kEquivTol && secs < kEquivSeconds, "streaming/batch equivalence",
         fmt("%d instances, max |streaming - batch| = %.3g (tol %.0e), %.2fs", kEquivInstances, worst, kEquivTol,
             secs));
}

// Oracle: best point of the 1e-3 grid inside the unit disc together with
// points spaced 1e-3 apart along the unit circle.
Vec grid_oracle(const Vec& hat, const Mat& sigma) {
  auto obj = [&](double x, double y) {
    const double a = x - hat(0), b = y - hat(1);
    return sigma(0, 0) * a * a + 2.0 * sigma(0, 1) * a * b + sigma(1, 1) * b * b;
  };
  double best = obj(0.0, 0.0);
  Vec arg = Vec::Zero(2);
  const int n = static_cast<int>(std::round(1.0 / kProjGrid));
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j) {
      const double x = i * kProjGrid, y = j * kProjGrid;
      if (x * x + y * y > 1.0) continue;
      const double v = obj(x, y);
      if (v < best) {
        best = v;
        arg << x, y;
      }
    }
  const int arcs = static_cast<int>(std::ceil(2.0 * M_PI / kProjGrid));
  for (int k = 0; k < arcs; ++k) {
    const double th = 2.0 * M_PI * k / arcs;
    const double v = obj(std::cos(th), std::sin(th));
    if (v < best) {
      best = v;
      arg << std::cos(th), std::sin(th);
    }
  }
  return arg;
}

void projection_correctness() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst_grid = 0.0;
  for (int t = 0; t < kProjInstances; ++t) {
    const Mat sigma = random_spd(rng, 2, 0.2 + rng.uniform());
    Vec hat(2);
    hat << 2.0 * rng.normal(), 2.0 * rng.normal();
    const Vec p = linalg::project_ball(hat, sigma);
    worst_grid = std::max(worst_grid, (p - grid_oracle(hat, sigma)).norm());
  }
  double worst_cert = 0.0;
  for (int t = 0; t < kCertInstances; ++t) {
    const int d = 2 + rng.below(15);
    const Mat sigma = random_spd(rng, d, 0.05 + rng.uniform());
    Vec hat(d);
    for (int i = 0; i < d; ++i) hat(i) = 2.0 * rng.normal();
    const Vec p = linalg::project_ball(hat, sigma);
    worst_cert = std::max(worst_cert, p.norm() - 1.0);
    const double obj = (p - hat).dot(sigma * (p - hat));
    for (int k = 0; k < kCertProbes; ++k) {
      // Probes on the sphere near p and uniformly in the ball.
      Vec q = k % 2 ? rng.unit_ball(d) : Vec(p + 0.05 * rng.unit_ball(d));
      if (q.norm() > 1.0) q /= q.norm();
      worst_cert = std::max(worst_cert, obj - (q - hat).dot(sigma * (q - hat)));
    }
  }
  const double secs = seconds_since(t0);
  report(2, worst_grid <= kProjTol && worst_cert <= kCertSlack && secs < kProjSeconds, "projection correctness",
         fmt("grid oracle max dist %.3g (tol %.0e) on %d d=2 instances; certificate worst %.3g (slack %.0e) on %d "
             "instances d<=16; %.2fs",
             worst_grid, kProjTol, kProjInstances, worst_cert, kCertSlack, kCertInstances, secs));
}

void deterministic_inequalities() {
  const auto t0 = Clock::now();
  Rng rng(3);
  double info = 0.0, loss = 0.0, risk = 0.0;
  for (int t = 0; t < kIneqInstances; ++t) {
    const int d = 1 + rng.below(8);
    const Mat sigma = random_spd(rng, d, 0.1 + rng.uniform());
    const int r = 1 + rng.below(3);
    Mat x(d, r);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < r; ++j) x(i, j) = rng.normal() / std::sqrt(static_cast<double>(d * r));
    const double alpha = 3.0 * rng.uniform();
    const double L = (M_E - 1.0) + 10.0 * rng.uniform();
    info = std::max(info, info_gain_check(sigma, x * x.transpose(), alpha, L).worst_violation);
  }
  for (int t = 0; t < kIneqInstances; ++t) {
    const int d = 1 + rng.below(6);
    const int n = d + 1 + rng.below(6);
    Mat X(n, d);
    Vec y(n), w(n);
    for (int i = 0; i < n; ++i) {
      X.row(i) = rng.unit_ball(d).transpose();
      y(i) = rng.uniform(-1.0, 1.0);
      w(i) = 0.05 + rng.uniform();
    }
    w /= w.sum();
    loss = std::max(loss, std::abs(excess_loss_gap(X, y, w, 2.0 * rng.unit_ball(d))));
    risk = std::max(risk, excess_risk_reg_gap(X, y, w, rng.unit_ball(d), 1.0 + 100.0 * rng.uniform(),
                                              2.0 * rng.uniform()));
  }
  const double secs = seconds_since(t0);
  const bool pass = info <= kIneqSlack && loss <= kIneqSlack && risk <= kIneqSlack && secs < kIneqSeconds;
  report(3, pass, "deterministic inequalities",
         fmt("%d instances each; worst violation info-gain %.3g, excess-loss %.3g, excess-risk %.3g (slack %.0e); "
             "%.2fs",
             kIneqInstances, info, loss, risk, kIneqSlack, secs));
}

void concentration() {
  const auto t0 = Clock::now();
  Rng rng(4);
  const auto dist = DiscreteVectors::random(4, 12, rng);
  const TrialReport chern = matrix_chernoff_trial(dist, 200, kConcDelta, kConcTrials, rng);
  const TrialReport prop = proportional_trial([](Rng& g) { return g.uniform() < 0.3 ? 1.0 : 0.0; }, 0.3, kConcDelta,
                                              kConcTrials, 1000000, rng);

  // The constant is calibrated on one batch of trials, then checked on a
  // fresh batch.
  DiscretePairs law;
  for (int i = 0; i < 8; ++i) {
    law.x.push_back(rng.unit_ball(3));
    law.y.push_back(rng.uniform(-1.0, 1.0));
    law.prob.push_back(0.05 + rng.uniform());
  }
  double total = 0.0;
  for (double p : law.prob) total += p;
  for (double& p : law.prob) p /= total;
  const int n = 400;
  const double lambda = 1.0;
  const TrialReport calib = ls_population_convergence_trial(law, n, lambda, kConcDelta, 0.0, kConcTrials, rng);
  const double c = calib.max_ratio;
  const TrialReport ls = ls_population_convergence_trial(law, n, lambda, kConcDelta, c, kConcTrials, rng);

  const double secs = seconds_since(t0);
  const bool pass = chern.upper(kConcConfidence) <= kConcDelta && prop.upper(kConcConfidence) <= kConcDelta &&
                    ls.upper(kConcConfidence) <= kConcDelta && secs < kConcSeconds;
  report(4, pass, "concentration harnesses",
         fmt("delta %.2g, %lld trials each, 95%% upper failure rate: covariance %.4f (%lld fails), proportional %.4f "
             "(%lld), least squares %.4f (%lld) with fitted c = %.4f; %.1fs",
             kConcDelta, static_cast<long long>(kConcTrials), chern.upper(kConcConfidence),
             static_cast<long long>(chern.failures), prop.upper(kConcConfidence),
             static_cast<long long>(prop.failures), ls.upper(kConcConfidence), static_cast<long long>(ls.failures), c,
             secs));
}

void epoch_accounting() {
  int runs = 0, violations = 0;
  const std::vector<LowRankMdp> insts = {gen_tabular(3, 2, 1, 1), gen_tabular(3, 2, 3, 2), gen_lowrank(5, 3, 4, 3, 3),
                                         gen_lowrank(6, 2, 6, 4, 4)};
  const std::int64_t budgets[] = {1, 7, 50, 255, 1000, 4096, 10007};
  for (const auto& m : insts) {
    const auto pi = uniform_policy(m);
    for (std::int64_t K : budgets)
      for (int s = 0; s < kEpochSeedsPerCase; ++s) {
        Rng rng(700 + s);
        S3qConfig cfg;
        cfg.lambda = 1.0;
        cfg.budget = K;
        const auto res = run_s3q(m, *pi, nullptr, cfg, rng);
        ++runs;
        const std::int64_t need = K / (4 * m.H);
        for (std::int64_t n : res.stats.n_level)
          if (n < need) ++violations;
      }
  }
  report(5, violations == 0, "epoch accounting",
         fmt("%d runs over H in {1,3,4,6} and K from 1 to 10007; levels with n < floor(K/4H): %d", runs,
             violations));
}

void error_brackets() {
  const auto t0 = Clock::now();
  const LowRankMdp m = gen_tabular(4, 2, 3, 1);
  const auto pi = uniform_policy(m);
  Bonus b;
  b.alpha.assign(m.H, alpha_param(m.d, 2, kBracketBonusN, kBracketDelta, kBracketLambda, 1.0));
  for (int h = 0; h < m.H; ++h)
    b.inv.push_back(linalg::inverse_spd(kBracketLambda * Mat::Identity(m.d, m.d) +
                                        kBracketBonusN * expected_outer(m, *pi, h)));
  const auto bonus = std::make_shared<const Bonus>(b);

  std::vector<double> plain, with_bonus;
  for (int s = 0; s < kBracketSeeds; ++s)
    for (int wb = 0; wb < 2; ++wb) {
      Rng rng(500 + s);
      S3qConfig cfg;
      cfg.lambda = kBracketLambda;
      cfg.budget = kBracketK;
      const auto res = run_s3q(m, *pi, wb ? bonus : nullptr, cfg, rng);
      const auto u =
          uncertainty_spec(m, *pi, res.stats.trajectories, kBracketDelta, res.stats.e_tot, kBracketLambda, 1.0);
      (wb ? with_bonus : plain).push_back(bracket_c_min(m, *pi, *res.qbest, u).c_min);
    }
  // Smallest c under which the bracket holds in a (1 - delta) fraction of runs.
  const auto need = static_cast<std::size_t>(std::ceil((1.0 - kBracketDelta) * kBracketSeeds));
  std::sort(plain.begin(), plain.end());
  std::sort(with_bonus.begin(), with_bonus.end());
  const double c_plain = plain[need - 1], c_bonus = with_bonus[need - 1];
  const double secs = seconds_since(t0);
  report(6, c_plain <= kBracketC && c_bonus <= kBracketC && secs < kBracketSeconds, "error brackets",
         fmt("S=4 A=2 H=3, K=2^14, %d seeds; smallest passing c: %.4g without bonus, %.4g with bonus (pass if <= "
             "%.1f); %.1fs",
             kBracketSeeds, c_plain, c_bonus, kBracketC, secs));
}

struct RegretRuns {
  LowRankMdp m;
  std::vector<S4qResult> results;
  double secs = 0.0;
};

RegretRuns regret_runs() {
  RegretRuns r{gen_lowrank(6, 3, 4, 4, 1), {}, 0.0};
  const auto t0 = Clock::now();
  S4qConfig cfg;
  cfg.lambda = kRegretLambda;
  cfg.c_bonus = kRegretCBonus;
  cfg.c_trig = kRegretCTrig;
  for (int s = 0; s < kRegretSeeds; ++s) {
    Rng rng(100 + s);
    r.results.push_back(run_s4q(r.m, kRegretK, cfg, rng));
  }
  r.secs = seconds_since(t0);
  return r;
}

void sublinear_regret(const RegretRuns& r) {
  std::vector<std::vector<LedgerRow>> ledgers;
  double ave_k = 0.0, ave_k4 = 0.0;
  for (const auto& res : r.results) {
    ledgers.push_back(res.ledger);
    ave_k += ave_regret_at(res.ledger, kRegretK) / kRegretSeeds;
    ave_k4 += ave_regret_at(res.ledger, kRegretK / 4) / kRegretSeeds;
  }
  const SlopeSummary s = slope_summary(ledgers);
  const bool pass = ave_k < ave_k4 && s.upper95 < kRegretSlopeMax && r.secs < kRegretSeconds;
  report(7, pass, "sublinear regret",
         fmt("S=6 A=3 H=4 d=4, K=%lld, %d seeds; mean AveRegret(K) %.5f vs AveRegret(K/4) %.5f; slope %.3f, 95%% "
             "upper %.3f (< %.1f); %.1fs",
             static_cast<long long>(kRegretK), kRegretSeeds, ave_k, ave_k4, s.mean, s.upper95, kRegretSlopeMax,
             r.secs));
}

void memory_growth(const RegretRuns& r) {
  int bound_violations = 0, growth_violations = 0;
  std::int64_t max_entries = 0;
  double min_bound = INFINITY, max_growth = 0.0;
  for (const auto& res : r.results) {
    double L = INFINITY;
    for (const auto& ph : res.phases)
      if (ph.trigger_value > 0.0) L = std::min(L, ph.trigger_value);
    const double bound = phase_count_bound(r.m.d, r.m.H, static_cast<double>(kRegretK), res.lambda, L);
    const std::int64_t entries = res.ledger.back().mem_entries;
    max_entries = std::max(max_entries, entries);
    min_bound = std::min(min_bound, bound);
    if (static_cast<double>(entries) > bound) ++bound_violations;
    const double growth = static_cast<double>(res.ledger.back().mem_bytes) /
                          static_cast<double>(res.ledger[kRegretK / 10 - 1].mem_bytes);
    max_growth = std::max(max_growth, growth);
    if (growth > kMemoryGrowth) ++growth_violations;
  }
  report(8, bound_violations == 0 && growth_violations == 0, "memory growth",
         fmt("max entries %lld vs smallest phase bound %.1f (%d violations); max bytes(K)/bytes(K/10) %.3f (<= %.1f)",
             static_cast<long long>(max_entries), min_bound, bound_violations, max_growth, kMemoryGrowth));
}

void near_optimism() {
  const std::vector<LowRankMdp> insts = {gen_lowrank(6, 3, 4, 4, 1), gen_tabular(3, 2, 3, 1)};
  S4qConfig cfg;
  cfg.lambda = kOptimismLambda;
  cfg.c_trig = kOptimismCTrig;
  int pairs = 0, ok = 0;
  double worst = 0.0;
  for (const auto& m : insts) {
    const double vstar = value_iteration(m).start_value;
    for (int s = 0; s < kOptimismSeeds; ++s) {
      Rng rng(1000 + s);
      const auto res = run_s4q(m, kOptimismK, cfg, rng);
      for (const auto& ph : res.phases) {
        if (!ph.q) continue;
        double v = 0.0;
        for (int st = 0; st < m.S; ++st) {
          if (m.start(st) == 0.0) continue;
          double best = -INFINITY;
          for (int a = 0; a < m.A; ++a) best = std::max(best, ph.q->value(0, m.feature(0, st, a)));
          v += m.start(st) * best;
        }
        ++pairs;
        if (v >= vstar - kOptimismSlack)
          ++ok;
        else
          worst = std::max(worst, vstar - v);
      }
    }
  }
  const double frac = pairs ? static_cast<double>(ok) / pairs : 0.0;
  const double need = 1.0 - cfg.delta - kOptimismMargin;
  report(9, pairs >= kOptimismMinPairs && frac >= need, "near-optimism",
         fmt("%d (phase, seed) pairs on 2 instances; optimistic in %.4f (need >= %.2f), worst shortfall %.3g", pairs,
             frac, need, worst));
}

void stability_contrast() {
  const auto t0 = Clock::now();
  const LowRankMdp div = gen_divergence_instance();
  const auto constant =
      Policy::tabular(TabularPolicy::deterministic(div.H, div.S, div.A, std::vector<int>(div.H * div.S, 0)));
  Rng rng(6);
  const VanillaReport v = run_vanilla(div, *constant, kVanillaSteps, kVanillaLr, rng);
  const bool diverged = v.first_divergence_step > 0 && v.first_divergence_step <= kVanillaSteps &&
                        (v.nonfinite || v.final_max_norm > kVanillaNorm);

  double max_commit = 0.0;
  std::size_t commits = 0;
  const std::vector<LowRankMdp> insts = {div, gen_lowrank(6, 3, 4, 4, 1), gen_tabular(4, 2, 3, 1)};
  for (const auto& m : insts) {
    for (auto pi : {uniform_policy(m), Policy::tabular(TabularPolicy::deterministic(m.H, m.S, m.A,
                                                                                    std::vector<int>(m.H * m.S, 0)))}) {
      Rng r2(60);
      S3qConfig cfg;
      cfg.lambda = 1.0;
      cfg.budget = 20000;
      const auto res = run_s3q(m, *pi, nullptr, cfg, r2);
      for (double n : res.stats.commit_norms) max_commit = std::max(max_commit, n);
      commits += res.stats.commit_norms.size();
    }
  }
  const double secs = seconds_since(t0);
  report(10, diverged && max_commit <= 1.0 && secs < kStabilitySeconds, "stability contrast",
         fmt("vanilla lr %.2g first exceeds %.0e at step %lld (episode %lld); S3Q max committed norm %.6f over %zu "
             "commits; %.2fs",
             kVanillaLr, kVanillaNorm, static_cast<long long>(v.first_divergence_step),
             static_cast<long long>(v.first_divergence_episode), max_commit, commits, secs));
}

void determinism() {
  const LowRankMdp m = gen_lowrank(6, 3, 4, 4, 1);
  S4qConfig cfg;
  cfg.lambda = 1.0;
  cfg.c_bonus = kRegretCBonus;
  cfg.c_trig = kRegretCTrig;
  int mismatches = 0;
  for (int s = 0; s < kDeterminismSeeds; ++s) {
    std::string first;
    for (int rep = 0; rep < 3; ++rep) {
      Rng rng(900 + s);
      const std::string text = ledger_text(run_s4q(m, kDeterminismK, cfg, rng).ledger);
      if (rep == 0)
        first = text;
      else if (text != first)
        ++mismatches;
    }
  }
  const bool same_instance = instance_text(gen_lowrank(6, 3, 4, 4, 1)) == instance_text(m);
  report(11, mismatches == 0 && same_instance, "determinism",
         fmt("%d seeds x 3 repeats of a %lld-episode run; ledger mismatches %d; instance regeneration %s",
             kDeterminismSeeds, static_cast<long long>(kDeterminismK), mismatches,
             same_instance ? "identical" : "differs"));
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> checks = {
      {1, streaming_batch_equivalence},
      {2, projection_correctness},
      {3, deterministic_inequalities},
      {4, concentration},
      {5, epoch_accounting},
      {6, error_brackets},
      {9, near_optimism},
      {10, stability_contrast},
      {11, determinism},
  };
  for (const auto& [id, check] : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      report(id, false, "exception", e.what());
    }
    if (id == 6) {
      try {
        const RegretRuns r = regret_runs();
        sublinear_regret(r);
        memory_growth(r);
      } catch (const std::exception& e) {
        report(7, false, "exception", e.what());
        report(8, false, "exception", e.what());
      }
    }
  }
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
