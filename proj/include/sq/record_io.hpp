#pragma once

// Run records: per-episode CSV ledger, JSON manifest, experiment config,
// replay-memory serialization and the aggregate report (mean regret curves,
// memory curve, log-log regret slope with confidence interval).

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sq/errors.hpp"
#include "sq/instance_io.hpp"
#include "sq/s4q.hpp"

namespace sq {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

struct ExperimentConfig {
  std::string command;
  std::string instance;
  std::int64_t episodes = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double delta = 0.1;
  double lambda = 0.0;  // <= 0: algorithm default
  double c_bonus = 1.0;
  double c_stop = 1.0;
  double c_trig = 1.0;
  double lr = 0.1;
  std::string out = ".";

  // Fields that determine the run's output; paths are excluded.
  json hashed() const {
    return json{{"command", command}, {"episodes", episodes}, {"seed", seed},     {"delta", delta},
                {"lambda", lambda},   {"c_bonus", c_bonus},   {"c_stop", c_stop}, {"c_trig", c_trig},
                {"lr", lr}};
  }
  std::string hash() const { return hex64(fnv1a(hashed().dump())); }

  S4qConfig s4q() const {
    S4qConfig c;
    c.delta = delta;
    c.lambda = lambda;
    c.c_bonus = c_bonus;
    c.c_stop = c_stop;
    c.c_trig = c_trig;
    return c;
  }
};

// Keys present in the file override the current values.
inline void apply_config_json(ExperimentConfig& c, const json& j) {
  try {
    if (j.contains("instance")) c.instance = j.at("instance").get<std::string>();
    if (j.contains("episodes")) c.episodes = j.at("episodes").get<std::int64_t>();
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.seed_set = true;
    }
    if (j.contains("delta")) c.delta = j.at("delta").get<double>();
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    if (j.contains("c_bonus")) c.c_bonus = j.at("c_bonus").get<double>();
    if (j.contains("c_stop")) c.c_stop = j.at("c_stop").get<double>();
    if (j.contains("c_trig")) c.c_trig = j.at("c_trig").get<double>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

inline void load_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  apply_config_json(c, j);
}

// ---------------------------------------------------------------------------
// CSV ledger

inline constexpr const char* kLedgerHeader = "episode,phase,source,inst_regret,cum_regret,mem_entries,mem_bytes";

inline void write_ledger(std::ostream& os, const std::vector<LedgerRow>& rows) {
  os << kLedgerHeader << '\n';
  for (const auto& r : rows)
    os << r.episode << ',' << r.phase << ',' << source_name(r.source) << ',' << detail::fmt17(r.inst_regret) << ','
       << detail::fmt17(r.cum_regret) << ',' << r.mem_entries << ',' << r.mem_bytes << '\n';
}

inline std::string ledger_text(const std::vector<LedgerRow>& rows) {
  std::ostringstream os;
  write_ledger(os, rows);
  return os.str();
}

inline EpisodeSource parse_source(const std::string& s) {
  if (s == "s3q-subroutine") return EpisodeSource::s3q_subroutine;
  if (s == "s4q-main") return EpisodeSource::s4q_main;
  if (s == "baseline") return EpisodeSource::baseline;
  throw FormatError("ledger: unknown source '" + s + "'");
}

inline std::vector<LedgerRow> read_ledger(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kLedgerHeader) throw FormatError("ledger: missing or wrong header");
  std::vector<LedgerRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError("ledger: expected 7 fields in '" + line + "'");
    try {
      LedgerRow r;
      r.episode = std::stoll(f[0]);
      r.phase = std::stoi(f[1]);
      r.source = parse_source(f[2]);
      r.inst_regret = std::stod(f[3]);
      r.cum_regret = std::stod(f[4]);
      r.mem_entries = std::stoll(f[5]);
      r.mem_bytes = std::stoll(f[6]);
      rows.push_back(r);
    } catch (const std::invalid_argument&) {
      throw FormatError("ledger: bad number in '" + line + "'");
    } catch (const std::out_of_range&) {
      throw FormatError("ledger: number out of range in '" + line + "'");
    }
  }
  return rows;
}

inline std::vector<LedgerRow> load_ledger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open ledger '" + path + "'");
  return read_ledger(in);
}

// ---------------------------------------------------------------------------
// Summary and manifest

// Average regret R(k)/k at episode k (1-based); 0 when k is out of range.
inline double ave_regret_at(const std::vector<LedgerRow>& rows, std::int64_t k) {
  if (k < 1 || k > static_cast<std::int64_t>(rows.size())) return 0.0;
  return rows[static_cast<std::size_t>(k - 1)].cum_regret / static_cast<double>(k);
}

inline json run_summary(const std::vector<LedgerRow>& rows) {
  const auto K = static_cast<std::int64_t>(rows.size());
  json s;
  s["episodes"] = K;
  s["final_cum_regret"] = K ? rows.back().cum_regret : 0.0;
  s["ave_regret_K4"] = ave_regret_at(rows, K / 4);
  s["ave_regret_K2"] = ave_regret_at(rows, K / 2);
  s["ave_regret_K"] = ave_regret_at(rows, K);
  s["phases"] = K ? rows.back().phase : 0;
  json mem = json::array();
  for (std::int64_t i = 1; i <= 10 && K > 0; ++i) {
    const std::int64_t k = std::max<std::int64_t>(1, K * i / 10);
    mem.push_back({{"episode", k}, {"mem_entries", rows[k - 1].mem_entries}, {"mem_bytes", rows[k - 1].mem_bytes}});
  }
  s["memory_curve"] = mem;
  return s;
}

inline json make_manifest(const ExperimentConfig& c, const std::string& inst_id, const json& summary) {
  json m;
  m["config"] = c.hashed();
  m["config"]["instance"] = c.instance;
  m["config_hash"] = c.hash();
  m["instance_id"] = inst_id;
  m["seed"] = c.seed;
  m["summary"] = summary;
  return m;
}

// ---------------------------------------------------------------------------
// Replay memory serialization (greedy policies with their networks)

inline json memory_to_json(const ReplayMemory& mem) {
  json arr = json::array();
  for (const auto& e : mem.entries) {
    json j;
    j["m"] = e.m;
    json levels = json::array();
    for (const auto& l : e.q->levels) {
      json lj;
      lj["theta"] = std::vector<double>(l.theta.data(), l.theta.data() + l.theta.size());
      lj["clipped"] = l.clipped;
      lj["has_bonus"] = static_cast<bool>(l.bonus);
      levels.push_back(lj);
    }
    j["levels"] = levels;
    if (!e.q->levels.empty() && e.q->levels[0].bonus) {
      const Bonus& b = *e.q->levels[0].bonus;
      j["bonus_alpha"] = b.alpha;
      json inv = json::array();
      for (const Mat& m : b.inv) inv.push_back(std::vector<double>(m.data(), m.data() + m.size()));
      j["bonus_inv"] = inv;
    }
    arr.push_back(j);
  }
  return arr;
}

inline ReplayMemory memory_from_json(const json& arr) {
  ReplayMemory mem;
  try {
    for (const auto& j : arr) {
      std::shared_ptr<const Bonus> bonus;
      if (j.contains("bonus_alpha")) {
        auto b = std::make_shared<Bonus>();
        b->alpha = j.at("bonus_alpha").get<std::vector<double>>();
        for (const auto& v : j.at("bonus_inv")) {
          const auto flat = v.get<std::vector<double>>();
          const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(flat.size()))));
          b->inv.push_back(Eigen::Map<const Mat>(flat.data(), d, d));
        }
        bonus = b;
      }
      auto q = std::make_shared<TargetNetworks>();
      for (const auto& lj : j.at("levels")) {
        TargetLevel l;
        const auto th = lj.at("theta").get<std::vector<double>>();
        l.theta = Eigen::Map<const Vec>(th.data(), static_cast<Eigen::Index>(th.size()));
        l.clipped = lj.at("clipped").get<bool>();
        if (lj.at("has_bonus").get<bool>()) l.bonus = bonus;
        q->levels.push_back(std::move(l));
      }
      std::shared_ptr<const TargetNetworks> cq = q;
      mem.entries.push_back({Policy::greedy(cq), cq, j.at("m").get<std::int64_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("replay memory: ") + e.what());
  }
  return mem;
}

// ---------------------------------------------------------------------------
// Report

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double se = 0.0;  // standard error of the slope
  int points = 0;
};

// OLS of log R(k) on log k over log-spaced episodes in [lo, hi].
inline SlopeFit loglog_slope(const std::vector<LedgerRow>& rows, std::int64_t lo, std::int64_t hi, int points = 200) {
  std::vector<double> xs, ys;
  lo = std::max<std::int64_t>(lo, 1);
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(rows.size()));
  if (hi <= lo) throw ContractViolation("loglog_slope: empty episode range");
  std::int64_t last = -1;
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1);
    const auto k = static_cast<std::int64_t>(std::llround(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))));
    if (k == last) continue;
    last = k;
    const double r = rows[static_cast<std::size_t>(k - 1)].cum_regret;
    if (!(r > 0.0)) continue;
    xs.push_back(std::log(static_cast<double>(k)));
    ys.push_back(std::log(r));
  }
  SlopeFit f;
  f.points = static_cast<int>(xs.size());
  if (f.points < 3) throw ContractViolation("loglog_slope: fewer than 3 positive points");
  double mx = 0, my = 0;
  for (int i = 0; i < f.points; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= f.points;
  my /= f.points;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < f.points; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (int i = 0; i < f.points; ++i) {
    const double e = ys[i] - f.intercept - f.slope * xs[i];
    rss += e * e;
  }
  f.se = std::sqrt(rss / (f.points - 2) / sxx);
  return f;
}

struct SlopeSummary {
  double mean = 0.0;
  double ci_lo = 0.0;     // two-sided 95%
  double ci_hi = 0.0;
  double upper95 = 0.0;   // one-sided 95% upper bound
  int runs = 0;
  std::vector<double> per_run;
};

// Across runs: t interval on the per-run slopes. A single run falls back
// to the OLS standard error of its own fit.
inline SlopeSummary slope_summary(const std::vector<std::vector<LedgerRow>>& runs) {
  SlopeSummary s;
  s.runs = static_cast<int>(runs.size());
  if (runs.empty()) throw ContractViolation("slope_summary: no runs");
  std::vector<SlopeFit> fits;
  for (const auto& r : runs) {
    const auto K = static_cast<std::int64_t>(r.size());
    fits.push_back(loglog_slope(r, K / 10, K));
    s.per_run.push_back(fits.back().slope);
  }
  double mean = 0;
  for (double x : s.per_run) mean += x;
  mean /= s.runs;
  s.mean = mean;
  double se = 0;
  double dof = 0;
  if (s.runs == 1) {
    se = fits[0].se;
    dof = fits[0].points - 2;
  } else {
    double var = 0;
    for (double x : s.per_run) var += (x - mean) * (x - mean);
    var /= (s.runs - 1);
    se = std::sqrt(var / s.runs);
    dof = s.runs - 1;
  }
  if (se == 0.0) {
    s.ci_lo = s.ci_hi = s.upper95 = mean;
    return s;
  }
  boost::math::students_t t(dof);
  const double t2 = boost::math::quantile(boost::math::complement(t, 0.025));
  const double t1 = boost::math::quantile(boost::math::complement(t, 0.05));
  s.ci_lo = mean - t2 * se;
  s.ci_hi = mean + t2 * se;
  s.upper95 = mean + t1 * se;
  return s;
}

struct CurvePoint {
  std::int64_t episode = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Mean and standard error of a per-episode column across runs, truncated to
// the shortest run.
template <class Get>
std::vector<CurvePoint> mean_curve(const std::vector<std::vector<LedgerRow>>& runs, Get&& get) {
  if (runs.empty()) throw ContractViolation("mean_curve: no runs");
  std::size_t K = runs[0].size();
  for (const auto& r : runs) K = std::min(K, r.size());
  std::vector<CurvePoint> out(K);
  const double n = static_cast<double>(runs.size());
  for (std::size_t k = 0; k < K; ++k) {
    // Shifted by the first run's value.
    const double shift = get(runs[0][k]);
    double m = 0;
    for (const auto& r : runs) m += get(r[k]) - shift;
    m /= n;
    double v = 0;
    for (const auto& r : runs) v += (get(r[k]) - shift - m) * (get(r[k]) - shift - m);
    out[k].episode = static_cast<std::int64_t>(k) + 1;
    out[k].mean = shift + m;
    out[k].stderr_ = runs.size() > 1 ? std::sqrt(v / (n - 1) / n) : 0.0;
  }
  return out;
}

}  // namespace sq
