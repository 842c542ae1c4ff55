// sqrl: generate instances, run the learners, verify structure, aggregate runs.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 unreadable input,
// 3 invariant violation (details written to <out>/violation.json).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sq/sq.hpp"

namespace fs = std::filesystem;
using namespace sq;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInput = 2;
constexpr int kExitInvariant = 3;

struct InvariantFailure : std::runtime_error {
  json detail;
  InvariantFailure(const std::string& what, json d) : std::runtime_error(what), detail(std::move(d)) {}
};

struct InputFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags that were given on the command line; unset ones fall back to the
// config file, then to the defaults.
struct Overrides {
  std::optional<std::string> instance, out, config;
  std::optional<std::int64_t> episodes;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta, lambda, c_bonus, c_stop, c_trig, lr;

  void add_to(CLI::App* app, bool algo, bool lr_flag) {
    app->add_option("--instance", instance, "instance file")->required();
    app->add_option("--episodes", episodes, "episode budget K");
    app->add_option("--seed", seed, "RNG seed (required)");
    app->add_option("--out", out, "output directory");
    app->add_option("--config", config, "JSON config; flags override its keys");
    if (algo) {
      app->add_option("--delta", delta, "failure probability");
      app->add_option("--lambda", lambda, "ridge parameter; <= 0 selects the default");
      app->add_option("--c-bonus", c_bonus, "bonus constant");
      app->add_option("--c-stop", c_stop, "S3Q budget constant");
      app->add_option("--c-trig", c_trig, "trigger-value multiplier");
    }
    if (lr_flag) app->add_option("--lr", lr, "learning rate");
  }

  ExperimentConfig resolve(const std::string& command) const {
    ExperimentConfig c;
    c.command = command;
    if (config) load_config_file(c, *config);
    if (instance) c.instance = *instance;
    if (out) c.out = *out;
    if (episodes) c.episodes = *episodes;
    if (seed) {
      c.seed = *seed;
      c.seed_set = true;
    }
    if (delta) c.delta = *delta;
    if (lambda) c.lambda = *lambda;
    if (c_bonus) c.c_bonus = *c_bonus;
    if (c_stop) c.c_stop = *c_stop;
    if (c_trig) c.c_trig = *c_trig;
    if (lr) c.lr = *lr;
    if (!c.seed_set) throw ConfigError(command + ": --seed is required");
    if (c.episodes < 1) throw ConfigError(command + ": --episodes must be >= 1");
    return c;
  }
};

LowRankMdp read_instance_or_fail(const std::string& path) {
  try {
    return load_instance(path);
  } catch (const FormatError& e) {
    throw InputFailure(e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
}

std::string summary_table(const json& s) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %lld\n", "episodes", s["episodes"].get<long long>());
  os << buf;
  for (const char* k : {"final_cum_regret", "ave_regret_K4", "ave_regret_K2", "ave_regret_K"}) {
    std::snprintf(buf, sizeof buf, "%-22s %.6g\n", k, s[k].get<double>());
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-22s %lld\n", "phases", s["phases"].get<long long>());
  os << buf;
  for (const auto& [k, v] : s.items()) {
    if (k == "memory_curve" || k == "episodes" || k == "phases" || k.rfind("ave_regret", 0) == 0 ||
        k == "final_cum_regret")
      continue;
    os << std::left << std::setw(22) << k << ' ' << v.dump() << '\n';
  }
  os << "memory curve (episode, entries, bytes)\n";
  for (const auto& p : s["memory_curve"])
    os << "  " << p["episode"].get<long long>() << ' ' << p["mem_entries"].get<long long>() << ' '
       << p["mem_bytes"].get<long long>() << '\n';
  return os.str();
}

void emit_run(const ExperimentConfig& c, const LowRankMdp& m, const std::vector<LedgerRow>& rows, json summary) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  json base = run_summary(rows);
  for (auto& [k, v] : summary.items()) base[k] = v;
  write_text(dir / "ledger.csv", ledger_text(rows));
  write_text(dir / "manifest.json", make_manifest(c, instance_id(m), base).dump(2) + "\n");
  write_text(dir / "summary.txt", summary_table(base));
  std::cout << summary_table(base);
}

void check_ledger(const std::vector<LedgerRow>& rows, std::int64_t K) {
  if (static_cast<std::int64_t>(rows.size()) != K)
    throw InvariantFailure("ledger length differs from the episode budget", {{"rows", rows.size()}, {"K", K}});
  double prev = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.episode != static_cast<std::int64_t>(i) + 1)
      throw InvariantFailure("episode indices are not contiguous", {{"row", i}, {"episode", r.episode}});
    if (!std::isfinite(r.cum_regret) || r.inst_regret < -1e-12 || r.cum_regret < prev - 1e-12)
      throw InvariantFailure("cumulative regret decreased or is not finite",
                             {{"episode", r.episode}, {"inst_regret", r.inst_regret}, {"cum_regret", r.cum_regret}});
    prev = r.cum_regret;
  }
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::string& kind, int S, int A, int H, int d, std::uint64_t seed, double noise,
            const std::string& out) {
  LowRankMdp m;
  if (kind == "tabular")
    m = gen_tabular(S, A, H, seed);
  else if (kind == "lowrank")
    m = gen_lowrank(S, A, H, d, seed);
  else if (kind == "divergence")
    m = gen_divergence_instance();
  else
    throw ConfigError("gen: unknown kind '" + kind + "'");
  if (noise > 0.0) {
    m.noise.kind = RewardNoise::Kind::bounded;
    m.noise.half_width = noise;
  }
  save_instance(out, m);
  std::cout << "wrote " << out << " id " << instance_id(m) << "\n" << m.meta.verification << "\n";
  return 0;
}

int cmd_verify(const std::string& path, std::optional<std::uint64_t> seed) {
  if (!seed) throw ConfigError("verify: --seed is required");
  const LowRankMdp m = read_instance_or_fail(path);
  const StructureReport r = verify_structure(m, *seed);
  std::cout << "instance " << instance_id(m) << "\n" << r.summary() << "\n";
  if (!r.ok) throw InvariantFailure("instance failed structure verification", {{"report", r.summary()}});
  return 0;
}

int cmd_run_s4q(const ExperimentConfig& c) {
  const LowRankMdp m = read_instance_or_fail(c.instance);
  Rng rng(c.seed);
  const S4qResult res = run_s4q(m, c.episodes, c.s4q(), rng);
  check_ledger(res.ledger, c.episodes);
  if (res.ledger.back().mem_entries != res.completed_phases)
    throw InvariantFailure("replay memory size differs from completed phases",
                           {{"entries", res.ledger.back().mem_entries}, {"phases", res.completed_phases}});

  std::ostringstream ph;
  ph << "phase,first_episode,s3q_episodes,m,completed,trigger_value,max_T,alpha,policy_value\n";
  for (const auto& p : res.phases)
    ph << p.p << ',' << p.first_episode << ',' << p.s3q_episodes << ',' << p.m << ',' << (p.completed ? 1 : 0) << ','
       << detail::fmt17(p.trigger_value) << ',' << detail::fmt17(p.max_T) << ',' << detail::fmt17(p.alpha) << ','
       << detail::fmt17(p.policy_value) << '\n';
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "phases.csv", ph.str());

  json extra;
  extra["algorithm"] = "s4q";
  extra["completed_phases"] = res.completed_phases;
  extra["lambda"] = res.lambda;
  extra["optimal_value"] = res.optimal_value;
  emit_run(c, m, res.ledger, extra);
  return 0;
}

// S3Q under the uniform controller; every episode is charged the
// controller's exact regret.
int cmd_run_s3q(const ExperimentConfig& c) {
  const LowRankMdp m = read_instance_or_fail(c.instance);
  Rng rng(c.seed);
  auto controller = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  const double vstar = value_iteration(m).start_value;
  const double regret = vstar - policy_value(m, *controller);
  S3qConfig sc;
  sc.lambda = c.lambda > 0.0 ? c.lambda : c.s4q().resolved_lambda(m.d, c.episodes);
  sc.budget = c.episodes;
  std::vector<LedgerRow> rows;
  double cum = 0.0;
  const S3qResult res = run_s3q(m, *controller, nullptr, sc, rng, [&](const Trajectory&) {
    LedgerRow r;
    r.episode = static_cast<std::int64_t>(rows.size()) + 1;
    r.source = EpisodeSource::s3q_subroutine;
    r.inst_regret = regret;
    cum += regret;
    r.cum_regret = cum;
    r.mem_bytes = memory_bytes(0, m.d, m.H);
    rows.push_back(r);
  });
  check_ledger(rows, c.episodes);
  double max_norm = 0.0;
  for (double n : res.stats.commit_norms) max_norm = std::max(max_norm, n);
  if (max_norm > 1.0) throw InvariantFailure("committed target outside the unit ball", {{"norm", max_norm}});

  json extra;
  extra["algorithm"] = "s3q";
  extra["lambda"] = sc.lambda;
  extra["completed_epochs"] = res.stats.e_tot;
  extra["zero_epoch"] = res.stats.zero_epoch;
  extra["n_level"] = res.stats.n_level;
  extra["max_commit_norm"] = max_norm;
  json levels = json::array();
  for (const auto& l : res.qbest->levels) levels.push_back(std::vector<double>(l.theta.data(), l.theta.data() + l.theta.size()));
  extra["qbest_theta"] = levels;
  extra["qbest_value"] = policy_value(m, *Policy::greedy(res.qbest));
  emit_run(c, m, rows, extra);
  return 0;
}

// Vanilla Q-learning. Episodes are charged the exact regret of the behavior
// policy that generated them.
int cmd_run_baseline(const ExperimentConfig& c, const std::string& behavior) {
  const LowRankMdp m = read_instance_or_fail(c.instance);
  std::shared_ptr<const Policy> pi;
  std::string resolved = behavior;
  if (resolved == "auto") resolved = m.meta.generator == "divergence" ? "0" : "uniform";
  if (resolved == "uniform") {
    pi = Policy::tabular(TabularPolicy::uniform(m.H, m.S, m.A));
  } else {
    int a = -1;
    try {
      a = std::stoi(resolved);
    } catch (const std::exception&) {
    }
    if (a < 0 || a >= m.A) throw ConfigError("run-baseline: --behavior must be auto, uniform or an action index");
    pi = Policy::tabular(TabularPolicy::deterministic(m.H, m.S, m.A, std::vector<int>(m.H * m.S, a)));
  }
  const double regret = value_iteration(m).start_value - policy_value(m, *pi);

  Rng rng(c.seed);
  VanillaState st = VanillaState::zeros(m.H, m.d, c.lr);
  std::vector<LedgerRow> rows;
  std::vector<double> norms;
  double cum = 0.0;
  const std::int64_t steps = c.episodes * m.H;
  const VanillaReport rep = run_vanilla(m, *pi, steps, st, rng, [&](const Trajectory&) {
    LedgerRow r;
    r.episode = static_cast<std::int64_t>(rows.size()) + 1;
    r.source = EpisodeSource::baseline;
    r.inst_regret = regret;
    cum += regret;
    r.cum_regret = cum;
    r.mem_bytes = 8 * static_cast<std::int64_t>(m.H) * m.d;
    rows.push_back(r);
    norms.push_back(st.max_norm());
  });

  fs::create_directories(c.out);
  std::ostringstream nc;
  nc << "episode,max_norm\n";
  for (std::size_t i = 0; i < norms.size(); ++i) nc << i + 1 << ',' << detail::fmt17(norms[i]) << '\n';
  write_text(fs::path(c.out) / "norms.csv", nc.str());

  json extra;
  extra["algorithm"] = "vanilla";
  extra["behavior"] = resolved;
  extra["lr"] = c.lr;
  extra["steps"] = rep.steps;
  extra["diverged"] = rep.first_divergence_step >= 0;
  extra["first_divergence_step"] = rep.first_divergence_step;
  extra["first_divergence_episode"] = rep.first_divergence_episode;
  extra["nonfinite"] = rep.nonfinite;
  extra["final_max_norm"] = std::isfinite(rep.final_max_norm) ? json(rep.final_max_norm) : json("inf");
  emit_run(c, m, rows, extra);
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  if (dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<std::vector<LedgerRow>> runs;
  std::string inst;
  json seeds = json::array();
  for (const auto& d : dirs) {
    std::ifstream mf(fs::path(d) / "manifest.json");
    if (!mf) throw InputFailure("report: cannot open manifest in '" + d + "'");
    json man;
    try {
      mf >> man;
    } catch (const json::exception& e) {
      throw InputFailure("report: bad manifest in '" + d + "': " + e.what());
    }
    const std::string id = man.value("instance_id", "");
    if (inst.empty()) inst = id;
    if (id != inst) throw ConfigError("report: runs use different instances (" + inst + " vs " + id + ")");
    try {
      runs.push_back(load_ledger((fs::path(d) / "ledger.csv").string()));
    } catch (const FormatError& e) {
      throw InputFailure(e.what());
    }
    if (runs.back().empty()) throw InputFailure("report: empty ledger in '" + d + "'");
    seeds.push_back(man.value("seed", 0));
  }

  fs::create_directories(out);
  const auto cum = mean_curve(runs, [](const LedgerRow& r) { return r.cum_regret; });
  const auto ave = mean_curve(runs, [](const LedgerRow& r) { return r.cum_regret / static_cast<double>(r.episode); });
  const auto ent = mean_curve(runs, [](const LedgerRow& r) { return static_cast<double>(r.mem_entries); });
  const auto byt = mean_curve(runs, [](const LedgerRow& r) { return static_cast<double>(r.mem_bytes); });

  std::ostringstream rc;
  rc << "episode,mean_cum_regret,stderr_cum_regret,mean_ave_regret,stderr_ave_regret\n";
  for (std::size_t k = 0; k < cum.size(); ++k)
    rc << cum[k].episode << ',' << detail::fmt17(cum[k].mean) << ',' << detail::fmt17(cum[k].stderr_) << ','
       << detail::fmt17(ave[k].mean) << ',' << detail::fmt17(ave[k].stderr_) << '\n';
  write_text(fs::path(out) / "regret_curve.csv", rc.str());

  std::ostringstream ps;
  ps << "episode";
  for (std::size_t i = 0; i < runs.size(); ++i) ps << ",run" << i;
  ps << '\n';
  for (std::size_t k = 0; k < cum.size(); ++k) {
    ps << k + 1;
    for (const auto& r : runs) ps << ',' << detail::fmt17(r[k].cum_regret);
    ps << '\n';
  }
  write_text(fs::path(out) / "per_run_regret.csv", ps.str());

  std::ostringstream mc;
  mc << "episode,mean_mem_entries,mean_mem_bytes\n";
  for (std::size_t k = 0; k < ent.size(); ++k)
    mc << ent[k].episode << ',' << detail::fmt17(ent[k].mean) << ',' << detail::fmt17(byt[k].mean) << '\n';
  write_text(fs::path(out) / "memory_curve.csv", mc.str());

  json rep;
  rep["instance_id"] = inst;
  rep["runs"] = dirs;
  rep["seeds"] = seeds;
  rep["episodes"] = cum.size();
  rep["ave_regret_K4"] = ave[cum.size() / 4 ? cum.size() / 4 - 1 : 0].mean;
  rep["ave_regret_K"] = ave.back().mean;
  try {
    const SlopeSummary s = slope_summary(runs);
    rep["slope"] = {{"mean", s.mean}, {"ci95", {s.ci_lo, s.ci_hi}}, {"upper95", s.upper95}, {"per_run", s.per_run}};
  } catch (const ContractViolation& e) {
    rep["slope"] = nullptr;
    rep["slope_note"] = e.what();
  }
  write_text(fs::path(out) / "report.json", rep.dump(2) + "\n");
  std::cout << rep.dump(2) << "\n";
  return 0;
}

void dump_violation(const std::string& out, const InvariantFailure& e) {
  json j = {{"error", e.what()}, {"detail", e.detail}};
  std::cerr << "invariant violation: " << e.what() << "\n" << e.detail.dump(2) << "\n";
  if (out.empty()) return;
  std::error_code ec;
  fs::create_directories(out, ec);
  std::ofstream f(fs::path(out) / "violation.json");
  if (f) f << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stabilized streaming Q-learning experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate an instance file");
  std::string kind = "lowrank", gen_out;
  int S = 6, A = 3, H = 4, d = 4;
  std::uint64_t gen_seed = 1;
  double noise = 0.0;
  gen->add_option("--kind", kind, "tabular, lowrank or divergence");
  gen->add_option("--states", S, "real states");
  gen->add_option("--actions", A, "actions");
  gen->add_option("--horizon", H, "horizon");
  gen->add_option("--dim", d, "feature dimension (lowrank)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--noise", noise, "half width of bounded reward noise");
  gen->add_option("--out", gen_out, "instance file")->required();

  auto* verify = app.add_subcommand("verify", "check the structure of an instance");
  std::string verify_path;
  std::optional<std::uint64_t> verify_seed;
  verify->add_option("--instance", verify_path, "instance file")->required();
  verify->add_option("--seed", verify_seed, "seed of the closure check");

  Overrides o4, o3, ob;
  auto* s4 = app.add_subcommand("run-s4q", "run S4Q and write ledger.csv, phases.csv, manifest.json");
  o4.add_to(s4, true, false);
  auto* s3 = app.add_subcommand("run-s3q", "run S3Q under the uniform controller");
  o3.add_to(s3, false, false);
  s3->add_option("--lambda", o3.lambda, "ridge parameter; <= 0 selects the default");
  auto* bl = app.add_subcommand("run-baseline", "run vanilla Q-learning");
  ob.add_to(bl, false, true);
  std::string behavior = "auto";
  bl->add_option("--behavior", behavior, "auto, uniform or an action index");

  auto* report = app.add_subcommand("report", "aggregate run directories");
  std::vector<std::string> dirs;
  std::string report_out = "report";
  report->add_option("runs", dirs, "run directories");
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::string out_dir;
  try {
    if (*gen) return cmd_gen(kind, S, A, H, d, gen_seed, noise, gen_out);
    if (*verify) return cmd_verify(verify_path, verify_seed);
    if (*s4) {
      const auto c = o4.resolve("run-s4q");
      out_dir = c.out;
      return cmd_run_s4q(c);
    }
    if (*s3) {
      const auto c = o3.resolve("run-s3q");
      out_dir = c.out;
      return cmd_run_s3q(c);
    }
    if (*bl) {
      const auto c = ob.resolve("run-baseline");
      out_dir = c.out;
      return cmd_run_baseline(c, behavior);
    }
    if (*report) {
      out_dir = report_out;
      return cmd_report(dirs, report_out);
    }
  } catch (const InputFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const InvariantFailure& e) {
    dump_violation(out_dir, e);
    return kExitInvariant;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    // Contract and numerical failures raised inside a run.
    dump_violation(out_dir, InvariantFailure(e.what(), json::object()));
    return kExitInvariant;
  }
  return kExitUsage;
}
