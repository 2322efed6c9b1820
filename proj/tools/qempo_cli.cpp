// qempo: command-line driver for the solvers, trainers and checks.
//
//   qempo solve SCENARIO --method qempo --inv-lambda 4e-3
//   qempo verify SCENARIO
//   qempo train-offline SCENARIO CONFIG
//   qempo train-online SCENARIO CONFIG
//   qempo frontier SCENARIO --method qempo --values 0.5,1,2
//   qempo pass-at-k --n 100 --c 10 --k 1,8
//
// Exit codes: 0 success, 1 error or failed check, 2 infeasible instance.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "qempo/closed_form.hpp"
#include "qempo/errors.hpp"
#include "qempo/format.hpp"
#include "qempo/io.hpp"
#include "qempo/metrics.hpp"
#include "qempo/offline.hpp"
#include "qempo/online.hpp"
#include "qempo/oracle.hpp"
#include "qempo/rng.hpp"
#include "qempo/solver.hpp"

namespace fs = std::filesystem;
using namespace qempo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  double tol = kDefaultSolverTolerance;
  std::string out_dir;
  unsigned threads = 1;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results land in
// their own slots, so the output order never depends on scheduling.
template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t n, unsigned threads, Fn fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned count = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

class Run {
 public:
  Run(std::string command, const Globals& globals, const std::string& default_dir)
      : start_(std::chrono::steady_clock::now()),
        dir_(globals.out_dir.empty() ? fs::path("qempo-out") / default_dir
                                     : fs::path(globals.out_dir)) {
    manifest_.command = std::move(command);
  }

  Json& config() { return manifest_.config; }
  void set_seed(std::uint64_t seed) { manifest_.seed = seed; }

  void write(const std::string& name, const std::string& text) {
    write_text_file(dir_ / name, text);
    manifest_.outputs.push_back(name);
  }

  void finish() {
    manifest_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_file(dir_ / "manifest.json", dump_json(manifest_to_json(manifest_)));
    std::printf("wrote %s\n", dir_.string().c_str());
  }

 private:
  std::chrono::steady_clock::time_point start_;
  fs::path dir_;
  RunManifest manifest_;
};

// ---------------------------------------------------------------- solve

struct SolveArgs {
  std::string scenario;
  std::string method = "qempo";
  std::optional<double> beta, lambda, inv_lambda, lambda1, lambda2, inv_lambda1, ratio21;
  std::optional<double> levels_from_beta, reward_floor, kl_budget;
  std::size_t max_iters = kDefaultDualIterations;
};

MethodParams params_from(const SolveArgs& a) {
  switch (method_from_string(a.method)) {
    case Method::rlhf:
      if (!a.beta) throw InvalidArgument("--method rlhf needs --beta");
      return MethodParams::rlhf(*a.beta);
    case Method::qempo:
      if (a.lambda) return MethodParams::qempo(*a.lambda);
      if (a.inv_lambda) return MethodParams::qempo(1.0 / *a.inv_lambda);
      throw InvalidArgument("--method qempo needs --lambda or --inv-lambda");
    case Method::qempo_kl:
      if (a.lambda1 && a.lambda2) return MethodParams::qempo_kl(*a.lambda1, *a.lambda2);
      if (a.inv_lambda1 && a.ratio21) return MethodParams::qempo_kl_inverse(*a.inv_lambda1, *a.ratio21);
      throw InvalidArgument(
          "--method qempo-kl needs --lambda1/--lambda2 or --inv-lambda1/--ratio21");
  }
  throw InvalidArgument("unknown method");
}

int cmd_solve(const SolveArgs& a, const Globals& g) {
  const ScenarioSuite suite = load_scenario(a.scenario);
  const Method method = method_from_string(a.method);
  const bool by_levels = a.levels_from_beta || a.reward_floor;
  std::optional<MethodParams> params;
  if (!by_levels) params = params_from(a);
  if (by_levels && method == Method::qempo_kl && !a.levels_from_beta && !a.kl_budget) {
    throw InvalidArgument("qempo-kl with --reward-floor also needs --kl-budget");
  }

  Run run("solve", g, "solve");
  run.config()["scenario"] = a.scenario;
  run.config()["method"] = a.method;
  run.config()["tol"] = g.tol;
  run.config()["max_iters"] = a.max_iters;
  if (params) run.config()["params"] = method_params_to_json(*params);
  if (a.levels_from_beta) run.config()["levels_from_beta"] = *a.levels_from_beta;
  if (a.reward_floor) run.config()["reward_floor"] = *a.reward_floor;
  if (a.kl_budget) run.config()["kl_budget"] = *a.kl_budget;
  run.set_seed(suite.seed());

  struct Entry {
    Json json;
    bool infeasible = false;
    bool failed = false;
    std::string line;
  };
  auto solve_one = [&](std::size_t i) {
    const AlignmentInstance& inst = suite[i];
    Entry e;
    e.json["id"] = inst.id();
    if (params) {
      const ClosedFormResult res = closed_form_policy(inst, *params);
      e.json["result"] = closed_form_to_json(res);
      e.line = inst.id() + ": entropy " + format_double(res.entropy) + ", E[r] " +
               format_double(res.expected_reward);
      return e;
    }
    ConstraintSpec spec;
    if (a.levels_from_beta) {
      spec = constraint_levels(inst, *a.levels_from_beta);
    } else {
      spec.reward_floor = *a.reward_floor;
      spec.kl_budget = a.kl_budget;
    }
    e.json["levels"] = {{"reward_floor", spec.reward_floor},
                        {"kl_budget", spec.kl_budget ? Json(*spec.kl_budget) : Json(nullptr)}};
    try {
      MultiplierSolution sol;
      switch (method) {
        case Method::rlhf: sol = solve_min_kl_multiplier(inst, spec.reward_floor, g.tol); break;
        case Method::qempo: sol = solve_qempo_multiplier(inst, spec.reward_floor, g.tol); break;
        case Method::qempo_kl: {
          DualAscentOptions options;
          options.tol = g.tol;
          options.max_iters = a.max_iters;
          sol = solve_qempo_kl_multipliers(inst, spec, options);
          break;
        }
      }
      e.json["report"] = solve_report_to_json(sol.report);
      if (sol.policy) e.json["result"] = closed_form_to_json(*sol.policy);
      e.infeasible = sol.report.status == SolveStatus::infeasible;
      e.line = inst.id() + ": " + to_string(sol.report.status);
      if (sol.policy) e.line += ", entropy " + format_double(sol.policy->entropy);
    } catch (const ConvergenceFailure& err) {
      e.json["report"] = solve_report_to_json(err.report());
      e.json["error"] = err.what();
      e.failed = true;
      e.line = inst.id() + ": " + err.what();
    }
    return e;
  };
  const auto entries = parallel_map<Entry>(suite.size(), g.threads, solve_one);

  Json out = Json::object();
  out["method"] = a.method;
  out["instances"] = Json::array();
  std::vector<std::string> infeasible;
  bool failed = false;
  for (const auto& e : entries) {
    out["instances"].push_back(e.json);
    std::printf("%s\n", e.line.c_str());
    if (e.infeasible) infeasible.push_back(e.json["id"].get<std::string>());
    failed = failed || e.failed;
  }
  run.write("solve.json", dump_json(out));
  run.finish();
  if (failed) return kExitError;
  if (!infeasible.empty()) {
    std::fprintf(stderr, "infeasible:");
    for (const auto& id : infeasible) std::fprintf(stderr, " %s", id.c_str());
    std::fprintf(stderr, "\n");
    return kExitInfeasible;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::string scenario;
  double beta = 1.0;
  double lambda2 = 1.0;
  double epsilon = kDefaultIdealEpsilon;
  double grid_step = 0.01;
  bool perturb = false;
};

struct Check {
  std::string instance;
  std::string name;
  std::string status;  // pass, fail, skipped
  std::string detail;
};

std::vector<Check> verify_instance(const AlignmentInstance& inst, const VerifyArgs& a, double tol) {
  std::vector<Check> out;
  auto add = [&](const std::string& name, bool ok, const std::string& detail) {
    out.push_back({inst.id(), name, ok ? "pass" : "fail", detail});
  };
  auto skip = [&](const std::string& name, const std::string& reason) {
    out.push_back({inst.id(), name, "skipped", reason});
  };
  const bool both_classes = inst.positive_count() > 0 && inst.negative_count() > 0;
  const bool full_ref = std::all_of(inst.ref_probs().begin(), inst.ref_probs().end(),
                                    [](double q) { return q > 0.0; });
  const bool gridable = inst.size() <= kMaxGridDimension;
  const ClosedFormResult rlhf = rlhf_optimal(inst, a.beta);
  const ConstraintSpec levels = constraint_levels(inst, a.beta);

  // decomposition identity
  if (!both_classes) {
    skip("kl-decomposition", "needs positive and negative candidates");
  } else {
    try {
      const auto d = alignment_kl_decomposition(rlhf.dist.probs(), inst, a.epsilon);
      const double err = std::abs(d.kl + d.entropy + d.quality_term);
      add("kl-decomposition", err <= 1e-9, "|kl + H + Q| = " + format_double(err));
    } catch (const InvalidArgument& e) {
      skip("kl-decomposition", e.what());
    }
  }

  // quality-only policy gradient
  if (!inst.has_binary_quality_rewards()) {
    skip("quality-only-gradient", "rewards are not 0/1 quality indicators");
  } else {
    const double pg = policy_gradient_objective(rlhf.dist.probs(), inst);
    const double qm = quality_mass(rlhf.dist.probs(), inst);
    add("quality-only-gradient", pg == qm, "E[r] = " + format_double(pg));
  }

  // rlhf solves the quality-constrained KL program
  {
    std::vector<double> probs = rlhf.dist.probs();
    if (a.perturb) {
      const auto hi = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      const std::size_t lo = hi == 0 ? 1 : 0;
      const double shift = 1e-3 * probs[hi];
      probs[hi] -= shift;
      probs[lo] += shift;
    }
    const std::vector<double> mult = {1.0 / a.beta};
    const KktReport kkt = verify_kkt(inst, probs, Program::min_kl, {levels.reward_floor, {}}, mult,
                                     std::max(tol, 1e-8));
    std::string detail = "stationarity residual " + format_double(kkt.stationarity_residual);
    if (!kkt.detail.empty()) detail += "; " + kkt.detail;
    bool ok = kkt.passed();
    if (gridable) {
      const SimplexGrid grid(inst.size(), a.grid_step);
      const auto brute = brute_force_min_kl(inst, levels.reward_floor, grid);
      if (brute.best && full_ref) {
        const double analytic = kl_divergence(probs, inst.ref_probs());
        const double gap = kl_grid_gap(probs, inst.ref_probs(), a.grid_step);
        ok = ok && analytic <= brute.value + gap;
        detail += "; grid KL " + format_double(brute.value) + " vs " + format_double(analytic);
      }
    }
    add("rlhf-min-kl", ok, detail);
  }

  // qempo solves the quality-constrained entropy program
  {
    const auto sol = solve_qempo_multiplier(inst, levels.reward_floor, std::min(tol, 1e-10));
    if (!sol.policy || std::isinf(sol.report.multipliers[0])) {
      skip("qempo-max-entropy", std::string("solver status ") + to_string(sol.report.status));
    } else {
      const std::vector<double> mult = sol.report.multipliers;
      const KktReport kkt = verify_kkt(inst, sol.policy->dist.probs(), Program::max_entropy,
                                       {levels.reward_floor, {}}, mult, std::max(tol, 1e-8));
      bool ok = kkt.passed();
      std::string detail = "lambda " + format_double(mult[0]) + ", stationarity residual " +
                           format_double(kkt.stationarity_residual);
      if (gridable) {
        const auto brute = brute_force_max_entropy(inst, levels.reward_floor, std::nullopt,
                                                   SimplexGrid(inst.size(), a.grid_step));
        if (brute.best) {
          ok = ok && brute.value <= sol.policy->entropy + entropy_grid_gap(inst.size(), a.grid_step);
          detail += "; grid H " + format_double(brute.value);
        }
      }
      add("qempo-max-entropy", ok, detail);
    }
  }

  // qempo-kl closed form satisfies its KKT system at its own levels
  const double lambda1 = a.lambda2 / a.beta;
  if (!full_ref) {
    skip("qempo-kl-max-entropy", "reference has zero entries");
  } else {
    const ClosedFormResult k = qempo_kl_optimal(inst, lambda1, a.lambda2);
    const std::vector<double> mult = {lambda1, a.lambda2};
    const KktReport kkt = verify_kkt(inst, k.dist.probs(), Program::max_entropy_kl,
                                     {k.expected_reward, k.kl_to_ref}, mult, std::max(tol, 1e-8));
    add("qempo-kl-max-entropy", kkt.passed(),
        "stationarity residual " + format_double(kkt.stationarity_residual));

    // entropy ordering against rlhf at lambda1 = lambda2 / beta
    const double diff = k.entropy - rlhf.entropy;
    add("qempo-kl-above-rlhf", diff >= -1e-9, "H(qempo-kl) - H(rlhf) = " + format_double(diff));
  }

  // entropy ordering qempo vs qempo-kl, only inside its stated regime
  {
    const double min_ref = *std::min_element(inst.ref_probs().begin(), inst.ref_probs().end());
    const double lambda = std::min(lambda1 / (a.lambda2 + 1.0), 0.01 * lambda1 / a.lambda2);
    if (min_ref < 0.05) {
      skip("qempo-above-qempo-kl", "reference entry " + format_double(min_ref) + " < 0.05");
    } else {
      const double diff = qempo_optimal(inst, lambda).entropy -
                          qempo_kl_optimal(inst, lambda1, a.lambda2).entropy;
      add("qempo-above-qempo-kl", diff >= -1e-6,
          "lambda " + format_double(lambda) + ", H(qempo) - H(qempo-kl) = " + format_double(diff));
    }
  }

  // tempered entropy decreases in the scale
  {
    const auto& z = inst.rewards();
    const double d = tempered_entropy_derivative(z, 1.0);
    const ScalarFunction h = [&](std::span<const double> s) {
      return entropy(tempered_softmax(z, s[0]));
    };
    const std::vector<double> at = {1.0};
    const std::vector<double> analytic = {d};
    const double rel = relative_gradient_error(analytic, finite_diff_gradient(h, at, 3e-4), 1e-8);
    add("tempered-entropy", d <= 0.0 && rel <= 1e-5,
        "H'(1) = " + format_double(d) + ", finite-difference rel error " + format_double(rel));
  }

  // implied rewards recover the centered rewards
  if (!full_ref) {
    skip("implied-reward", "reference has zero entries");
  } else {
    double worst = 0.0;
    const auto centered = mean_centered(inst.rewards());
    for (const auto& p : {MethodParams::rlhf(a.beta), MethodParams::qempo(lambda1),
                          MethodParams::qempo_kl(lambda1, a.lambda2)}) {
      const auto res = closed_form_policy(inst, p);
      const auto implied = mean_centered(implied_reward(res.dist.probs(), inst, p));
      for (std::size_t i = 0; i < inst.size(); ++i) {
        worst = std::max(worst, std::abs(implied[i] - centered[i]));
      }
    }
    add("implied-reward", worst <= 1e-9, "max deviation " + format_double(worst));
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int cmd_verify(const VerifyArgs& a, const Globals& g) {
  const ScenarioSuite suite = load_scenario(a.scenario);
  Run run("verify", g, "verify");
  run.config()["scenario"] = a.scenario;
  run.config()["beta"] = a.beta;
  run.config()["lambda2"] = a.lambda2;
  run.config()["epsilon"] = a.epsilon;
  run.config()["grid_step"] = a.grid_step;
  run.config()["perturb"] = a.perturb;
  run.config()["tol"] = g.tol;
  run.set_seed(suite.seed());

  const auto per_instance = parallel_map<std::vector<Check>>(
      suite.size(), g.threads, [&](std::size_t i) { return verify_instance(suite[i], a, g.tol); });
  std::string csv = "instance,check,status,detail\n";
  std::size_t failed = 0;
  for (const auto& checks : per_instance) {
    for (const auto& c : checks) {
      csv += csv_field(c.instance) + "," + c.name + "," + c.status + "," + csv_field(c.detail) + "\n";
      std::printf("%-8s %s %s: %s\n", c.status.c_str(), c.instance.c_str(), c.name.c_str(),
                  c.detail.c_str());
      failed += c.status == "fail";
    }
  }
  run.write("verify.csv", csv);
  run.finish();
  if (failed > 0) {
    std::fprintf(stderr, "%zu check(s) failed\n", failed);
    return kExitError;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string scenario;
  std::string config;
  std::string pairs = "exhaustive";
  std::size_t pairs_per_instance = 50;
};

int cmd_train_offline(const TrainArgs& a, const Globals& g) {
  const ScenarioSuite suite = load_scenario(a.scenario);
  OfflineConfig config = parse_offline_config(load_json_file(a.config));
  if (g.seed) config.seed = *g.seed;
  validate(config);

  std::vector<PreferencePair> train;
  std::vector<PreferencePair> heldout;
  if (a.pairs == "exhaustive") {
    train = exhaustive_suite_preferences(suite);
  } else if (a.pairs == "sampled") {
    Rng rng(derive_seed(config.seed, 2));
    const std::size_t held = std::max<std::size_t>(1, a.pairs_per_instance / 5);
    for (std::size_t i = 0; i < suite.size(); ++i) {
      const auto t = sample_preferences(suite[i], i, a.pairs_per_instance, rng);
      const auto h = sample_preferences(suite[i], i, held, rng);
      train.insert(train.end(), t.begin(), t.end());
      heldout.insert(heldout.end(), h.begin(), h.end());
    }
  } else {
    throw InvalidArgument("--pairs must be exhaustive or sampled");
  }

  Run run("train-offline", g, "train-offline");
  run.config()["scenario"] = a.scenario;
  run.config()["trainer"] = offline_config_to_json(config);
  run.config()["pairs"] = a.pairs;
  if (a.pairs == "sampled") run.config()["pairs_per_instance"] = a.pairs_per_instance;
  run.set_seed(config.seed);

  const OfflineResult result = train_offline(suite, config, train, heldout);
  const SuiteSummary final_summary = summarize(result.policy, suite);
  Json meta = Json::object();
  meta["method"] = to_string(config.method);
  meta["steps"] = config.steps;
  meta["best_step"] = result.best_step;
  meta["best_heldout_loss"] = result.best_heldout_loss;
  meta["entropy_mean"] = final_summary.entropy_mean;
  meta["quality_mass_mean"] = final_summary.quality_mass_mean;
  run.write("history.csv", offline_history_csv(result.history));
  run.write("policy.json", dump_json(policy_to_json(result.policy, config.seed, meta)));
  Json best_meta = meta;
  best_meta["selected"] = "lowest held-out loss";
  run.write("best_policy.json", dump_json(policy_to_json(result.best_policy, config.seed, best_meta)));
  std::printf("final loss %s, entropy %s, quality mass %s\n",
              format_double(result.history.back().loss).c_str(),
              format_double(final_summary.entropy_mean).c_str(),
              format_double(final_summary.quality_mass_mean).c_str());
  run.finish();
  return kExitOk;
}

int cmd_train_online(const TrainArgs& a, const Globals& g) {
  const ScenarioSuite suite = load_scenario(a.scenario);
  OnlineConfig config = parse_online_config(load_json_file(a.config));
  if (g.seed) config.seed = *g.seed;
  validate(config);

  Run run("train-online", g, "train-online");
  run.config()["scenario"] = a.scenario;
  run.config()["trainer"] = online_config_to_json(config);
  run.set_seed(config.seed);

  const OnlineResult result = train_online(suite, config);
  const auto& last = result.history.back();
  Json meta = Json::object();
  meta["method"] = to_string(config.method);
  meta["loss_form"] = to_string(config.form);
  meta["gate"] = to_string(config.gate);
  meta["steps"] = config.steps;
  run.write("history.csv", online_history_csv(config, result.history));
  run.write("policy.json", dump_json(policy_to_json(result.policy, config.seed, meta)));
  std::printf("final entropy %s, expected reward %s", format_double(last.entropy_mean).c_str(),
              format_double(last.expected_reward_mean).c_str());
  for (std::size_t k = 0; k < config.pass_k.size(); ++k) {
    std::printf(", pass@%zu %s", config.pass_k[k], format_double(last.pass_at_k[k]).c_str());
  }
  std::printf("\n");
  run.finish();
  return kExitOk;
}

// ---------------------------------------------------------------- frontier

struct FrontierArgs {
  std::string scenario;
  std::string method = "qempo";
  std::vector<double> values;
  double ratio21 = 1e-2;
  std::string preset;
};

int cmd_frontier(const FrontierArgs& a, const Globals& g) {
  const ScenarioSuite suite = load_scenario(a.scenario);
  std::vector<MethodParams> grid;
  if (a.preset == "offline") {
    const Method m = method_from_string(a.method);
    if (m == Method::qempo) grid = offline_qempo_preset();
    else if (m == Method::qempo_kl) grid = offline_qempo_kl_preset();
    else grid.push_back(MethodParams::rlhf(1e-2));
  } else if (!a.preset.empty()) {
    throw InvalidArgument("unknown preset '" + a.preset + "'");
  } else {
    if (a.values.empty()) throw InvalidArgument("frontier needs --values or --preset offline");
    for (double v : a.values) {
      switch (method_from_string(a.method)) {
        case Method::rlhf: grid.push_back(MethodParams::rlhf(v)); break;
        case Method::qempo: grid.push_back(MethodParams::qempo(v)); break;
        // values are lambda1; lambda2 follows the fixed ratio
        case Method::qempo_kl: grid.push_back(MethodParams::qempo_kl(v, a.ratio21 * v)); break;
      }
    }
  }
  Run run("frontier", g, "frontier");
  run.config()["scenario"] = a.scenario;
  run.config()["method"] = a.method;
  Json params = Json::array();
  for (const auto& p : grid) params.push_back(method_params_to_json(p));
  run.config()["grid"] = params;
  run.set_seed(suite.seed());

  const auto sweeps = parallel_map<std::vector<FrontierPoint>>(
      suite.size(), g.threads, [&](std::size_t i) { return frontier_sweep(suite[i], grid); });
  std::vector<FrontierPoint> points;
  for (const auto& s : sweeps) points.insert(points.end(), s.begin(), s.end());
  run.write("frontier.csv", frontier_csv(points));
  std::printf("%zu points\n", points.size());
  run.finish();
  return kExitOk;
}

// ---------------------------------------------------------------- pass@k

struct PassArgs {
  std::optional<std::size_t> n, c;
  std::vector<std::size_t> ks = {1, 4, 16};
  std::string scenario;
  std::string policy;
  std::size_t samples = 100;
};

int cmd_pass_at_k(const PassArgs& a, const Globals& g) {
  if (a.n || a.c) {
    if (!a.n || !a.c) throw InvalidArgument("--n and --c go together");
    for (std::size_t k : a.ks) {
      std::printf("pass@%zu %s\n", k, format_double(pass_at_k({*a.n, *a.c, k})).c_str());
    }
    return kExitOk;
  }
  if (a.scenario.empty() || a.policy.empty()) {
    throw InvalidArgument("pass-at-k needs --n/--c or a scenario with --policy");
  }
  const ScenarioSuite suite = load_scenario(a.scenario);
  const LogitPolicy policy = policy_from_json(load_json_file(a.policy));
  if (policy.instance_ids().size() != suite.size()) {
    throw InvalidArgument("policy and scenario differ in instance count");
  }
  for (std::size_t i = 0; i < suite.size(); ++i) {
    if (policy.instance_ids()[i] != suite[i].id() || policy.logits(i).size() != suite[i].size()) {
      throw InvalidArgument("policy does not match scenario at instance '" + suite[i].id() + "'");
    }
  }
  const std::uint64_t seed = g.seed.value_or(suite.seed());
  Run run("pass-at-k", g, "pass-at-k");
  run.config()["scenario"] = a.scenario;
  run.config()["policy"] = a.policy;
  run.config()["samples"] = a.samples;
  run.config()["k"] = a.ks;
  run.set_seed(seed);

  std::string csv = "instance";
  for (std::size_t k : a.ks) csv += ",pass@" + std::to_string(k);
  csv += "\n";
  Rng rng(derive_seed(seed, 4));
  std::vector<double> mean(a.ks.size(), 0.0);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const ScenarioSuite one({suite[i]}, seed);
    const LogitPolicy p({suite[i].id()}, {policy.logits(i)});
    const auto values = evaluate_pass_at_k(p, one, a.samples, a.ks, rng);
    csv += suite[i].id();
    for (std::size_t k = 0; k < values.size(); ++k) {
      csv += "," + format_double(values[k]);
      mean[k] += values[k] / static_cast<double>(suite.size());
    }
    csv += "\n";
  }
  csv += "mean";
  for (std::size_t k = 0; k < mean.size(); ++k) {
    csv += "," + format_double(mean[k]);
    std::printf("pass@%zu %s\n", a.ks[k], format_double(mean[k]).c_str());
  }
  csv += "\n";
  run.write("pass_at_k.csv", csv);
  run.finish();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-maximizing alignment lab: closed forms, solvers, trainers, checks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals globals;
  app.add_option("--seed", globals.seed, "Seed override for sampling and training");
  app.add_option("--tol", globals.tol, "Solver tolerance")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", globals.out_dir, "Output directory (default qempo-out/<command>)");
  app.add_option("--threads", globals.threads, "Worker threads for per-instance work")
      ->check(CLI::Range(1u, 256u));

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Closed-form policies or constrained solves per instance");
  s->add_option("scenario", solve.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  s->add_option("--method", solve.method, "rlhf, qempo or qempo-kl")
      ->check(CLI::IsMember({"rlhf", "qempo", "qempo-kl"}));
  s->add_option("--beta", solve.beta, "RLHF beta");
  auto* lam = s->add_option("--lambda", solve.lambda, "QEMPO lambda");
  s->add_option("--inv-lambda", solve.inv_lambda, "QEMPO 1/lambda")->excludes(lam);
  s->add_option("--lambda1", solve.lambda1);
  s->add_option("--lambda2", solve.lambda2);
  s->add_option("--inv-lambda1", solve.inv_lambda1, "QEMPO-KL 1/lambda1");
  s->add_option("--ratio21", solve.ratio21, "QEMPO-KL lambda2/lambda1");
  auto* lfb = s->add_option("--levels-from-beta", solve.levels_from_beta,
                            "Solve for multipliers at the levels (R, K) of an RLHF run");
  s->add_option("--reward-floor", solve.reward_floor, "Reward level R")->excludes(lfb);
  s->add_option("--kl-budget", solve.kl_budget, "KL budget K")->excludes(lfb);
  s->add_option("--max-iters", solve.max_iters, "Dual ascent iteration cap");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Check the optimality and ordering results per instance");
  v->add_option("scenario", verify.scenario)->required()->check(CLI::ExistingFile);
  v->add_option("--beta", verify.beta, "RLHF beta used for levels and orderings");
  v->add_option("--lambda2", verify.lambda2, "QEMPO-KL lambda2 (lambda1 = lambda2 / beta)");
  v->add_option("--epsilon", verify.epsilon, "Ideal policy epsilon");
  v->add_option("--grid-step", verify.grid_step, "Simplex grid step for brute-force checks");
  v->add_flag("--perturb", verify.perturb,
              "Self-test: tamper with the closed-form output before the KKT check");

  TrainArgs offline;
  auto* to = app.add_subcommand("train-offline", "Pairwise preference training");
  to->add_option("scenario", offline.scenario)->required()->check(CLI::ExistingFile);
  to->add_option("config", offline.config)->required()->check(CLI::ExistingFile);
  to->add_option("--pairs", offline.pairs, "exhaustive or sampled")
      ->check(CLI::IsMember({"exhaustive", "sampled"}));
  to->add_option("--pairs-per-instance", offline.pairs_per_instance);

  TrainArgs online;
  auto* tn = app.add_subcommand("train-online", "Group-sampled online training");
  tn->add_option("scenario", online.scenario)->required()->check(CLI::ExistingFile);
  tn->add_option("config", online.config)->required()->check(CLI::ExistingFile);

  FrontierArgs frontier;
  auto* f = app.add_subcommand("frontier", "Entropy / reward sweep over a multiplier grid");
  f->add_option("scenario", frontier.scenario)->required()->check(CLI::ExistingFile);
  f->add_option("--method", frontier.method)->check(CLI::IsMember({"rlhf", "qempo", "qempo-kl"}));
  f->add_option("--values", frontier.values, "beta, lambda or lambda1 values")->delimiter(',');
  f->add_option("--ratio21", frontier.ratio21, "lambda2/lambda1 for qempo-kl sweeps");
  f->add_option("--preset", frontier.preset, "offline: the offline hyperparameter grid");

  PassArgs pass;
  auto* p = app.add_subcommand("pass-at-k", "Unbiased pass@k from counts or a policy file");
  p->add_option("--n", pass.n, "Samples drawn");
  p->add_option("--c", pass.c, "Correct samples");
  p->add_option("--k", pass.ks, "k values")->delimiter(',');
  p->add_option("scenario", pass.scenario);
  p->add_option("--policy", pass.policy, "Policy file from a training run");
  p->add_option("--samples", pass.samples, "Samples per instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*s) return cmd_solve(solve, globals);
    if (*v) return cmd_verify(verify, globals);
    if (*to) return cmd_train_offline(offline, globals);
    if (*tn) return cmd_train_online(online, globals);
    if (*f) return cmd_frontier(frontier, globals);
    if (*p) return cmd_pass_at_k(pass, globals);
  } catch (const TrainingFailure& e) {
    std::fprintf(stderr, "error: %s (step %zu, last finite loss %s)\n", e.what(), e.step(),
                 format_double(e.last_finite_loss()).c_str());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
