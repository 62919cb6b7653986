/*
 Copyright 2026 The covctl Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

// covctl: covariance-based controller synthesis for linear systems with
// additive and multiplicative noise.
//
// Exit codes: 0 optimal / success, 1 input error, 2 iteration cap or
// numerical failure, 3 infeasible (not mean-square stabilizable), 4
// undecided, 5 simulation overflow.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "covctl/model.hpp"
#include "covctl/problem_io.hpp"
#include "covctl/report.hpp"
#include "covctl/sdp.hpp"
#include "covctl/simulate.hpp"
#include "covctl/synthesis.hpp"
#include "covctl/version.hpp"

namespace {

using covctl::AffinePolicy;
using covctl::ControlProblem;
using covctl::DistributionFamily;
using covctl::EmpiricalStats;
using covctl::MatrixXd;
using covctl::RolloutConfig;
using covctl::SolveState;
using covctl::SolverOptions;
using covctl::Stabilizability;
using covctl::SynthesisResult;
using covctl::SystemModel;
using covctl::ThresholdResult;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitIterations = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitUndecided = 4;
constexpr int kExitOverflow = 5;

struct SolverFlags {
  double eps = 1e-7;
  int max_iters = 200000;
  double rho = 1.0;
  bool no_adaptive_rho = false;
};

void addSolverFlags(CLI::App* cmd, SolverFlags* f) {
  cmd->add_option("--eps", f->eps,
                  "Solver tolerance (absolute and relative)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--max-iters", f->max_iters, "Solver iteration cap")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--rho", f->rho, "Initial primal/dual balance weight")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-adaptive-rho", f->no_adaptive_rho,
                "Disable residual-balancing updates of rho");
}

SolverOptions toOptions(const SolverFlags& f) {
  SolverOptions o;
  o.eps_abs = f.eps;
  o.eps_rel = f.eps;
  o.max_iters = f.max_iters;
  o.rho = f.rho;
  o.adaptive_rho = !f.no_adaptive_rho;
  return o;
}

DistributionFamily parseFamilyOrThrow(const std::string& name) {
  const std::optional<DistributionFamily> fam =
      covctl::parseDistributionFamily(name);
  if (!fam) {
    throw std::invalid_argument("unknown distribution family: " + name);
  }
  return *fam;
}

int exitCodeFor(SolveState state) {
  switch (state) {
    case SolveState::optimal:
      return kExitOk;
    case SolveState::iteration_cap:
      return kExitIterations;
    case SolveState::primal_infeasible_suspected:
      return kExitInfeasible;
    case SolveState::numerical_failure:
      return kExitIterations;
  }
  return kExitIterations;
}

void emitReport(const json& rep, const std::string& out_path) {
  const std::string body = covctl::report::canonicalDump(rep);
  if (out_path.empty()) {
    std::cout << body;
  } else {
    covctl::report::writeFile(out_path, body);
  }
}

// ---------------------------------------------------------------------------
// solve

int cmdSolve(const std::string& path, const std::string& mode,
             std::optional<int> horizon, const std::string& out,
             const SolverFlags& flags) {
  ControlProblem problem = covctl::loadProblemFile(path);
  if (!mode.empty()) {
    if (mode == "finite") {
      if (!horizon && !problem.finite) {
        throw std::invalid_argument("--mode finite requires --horizon");
      }
      problem.finite = true;
      if (horizon) problem.horizon = *horizon;
    } else if (mode == "infinite") {
      problem.finite = false;
    } else {
      throw std::invalid_argument("--mode must be 'infinite' or 'finite'");
    }
  } else if (horizon) {
    problem.finite = true;
    problem.horizon = *horizon;
  }
  const covctl::ValidationReport vr = covctl::validate(
      problem.model, problem.constraints, problem.horizonOpt());
  if (!vr.ok()) {
    throw std::invalid_argument("invalid problem: " + vr.joined());
  }

  const SolverOptions options = toOptions(flags);
  const SynthesisResult result = covctl::synthesize(
      problem.model, problem.constraints, problem.horizonOpt(), options);
  emitReport(covctl::report::buildSynthesisReport(problem, result, options),
             out);
  std::fprintf(stderr,
               "covctl solve: state=%s objective=%.6f (trace=%.6f) "
               "iterations=%d\n",
               covctl::toString(result.status.state),
               result.objective >= 0 ? std::sqrt(result.objective)
                                     : std::nan(""),
               result.objective, result.status.iterations);
  return exitCodeFor(result.status.state);
}

// ---------------------------------------------------------------------------
// stabilizable

int cmdStabilizable(const std::string& path, const std::string& out,
                    const SolverFlags& flags) {
  const ControlProblem problem = covctl::loadProblemFile(path);
  const SolverOptions options = toOptions(flags);
  const covctl::StabilizabilityResult result =
      covctl::checkStabilizability(problem.model, options);
  std::cout << covctl::toString(result.verdict) << "\n";
  if (!out.empty()) {
    emitReport(
        covctl::report::buildStabilizabilityReport(problem, result, options),
        out);
  }
  switch (result.verdict) {
    case Stabilizability::yes:
      return kExitOk;
    case Stabilizability::no:
      return kExitInfeasible;
    case Stabilizability::undecided:
      return kExitUndecided;
  }
  return kExitUndecided;
}

// ---------------------------------------------------------------------------
// threshold

int cmdThreshold(const std::string& path, int channel, double lo, double hi,
                 double tol, const std::string& out, const SolverFlags& flags) {
  const ControlProblem problem = covctl::loadProblemFile(path);
  const SolverOptions options = toOptions(flags);
  const ThresholdResult result =
      covctl::noiseThreshold(problem.model, channel, lo, hi, tol, options);
  if (result.status == ThresholdResult::Status::precondition_failed) {
    std::fprintf(stderr, "covctl threshold: %s\n", result.message.c_str());
    return kExitInput;
  }
  if (result.status == ThresholdResult::Status::undecided_probe) {
    std::fprintf(stderr, "covctl threshold: %s\n", result.message.c_str());
    return kExitUndecided;
  }
  std::cout << "s_star," << covctl::report::formatDouble(result.s_star)
            << "\n";
  std::cout << "s,stabilizable\n";
  for (const auto& probe : result.probes) {
    const double flag = probe.verdict == Stabilizability::yes
                            ? 1.0
                            : (probe.verdict == Stabilizability::no ? 0.0
                                                                    : 0.5);
    std::cout << covctl::report::formatDouble(probe.s) << ","
              << covctl::report::formatDouble(flag) << "\n";
  }
  if (!out.empty()) {
    json rep;
    rep["schema"] = covctl::kReportSchema;
    rep["version"] = covctl::kVersion;
    rep["mode"] = "threshold";
    rep["channel"] = channel;
    rep["lo"] = lo;
    rep["hi"] = hi;
    rep["tol"] = tol;
    rep["s_star"] = result.s_star;
    json probes = json::array();
    for (const auto& probe : result.probes) {
      probes.push_back(json{{"s", probe.s},
                            {"verdict", covctl::toString(probe.verdict)}});
    }
    rep["probes"] = std::move(probes);
    emitReport(rep, out);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

int cmdSimulate(const std::string& report_path, int steps, int runs,
                uint64_t seed, const std::string& dist, int threads,
                const std::string& out) {
  const json rep = covctl::report::readJsonFile(report_path);
  if (!rep.contains("policy") || !rep.contains("problem") ||
      !rep.contains("objective_trace")) {
    throw std::invalid_argument(
        "simulate: report lacks policy/problem/objective_trace (expected a "
        "synthesis report)");
  }
  ControlProblem problem = covctl::report::problemFromReport(rep);
  const AffinePolicy policy = covctl::report::policyFromReport(rep);
  const double objective_trace = rep.at("objective_trace").get<double>();
  SystemModel model = problem.model;
  if (!dist.empty()) {
    const DistributionFamily fam = parseFamilyOrThrow(dist);
    model.noise.additive = fam;
    model.noise.multiplicative = fam;
  }

  RolloutConfig config;
  config.steps = steps;
  config.runs = runs;
  config.seed = seed;
  config.threads = threads;
  const EmpiricalStats stats = covctl::rollout(model, policy, config);

  double z = std::numeric_limits<double>::quiet_NaN();
  if (!stats.overflowed) {
    z = (stats.mean_cost - objective_trace) / stats.cost_se;
  }
  const json srep = covctl::report::buildSimulationReport(
      stats, config, model.noise.additive, model.noise.multiplicative,
      objective_trace, z);
  emitReport(srep, out);
  if (stats.overflowed) {
    std::fprintf(stderr,
                 "covctl simulate: state norm exceeded 1e12 (run %d, step "
                 "%d); closed loop is not mean-square stable\n",
                 stats.overflow_run, stats.overflow_step);
    return kExitOverflow;
  }
  std::fprintf(stderr,
               "covctl simulate: mean_cost=%.6f se=%.6f objective_trace=%.6f "
               "z=%.3f\n",
               stats.mean_cost, stats.cost_se, objective_trace, z);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reproduce-example

const char* kExampleJson = R"json({
  "A": [[1, 2], [4, 1]],
  "B": [[1], [1]],
  "multiplicative": [{"Ai": [[0.5, 0], [0, 0.5]], "variance": 2.0}],
  "C": [[1, 0], [0, 1], [0, 0]],
  "D": [[0], [0], [1]],
  "constraints": [{"Q": [[-4, 0, 0], [0, -4, 0], [0, 0, 1]], "gamma": 0.0}],
  "mode": "infinite"
})json";

struct CheckRow {
  std::string name;
  double value;
  std::string target;
  bool pass;
};

int cmdReproduceExample(const SolverFlags& flags, const std::string& dist,
                        bool do_simulate, int threads) {
  const SolverOptions options = toOptions(flags);
  const double rel_tol = flags.eps > 1e-5 ? 0.05 : 0.01;

  ControlProblem constrained = covctl::loadProblem(std::string(kExampleJson));
  ControlProblem unconstrained = constrained;
  unconstrained.constraints.clear();

  const SynthesisResult res_c = covctl::synthesize(
      constrained.model, constrained.constraints, std::nullopt, options);
  const SynthesisResult res_u = covctl::synthesize(
      unconstrained.model, unconstrained.constraints, std::nullopt, options);
  if (res_c.status.state != SolveState::optimal ||
      res_u.status.state != SolveState::optimal) {
    std::fprintf(stderr, "covctl reproduce-example: solver states %s / %s\n",
                 covctl::toString(res_c.status.state),
                 covctl::toString(res_u.status.state));
    return exitCodeFor(res_c.status.state != SolveState::optimal
                           ? res_c.status.state
                           : res_u.status.state);
  }

  std::vector<CheckRow> rows;
  auto relCheck = [&](const std::string& name, double value, double target) {
    const bool pass = std::abs(value - target) <= rel_tol * std::abs(target);
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.4f +/- %.0f%%", target, rel_tol * 100);
    rows.push_back({name, value, buf, pass});
  };

  relCheck("cost_constrained", std::sqrt(res_c.objective), 42.9116);
  relCheck("cost_unconstrained", std::sqrt(res_u.objective), 23.9361);

  const MatrixXd k = res_c.policy.gainAt(0);
  const double k_ref[2] = {0.7908, -2.5155};
  double gain_dev = 0.0;
  for (int i = 0; i < 2; ++i) {
    gain_dev = std::max(gain_dev,
                        std::abs(k(0, i) - k_ref[i]) / std::abs(k_ref[i]));
  }
  rows.push_back({"gain_max_rel_dev", gain_dev, "<= 0.10", gain_dev <= 0.10});

  const MatrixXd vstar = res_c.covariances.front().V;
  const double u_scale = covctl::numerics::maxAbs(res_c.covariances.front().U());
  const double pi_norm =
      covctl::numerics::maxAbs(res_c.policy.noiseCovarianceAt(0));
  rows.push_back({"pi_max_abs", pi_norm, "<= 1e-3 * U*",
                  pi_norm <= 1e-3 * u_scale});

  const double activity = res_c.constraint_activity.at(0).at(0);
  const MatrixXd& q = constrained.constraints.at(0).Q;
  const double trace_scale = (q.array().abs() * vstar.array().abs()).sum();
  rows.push_back({"constraint_activity", activity, "in [-0.5, 1e-3*scale]",
                  activity >= -0.5 && activity <= 1e-3 * trace_scale});

  if (do_simulate) {
    SystemModel model = unconstrained.model;
    if (!dist.empty()) {
      const DistributionFamily fam = parseFamilyOrThrow(dist);
      model.noise.additive = fam;
      model.noise.multiplicative = fam;
    }
    RolloutConfig config;
    config.steps = 2000;
    config.runs = 200;
    config.seed = 2026;
    config.threads = threads;
    const EmpiricalStats stats = covctl::rollout(model, res_u.policy, config);
    if (stats.overflowed) {
      rows.push_back({"empirical_z", std::nan(""), "|z| <= 3", false});
    } else {
      const double z = (stats.mean_cost - res_u.objective) / stats.cost_se;
      rows.push_back({"empirical_z", z, "|z| <= 3", std::abs(z) <= 3.0});
    }
  }

  bool all_pass = true;
  std::printf("%-22s %16s  %-22s %s\n", "metric", "value", "target", "status");
  for (const auto& row : rows) {
    all_pass = all_pass && row.pass;
    std::printf("%-22s %16.6f  %-22s %s\n", row.name.c_str(), row.value,
                row.target.c_str(), row.pass ? "pass" : "FAIL");
  }
  return all_pass ? kExitOk : kExitIterations;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariance-based controller synthesis under additive and "
               "multiplicative noise"};
  app.set_version_flag("--version", std::string(covctl::kVersion));
  app.require_subcommand(1);

  // solve
  auto* solve = app.add_subcommand(
      "solve", "Synthesize an optimal policy from a problem file");
  std::string solve_file, solve_mode, solve_out;
  std::optional<int> solve_horizon;
  SolverFlags solve_flags;
  solve->add_option("file", solve_file, "Problem JSON file")->required();
  solve->add_option("--mode", solve_mode,
                    "Override problem mode: infinite | finite");
  int solve_horizon_raw = -1;
  solve->add_option("--horizon", solve_horizon_raw,
                    "Override horizon (implies finite mode)")
      ->check(CLI::PositiveNumber);
  solve->add_option("--out", solve_out, "Report path (default: stdout)");
  addSolverFlags(solve, &solve_flags);

  // stabilizable
  auto* stab = app.add_subcommand(
      "stabilizable", "Decide mean-square stabilizability of the model");
  std::string stab_file, stab_out;
  SolverFlags stab_flags;
  stab->add_option("file", stab_file, "Problem JSON file")->required();
  stab->add_option("--out", stab_out, "Witness report path");
  addSolverFlags(stab, &stab_flags);

  // threshold
  auto* thresh = app.add_subcommand(
      "threshold", "Bisect the critical multiplicative-noise scale");
  std::string thresh_file, thresh_out;
  int thresh_channel = 0;
  double thresh_lo = 0.0, thresh_hi = 0.0, thresh_tol = 1e-3;
  SolverFlags thresh_flags;
  thresh->add_option("file", thresh_file, "Problem JSON file")->required();
  thresh->add_option("--channel", thresh_channel,
                     "Multiplicative channel index");
  thresh->add_option("--lo", thresh_lo, "Lower bracket for s")->required();
  thresh->add_option("--hi", thresh_hi, "Upper bracket for s")->required();
  thresh->add_option("--tol", thresh_tol, "Bisection tolerance on s")
      ->check(CLI::PositiveNumber);
  thresh->add_option("--out", thresh_out, "Report path");
  addSolverFlags(thresh, &thresh_flags);

  // simulate
  auto* sim = app.add_subcommand(
      "simulate", "Monte Carlo rollout of a synthesized policy");
  std::string sim_report, sim_dist, sim_out;
  int sim_steps = 2000, sim_runs = 200, sim_threads = 1;
  uint64_t sim_seed = 0;
  sim->add_option("--report", sim_report, "Synthesis report to simulate")
      ->required();
  sim->add_option("--steps", sim_steps, "Steps per run")
      ->check(CLI::PositiveNumber);
  sim->add_option("--runs", sim_runs, "Independent runs")
      ->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "Base RNG seed");
  sim->add_option("--dist", sim_dist,
                  "Override noise family: gaussian | rademacher | uniform");
  sim->add_option("--threads", sim_threads, "Worker threads (result is "
                  "independent of this)")
      ->check(CLI::PositiveNumber);
  sim->add_option("--out", sim_out, "Stats JSON path (default: stdout)");

  // reproduce-example
  auto* repro = app.add_subcommand(
      "reproduce-example", "Re-run the built-in worked example end to end");
  SolverFlags repro_flags;
  std::string repro_dist;
  bool repro_simulate = false;
  int repro_threads = 1;
  addSolverFlags(repro, &repro_flags);
  repro->add_option("--dist", repro_dist,
                    "Noise family for --simulate: gaussian | rademacher | "
                    "uniform");
  repro->add_flag("--simulate", repro_simulate,
                  "Also Monte-Carlo-check the unconstrained policy");
  repro->add_option("--threads", repro_threads, "Simulation worker threads")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (solve->parsed()) {
      if (solve_horizon_raw > 0) solve_horizon = solve_horizon_raw;
      return cmdSolve(solve_file, solve_mode, solve_horizon, solve_out,
                      solve_flags);
    }
    if (stab->parsed()) {
      return cmdStabilizable(stab_file, stab_out, stab_flags);
    }
    if (thresh->parsed()) {
      return cmdThreshold(thresh_file, thresh_channel, thresh_lo, thresh_hi,
                          thresh_tol, thresh_out, thresh_flags);
    }
    if (sim->parsed()) {
      return cmdSimulate(sim_report, sim_steps, sim_runs, sim_seed, sim_dist,
                         sim_threads, sim_out);
    }
    if (repro->parsed()) {
      return cmdReproduceExample(repro_flags, repro_dist, repro_simulate,
                                 repro_threads);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "covctl: error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}
