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
#pragma once

// Versioned JSON reports ("covctl-report/1"). Serialization is canonical:
// object keys sorted, floats printed with 17 significant digits so that
// parsing a report back reproduces every numeric field bit-exactly.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "covctl/model.hpp"
#include "covctl/problem_io.hpp"
#include "covctl/sdp.hpp"
#include "covctl/simulate.hpp"
#include "covctl/synthesis.hpp"
#include "covctl/version.hpp"

namespace covctl {
namespace report {

using nlohmann::json;

inline std::string formatDouble(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string s(buf);
  // Make integral doubles round-trip as floats, not integers.
  if (s.find_first_of(".eE") == std::string::npos &&
      s.find("null") == std::string::npos && s.find("inf") == std::string::npos) {
    s += ".0";
  }
  return s;
}

namespace detail {

inline void dump(const json& j, std::string* out) {
  switch (j.type()) {
    case json::value_t::object: {
      out->push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // key-sorted
        if (!first) out->push_back(',');
        first = false;
        *out += json(it.key()).dump();
        out->push_back(':');
        dump(it.value(), out);
      }
      out->push_back('}');
      break;
    }
    case json::value_t::array: {
      out->push_back('[');
      bool first = true;
      for (const auto& e : j) {
        if (!first) out->push_back(',');
        first = false;
        dump(e, out);
      }
      out->push_back(']');
      break;
    }
    case json::value_t::number_float:
      *out += formatDouble(j.get<double>());
      break;
    case json::value_t::number_integer:
      *out += std::to_string(j.get<int64_t>());
      break;
    case json::value_t::number_unsigned:
      *out += std::to_string(j.get<uint64_t>());
      break;
    case json::value_t::boolean:
      *out += j.get<bool>() ? "true" : "false";
      break;
    case json::value_t::string:
      *out += j.dump();
      break;
    default:
      *out += "null";
      break;
  }
}

}  // namespace detail

inline std::string canonicalDump(const json& j) {
  std::string out;
  detail::dump(j, &out);
  out.push_back('\n');
  return out;
}

inline json matrixToJson(const MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int jx = 0; jx < m.cols(); ++jx) row.push_back(m(i, jx));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXd matrixFromJson(const json& a) {
  if (!a.is_array() || a.empty()) {
    throw std::invalid_argument("report: expected a non-empty matrix");
  }
  const int rows = static_cast<int>(a.size());
  const int cols = static_cast<int>(a.at(0).size());
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = a.at(static_cast<size_t>(i));
    if (static_cast<int>(row.size()) != cols) {
      throw std::invalid_argument("report: ragged matrix rows");
    }
    for (int jx = 0; jx < cols; ++jx) {
      m(i, jx) = row.at(static_cast<size_t>(jx)).get<double>();
    }
  }
  return m;
}

inline json statusToJson(const SolveStatus& status) {
  json s;
  s["state"] = toString(status.state);
  s["iterations"] = status.iterations;
  s["primal_residual"] = status.primal_residual;
  s["dual_residual"] = status.dual_residual;
  s["duality_gap"] = status.duality_gap;
  s["dual_objective"] = status.dual_objective;
  s["rho_final"] = status.rho_final;
  return s;
}

inline json optionsToJson(const SolverOptions& options) {
  json o;
  o["eps_abs"] = options.eps_abs;
  o["eps_rel"] = options.eps_rel;
  o["max_iters"] = options.max_iters;
  o["rho"] = options.rho;
  o["adaptive_rho"] = options.adaptive_rho;
  o["psd_tolerance"] = options.psd_tolerance;
  return o;
}

// Full synthesis report. "objective" is on the output's RMS scale
// (sqrt of the stationary mean square, the figure quoted for examples);
// "objective_trace" is the underlying trace value the solver minimizes,
// which is also what Monte Carlo cost estimates converge to.
inline json buildSynthesisReport(const ControlProblem& problem,
                                 const SynthesisResult& result,
                                 const SolverOptions& options) {
  json rep;
  rep["schema"] = kReportSchema;
  rep["version"] = kVersion;
  rep["mode"] = problem.finite ? "finite" : "infinite";
  if (problem.finite) rep["horizon"] = problem.horizon;
  rep["problem"] = saveProblem(problem);
  rep["objective_trace"] = result.objective;
  rep["objective"] = result.objective >= 0.0
                         ? std::sqrt(result.objective)
                         : std::numeric_limits<double>::quiet_NaN();
  json covs = json::array();
  for (const auto& v : result.covariances) covs.push_back(matrixToJson(v.V));
  rep["covariances"] = std::move(covs);
  json gains = json::array();
  json pis = json::array();
  for (const auto& k : result.policy.gains) gains.push_back(matrixToJson(k));
  for (const auto& pi : result.policy.noise_covariances) {
    pis.push_back(matrixToJson(pi));
  }
  rep["policy"] = json{{"K", std::move(gains)}, {"Pi", std::move(pis)}};
  json activity = json::array();
  for (const auto& row : result.constraint_activity) {
    json r = json::array();
    for (double v : row) r.push_back(v);
    activity.push_back(std::move(r));
  }
  rep["constraint_activity"] = std::move(activity);
  rep["status"] = statusToJson(result.status);
  rep["options"] = optionsToJson(options);
  return rep;
}

inline json buildStabilizabilityReport(const ControlProblem& problem,
                                       const StabilizabilityResult& result,
                                       const SolverOptions& options) {
  json rep;
  rep["schema"] = kReportSchema;
  rep["version"] = kVersion;
  rep["mode"] = "stabilizability";
  rep["problem"] = saveProblem(problem);
  rep["verdict"] = toString(result.verdict);
  rep["infeasibility_score"] = result.infeasibility_score;
  if (result.witness.has_value()) {
    rep["witness"] = matrixToJson(result.witness->V);
  }
  rep["status"] = statusToJson(result.status);
  rep["options"] = optionsToJson(options);
  return rep;
}

inline json buildSimulationReport(const EmpiricalStats& stats,
                                  const RolloutConfig& config,
                                  DistributionFamily additive,
                                  DistributionFamily multiplicative,
                                  double objective_trace, double z_score) {
  json rep;
  rep["schema"] = kReportSchema;
  rep["version"] = kVersion;
  rep["mode"] = "simulation";
  rep["runs"] = config.runs;
  rep["steps"] = config.steps;
  rep["seed"] = config.seed;
  rep["burn_in"] = stats.burn_in;
  rep["dist"] = json{{"additive", toString(additive)},
                     {"multiplicative", toString(multiplicative)}};
  rep["overflow"] =
      json{{"overflowed", stats.overflowed},
           {"run", stats.overflow_run},
           {"step", stats.overflow_step}};
  if (!stats.overflowed) {
    rep["mean_cost"] = stats.mean_cost;
    rep["cost_se"] = stats.cost_se;
    rep["objective_trace"] = objective_trace;
    rep["z_score"] = z_score;
    rep["vhat"] = matrixToJson(stats.vhat);
    rep["vhat_se"] = matrixToJson(stats.vhat_se);
  }
  return rep;
}

// Rebuilds the policy stored in a synthesis report.
inline AffinePolicy policyFromReport(const json& rep) {
  AffinePolicy policy;
  const json& pol = rep.at("policy");
  for (const auto& k : pol.at("K")) policy.gains.push_back(matrixFromJson(k));
  for (const auto& pi : pol.at("Pi")) {
    policy.noise_covariances.push_back(matrixFromJson(pi));
  }
  if (policy.gains.empty() || policy.noise_covariances.empty()) {
    throw std::invalid_argument("report: policy is empty");
  }
  return policy;
}

inline ControlProblem problemFromReport(const json& rep) {
  return loadProblem(rep.at("problem"));
}

inline void writeFile(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline json readJsonFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace report
}  // namespace covctl
