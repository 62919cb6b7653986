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

// Canonical JSON problem format:
//
// {
//   "A": [[...]], "B": [[...]],
//   "multiplicative": [ {"Ai": [[...]], "variance": 1.0}, ... ],
//   "C": [[...]], "D": [[...]],
//   "constraints": [ {"Q": [[...]], "gamma": 0.0}, ... ],
//   "mode": "infinite" | "finite",
//   "horizon": N,                       // required iff mode == "finite"
//   "distributions": {"additive": "gaussian", "multiplicative": "gaussian"}
// }
//
// Loading folds each variance into its matrix (A_i <- s(i) * A_i), so
// (A_i, s^2) and (s * A_i, 1) parse to identical internal models. Q matrices
// are symmetrized after a symmetry-tolerance check. Serialization emits the
// normalized form; load(serialize(load(doc))) is bit-identical to load(doc).

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "covctl/model.hpp"

namespace covctl {

struct ControlProblem {
  SystemModel model;
  std::vector<QuadraticConstraint> constraints;
  bool finite = false;
  int horizon = 0;  // meaningful iff finite

  std::optional<int> horizonOpt() const {
    return finite ? std::optional<int>(horizon) : std::nullopt;
  }
};

namespace io_detail {

using nlohmann::json;

inline MatrixXd parseMatrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) {
    throw std::runtime_error(path + ": expected a nonempty array of rows");
  }
  const size_t rows = j.size();
  size_t cols = 0;
  MatrixXd m;
  for (size_t r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.empty()) {
      throw std::runtime_error(path + "[" + std::to_string(r) +
                               "]: expected a nonempty array");
    }
    if (r == 0) {
      cols = row.size();
      m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      throw std::runtime_error(path + "[" + std::to_string(r) +
                               "]: ragged row (expected " +
                               std::to_string(cols) + " entries)");
    }
    for (size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) {
        throw std::runtime_error(path + "[" + std::to_string(r) + "][" +
                                 std::to_string(c) + "]: expected a number");
      }
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          row[c].get<double>();
    }
  }
  return m;
}

inline json dumpMatrix(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline DistributionFamily parseFamily(const json& j, const std::string& path) {
  if (!j.is_string()) {
    throw std::runtime_error(path + ": expected a distribution name");
  }
  const auto f = parseDistributionFamily(j.get<std::string>());
  if (!f) {
    throw std::runtime_error(path + ": unknown distribution '" +
                             j.get<std::string>() +
                             "' (expected gaussian|rademacher|uniform)");
  }
  return *f;
}

}  // namespace io_detail

inline ControlProblem loadProblem(const nlohmann::json& doc) {
  using io_detail::parseMatrix;
  if (!doc.is_object()) {
    throw std::runtime_error("problem: expected a JSON object");
  }
  for (const char* key : {"A", "B", "C", "D"}) {
    if (!doc.contains(key)) {
      throw std::runtime_error(std::string("problem.") + key + ": missing");
    }
  }

  ControlProblem prob;
  prob.model.A = parseMatrix(doc["A"], "A");
  prob.model.B = parseMatrix(doc["B"], "B");
  prob.model.C = parseMatrix(doc["C"], "C");
  prob.model.D = parseMatrix(doc["D"], "D");

  if (doc.contains("multiplicative")) {
    const auto& list = doc["multiplicative"];
    if (!list.is_array()) {
      throw std::runtime_error("multiplicative: expected an array");
    }
    for (size_t i = 0; i < list.size(); ++i) {
      const std::string path = "multiplicative[" + std::to_string(i) + "]";
      const auto& entry = list[i];
      if (!entry.is_object() || !entry.contains("Ai")) {
        throw std::runtime_error(path + ": expected {\"Ai\": ..., \"variance\": ...}");
      }
      MatrixXd ai = parseMatrix(entry["Ai"], path + ".Ai");
      double variance = 1.0;
      if (entry.contains("variance")) {
        if (!entry["variance"].is_number()) {
          throw std::runtime_error(path + ".variance: expected a number");
        }
        variance = entry["variance"].get<double>();
      }
      if (!(variance > 0.0) || !std::isfinite(variance)) {
        throw std::runtime_error(path +
                                 ".variance: must be strictly positive");
      }
      // Normalization: fold the scale into the matrix so every channel draws
      // unit-variance noise.
      prob.model.multiplicative.push_back(std::sqrt(variance) * ai);
      prob.model.noise.multiplicative_variances.push_back(1.0);
    }
  }

  if (doc.contains("constraints")) {
    const auto& list = doc["constraints"];
    if (!list.is_array()) {
      throw std::runtime_error("constraints: expected an array");
    }
    for (size_t j = 0; j < list.size(); ++j) {
      const std::string path = "constraints[" + std::to_string(j) + "]";
      const auto& entry = list[j];
      if (!entry.is_object() || !entry.contains("Q") ||
          !entry.contains("gamma")) {
        throw std::runtime_error(path + ": expected {\"Q\": ..., \"gamma\": ...}");
      }
      QuadraticConstraint qc;
      qc.Q = parseMatrix(entry["Q"], path + ".Q");
      if (!detail::nearlySymmetric(qc.Q)) {
        throw std::runtime_error(path + ".Q: not symmetric within tolerance");
      }
      qc.Q = numerics::symmetrize(qc.Q);
      const auto& g = entry["gamma"];
      if (g.is_number()) {
        qc.gamma.push_back(g.get<double>());
      } else if (g.is_array() && !g.empty()) {
        for (const auto& v : g) {
          if (!v.is_number()) {
            throw std::runtime_error(path + ".gamma: expected numbers");
          }
          qc.gamma.push_back(v.get<double>());
        }
      } else {
        throw std::runtime_error(path +
                                 ".gamma: expected a number or an array");
      }
      prob.constraints.push_back(std::move(qc));
    }
  }

  if (doc.contains("mode")) {
    const auto& mode = doc["mode"];
    if (!mode.is_string()) {
      throw std::runtime_error("mode: expected \"infinite\" or \"finite\"");
    }
    const std::string s = mode.get<std::string>();
    if (s == "finite") {
      prob.finite = true;
    } else if (s != "infinite") {
      throw std::runtime_error("mode: unknown mode '" + s + "'");
    }
  }
  if (prob.finite) {
    if (!doc.contains("horizon") || !doc["horizon"].is_number_integer()) {
      throw std::runtime_error("horizon: required (integer) when mode is finite");
    }
    prob.horizon = doc["horizon"].get<int>();
  } else if (doc.contains("horizon")) {
    throw std::runtime_error("horizon: only valid when mode is finite");
  }

  if (doc.contains("distributions")) {
    const auto& d = doc["distributions"];
    if (!d.is_object()) {
      throw std::runtime_error("distributions: expected an object");
    }
    if (d.contains("additive")) {
      prob.model.noise.additive =
          io_detail::parseFamily(d["additive"], "distributions.additive");
    }
    if (d.contains("multiplicative")) {
      prob.model.noise.multiplicative = io_detail::parseFamily(
          d["multiplicative"], "distributions.multiplicative");
    }
  }

  const ValidationReport rep =
      validate(prob.model, prob.constraints, prob.horizonOpt());
  if (!rep.ok()) {
    throw std::runtime_error("problem validation failed: " + rep.joined());
  }
  return prob;
}

inline ControlProblem loadProblem(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("problem: JSON parse error: ") +
                             e.what());
  }
  return loadProblem(doc);
}

inline ControlProblem loadProblemFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open problem file: " + path);
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return loadProblem(text);
}

// Serialize in normalized form (variances already folded, so 1.0 each).
inline nlohmann::json saveProblem(const ControlProblem& prob) {
  using io_detail::dumpMatrix;
  nlohmann::json doc;
  doc["A"] = dumpMatrix(prob.model.A);
  doc["B"] = dumpMatrix(prob.model.B);
  doc["C"] = dumpMatrix(prob.model.C);
  doc["D"] = dumpMatrix(prob.model.D);
  nlohmann::json mult = nlohmann::json::array();
  for (size_t i = 0; i < prob.model.multiplicative.size(); ++i) {
    mult.push_back({{"Ai", dumpMatrix(prob.model.multiplicative[i])},
                    {"variance", prob.model.noise.multiplicative_variances[i]}});
  }
  doc["multiplicative"] = mult;
  nlohmann::json cons = nlohmann::json::array();
  for (const auto& c : prob.constraints) {
    nlohmann::json entry;
    entry["Q"] = dumpMatrix(c.Q);
    if (c.gamma.size() == 1) {
      entry["gamma"] = c.gamma[0];
    } else {
      entry["gamma"] = c.gamma;
    }
    cons.push_back(entry);
  }
  doc["constraints"] = cons;
  doc["mode"] = prob.finite ? "finite" : "infinite";
  if (prob.finite) doc["horizon"] = prob.horizon;
  doc["distributions"] = {
      {"additive", toString(prob.model.noise.additive)},
      {"multiplicative", toString(prob.model.noise.multiplicative)}};
  return doc;
}

}  // namespace covctl
