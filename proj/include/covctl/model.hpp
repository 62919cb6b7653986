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

// Domain types for discrete-time linear systems driven by additive and
// multiplicative white noise:
//
//   x_{k+1} = (A + sum_i sigma_k(i) A_i) x_k + B u_k + w_k,   x_0 = 0,
//
// with w_k ~ (0, I), sigma_k(i) ~ (0, 1) after normalization, performance
// output z_k = C x_k + D u_k, and optional indefinite quadratic constraints
// E[(x;u)' Q_j (x;u)] <= gamma_j(k).

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "covctl/numerics.hpp"

namespace covctl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class DistributionFamily { gaussian, rademacher, uniform };

inline const char* toString(DistributionFamily f) {
  switch (f) {
    case DistributionFamily::gaussian: return "gaussian";
    case DistributionFamily::rademacher: return "rademacher";
    case DistributionFamily::uniform: return "uniform";
  }
  return "gaussian";
}

inline std::optional<DistributionFamily> parseDistributionFamily(
    const std::string& s) {
  if (s == "gaussian") return DistributionFamily::gaussian;
  if (s == "rademacher") return DistributionFamily::rademacher;
  if (s == "uniform") return DistributionFamily::uniform;
  return std::nullopt;
}

// Noise description. The additive covariance is fixed to the identity. The
// multiplicative variances s(i)^2 are folded into the stored matrices at
// load time (A_i <- s(i) * A_i), after which every channel is unit variance;
// the list is kept so the folding is visible to callers.
struct NoiseSpec {
  std::vector<double> multiplicative_variances;  // one per channel, > 0
  DistributionFamily additive = DistributionFamily::gaussian;
  DistributionFamily multiplicative = DistributionFamily::gaussian;
};

struct SystemModel {
  MatrixXd A;  // n x n
  MatrixXd B;  // n x m
  std::vector<MatrixXd> multiplicative;  // A_i, n x n, variance-normalized
  MatrixXd C;  // p x n
  MatrixXd D;  // p x m
  NoiseSpec noise;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int p() const { return static_cast<int>(C.rows()); }

  // [A B], n x (n+m)
  MatrixXd dynamicsBlock() const {
    MatrixXd f(n(), n() + m());
    f << A, B;
    return f;
  }
  // [C D], p x (n+m)
  MatrixXd outputBlock() const {
    MatrixXd g(p(), n() + m());
    g << C, D;
    return g;
  }
  // [C D]'[C D], the cost Gram matrix
  MatrixXd gram() const {
    const MatrixXd g = outputBlock();
    return g.transpose() * g;
  }
};

// Joint second-moment matrix of the stacked state/input vector,
// V = [[X, R], [R', U]] with X n x n and U m x m.
struct JointCovariance {
  MatrixXd V;
  int n = 0;
  int m = 0;

  JointCovariance() = default;
  JointCovariance(MatrixXd v, int n_, int m_) : V(std::move(v)), n(n_), m(m_) {
    if (V.rows() != n + m || V.cols() != n + m) {
      throw std::invalid_argument("JointCovariance: block partition mismatch");
    }
  }

  MatrixXd X() const { return V.topLeftCorner(n, n); }
  MatrixXd R() const { return V.topRightCorner(n, m); }
  MatrixXd U() const { return V.bottomRightCorner(m, m); }

  double minEigenvalue() const { return numerics::symEig(V).values.minCoeff(); }
};

// E[(x;u)' Q (x;u)] <= gamma(k); Q symmetric, possibly indefinite. gamma is
// a singleton (constant bound, broadcast over steps) or a length-N schedule.
struct QuadraticConstraint {
  MatrixXd Q;
  std::vector<double> gamma;

  double gammaAt(int k) const {
    return gamma.size() == 1 ? gamma[0] : gamma.at(static_cast<size_t>(k));
  }
  // Lower-right m x m block of Q (the input-quadratic part).
  MatrixXd inputBlock(int n) const {
    const int m = static_cast<int>(Q.rows()) - n;
    return Q.bottomRightCorner(m, m);
  }
};

// u_k = K_k x_k + v_k with v_k zero-mean noise of covariance Pi_k. Singleton
// lists denote a stationary policy.
struct AffinePolicy {
  std::vector<MatrixXd> gains;              // K_k, m x n
  std::vector<MatrixXd> noise_covariances;  // Pi_k, m x m, PSD

  bool stationary() const { return gains.size() == 1; }
  const MatrixXd& gainAt(int k) const {
    return stationary() ? gains.front() : gains.at(static_cast<size_t>(k));
  }
  const MatrixXd& noiseCovarianceAt(int k) const {
    return noise_covariances.size() == 1
               ? noise_covariances.front()
               : noise_covariances.at(static_cast<size_t>(k));
  }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string joined() const {
    std::ostringstream os;
    for (size_t i = 0; i < violations.size(); ++i) {
      if (i) os << "; ";
      os << violations[i];
    }
    return os.str();
  }
};

namespace detail {

inline bool allFinite(const MatrixXd& m) { return m.allFinite(); }

inline void checkDims(const MatrixXd& m, int rows, int cols,
                      const std::string& name, ValidationReport* rep) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << name << ": expected " << rows << "x" << cols << ", got " << m.rows()
       << "x" << m.cols();
    rep->violations.push_back(os.str());
  }
}

// Matrices are accepted as symmetric when max|M - M'| <= 1e-9 * (1 + max|M|).
inline bool nearlySymmetric(const MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  const double dev = numerics::maxAbs(m - m.transpose());
  return dev <= 1e-9 * (1.0 + numerics::maxAbs(m));
}

}  // namespace detail

// Structural validation. A horizon argument selects finite-horizon rules
// (gamma schedules must match N; the cost Gram matrix may be merely PSD);
// without it the Gram matrix must be positive definite, with smallest
// eigenvalue >= 1e-9 * (trace / (n+m)).
inline ValidationReport validate(
    const SystemModel& model,
    const std::vector<QuadraticConstraint>& constraints,
    std::optional<int> horizon = std::nullopt) {
  ValidationReport rep;
  const int n = model.n();
  const int m = model.m();

  if (n < 1) rep.violations.push_back("A: must be nonempty and square");
  if (model.A.rows() != model.A.cols()) {
    rep.violations.push_back("A: must be square, got " +
                             std::to_string(model.A.rows()) + "x" +
                             std::to_string(model.A.cols()));
  }
  if (m < 1) rep.violations.push_back("B: must have at least one column");
  detail::checkDims(model.B, n, m, "B", &rep);
  for (size_t i = 0; i < model.multiplicative.size(); ++i) {
    detail::checkDims(model.multiplicative[i], n, n,
                      "multiplicative[" + std::to_string(i) + "]", &rep);
  }
  if (model.C.cols() != n || model.D.cols() != m ||
      model.C.rows() != model.D.rows()) {
    std::ostringstream os;
    os << "C/D: expected p x " << n << " and p x " << m << " with equal p, got "
       << model.C.rows() << "x" << model.C.cols() << " and " << model.D.rows()
       << "x" << model.D.cols();
    rep.violations.push_back(os.str());
  }
  for (size_t i = 0; i < model.noise.multiplicative_variances.size(); ++i) {
    if (!(model.noise.multiplicative_variances[i] > 0.0)) {
      rep.violations.push_back("variance[" + std::to_string(i) +
                               "]: must be strictly positive");
    }
  }
  for (const auto* mat : {&model.A, &model.B, &model.C, &model.D}) {
    if (!detail::allFinite(*mat)) {
      rep.violations.push_back("model matrices must be finite");
      break;
    }
  }
  for (const auto& ai : model.multiplicative) {
    if (!detail::allFinite(ai)) {
      rep.violations.push_back("multiplicative matrices must be finite");
      break;
    }
  }

  for (size_t j = 0; j < constraints.size(); ++j) {
    const auto& c = constraints[j];
    const std::string name = "constraints[" + std::to_string(j) + "]";
    if (c.Q.rows() != n + m || c.Q.cols() != n + m) {
      rep.violations.push_back(name + ".Q: expected " + std::to_string(n + m) +
                               "x" + std::to_string(n + m));
    } else if (!detail::nearlySymmetric(c.Q)) {
      rep.violations.push_back(name + ".Q: not symmetric within tolerance");
    }
    if (!detail::allFinite(c.Q)) {
      rep.violations.push_back(name + ".Q: must be finite");
    }
    if (c.gamma.empty()) {
      rep.violations.push_back(name + ".gamma: empty");
    } else if (horizon && c.gamma.size() != 1 &&
               c.gamma.size() != static_cast<size_t>(*horizon)) {
      rep.violations.push_back(name + ".gamma: schedule length " +
                               std::to_string(c.gamma.size()) +
                               " does not match horizon " +
                               std::to_string(*horizon));
    } else if (!horizon && c.gamma.size() != 1) {
      rep.violations.push_back(name +
                               ".gamma: stationary mode requires a scalar");
    }
  }

  if (horizon && *horizon < 1) {
    rep.violations.push_back("horizon: must be >= 1");
  }

  // Gram-matrix definiteness, only checkable once dimensions are coherent.
  if (rep.ok()) {
    const MatrixXd gram = model.gram();
    const double lmin = numerics::symEig(gram).values.minCoeff();
    if (!horizon) {
      const double tol = 1e-9 * (gram.trace() / (n + m));
      if (!(lmin > 0.0 && lmin >= tol)) {
        std::ostringstream os;
        os << "[C D]'[C D]: must be positive definite for infinite-horizon "
              "synthesis (min eigenvalue "
           << lmin << ")";
        rep.violations.push_back(os.str());
      }
    } else if (lmin < -1e-9 * (1.0 + numerics::maxAbs(gram))) {
      rep.violations.push_back("[C D]'[C D]: must be positive semidefinite");
    }
  }

  return rep;
}

}  // namespace covctl
