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

// Dense symmetric-matrix primitives: eigendecomposition, PSD projection,
// pseudoinverse, and the scaled symmetric vectorization svec/smat.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>

namespace covctl::numerics {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double maxAbs(const MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline MatrixXd symmetrize(const MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

struct SymEig {
  VectorXd values;   // ascending
  MatrixXd vectors;  // columns, orthonormal
};

// Eigendecomposition of a real symmetric matrix via Householder
// tridiagonalization followed by implicit symmetric QL/QR with Wilkinson
// shifts (Eigen's SelfAdjointEigenSolver; 30-sweep cap per eigenvalue).
inline SymEig symEig(const MatrixXd& s) {
  if (s.rows() != s.cols()) {
    throw std::invalid_argument("symEig: matrix must be square, got " +
                                std::to_string(s.rows()) + "x" +
                                std::to_string(s.cols()));
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(s));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error(
        "symEig: QL iteration cap exceeded without convergence");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

// Nearest (Frobenius) PSD matrix: eigenvalues clamped at zero.
inline MatrixXd projectPsd(const MatrixXd& s) {
  const SymEig e = symEig(s);
  const VectorXd clamped = e.values.cwiseMax(0.0);
  return symmetrize(e.vectors * clamped.asDiagonal() * e.vectors.transpose());
}

// Moore-Penrose pseudoinverse of a symmetric PSD matrix; eigenvalues below
// rank_tol * lambda_max are treated as exact zeros so structurally-zero
// blocks (X_0 = 0) invert to zero rather than blowing up.
inline MatrixXd pinv(const MatrixXd& s, double rank_tol = 1e-10) {
  const SymEig e = symEig(s);
  const int d = static_cast<int>(e.values.size());
  if (d == 0) return s;
  const double lmax = e.values.maxCoeff();
  const double cut = rank_tol * std::max(lmax, 0.0);
  VectorXd inv = VectorXd::Zero(d);
  for (int i = 0; i < d; ++i) {
    if (e.values[i] > cut && e.values[i] > 0.0) inv[i] = 1.0 / e.values[i];
  }
  return symmetrize(e.vectors * inv.asDiagonal() * e.vectors.transpose());
}

// Symmetric vectorization. Coordinates enumerate the upper triangle
// column-by-column ((0,0), (0,1), (1,1), (0,2), ...); off-diagonal entries
// carry a sqrt(2) factor so that svec is an isometry:
// dot(svec(A), svec(B)) = trace(A*B).
inline int svecDim(int d) { return d * (d + 1) / 2; }

inline int svecSideFromLength(int len) {
  const int d = static_cast<int>((std::sqrt(8.0 * len + 1.0) - 1.0) / 2.0 + 0.5);
  if (svecDim(d) != len) {
    throw std::invalid_argument("smat: length " + std::to_string(len) +
                                " is not a triangular number");
  }
  return d;
}

inline VectorXd svec(const MatrixXd& s) {
  if (s.rows() != s.cols()) {
    throw std::invalid_argument("svec: matrix must be square");
  }
  const int d = static_cast<int>(s.rows());
  const double r2 = std::sqrt(2.0);
  VectorXd v(svecDim(d));
  int k = 0;
  for (int q = 0; q < d; ++q) {
    for (int p = 0; p <= q; ++p) {
      v[k++] = (p == q) ? s(p, q) : r2 * 0.5 * (s(p, q) + s(q, p));
    }
  }
  return v;
}

inline MatrixXd smat(const VectorXd& v) {
  const int d = svecSideFromLength(static_cast<int>(v.size()));
  const double inv_r2 = 1.0 / std::sqrt(2.0);
  MatrixXd s(d, d);
  int k = 0;
  for (int q = 0; q < d; ++q) {
    for (int p = 0; p <= q; ++p) {
      const double x = v[k++];
      if (p == q) {
        s(p, q) = x;
      } else {
        s(p, q) = x * inv_r2;
        s(q, p) = x * inv_r2;
      }
    }
  }
  return s;
}

}  // namespace covctl::numerics
