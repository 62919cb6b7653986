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
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "covctl/numerics.hpp"

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace nm = covctl::numerics;

MatrixXd randomSymmetric(int d, std::mt19937* gen) {
  std::normal_distribution<double> normal;
  MatrixXd s(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) s(i, j) = normal(*gen);
  }
  return nm::symmetrize(s);
}

MatrixXd randomPsd(int d, std::mt19937* gen) {
  std::normal_distribution<double> normal;
  MatrixXd g(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g(i, j) = normal(*gen);
  }
  return g * g.transpose();
}

// The worked-example optimum as printed (symmetric off-diagonal sign).
MatrixXd exampleVStar() {
  MatrixXd v(3, 3);
  v << 58.8, 131.2, -283.7,  //
      131.2, 309.5, -674.8,  //
      -283.7, -674.8, 1473.1;
  return v;
}

}  // namespace

TEST_CASE("symEig on fixed matrices") {
  SECTION("identity has unit eigenvalues") {
    const nm::SymEig e = nm::symEig(MatrixXd::Identity(3, 3));
    for (int i = 0; i < 3; ++i) CHECK(e.values[i] == Catch::Approx(1.0));
  }
  SECTION("exchange matrix has eigenvalues -1, 1") {
    MatrixXd s(2, 2);
    s << 0, 1, 1, 0;
    const nm::SymEig e = nm::symEig(s);
    CHECK(e.values[0] == Catch::Approx(-1.0));
    CHECK(e.values[1] == Catch::Approx(1.0));
  }
  SECTION("worked-example optimum is PSD up to printed rounding") {
    const nm::SymEig e = nm::symEig(exampleVStar());
    CHECK(e.values.minCoeff() >= -1e-6);
    // Frozen from an independent eigenvalue computation.
    CHECK(e.values[0] == Catch::Approx(1.26846953e-02).epsilon(1e-6));
    CHECK(e.values[1] == Catch::Approx(4.17142187).epsilon(1e-9));
    CHECK(e.values[2] == Catch::Approx(1837.21589).epsilon(1e-8));
  }
}

TEST_CASE("symEig reconstruction and orthogonality on random matrices") {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + static_cast<int>(gen() % 20);
    const MatrixXd s = randomSymmetric(d, &gen);
    const nm::SymEig e = nm::symEig(s);
    for (int i = 0; i + 1 < d; ++i) CHECK(e.values[i] <= e.values[i + 1]);
    const MatrixXd qtq = e.vectors.transpose() * e.vectors;
    CHECK(nm::maxAbs(qtq - MatrixXd::Identity(d, d)) <= 1e-12 * d);
    const MatrixXd rec =
        e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    CHECK(nm::maxAbs(rec - s) <= 1e-10 * (1.0 + nm::maxAbs(s)));
  }
}

TEST_CASE("projectPsd clamps negative eigenvalues") {
  SECTION("PSD input is a fixed point") {
    std::mt19937 gen(17);
    for (int trial = 0; trial < 20; ++trial) {
      const MatrixXd p = randomPsd(4, &gen);
      CHECK(nm::maxAbs(nm::projectPsd(p) - p) <= 1e-10 * (1.0 + nm::maxAbs(p)));
    }
  }
  SECTION("diag(-1, 2) projects to diag(0, 2)") {
    MatrixXd s = MatrixXd::Zero(2, 2);
    s(0, 0) = -1.0;
    s(1, 1) = 2.0;
    const MatrixXd p = nm::projectPsd(s);
    CHECK(p(0, 0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(p(1, 1) == Catch::Approx(2.0));
    CHECK(p(0, 1) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("idempotent with nonnegative trace") {
    std::mt19937 gen(23);
    for (int trial = 0; trial < 20; ++trial) {
      const MatrixXd s = randomSymmetric(5, &gen);
      const MatrixXd p = nm::projectPsd(s);
      CHECK(p.trace() >= 0.0);
      CHECK(nm::maxAbs(nm::projectPsd(p) - p) <= 1e-10 * (1.0 + nm::maxAbs(p)));
    }
  }
  SECTION("nearest PSD matrix in Frobenius norm") {
    std::mt19937 gen(29);
    const MatrixXd s = randomSymmetric(4, &gen);
    const MatrixXd proj = nm::projectPsd(s);
    const double d_proj = (proj - s).norm();
    for (int trial = 0; trial < 100; ++trial) {
      const MatrixXd p = randomPsd(4, &gen);
      CHECK(d_proj <= (p - s).norm() + 1e-12);
    }
  }
}

TEST_CASE("pinv is the Moore-Penrose pseudoinverse") {
  SECTION("diag(2, 0) -> diag(0.5, 0)") {
    MatrixXd s = MatrixXd::Zero(2, 2);
    s(0, 0) = 2.0;
    const MatrixXd p = nm::pinv(s);
    CHECK(p(0, 0) == Catch::Approx(0.5));
    CHECK(p(1, 1) == Catch::Approx(0.0).margin(1e-14));
  }
  SECTION("identity is self-inverse") {
    const MatrixXd p = nm::pinv(MatrixXd::Identity(3, 3));
    CHECK(nm::maxAbs(p - MatrixXd::Identity(3, 3)) <= 1e-14);
  }
  SECTION("worked-example X block inverts cleanly") {
    const MatrixXd x = exampleVStar().topLeftCorner(2, 2);
    const MatrixXd xinv = nm::pinv(x);
    CHECK(nm::maxAbs(x * xinv - MatrixXd::Identity(2, 2)) <= 1e-6);
    // Closed-form 2x2 inverse: adj(X)/det(X), det = 985.16.
    CHECK(xinv(0, 0) == Catch::Approx(309.5 / 985.16).epsilon(1e-10));
    CHECK(xinv(0, 1) == Catch::Approx(-131.2 / 985.16).epsilon(1e-10));
    CHECK(xinv(1, 1) == Catch::Approx(58.8 / 985.16).epsilon(1e-10));
  }
  SECTION("pseudoinverse identities on random PSD matrices") {
    std::mt19937 gen(31);
    for (int trial = 0; trial < 30; ++trial) {
      const int d = 1 + static_cast<int>(gen() % 20);
      MatrixXd s = randomPsd(d, &gen);
      if (trial % 3 == 0 && d > 1) {
        // Make it singular: zero out one eigendirection.
        nm::SymEig e = nm::symEig(s);
        e.values[0] = 0.0;
        s = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
        s = nm::symmetrize(s);
      }
      const MatrixXd p = nm::pinv(s);
      const double scale = 1.0 + nm::maxAbs(s);
      CHECK(nm::maxAbs(s * p * s - s) <= 1e-8 * scale);
      CHECK(nm::maxAbs(p * s * p - p) <= 1e-8 * (1.0 + nm::maxAbs(p)));
    }
  }
}

TEST_CASE("svec and smat form an isometric pair") {
  SECTION("dimensions") {
    CHECK(nm::svecDim(1) == 1);
    CHECK(nm::svecDim(3) == 6);
    CHECK(nm::svecSideFromLength(6) == 3);
    CHECK(nm::svecSideFromLength(21) == 6);
  }
  SECTION("roundtrip and inner product preservation") {
    std::mt19937 gen(37);
    for (int trial = 0; trial < 40; ++trial) {
      const int d = 1 + static_cast<int>(gen() % 6);
      const MatrixXd a = randomSymmetric(d, &gen);
      const MatrixXd b = randomSymmetric(d, &gen);
      const VectorXd va = nm::svec(a);
      const VectorXd vb = nm::svec(b);
      REQUIRE(va.size() == nm::svecDim(d));
      CHECK(nm::maxAbs(nm::smat(va) - a) <= 1e-14 * (1.0 + nm::maxAbs(a)));
      const double dot = va.dot(vb);
      const double tr = (a * b).trace();
      CHECK(dot == Catch::Approx(tr).epsilon(1e-12).margin(1e-12));
    }
  }
}
