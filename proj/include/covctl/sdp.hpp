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

// First-order solver for standard-form PSD-cone programs with affine
// equality constraints and linear trace inequalities:
//
//   min  sum_k <cost_k, V_k>
//   s.t. A(V) = b,  trace(Q_j V_{k_j}) <= bound_j,  V_k PSD.
//
// Trace inequalities are rewritten as equalities with nonnegative slack
// variables, and the resulting conic program min c'z s.t. Mz = b, z in K
// (K = PSD blocks x nonnegative orthant) is solved through its homogeneous
// self-dual embedding: an ADMM-style splitting alternates a projection onto
// the affine subspace encoding the KKT system (one cached sparse Cholesky
// factorization, reused every iteration) against the cone projection
// (projectPsd per block, clamp for slacks), with over-relaxation 1.6. The
// embedding solves for a ray, which makes convergence insensitive to the
// solution scale and yields infeasibility certificates for free.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "covctl/numerics.hpp"

namespace covctl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One equality row over the global svec coordinates of all blocks.
struct EqualityRow {
  std::vector<int> cols;
  std::vector<double> vals;
  double rhs = 0.0;
};

// trace(Q * V_block) <= bound.
struct TraceInequality {
  int block = 0;
  MatrixXd Q;
  double bound = 0.0;
};

struct ConicSdp {
  std::vector<int> block_dims;
  std::vector<MatrixXd> cost;  // one symmetric matrix per block
  std::vector<EqualityRow> equalities;
  std::vector<TraceInequality> inequalities;

  // Equilibration factors retained for unscaling (set by presolve).
  struct Scaling {
    bool applied = false;
    std::vector<double> row;        // per equality row, then per inequality
    std::vector<double> block_col;  // per block (uniform congruence scale)
    std::vector<double> slack_col;  // per inequality slack column
  };
  Scaling scaling;
  std::vector<std::string> presolve_log;

  int blocks() const { return static_cast<int>(block_dims.size()); }
  int svecOffset(int b) const {
    int off = 0;
    for (int i = 0; i < b; ++i) off += numerics::svecDim(block_dims[i]);
    return off;
  }
  int svecSize() const { return svecOffset(blocks()); }
};

struct SolverOptions {
  double eps_abs = 1e-7;
  double eps_rel = 1e-7;
  int max_iters = 200000;
  double rho = 1.0;            // primal/dual balance weight of the embedding
  bool adaptive_rho = true;    // x2 residual balancing, backed-off interval
  double psd_tolerance = 1e-7; // relative floor for returned-block eigenvalues
  bool infeasibility_certificates = true;
  int check_interval = 25;
  int ruiz_sweeps = 15;
};

enum class SolveState {
  optimal,
  primal_infeasible_suspected,
  iteration_cap,
  numerical_failure
};

inline const char* toString(SolveState s) {
  switch (s) {
    case SolveState::optimal: return "optimal";
    case SolveState::primal_infeasible_suspected:
      return "primal_infeasible_suspected";
    case SolveState::iteration_cap: return "iteration_cap";
    case SolveState::numerical_failure: return "numerical_failure";
  }
  return "numerical_failure";
}

struct TracePoint {
  int iteration = 0;
  double primal_residual = 0.0;  // normalized, in solver (scaled) space
  double iterate_norm = 0.0;     // norm of the extracted primal candidate
};

struct SolveStatus {
  SolveState state = SolveState::iteration_cap;
  double primal_residual = std::numeric_limits<double>::infinity();  // ||A(V)-b||
  double dual_residual = std::numeric_limits<double>::infinity();    // normalized
  double duality_gap = std::numeric_limits<double>::infinity();      // normalized
  double objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double rho_final = 1.0;
  std::vector<TracePoint> trace;
};

struct SolveResult {
  std::vector<MatrixXd> blocks;
  SolveStatus status;
};

// Independent post-hoc feasibility check: recomputes A(V) - b, inequality
// violations, block eigenvalues, and the objective from the raw problem data
// and the numerics module, trusting nothing from solver internals.
struct FeasibilityCheck {
  double equality_residual = 0.0;        // ||A(V) - b||_2
  double rhs_norm = 0.0;                 // ||b||_2
  double min_eigenvalue = 0.0;           // over all blocks
  double max_inequality_violation = 0.0; // max_j max(0, tr(QjV) - bound)
  double max_block_abs = 0.0;            // scale of the returned blocks
  double objective = 0.0;
};

inline FeasibilityCheck verifySolution(const ConicSdp& problem,
                                       const std::vector<MatrixXd>& blocks) {
  FeasibilityCheck chk;
  VectorXd zs(problem.svecSize());
  for (int b = 0; b < problem.blocks(); ++b) {
    zs.segment(problem.svecOffset(b), numerics::svecDim(problem.block_dims[b])) =
        numerics::svec(blocks[static_cast<size_t>(b)]);
  }
  double res2 = 0.0, rhs2 = 0.0;
  for (const auto& row : problem.equalities) {
    double acc = -row.rhs;
    for (size_t i = 0; i < row.cols.size(); ++i) {
      acc += row.vals[i] * zs[row.cols[i]];
    }
    res2 += acc * acc;
    rhs2 += row.rhs * row.rhs;
  }
  chk.equality_residual = std::sqrt(res2);
  chk.rhs_norm = std::sqrt(rhs2);
  double min_eig = std::numeric_limits<double>::infinity();
  for (int b = 0; b < problem.blocks(); ++b) {
    const auto& v = blocks[static_cast<size_t>(b)];
    min_eig = std::min(min_eig, numerics::symEig(v).values.minCoeff());
    chk.max_block_abs = std::max(chk.max_block_abs, numerics::maxAbs(v));
    chk.objective += (problem.cost[static_cast<size_t>(b)].array() *
                      v.array()).sum();
  }
  chk.min_eigenvalue = problem.blocks() ? min_eig : 0.0;
  for (const auto& ineq : problem.inequalities) {
    const double tr = (ineq.Q.array() *
                       blocks[static_cast<size_t>(ineq.block)].array()).sum();
    chk.max_inequality_violation =
        std::max(chk.max_inequality_violation, tr - ineq.bound);
  }
  chk.max_inequality_violation = std::max(chk.max_inequality_violation, 0.0);
  return chk;
}

namespace sdp_detail {

// Assembled internal form: equality rows followed by slack-augmented
// inequality rows, over nv = (svec coordinates) + (one slack per inequality).
struct Assembled {
  int nsvec = 0;
  int nslack = 0;
  int nv = 0;
  std::vector<int> block_dims;
  std::vector<int> block_off;  // svec offsets, size blocks+1
  std::vector<EqualityRow> rows;
  VectorXd cost;
  std::vector<std::string> log;
};

inline void sortRow(EqualityRow* row) {
  std::vector<size_t> idx(row->cols.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return row->cols[a] < row->cols[b];
  });
  std::vector<int> cols(idx.size());
  std::vector<double> vals(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    cols[i] = row->cols[idx[i]];
    vals[i] = row->vals[idx[i]];
  }
  row->cols = std::move(cols);
  row->vals = std::move(vals);
}

inline Assembled assemble(const ConicSdp& problem) {
  Assembled a;
  a.block_dims = problem.block_dims;
  a.block_off.resize(problem.block_dims.size() + 1, 0);
  for (size_t b = 0; b < problem.block_dims.size(); ++b) {
    a.block_off[b + 1] = a.block_off[b] + numerics::svecDim(problem.block_dims[b]);
  }
  a.nsvec = a.block_off.back();
  a.nslack = static_cast<int>(problem.inequalities.size());
  a.nv = a.nsvec + a.nslack;

  a.cost = VectorXd::Zero(a.nv);
  for (size_t b = 0; b < problem.cost.size(); ++b) {
    a.cost.segment(a.block_off[b], numerics::svecDim(problem.block_dims[b])) =
        numerics::svec(problem.cost[b]);
  }

  a.rows = problem.equalities;
  for (auto& row : a.rows) sortRow(&row);

  // Drop exact duplicates and all-zero rows with zero right-hand side.
  std::vector<EqualityRow> kept;
  for (size_t r = 0; r < a.rows.size(); ++r) {
    const auto& row = a.rows[r];
    if (row.cols.empty() && row.rhs == 0.0) {
      a.log.push_back("presolve: dropped empty equality row " +
                      std::to_string(r));
      continue;
    }
    bool dup = false;
    for (const auto& prev : kept) {
      if (prev.cols == row.cols && prev.vals == row.vals &&
          prev.rhs == row.rhs) {
        dup = true;
        break;
      }
    }
    if (dup) {
      a.log.push_back("presolve: dropped duplicate equality row " +
                      std::to_string(r));
      continue;
    }
    kept.push_back(row);
  }
  a.rows = std::move(kept);

  // Rank check (small problems only): drop linearly dependent rows found by
  // column-pivoted QR on the transposed equality map.
  const int meq0 = static_cast<int>(a.rows.size());
  if (meq0 > 0 && meq0 <= 200 && a.nv <= 1000) {
    MatrixXd dense = MatrixXd::Zero(a.nv, meq0);
    for (int r = 0; r < meq0; ++r) {
      for (size_t i = 0; i < a.rows[r].cols.size(); ++i) {
        dense(a.rows[r].cols[i], r) = a.rows[r].vals[i];
      }
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(dense);
    qr.setThreshold(1e-12);
    const int rank = static_cast<int>(qr.rank());
    if (rank < meq0) {
      std::vector<bool> keep(meq0, false);
      const auto& perm = qr.colsPermutation().indices();
      for (int i = 0; i < rank; ++i) keep[perm[i]] = true;
      std::vector<EqualityRow> independent;
      for (int r = 0; r < meq0; ++r) {
        if (keep[r]) {
          independent.push_back(a.rows[r]);
        } else {
          a.log.push_back("presolve: dropped dependent equality row " +
                          std::to_string(r));
        }
      }
      a.rows = std::move(independent);
    }
  } else if (meq0 > 200 || a.nv > 1000) {
    a.log.push_back("presolve: rank check skipped (problem too large)");
  }

  // Slack-augmented inequality rows.
  for (size_t j = 0; j < problem.inequalities.size(); ++j) {
    const auto& ineq = problem.inequalities[j];
    const VectorXd q = numerics::svec(ineq.Q);
    EqualityRow row;
    const int off = a.block_off[static_cast<size_t>(ineq.block)];
    for (int i = 0; i < q.size(); ++i) {
      if (q[i] != 0.0) {
        row.cols.push_back(off + i);
        row.vals.push_back(q[i]);
      }
    }
    row.cols.push_back(a.nsvec + static_cast<int>(j));
    row.vals.push_back(1.0);
    row.rhs = ineq.bound;
    a.rows.push_back(std::move(row));
  }
  return a;
}

// Ruiz equilibration: alternately divide rows and columns by the square
// roots of their sup norms. Column factors are made uniform within each PSD
// block (geometric mean) so the column scaling acts as a congruence c*I and
// preserves the cone; slack columns scale individually.
struct RuizFactors {
  VectorXd drow;  // size rows
  VectorXd ecol;  // size nv; z = ecol .* z_scaled
};

inline RuizFactors ruiz(Assembled* a, int sweeps) {
  const int mrows = static_cast<int>(a->rows.size());
  RuizFactors f;
  f.drow = VectorXd::Ones(mrows);
  f.ecol = VectorXd::Ones(a->nv);
  const int nblocks = static_cast<int>(a->block_dims.size());
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int r = 0; r < mrows; ++r) {
      double mx = 0.0;
      for (double v : a->rows[r].vals) mx = std::max(mx, std::abs(v));
      if (mx <= 0.0) continue;
      const double s = std::sqrt(mx);
      for (double& v : a->rows[r].vals) v /= s;
      a->rows[r].rhs /= s;
      f.drow[r] /= s;
    }
    VectorXd cmax = VectorXd::Zero(a->nv);
    for (const auto& row : a->rows) {
      for (size_t i = 0; i < row.cols.size(); ++i) {
        cmax[row.cols[i]] = std::max(cmax[row.cols[i]], std::abs(row.vals[i]));
      }
    }
    VectorXd cn(a->nv);
    for (int c = 0; c < a->nv; ++c) {
      cn[c] = cmax[c] > 0.0 ? std::sqrt(cmax[c]) : 1.0;
    }
    for (int b = 0; b < nblocks; ++b) {
      const int lo = a->block_off[b], hi = a->block_off[b + 1];
      double logsum = 0.0;
      for (int c = lo; c < hi; ++c) logsum += std::log(cn[c]);
      const double g = std::exp(logsum / std::max(1, hi - lo));
      for (int c = lo; c < hi; ++c) cn[c] = g;
    }
    for (auto& row : a->rows) {
      for (size_t i = 0; i < row.cols.size(); ++i) {
        row.vals[i] /= cn[row.cols[i]];
      }
    }
    for (int c = 0; c < a->nv; ++c) f.ecol[c] /= cn[c];
  }
  return f;
}

}  // namespace sdp_detail

// Presolve as a standalone pass: duplicate/dependent-row removal and Ruiz
// equilibration, with factors retained on the returned problem. solve()
// performs the same pass internally on the raw problem it is given.
inline ConicSdp presolve(const ConicSdp& problem) {
  sdp_detail::Assembled a = sdp_detail::assemble(problem);
  const int meq = static_cast<int>(a.rows.size()) - a.nslack;
  sdp_detail::RuizFactors f = sdp_detail::ruiz(&a, SolverOptions{}.ruiz_sweeps);

  ConicSdp out;
  out.block_dims = problem.block_dims;
  out.presolve_log = a.log;
  out.scaling.applied = true;
  for (int r = 0; r < static_cast<int>(a.rows.size()); ++r) {
    out.scaling.row.push_back(f.drow[r]);
  }
  for (int b = 0; b < problem.blocks(); ++b) {
    out.scaling.block_col.push_back(f.ecol[a.block_off[b]]);
  }
  for (int j = 0; j < a.nslack; ++j) {
    out.scaling.slack_col.push_back(f.ecol[a.nsvec + j]);
  }

  // Scaled cost: c_scaled = ecol .* c (so that c_scaled' z_scaled = c' z).
  for (int b = 0; b < problem.blocks(); ++b) {
    out.cost.push_back(out.scaling.block_col[static_cast<size_t>(b)] *
                       problem.cost[static_cast<size_t>(b)]);
  }
  for (int r = 0; r < meq; ++r) {
    out.equalities.push_back(a.rows[static_cast<size_t>(r)]);
  }
  for (int j = 0; j < a.nslack; ++j) {
    const auto& src = problem.inequalities[static_cast<size_t>(j)];
    TraceInequality ineq;
    ineq.block = src.block;
    const double d = f.drow[meq + j];
    const double e = out.scaling.block_col[static_cast<size_t>(src.block)];
    ineq.Q = d * e * src.Q;
    ineq.bound = d * src.bound;
    out.inequalities.push_back(std::move(ineq));
  }
  return out;
}

// Certificate-strength score from a capped run's residual trace: over the
// last quarter of the trace, the fraction of checkpoints whose normalized
// primal residual is stuck above 100x tolerance (near the window median)
// times the fraction of consecutive iterate-norm increases. Near 1 means the
// equality system looks infeasible; near 0 means plain slow convergence.
inline double detectInfeasibility(const std::vector<TracePoint>& trace,
                                  double tol) {
  const int n = static_cast<int>(trace.size());
  if (n < 8) return 0.0;
  const int w = std::max(2, n / 4);
  const int start = n - w;

  std::vector<double> finite_rp;
  for (int i = start; i < n; ++i) {
    if (std::isfinite(trace[i].primal_residual)) {
      finite_rp.push_back(trace[i].primal_residual);
    }
  }
  double med = std::numeric_limits<double>::infinity();
  if (!finite_rp.empty()) {
    const size_t mid = finite_rp.size() / 2;
    std::nth_element(finite_rp.begin(), finite_rp.begin() + mid,
                     finite_rp.end());
    med = finite_rp[mid];
  }

  int stagnant = 0;
  for (int i = start; i < n; ++i) {
    const double rp = trace[i].primal_residual;
    if (!std::isfinite(rp)) {
      ++stagnant;
    } else if (rp > 100.0 * tol &&
               (!std::isfinite(med) || std::abs(rp - med) <= 0.5 * med)) {
      ++stagnant;
    }
  }
  int growing = 0;
  for (int i = start; i + 1 < n; ++i) {
    const double a = trace[i].iterate_norm;
    const double b = trace[i + 1].iterate_norm;
    if (!std::isfinite(b) || b >= a * (1.0 - 1e-9)) ++growing;
  }
  const double frac_stagnant = static_cast<double>(stagnant) / w;
  const double frac_growing = w > 1
      ? static_cast<double>(growing) / (w - 1) : 0.0;
  return frac_stagnant * frac_growing;
}

inline SolveResult solve(const ConicSdp& problem,
                         const SolverOptions& opts = {}) {
  using sdp_detail::Assembled;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  SolveResult result;
  result.status.rho_final = opts.rho;

  Assembled a = sdp_detail::assemble(problem);
  sdp_detail::RuizFactors f = sdp_detail::ruiz(&a, opts.ruiz_sweeps);
  const int mrows = static_cast<int>(a.rows.size());
  const int nv = a.nv;
  const int nblocks = static_cast<int>(a.block_dims.size());

  // Scaled data: M (mrows x nv), b, c. The cone section of the embedding
  // appends the rows -I (cone membership of z itself), which need no
  // further scaling.
  Eigen::SparseMatrix<double> M(mrows, nv);
  {
    std::vector<Eigen::Triplet<double>> trips;
    for (int r = 0; r < mrows; ++r) {
      for (size_t i = 0; i < a.rows[r].cols.size(); ++i) {
        trips.emplace_back(r, a.rows[r].cols[i], a.rows[r].vals[i]);
      }
    }
    M.setFromTriplets(trips.begin(), trips.end());
  }
  VectorXd b_s(mrows);
  for (int r = 0; r < mrows; ++r) b_s[r] = a.rows[r].rhs;
  // With columns scaled as z = ecol .* z_scaled, the scaled cost is ecol .* c.
  const VectorXd c_s = a.cost.cwiseProduct(f.ecol);

  // Primal/dual balance: rho enters as the relative normalization of b and c.
  double rho = opts.rho;
  double sigma_b = std::sqrt(rho) / std::max(1e-12, b_s.norm());
  double sigma_c = (1.0 / std::sqrt(rho)) / std::max(1e-12, c_s.norm());
  VectorXd bh = sigma_b * b_s;         // embedded rhs, equality section
  VectorXd ch = sigma_c * c_s;         // embedded cost

  // Cached factorization of I + Ahat' Ahat = 2I + M'M.
  Eigen::SparseMatrix<double> M0;
  {
    Eigen::SparseMatrix<double> ident(nv, nv);
    ident.setIdentity();
    M0 = Eigen::SparseMatrix<double>(M.transpose()) * M;
    M0 += 2.0 * ident;
  }
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;
  llt.compute(M0);
  if (llt.info() != Eigen::Success) {
    result.status.state = SolveState::numerical_failure;
    return result;
  }

  const int nr = mrows + nv;  // embedded dual/slack dimension
  // (I + K)^{-1} pieces, with K the skew KKT operator of the embedding.
  auto applyMinv = [&](const VectorXd& w1, const VectorXd& w2, VectorXd* zx,
                       VectorXd* zy) {
    // w2 stacks the equality section (mrows) and the cone section (nv).
    VectorXd rhs = w1 - (M.transpose() * w2.head(mrows) - w2.tail(nv));
    *zx = llt.solve(rhs);
    zy->resize(nr);
    zy->head(mrows) = w2.head(mrows) + M * (*zx);
    zy->tail(nv) = w2.tail(nv) - (*zx);
  };

  VectorXd bhat_full = VectorXd::Zero(nr);
  bhat_full.head(mrows) = bh;
  VectorXd gx, gy;
  double den = 0.0;
  auto refreshRankOne = [&]() {
    applyMinv(ch, bhat_full, &gx, &gy);
    den = 1.0 + ch.dot(gx) + bhat_full.dot(gy);
  };
  refreshRankOne();

  // Iterates of the embedding. x: primal section, y: dual/slack section,
  // tau/kappa: homogenizing pair. v is the Moreau complement of u.
  VectorXd x = VectorXd::Zero(nv);
  VectorXd y = VectorXd::Zero(nr);
  double tau = 1.0;
  VectorXd vx = VectorXd::Zero(nv);
  VectorXd vs = VectorXd::Zero(nr);
  double kappa = 1.0;

  const double alpha = 1.6;  // over-relaxation
  const double eps = opts.eps_abs;
  const int meq = mrows - a.nslack;

  // Raw-data references for the literal optimality gate.
  const double b_raw_norm = [&problem]() {
    double s = 0.0;
    for (const auto& row : problem.equalities) s += row.rhs * row.rhs;
    return std::sqrt(s);
  }();

  // Workspaces for the cone projection.
  std::vector<MatrixXd> blk;
  blk.reserve(static_cast<size_t>(nblocks));
  for (int b = 0; b < nblocks; ++b) {
    blk.emplace_back(a.block_dims[b], a.block_dims[b]);
  }

  auto projectCone = [&](VectorXd* section) {
    for (int b = 0; b < nblocks; ++b) {
      const int off = a.block_off[b];
      const int len = numerics::svecDim(a.block_dims[b]);
      const MatrixXd s = numerics::smat(section->segment(off, len));
      section->segment(off, len) = numerics::svec(numerics::projectPsd(s));
    }
    for (int c = a.nsvec; c < nv; ++c) {
      (*section)[c] = std::max((*section)[c], 0.0);
    }
  };

  auto extractBlocks = [&](const VectorXd& z) {
    std::vector<MatrixXd> out;
    out.reserve(static_cast<size_t>(nblocks));
    for (int b = 0; b < nblocks; ++b) {
      const int off = a.block_off[b];
      const int len = numerics::svecDim(a.block_dims[b]);
      out.push_back(numerics::smat(z.segment(off, len)));
    }
    return out;
  };

  SolveStatus& st = result.status;
  st.state = SolveState::iteration_cap;
  int last_adapt = 0;
  int adapt_gap = 50;  // doubles after each adaptation to prevent thrashing

  VectorXd wx(nv), wy(nr), px, py, rx(nv), ry(nr), xt(nv);
  int it = 0;
  for (it = 1; it <= opts.max_iters; ++it) {
    wx = x + vx;
    wy = y + vs;
    const double wt = tau + kappa;
    applyMinv(wx, wy, &px, &py);
    const double tt = (wt + ch.dot(px) + bhat_full.dot(py)) / den;
    px -= gx * tt;
    py -= gy * tt;

    rx = alpha * px + (1.0 - alpha) * x - vx;
    ry = alpha * py + (1.0 - alpha) * y - vs;
    const double rt = alpha * tt + (1.0 - alpha) * tau - kappa;

    x = rx;
    y = ry;
    VectorXd cone = y.tail(nv);
    projectCone(&cone);
    y.tail(nv) = cone;
    tau = std::max(rt, 0.0);

    vx = x - rx;  // zero; kept for clarity of the splitting
    vs = y - ry;
    kappa = tau - rt;

    if (it % opts.check_interval != 0) continue;

    if (!std::isfinite(x.norm()) || !std::isfinite(y.norm()) ||
        !std::isfinite(tau)) {
      st.state = SolveState::numerical_failure;
      break;
    }

    double rp = kInf, rd = kInf, gap = kInf, cand_norm = kInf;
    if (tau > 1e-12) {
      xt = x / tau;
      // Primal residual of the extracted candidate in scaled space:
      // [M; -I] xt + vs/tau - [bh; 0].
      VectorXd pr(nr);
      pr.head(mrows) = M * xt - bh;
      pr.tail(nv) = -xt;
      pr += vs / tau;
      rp = pr.norm() / (1.0 + bh.norm());
      VectorXd dr = M.transpose() * y.head(mrows) / tau -
                    y.tail(nv) / tau + ch;
      rd = dr.norm() / (1.0 + ch.norm());
      const double pobj = ch.dot(xt);
      const double dobj = bhat_full.dot(y) / tau;
      gap = std::abs(pobj + dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
      cand_norm = xt.norm();
    }
    st.trace.push_back({it, rp, cand_norm});

    if (rp < eps && rd < eps && gap < eps) {
      // Literal optimality gate on the raw data: recompute feasibility of
      // the unscaled candidate with the independent checker.
      VectorXd z = f.ecol.cwiseProduct(x / tau) / sigma_b;
      const auto blocks = extractBlocks(z);
      const FeasibilityCheck chk = verifySolution(problem, blocks);
      const bool raw_ok =
          chk.equality_residual <= opts.eps_abs + opts.eps_rel * b_raw_norm &&
          chk.max_inequality_violation <= opts.eps_abs &&
          chk.min_eigenvalue >=
              -opts.psd_tolerance * (1.0 + chk.max_block_abs);
      if (raw_ok) {
        st.state = SolveState::optimal;
        break;
      }
    }

    if (opts.infeasibility_certificates) {
      const double bty = bhat_full.dot(y);
      if (bty < -1e-12) {
        const double cert =
            (M.transpose() * y.head(mrows) - y.tail(nv)).norm();
        if (cert <= eps * (-bty)) {
          st.state = SolveState::primal_infeasible_suspected;
          break;
        }
      }
    }

    if (opts.adaptive_rho && std::isfinite(rp) && std::isfinite(rd) &&
        it - last_adapt >= adapt_gap && (rp > 10.0 * rd || rd > 10.0 * rp)) {
      const double k = rp > 10.0 * rd ? 2.0 : 0.5;
      rho *= k * k;
      sigma_b *= k;
      sigma_c /= k;
      bh *= k;
      bhat_full.head(mrows) = bh;
      ch /= k;
      x *= k;
      vx *= k;
      vs *= k;
      y /= k;
      refreshRankOne();
      last_adapt = it;
      adapt_gap *= 2;
    }
  }
  st.iterations = std::min(it, opts.max_iters);
  st.rho_final = rho;

  if (st.state == SolveState::numerical_failure) {
    return result;
  }
  if (st.state == SolveState::primal_infeasible_suspected) {
    return result;
  }

  // Extract and unscale the primal candidate, then report residuals of the
  // returned value measured on the raw data.
  const double tau_safe = std::max(tau, 1e-300);
  VectorXd z = f.ecol.cwiseProduct(x / tau_safe) / sigma_b;
  if (!z.allFinite()) {
    st.state = SolveState::numerical_failure;
    return result;
  }
  result.blocks = extractBlocks(z);
  const FeasibilityCheck chk = verifySolution(problem, result.blocks);
  st.primal_residual = chk.equality_residual;
  st.objective = chk.objective;
  {
    VectorXd dr = M.transpose() * y.head(mrows) / tau_safe -
                  y.tail(nv) / tau_safe + ch;
    st.dual_residual = dr.norm() / (1.0 + ch.norm());
    const double pobj = ch.dot(x / tau_safe);
    const double dobj = bhat_full.dot(y) / tau_safe;
    st.duality_gap =
        std::abs(pobj + dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    // Dual objective of the original program; the embedding's equality-row
    // multipliers map to -y_eq/(tau sigma_c), and Ruiz row/column scaling
    // leaves the pairing b'y invariant.
    st.dual_objective = -bh.dot(y.head(mrows)) / (tau_safe * sigma_b * sigma_c);
  }
  return result;
}

}  // namespace covctl
