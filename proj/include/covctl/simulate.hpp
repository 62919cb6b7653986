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

// Monte Carlo closed-loop simulation under pluggable unit-variance noise
// distributions. Reproducibility comes from counter-based splittable RNG
// streams, one per (run, channel), so runs can be evaluated in parallel and
// in any order without changing a single sample.
//
// Note on estimator quality: mean-square statistics have finite sampling
// variance only when the closed loop has finite fourth moments; all three
// built-in families have finite fourth moments themselves (gaussian 3,
// rademacher 1, uniform 9/5), but a closed loop operating close to its
// mean-square stability margin can still amplify them without bound.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <utility>
#include <vector>

#include "covctl/model.hpp"
#include "covctl/numerics.hpp"

namespace covctl {

// Splittable counter-based stream: the (seed, run, channel) triple is hashed
// into an independent splitmix64 sequence.
class NoiseStream {
 public:
  NoiseStream(uint64_t seed, uint64_t run, uint64_t channel) {
    uint64_t h = mix(seed + kGamma);
    h = mix(h ^ (run + kGamma));
    h = mix(h ^ (channel + kGamma));
    state_ = h;
  }

  uint64_t nextU64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double nextU01() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }

  // One zero-mean unit-variance draw from the requested family.
  double nextUnit(DistributionFamily family) {
    switch (family) {
      case DistributionFamily::gaussian: {
        if (have_spare_) {
          have_spare_ = false;
          return spare_;
        }
        const double u1 = 1.0 - nextU01();  // (0, 1]
        const double u2 = nextU01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
      }
      case DistributionFamily::rademacher:
        return (nextU64() & 1ull) ? 1.0 : -1.0;
      case DistributionFamily::uniform:
        return (2.0 * nextU01() - 1.0) * kSqrt3;
    }
    return 0.0;
  }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr double kSqrt3 = 1.7320508075688772;
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }
  uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline VectorXd sampleUnitNoise(DistributionFamily family, int count,
                                NoiseStream* stream) {
  VectorXd v(count);
  for (int i = 0; i < count; ++i) v[i] = stream->nextUnit(family);
  return v;
}

struct RolloutConfig {
  int steps = 2000;
  int runs = 200;
  uint64_t seed = 0;
  int threads = 1;
};

struct EmpiricalStats {
  int runs = 0;
  int steps = 0;
  int burn_in = 0;
  double mean_cost = std::numeric_limits<double>::quiet_NaN();
  double cost_se = std::numeric_limits<double>::quiet_NaN();
  MatrixXd vhat;     // empirical stationary joint covariance
  MatrixXd vhat_se;  // per-entry standard error across runs
  MatrixXd xv_mean;  // empirical E[x v'] (state vs injected noise)
  MatrixXd xv_se;
  std::vector<double> run_costs;
  std::vector<MatrixXd> run_vhat;
  bool overflowed = false;
  int overflow_run = -1;
  int overflow_step = -1;

  // Mean and standard error of tr(Q Vhat) across runs.
  std::pair<double, double> traceStat(const MatrixXd& q) const {
    const int r = static_cast<int>(run_vhat.size());
    double mean = 0.0;
    std::vector<double> vals(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
      vals[static_cast<size_t>(i)] = (q.array() * run_vhat[static_cast<size_t>(i)].array()).sum();
      mean += vals[static_cast<size_t>(i)];
    }
    mean /= std::max(1, r);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double se =
        r > 1 ? std::sqrt(var / (r - 1) / r) : std::numeric_limits<double>::quiet_NaN();
    return {mean, se};
  }
};

namespace sim_detail {

// Channel layout per run: 0 additive, 1..M multiplicative, M+1 injected.
inline constexpr uint64_t kAdditiveChannel = 0;

// Pi = L L' by eigendecomposition; eigenvalues below the -1e-10 clamp are
// treated as zero so a zero matrix factors to exactly zero (v_k == 0).
inline MatrixXd factorNoiseCovariance(const MatrixXd& pi) {
  if (numerics::maxAbs(pi) == 0.0) return MatrixXd::Zero(pi.rows(), pi.cols());
  const numerics::SymEig e = numerics::symEig(pi);
  VectorXd lam = e.values;
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-10) {
      throw std::invalid_argument(
          "rollout: injected-noise covariance is not PSD");
    }
    lam[i] = lam[i] > 0.0 ? std::sqrt(lam[i]) : 0.0;
  }
  return e.vectors * lam.asDiagonal();
}

struct RunResult {
  double cost = 0.0;
  MatrixXd vhat;
  MatrixXd xv;
  bool overflowed = false;
  int overflow_step = -1;
};

inline RunResult simulateRun(const SystemModel& model,
                             const AffinePolicy& policy,
                             const RolloutConfig& config, int run,
                             const std::vector<MatrixXd>& noise_factors) {
  const int n = model.n();
  const int m = model.m();
  const int num_mult = static_cast<int>(model.multiplicative.size());
  const int burn = config.steps / 10;

  NoiseStream additive(config.seed, static_cast<uint64_t>(run),
                       kAdditiveChannel);
  std::vector<NoiseStream> mult;
  for (int i = 0; i < num_mult; ++i) {
    mult.emplace_back(config.seed, static_cast<uint64_t>(run),
                      static_cast<uint64_t>(1 + i));
  }
  NoiseStream injected(config.seed, static_cast<uint64_t>(run),
                       static_cast<uint64_t>(1 + num_mult));

  RunResult res;
  res.vhat = MatrixXd::Zero(n + m, n + m);
  res.xv = MatrixXd::Zero(n, m);

  VectorXd x = VectorXd::Zero(n);
  VectorXd xi(n + m);
  const MatrixXd g = model.outputBlock();
  double cost_acc = 0.0;
  int samples = 0;

  for (int k = 0; k < config.steps; ++k) {
    const MatrixXd& kk = policy.gainAt(k);
    const MatrixXd& lfac =
        noise_factors.size() == 1
            ? noise_factors.front()
            : noise_factors[static_cast<size_t>(k)];
    const VectorXd v = lfac * sampleUnitNoise(model.noise.multiplicative, m,
                                              &injected);
    const VectorXd u = kk * x + v;
    xi.head(n) = x;
    xi.tail(m) = u;

    if (k >= burn) {
      const VectorXd z = g * xi;
      cost_acc += z.squaredNorm();
      res.vhat += xi * xi.transpose();
      res.xv += x * v.transpose();
      ++samples;
    }

    VectorXd xnext = model.A * x + model.B * u;
    for (int i = 0; i < num_mult; ++i) {
      xnext += mult[static_cast<size_t>(i)].nextUnit(
                   model.noise.multiplicative) *
               (model.multiplicative[static_cast<size_t>(i)] * x);
    }
    xnext += sampleUnitNoise(model.noise.additive, n, &additive);
    x = xnext;
    if (x.norm() > 1e12) {
      res.overflowed = true;
      res.overflow_step = k;
      break;
    }
  }
  if (samples > 0) {
    res.cost = cost_acc / samples;
    res.vhat /= samples;
    res.xv /= samples;
  }
  return res;
}

}  // namespace sim_detail

// Closed-loop Monte Carlo under the model's noise families. The injected
// noise v_k is drawn through the factor of Pi_k regardless of family, so
// Pi = 0 reproduces the pure linear policy exactly. The first 10% of steps
// are discarded as burn-in for all stationary statistics.
inline EmpiricalStats rollout(const SystemModel& model,
                              const AffinePolicy& policy,
                              const RolloutConfig& config) {
  if (config.steps < 1 || config.runs < 1) {
    throw std::invalid_argument("rollout: steps and runs must be positive");
  }
  if (!policy.stationary() &&
      static_cast<int>(policy.gains.size()) < config.steps) {
    throw std::invalid_argument(
        "rollout: policy horizon shorter than config.steps");
  }
  const int n = model.n();
  const int m = model.m();

  std::vector<MatrixXd> noise_factors;
  if (policy.noise_covariances.size() == 1) {
    noise_factors.push_back(
        sim_detail::factorNoiseCovariance(policy.noise_covariances.front()));
  } else {
    for (const auto& pi : policy.noise_covariances) {
      noise_factors.push_back(sim_detail::factorNoiseCovariance(pi));
    }
  }

  std::vector<sim_detail::RunResult> results(
      static_cast<size_t>(config.runs));
  const int threads = std::max(1, config.threads);
  if (threads == 1) {
    for (int r = 0; r < config.runs; ++r) {
      results[static_cast<size_t>(r)] =
          sim_detail::simulateRun(model, policy, config, r, noise_factors);
    }
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        for (int r = t; r < config.runs; r += threads) {
          results[static_cast<size_t>(r)] =
              sim_detail::simulateRun(model, policy, config, r, noise_factors);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  EmpiricalStats stats;
  stats.runs = config.runs;
  stats.steps = config.steps;
  stats.burn_in = config.steps / 10;
  stats.vhat = MatrixXd::Zero(n + m, n + m);
  stats.xv_mean = MatrixXd::Zero(n, m);

  // Fixed reduction order: run 0, 1, 2, ... regardless of thread schedule.
  for (int r = 0; r < config.runs; ++r) {
    const auto& res = results[static_cast<size_t>(r)];
    if (res.overflowed) {
      stats.overflowed = true;
      stats.overflow_run = r;
      stats.overflow_step = res.overflow_step;
      return stats;
    }
    stats.run_costs.push_back(res.cost);
    stats.run_vhat.push_back(res.vhat);
    stats.vhat += res.vhat;
    stats.xv_mean += res.xv;
  }
  stats.vhat /= config.runs;
  stats.xv_mean /= config.runs;

  double mean = 0.0;
  for (double c : stats.run_costs) mean += c;
  mean /= config.runs;
  double var = 0.0;
  for (double c : stats.run_costs) var += (c - mean) * (c - mean);
  stats.mean_cost = mean;
  stats.cost_se = config.runs > 1
                      ? std::sqrt(var / (config.runs - 1) / config.runs)
                      : std::numeric_limits<double>::quiet_NaN();

  stats.vhat_se = MatrixXd::Zero(n + m, n + m);
  stats.xv_se = MatrixXd::Zero(n, m);
  if (config.runs > 1) {
    MatrixXd vvar = MatrixXd::Zero(n + m, n + m);
    for (int r = 0; r < config.runs; ++r) {
      const MatrixXd d = results[static_cast<size_t>(r)].vhat - stats.vhat;
      vvar += d.cwiseProduct(d);
    }
    stats.vhat_se =
        (vvar / (config.runs - 1) / config.runs).cwiseSqrt();
    MatrixXd xvvar = MatrixXd::Zero(n, m);
    for (int r = 0; r < config.runs; ++r) {
      const MatrixXd d = results[static_cast<size_t>(r)].xv - stats.xv_mean;
      xvvar += d.cwiseProduct(d);
    }
    stats.xv_se = (xvvar / (config.runs - 1) / config.runs).cwiseSqrt();
  }
  return stats;
}

struct RecursionCheck {
  double max_deviation = 0.0;  // max over steps and entries, SE-normalized
  int argmax_step = -1;
  std::vector<double> per_step;
  bool overflowed = false;
  int overflow_run = -1;
  int overflow_step = -1;
};

// Statistical check of the covariance recursion: along simulated paths the
// per-run matrices
//   D_k = x_{k+1} x_{k+1}' - [A B] xi_k xi_k' [A B]' - sum_i A_i x_k x_k' A_i' - I
// have zero mean for every k; the deviation of their run-average from zero,
// normalized by its standard error, must stay within the statistical band.
inline RecursionCheck verifyRecursion(const SystemModel& model,
                                      const AffinePolicy& policy,
                                      const RolloutConfig& config) {
  if (config.steps < 1 || config.runs < 2) {
    throw std::invalid_argument("verifyRecursion: needs steps >= 1, runs >= 2");
  }
  const int n = model.n();
  const int m = model.m();
  const int num_mult = static_cast<int>(model.multiplicative.size());
  const MatrixXd f = model.dynamicsBlock();

  std::vector<MatrixXd> noise_factors;
  if (policy.noise_covariances.size() == 1) {
    noise_factors.push_back(
        sim_detail::factorNoiseCovariance(policy.noise_covariances.front()));
  } else {
    for (const auto& pi : policy.noise_covariances) {
      noise_factors.push_back(sim_detail::factorNoiseCovariance(pi));
    }
  }

  // Welford accumulators per step and entry, reduced over runs in order.
  std::vector<MatrixXd> mean(static_cast<size_t>(config.steps),
                             MatrixXd::Zero(n, n));
  std::vector<MatrixXd> m2(static_cast<size_t>(config.steps),
                           MatrixXd::Zero(n, n));
  RecursionCheck out;

  for (int r = 0; r < config.runs; ++r) {
    NoiseStream additive(config.seed, static_cast<uint64_t>(r),
                         sim_detail::kAdditiveChannel);
    std::vector<NoiseStream> mult;
    for (int i = 0; i < num_mult; ++i) {
      mult.emplace_back(config.seed, static_cast<uint64_t>(r),
                        static_cast<uint64_t>(1 + i));
    }
    NoiseStream injected(config.seed, static_cast<uint64_t>(r),
                         static_cast<uint64_t>(1 + num_mult));

    VectorXd x = VectorXd::Zero(n);
    VectorXd xi(n + m);
    for (int k = 0; k < config.steps; ++k) {
      const MatrixXd& lfac = noise_factors.size() == 1
                                 ? noise_factors.front()
                                 : noise_factors[static_cast<size_t>(k)];
      const VectorXd v =
          lfac * sampleUnitNoise(model.noise.multiplicative, m, &injected);
      const VectorXd u = policy.gainAt(k) * x + v;
      xi.head(n) = x;
      xi.tail(m) = u;

      VectorXd xnext = model.A * x + model.B * u;
      for (int i = 0; i < num_mult; ++i) {
        xnext += mult[static_cast<size_t>(i)].nextUnit(
                     model.noise.multiplicative) *
                 (model.multiplicative[static_cast<size_t>(i)] * x);
      }
      xnext += sampleUnitNoise(model.noise.additive, n, &additive);

      MatrixXd d = xnext * xnext.transpose() -
                   f * (xi * xi.transpose()) * f.transpose() -
                   MatrixXd::Identity(n, n);
      for (int i = 0; i < num_mult; ++i) {
        const MatrixXd& ai = model.multiplicative[static_cast<size_t>(i)];
        d -= ai * (x * x.transpose()) * ai.transpose();
      }
      const MatrixXd delta = d - mean[static_cast<size_t>(k)];
      mean[static_cast<size_t>(k)] += delta / (r + 1);
      m2[static_cast<size_t>(k)] += delta.cwiseProduct(
          d - mean[static_cast<size_t>(k)]);

      x = xnext;
      if (x.norm() > 1e12) {
        out.overflowed = true;
        out.overflow_run = r;
        out.overflow_step = k;
        return out;
      }
    }
  }

  for (int k = 0; k < config.steps; ++k) {
    const MatrixXd se =
        (m2[static_cast<size_t>(k)] / (config.runs - 1) / config.runs)
            .cwiseSqrt();
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double s = se(i, j);
        const double dev = std::abs(mean[static_cast<size_t>(k)](i, j));
        if (s > 0.0) {
          worst = std::max(worst, dev / s);
        } else if (dev > 0.0) {
          worst = std::numeric_limits<double>::infinity();
        }
      }
    }
    out.per_step.push_back(worst);
    if (worst > out.max_deviation) {
      out.max_deviation = worst;
      out.argmax_step = k;
    }
  }
  return out;
}

}  // namespace covctl
