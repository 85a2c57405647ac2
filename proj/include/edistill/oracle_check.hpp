// Copyright 2026  The edistill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Lattice-vs-enumeration and loss-vs-oracle comparisons over a grid of
// small lattice sizes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "edistill/distill_loss.hpp"
#include "edistill/lattice.hpp"
#include "edistill/oracle.hpp"
#include "edistill/rng.hpp"

namespace edistill {

struct OracleGrid {
  std::size_t max_T = 5;
  std::size_t max_N = 3;
  std::size_t max_K = 4;  // K runs over 2..max_K
  std::size_t reps = 3;
  std::uint64_t seed = 1;
  double tol = 1e-9;
};

/// Computes beta from emissions; replaceable so tests can inject faults.
using BackwardFn = std::function<ScoreTable(const EmissionLattice &)>;

struct OracleReport {
  std::size_t instances = 0;
  double max_loglik_error = 0.0;    // alpha, beta and enumeration against each other
  double max_posterior_error = 0.0; // raw and normalized q
  double max_loss_error = 0.0;      // joint loss, relative to max(1, |value|)
  double seconds = 0.0;
  std::vector<std::string> failures;

  bool vacuous() const { return instances == 0; }
  bool passed() const { return failures.empty(); }
};

namespace detail {

inline EmissionLattice oracle_lattice(CounterRng &rng, std::size_t T, std::size_t N,
                                      std::size_t K) {
  std::vector<int> labels(N);
  for (int &y : labels) y = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(K) - 1));
  std::vector<double> logits(T * (N + 1) * K);
  for (double &v : logits) v = 1.5 * rng.normal();
  return EmissionLattice::from_logits(T, std::move(labels), K, logits);
}

inline Matrix oracle_matrix(CounterRng &rng, std::size_t r, std::size_t c, double scale) {
  Matrix m(r, c);
  for (double &v : m.data) v = scale * rng.normal();
  return m;
}

inline double max_abs(const Matrix &a, const Matrix &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace detail

inline OracleReport run_oracle_check(const OracleGrid &g, BackwardFn backward = compute_backward) {
  const auto start = std::chrono::steady_clock::now();
  OracleReport rep;
  CounterRng rng(g.seed, CounterRng::stream_id("oracle-check"));
  const auto fail = [&](std::string what, std::size_t T, std::size_t N, std::size_t K,
                        std::size_t r, double err) {
    rep.failures.push_back(what + " at T=" + std::to_string(T) + " N=" + std::to_string(N) +
                           " K=" + std::to_string(K) + " rep=" + std::to_string(r) +
                           ": error " + std::to_string(err));
  };

  for (std::size_t T = 1; T <= g.max_T; ++T)
    for (std::size_t N = 0; N <= g.max_N; ++N)
      for (std::size_t K = 2; K <= g.max_K; ++K)
        for (std::size_t r = 0; r < g.reps; ++r) {
          ++rep.instances;
          try {
          const auto e = detail::oracle_lattice(rng, T, N, K);
          const ScoreTable alpha = compute_forward(e);
          const ScoreTable beta = backward(e);
          const double log_Z = log_likelihood(alpha, e);
          const double exact = oracle::exact_log_likelihood(e);
          const double ll_err = std::max(std::abs(log_Z - exact), std::abs(beta(0, 0) - exact));
          rep.max_loglik_error = std::max(rep.max_loglik_error, ll_err);
          if (!(ll_err < g.tol)) fail("log-likelihood mismatch", T, N, K, r, ll_err);
          if (N == 0) continue;

          const auto q = alignment_posterior(node_occupancy(alpha, beta, log_Z, e));
          const auto q_exact = oracle::exact_posterior(e);
          const double q_err = std::max(detail::max_abs(q.raw, q_exact.raw),
                                        detail::max_abs(q.normalized, q_exact.normalized));
          rep.max_posterior_error = std::max(rep.max_posterior_error, q_err);
          if (!(q_err < g.tol)) fail("posterior mismatch", T, N, K, r, q_err);

          const std::size_t da = 3, dl = 2, D = 4;
          const Matrix phi = detail::oracle_matrix(rng, T, da, 1.0);
          const Matrix psi = detail::oracle_matrix(rng, N, dl, 1.0);
          EmbeddingSeq targets{detail::oracle_matrix(rng, N, D, 1.0)};
          RegressionNet net = RegressionNet::joint(da, dl, D);
          net.weight = detail::oracle_matrix(rng, D, da + dl, 0.5);
          for (double &b : net.bias) b = 0.5 * rng.normal();
          for (auto kind : {DistanceKind::L1Normalized, DistanceKind::L2Squared}) {
            const Distance d{kind, D};
            const double got = joint_regression_loss(phi, psi, q, targets, net, d).value;
            const double want =
                oracle::exact_joint_loss(phi, psi, q_exact.normalized, targets, net, d);
            const double err = std::abs(got - want) / std::max(1.0, std::abs(want));
            rep.max_loss_error = std::max(rep.max_loss_error, err);
            if (!(err < g.tol)) fail(std::string("joint loss mismatch (") + to_string(kind) + ")",
                                     T, N, K, r, err);
          }
          } catch (const std::exception &ex) {
            rep.failures.push_back(std::string("exception at T=") + std::to_string(T) +
                                   " N=" + std::to_string(N) + " K=" + std::to_string(K) +
                                   ": " + ex.what());
          }
        }
  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace edistill
