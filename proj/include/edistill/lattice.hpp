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

// Forward-backward over the transducer alignment lattice.
//
// Node (t, u) has t frames consumed and u tokens emitted (both 0-based), so
// it is where the joint network sees acoustic frame t+1 and prediction
// output u+1. From (t, u) a path either emits blank and
// moves to (t+1, u), or emits y_{u+1} and moves to (t, u+1). Every complete
// path starts at (0, 0) and terminates with the blank emitted from
// (T-1, N); there are C(T+N-1, N) of them.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edistill/numeric.hpp"

namespace edistill {

inline constexpr int kBlank = 0;

/// Log emission probabilities for every lattice node over K symbols
/// (index 0 is blank), together with the target labels y_1..y_N.
struct EmissionLattice {
  std::size_t T = 0;
  std::size_t N = 0;
  std::size_t K = 0;
  std::vector<int> labels;
  std::vector<double> log_probs;  // T x (N+1) x K

  EmissionLattice() = default;
  EmissionLattice(std::size_t frames, std::vector<int> targets, std::size_t symbols,
                  double fill = 0.0)
      : T(frames),
        N(targets.size()),
        K(symbols),
        labels(std::move(targets)),
        log_probs(frames * (N + 1) * symbols, fill) {}

  /// Builds a lattice from unnormalized logits by log-softmax at each node.
  static EmissionLattice from_logits(std::size_t frames, std::vector<int> targets,
                                     std::size_t symbols,
                                     std::span<const double> logits) {
    EmissionLattice e(frames, std::move(targets), symbols);
    if (logits.size() != e.log_probs.size())
      throw std::invalid_argument("from_logits: logits size does not match T x (N+1) x K");
    for (std::size_t n = 0; n < frames * (e.N + 1); ++n)
      log_softmax(logits.subspan(n * symbols, symbols),
                  std::span<double>(e.log_probs).subspan(n * symbols, symbols));
    return e;
  }

  std::size_t index(std::size_t t, std::size_t u, std::size_t k) const {
    return (t * (N + 1) + u) * K + k;
  }
  double at(std::size_t t, std::size_t u, std::size_t k) const {
    return log_probs[index(t, u, k)];
  }
  double &at(std::size_t t, std::size_t u, std::size_t k) {
    return log_probs[index(t, u, k)];
  }
  std::span<const double> node(std::size_t t, std::size_t u) const {
    return std::span<const double>(log_probs).subspan(index(t, u, 0), K);
  }
  double blank(std::size_t t, std::size_t u) const { return at(t, u, kBlank); }
  /// Log-prob of emitting y_{u+1} from node (t, u); requires u < N.
  double label(std::size_t t, std::size_t u) const {
    return at(t, u, static_cast<std::size_t>(labels[u]));
  }

  /// Throws std::invalid_argument unless the shape, labels and
  /// per-node normalization hold.
  void validate(double tol = 1e-9) const {
    if (T < 1) throw std::invalid_argument("emission lattice needs T >= 1");
    if (K < 2) throw std::invalid_argument("emission lattice needs K >= 2");
    if (labels.size() != N)
      throw std::invalid_argument("label count does not match N");
    if (log_probs.size() != T * (N + 1) * K)
      throw std::invalid_argument("log_probs shape does not match T x (N+1) x K");
    for (int y : labels)
      if (y <= kBlank || static_cast<std::size_t>(y) >= K)
        throw std::invalid_argument("label " + std::to_string(y) + " outside [1, K)");
    for (double v : log_probs)
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw std::invalid_argument("log_probs contains NaN or +inf");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u <= N; ++u)
        if (std::abs(log_sum_exp(node(t, u))) > tol)
          throw std::invalid_argument("node (" + std::to_string(t) + ", " +
                                      std::to_string(u) + ") is not normalized");
  }
};

/// T x (N+1) table of log-scores.
struct ScoreTable {
  std::size_t T = 0;
  std::size_t N = 0;
  std::vector<double> values;

  ScoreTable() = default;
  ScoreTable(std::size_t frames, std::size_t targets, double fill = kLogZero)
      : T(frames), N(targets), values(frames * (targets + 1), fill) {}

  double &operator()(std::size_t t, std::size_t u) { return values[t * (N + 1) + u]; }
  double operator()(std::size_t t, std::size_t u) const {
    return values[t * (N + 1) + u];
  }
};

struct AlphaBetaLattice {
  ScoreTable alpha;
  ScoreTable beta;
  double log_Z = kLogZero;
};

/// q_i(t) for i = 1..N (rows) and t = 1..T (columns), in raw occupancy form
/// and with each row scaled to sum to one.
struct AlignmentPosterior {
  Matrix raw;
  Matrix normalized;
};

/// alpha(t,u) = log of the total probability of partial paths reaching (t,u).
inline ScoreTable compute_forward(const EmissionLattice &e) {
  e.validate();
  ScoreTable alpha(e.T, e.N);
  for (std::size_t t = 0; t < e.T; ++t) {
    for (std::size_t u = 0; u <= e.N; ++u) {
      if (t == 0 && u == 0) {
        alpha(0, 0) = 0.0;
        continue;
      }
      double no_emit = kLogZero, emit = kLogZero;
      if (t > 0) no_emit = alpha(t - 1, u) + e.blank(t - 1, u);
      if (u > 0) emit = alpha(t, u - 1) + e.label(t, u - 1);
      alpha(t, u) = log_add(no_emit, emit);
    }
  }
  return alpha;
}

/// beta(t,u) = log of the probability of completing a path from (t,u),
/// including the terminating blank from (T-1, N).
inline ScoreTable compute_backward(const EmissionLattice &e) {
  e.validate();
  ScoreTable beta(e.T, e.N);
  for (std::size_t t = e.T; t-- > 0;) {
    for (std::size_t u = e.N + 1; u-- > 0;) {
      if (t == e.T - 1 && u == e.N) {
        beta(t, u) = e.blank(t, u);
        continue;
      }
      double no_emit = kLogZero, emit = kLogZero;
      if (t + 1 < e.T) no_emit = beta(t + 1, u) + e.blank(t, u);
      if (u < e.N) emit = beta(t, u + 1) + e.label(t, u);
      beta(t, u) = log_add(no_emit, emit);
    }
  }
  return beta;
}

/// log p(y | X); -inf when no path has nonzero probability.
inline double log_likelihood(const ScoreTable &alpha, const EmissionLattice &e) {
  if (alpha.T != e.T || alpha.N != e.N)
    throw std::invalid_argument("log_likelihood: alpha shape does not match emissions");
  return alpha(e.T - 1, e.N) + e.blank(e.T - 1, e.N);
}

inline AlphaBetaLattice forward_backward(const EmissionLattice &e) {
  AlphaBetaLattice ab;
  ab.alpha = compute_forward(e);
  ab.beta = compute_backward(e);
  ab.log_Z = log_likelihood(ab.alpha, e);
  return ab;
}

/// gamma(t,u): probability that a complete alignment emits from node (t,u).
inline Matrix node_occupancy(const ScoreTable &alpha, const ScoreTable &beta,
                             double log_Z, const EmissionLattice &e) {
  if (!(log_Z > kLogZero) || std::isnan(log_Z))
    throw std::invalid_argument("node_occupancy: log_Z is -inf, posteriors are undefined");
  if (alpha.T != e.T || alpha.N != e.N || beta.T != e.T || beta.N != e.N)
    throw std::invalid_argument("node_occupancy: score tables do not match emissions");
  Matrix gamma(e.T, e.N + 1);
  for (std::size_t t = 0; t < e.T; ++t)
    for (std::size_t u = 0; u <= e.N; ++u)
      gamma(t, u) = std::exp(alpha(t, u) + beta(t, u) - log_Z);
  return gamma;
}

/// raw[i-1][t-1] = gamma(t, i-1): frame t is being consumed after the prefix
/// y_{1:i-1} has been emitted (empty prefix included).
inline AlignmentPosterior alignment_posterior(const Matrix &gamma) {
  if (gamma.cols < 1) throw std::invalid_argument("alignment_posterior: empty gamma");
  const std::size_t T = gamma.rows, N = gamma.cols - 1;
  AlignmentPosterior q{Matrix(N, T), Matrix(N, T)};
  for (std::size_t i = 0; i < N; ++i) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      q.raw(i, t) = gamma(t, i);
      sum += gamma(t, i);
    }
    if (!(sum > 0.0))
      throw std::invalid_argument("alignment_posterior: row " + std::to_string(i + 1) +
                                  " has zero mass");
    for (std::size_t t = 0; t < T; ++t) q.normalized(i, t) = q.raw(i, t) / sum;
  }
  return q;
}

struct TransducerLoss {
  double loss = 0.0;              // -log p(y | X); +inf when the lattice has no path
  bool finite = true;
  std::vector<double> grad;       // d loss / d logits, T x (N+1) x K
  AlphaBetaLattice scores;
};

/// Negative log-likelihood and its gradient with respect to the pre-softmax
/// logits that produced `e` (log_probs = log_softmax(logits) per node).
///
/// d loss / d logit(t,u,k) = gamma(t,u) p(t,u,k) - flow(t,u,k), where flow is
/// the posterior probability of the edge leaving (t,u) with symbol k.
inline TransducerLoss transducer_loss_and_logit_grads(const EmissionLattice &e) {
  TransducerLoss out;
  out.scores = forward_backward(e);
  out.grad.assign(e.log_probs.size(), 0.0);
  const double log_Z = out.scores.log_Z;
  if (!(log_Z > kLogZero)) {
    out.finite = false;
    out.loss = std::numeric_limits<double>::infinity();
    return out;
  }
  out.loss = -log_Z;
  const auto &alpha = out.scores.alpha;
  const auto &beta = out.scores.beta;
  for (std::size_t t = 0; t < e.T; ++t) {
    for (std::size_t u = 0; u <= e.N; ++u) {
      const double a = alpha(t, u);
      const double occupancy = std::exp(a + beta(t, u) - log_Z);
      double *g = out.grad.data() + e.index(t, u, 0);
      if (occupancy > 0.0)
        for (std::size_t k = 0; k < e.K; ++k) g[k] = occupancy * std::exp(e.at(t, u, k));
      // blank edge
      double next = kLogZero;
      if (t + 1 < e.T)
        next = beta(t + 1, u);
      else if (u == e.N)
        next = 0.0;
      if (next > kLogZero) g[kBlank] -= std::exp(a + e.blank(t, u) + next - log_Z);
      if (u < e.N)
        g[e.labels[u]] -= std::exp(a + e.label(t, u) + beta(t, u + 1) - log_Z);
    }
  }
  return out;
}

}  // namespace edistill
