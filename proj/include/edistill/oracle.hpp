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

// Brute-force ground truth for small lattices. Everything here walks the
// explicit set of alignments and never touches the forward-backward code or
// the distill-loss kernels.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "edistill/distill_loss.hpp"
#include "edistill/lattice.hpp"
#include "edistill/numeric.hpp"
#include "edistill/types.hpp"

namespace edistill::oracle {

inline constexpr std::uint64_t kMaxAlignments = 1'000'000;

/// One interleaving of T blanks and the N target tokens; the final symbol
/// is always blank.
struct Alignment {
  std::vector<int> symbols;
  double log_prob = 0.0;
};

inline std::uint64_t alignment_count(std::size_t T, std::size_t N) {
  if (T < 1) return 0;
  return binomial(T + N - 1, N);
}

namespace detail {

inline void enumerate(std::size_t T, std::span<const int> labels, std::size_t t,
                      std::size_t u, std::vector<int> &prefix,
                      std::vector<Alignment> &out) {
  const std::size_t N = labels.size();
  if (t == T - 1 && u == N) {
    prefix.push_back(kBlank);
    out.push_back({prefix, 0.0});
    prefix.pop_back();
    return;
  }
  if (u < N) {
    prefix.push_back(labels[u]);
    enumerate(T, labels, t, u + 1, prefix, out);
    prefix.pop_back();
  }
  if (t + 1 < T) {
    prefix.push_back(kBlank);
    enumerate(T, labels, t + 1, u, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace detail

/// All valid alignments of `labels` against T frames, label moves first.
inline std::vector<Alignment> enumerate_alignments(std::size_t T,
                                                   std::span<const int> labels) {
  if (T < 1) throw std::invalid_argument("enumerate_alignments: T must be >= 1");
  if (alignment_count(T, labels.size()) > kMaxAlignments)
    throw std::invalid_argument("enumerate_alignments: C(T+N-1, N) exceeds " +
                                std::to_string(kMaxAlignments));
  std::vector<Alignment> out;
  out.reserve(alignment_count(T, labels.size()));
  std::vector<int> prefix;
  prefix.reserve(T + labels.size());
  detail::enumerate(T, labels, 0, 0, prefix, out);
  return out;
}

/// Same, with placeholder labels 1..N standing for y_1..y_N.
inline std::vector<Alignment> enumerate_alignments(std::size_t T, std::size_t N) {
  std::vector<int> labels(N);
  for (std::size_t i = 0; i < N; ++i) labels[i] = static_cast<int>(i + 1);
  return enumerate_alignments(T, labels);
}

/// Log-probability of one alignment: the n-th symbol is scored at the node
/// given by the blank and token counts of the preceding prefix.
inline double path_log_prob(const EmissionLattice &e, std::span<const int> symbols) {
  std::size_t tau = 0, iota = 0;
  double lp = 0.0;
  for (int z : symbols) {
    lp += e.at(tau, iota, static_cast<std::size_t>(z));
    if (z == kBlank)
      ++tau;
    else
      ++iota;
  }
  return lp;
}

inline std::vector<Alignment> scored_alignments(const EmissionLattice &e) {
  e.validate();
  auto paths = enumerate_alignments(e.T, e.labels);
  for (auto &p : paths) p.log_prob = path_log_prob(e, p.symbols);
  return paths;
}

inline double exact_log_likelihood(const EmissionLattice &e) {
  double total = kLogZero;
  for (const auto &p : scored_alignments(e)) total = log_add(total, p.log_prob);
  return total;
}

/// Literal q_i(t): sum over alignments and prefix lengths 0..T+N-1 of
/// [tokens in prefix == i-1 and blanks in prefix == t-1] * p(z | X, y).
inline AlignmentPosterior exact_posterior(const EmissionLattice &e) {
  const auto paths = scored_alignments(e);
  double log_Z = kLogZero;
  for (const auto &p : paths) log_Z = log_add(log_Z, p.log_prob);
  if (log_Z == kLogZero)
    throw std::invalid_argument("exact_posterior: total likelihood is zero");
  AlignmentPosterior q{Matrix(e.N, e.T), Matrix(e.N, e.T)};
  for (const auto &p : paths) {
    const double w = std::exp(p.log_prob - log_Z);
    std::size_t tau = 0, iota = 0;
    // prefix of length n is z_{1:n}; symbol n+1 is emitted after it
    for (std::size_t n = 0; n < p.symbols.size(); ++n) {
      for (std::size_t i = 1; i <= e.N; ++i)
        for (std::size_t t = 1; t <= e.T; ++t)
          if (iota == i - 1 && tau == t - 1) q.raw(i - 1, t - 1) += w;
      if (p.symbols[n] == kBlank)
        ++tau;
      else
        ++iota;
    }
  }
  for (std::size_t i = 0; i < e.N; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < e.T; ++t) s += q.raw(i, t);
    for (std::size_t t = 0; t < e.T; ++t) q.normalized(i, t) = q.raw(i, t) / s;
  }
  return q;
}

/// Direct double sum Sum_i Sum_t w(i,t) d(W [phi_t; psi_i] + b, e_i), with
/// the affine map and both distances written out independently.
inline double exact_joint_loss(const Matrix &phi, const Matrix &psi, const Matrix &weights,
                               const EmbeddingSeq &targets, const RegressionNet &r,
                               const Distance &d) {
  const std::size_t T = phi.rows, N = psi.rows;
  if (weights.rows != N || weights.cols != T || targets.size() != N ||
      r.weight.cols != phi.cols + psi.cols || r.acoustic_dim != phi.cols)
    throw std::invalid_argument("exact_joint_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      double dist = 0.0;
      for (std::size_t j = 0; j < r.weight.rows; ++j) {
        double y = r.bias[j];
        for (std::size_t c = 0; c < phi.cols; ++c) y += r.weight(j, c) * phi(t, c);
        for (std::size_t c = 0; c < psi.cols; ++c)
          y += r.weight(j, phi.cols + c) * psi(i, c);
        const double diff = y - targets.vectors(i, j);
        dist += d.kind == DistanceKind::L1Normalized ? std::abs(diff) : diff * diff;
      }
      if (d.kind == DistanceKind::L1Normalized) dist /= static_cast<double>(r.weight.rows);
      total += weights(i, t) * dist;
    }
  }
  return total;
}

}  // namespace edistill::oracle
