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

// Embedding-regression auxiliary losses.
//
// All three losses share an affine regression head R and a distance d. The
// transducer variants weight per-frame terms by the alignment posterior q,
// which is treated as a constant: no gradient is ever produced for it, and
// AuxLossResult::grad_q is returned explicitly zero so callers can check.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edistill/lattice.hpp"
#include "edistill/numeric.hpp"
#include "edistill/types.hpp"

namespace edistill {

enum class DistanceKind { L1Normalized, L2Squared };

inline const char *to_string(DistanceKind k) {
  return k == DistanceKind::L1Normalized ? "l1_normalized" : "l2_squared";
}

inline DistanceKind distance_kind_from_string(const std::string &s) {
  if (s == "l1_normalized" || s == "l1") return DistanceKind::L1Normalized;
  if (s == "l2_squared" || s == "l2") return DistanceKind::L2Squared;
  throw std::invalid_argument("unknown distance kind '" + s + "'");
}

/// Distance d(u, v) over D^Emb-dimensional vectors.
///   L1Normalized: sum_j |u_j - v_j| / dim
///   L2Squared:    sum_j (u_j - v_j)^2
struct Distance {
  DistanceKind kind = DistanceKind::L1Normalized;
  std::size_t dim = 0;
};

struct DistanceValue {
  double value = 0.0;
  std::vector<double> grad;  // d value / d u
};

namespace detail {

inline void check_dims(const Distance &d, std::size_t a, std::size_t b) {
  if (a != b || a != d.dim)
    throw std::invalid_argument("distance: dimension mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ", dim " +
                                std::to_string(d.dim) + ")");
}

// Adds weight * d value / d u into grad and returns the distance.
inline double distance_acc(const Distance &d, std::span<const double> u,
                           std::span<const double> v, double weight,
                           std::span<double> grad) {
  double value = 0.0;
  if (d.kind == DistanceKind::L1Normalized) {
    const double scale = 1.0 / static_cast<double>(d.dim);
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double diff = u[j] - v[j];
      value += std::abs(diff);
      if (diff > 0.0)
        grad[j] += weight * scale;
      else if (diff < 0.0)
        grad[j] -= weight * scale;
    }
    return value * scale;
  }
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double diff = u[j] - v[j];
    value += diff * diff;
    grad[j] += weight * 2.0 * diff;
  }
  return value;
}

}  // namespace detail

inline DistanceValue distance(const Distance &d, std::span<const double> u,
                              std::span<const double> v) {
  detail::check_dims(d, u.size(), v.size());
  DistanceValue out;
  out.grad.assign(u.size(), 0.0);
  out.value = detail::distance_acc(d, u, v, 1.0, out.grad);
  return out;
}

/// Affine regression head R(x) = W x + b. In two-input mode x is the
/// concatenation [phi; psi] and W = [W_phi | W_psi], W_phi having
/// `acoustic_dim` columns.
struct RegressionNet {
  Matrix weight;             // D^Emb x (acoustic_dim + language_dim)
  std::vector<double> bias;  // D^Emb
  std::size_t acoustic_dim = 0;

  static RegressionNet single(std::size_t in, std::size_t out) {
    return {Matrix(out, in), std::vector<double>(out, 0.0), in};
  }
  static RegressionNet joint(std::size_t acoustic, std::size_t language, std::size_t out) {
    return {Matrix(out, acoustic + language), std::vector<double>(out, 0.0), acoustic};
  }

  std::size_t out_dim() const { return weight.rows; }
  std::size_t language_dim() const { return weight.cols - acoustic_dim; }
  bool two_input() const { return language_dim() > 0; }

  /// W_phi x (no bias) accumulated into y.
  void apply_acoustic(std::span<const double> x, std::span<double> y) const {
    for (std::size_t r = 0; r < weight.rows; ++r) {
      const auto w = weight.row(r);
      double s = 0.0;
      for (std::size_t c = 0; c < acoustic_dim; ++c) s += w[c] * x[c];
      y[r] += s;
    }
  }
  /// W_psi x (no bias) accumulated into y.
  void apply_language(std::span<const double> x, std::span<double> y) const {
    for (std::size_t r = 0; r < weight.rows; ++r) {
      const auto w = weight.row(r);
      double s = 0.0;
      for (std::size_t c = acoustic_dim; c < weight.cols; ++c) s += w[c] * x[c - acoustic_dim];
      y[r] += s;
    }
  }

  std::vector<double> operator()(std::span<const double> phi) const {
    std::vector<double> y = bias;
    apply_acoustic(phi, y);
    return y;
  }
  std::vector<double> operator()(std::span<const double> phi,
                                 std::span<const double> psi) const {
    std::vector<double> y = bias;
    apply_acoustic(phi, y);
    apply_language(psi, y);
    return y;
  }
};

struct AuxLossResult {
  double value = 0.0;
  Matrix grad_phi;            // same shape as the acoustic / decoder-state input
  Matrix grad_psi;            // N x language_dim (transducer variants only)
  Matrix grad_weight;         // shape of R.weight
  std::vector<double> grad_bias;
  Matrix grad_q;              // N x T, always zero (stop-gradient through q)
};

/// Which form of the alignment posterior weights the expectations.
enum class PosteriorWeights { Normalized, Raw };

inline const char *to_string(PosteriorWeights w) {
  return w == PosteriorWeights::Normalized ? "normalized" : "raw";
}

namespace detail {

inline AuxLossResult make_result(const Matrix &phi, const Matrix *psi,
                                 const RegressionNet &r, std::size_t n, std::size_t t) {
  AuxLossResult out;
  out.grad_phi = Matrix(phi.rows, phi.cols);
  if (psi) out.grad_psi = Matrix(psi->rows, psi->cols);
  out.grad_weight = Matrix(r.weight.rows, r.weight.cols);
  out.grad_bias.assign(r.bias.size(), 0.0);
  if (psi) out.grad_q = Matrix(n, t);
  return out;
}

inline void check_targets(const EmbeddingSeq &targets, std::size_t n,
                          const RegressionNet &r, const Distance &d) {
  if (targets.size() != n)
    throw std::invalid_argument("target count " + std::to_string(targets.size()) +
                                " does not match token count " + std::to_string(n));
  if (r.bias.size() != r.out_dim() ||
      (n > 0 && (targets.dim() != r.out_dim() || d.dim != r.out_dim())))
    throw std::invalid_argument("regression output / target / distance dims disagree");
}

inline const Matrix &select_weights(const AlignmentPosterior &q, PosteriorWeights w,
                                    std::size_t n, std::size_t t) {
  const Matrix &m = w == PosteriorWeights::Normalized ? q.normalized : q.raw;
  if (m.rows != n || m.cols != t)
    throw std::invalid_argument("posterior shape " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols) + " does not match N x T = " +
                                std::to_string(n) + "x" + std::to_string(t));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= 0.0)) throw std::invalid_argument("posterior has a negative or NaN entry");
      s += v;
    }
    if (w == PosteriorWeights::Normalized && std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("posterior row " + std::to_string(i + 1) +
                                  " is not normalized");
  }
  return m;
}

inline void check_joint_inputs(const Matrix &phi, const Matrix &psi,
                               const RegressionNet &r) {
  if (!r.two_input())
    throw std::invalid_argument("transducer regression net must take two inputs");
  if (phi.cols != r.acoustic_dim || psi.cols != r.language_dim())
    throw std::invalid_argument("acoustic / language dims do not match regression net");
  if (phi.rows < 1) throw std::invalid_argument("need at least one acoustic frame");
}

}  // namespace detail

/// Sum_i d(R(phi_i), e_i) over attention decoder states phi_i (N x D).
inline AuxLossResult attention_embedding_loss(const Matrix &states,
                                              const EmbeddingSeq &targets,
                                              const RegressionNet &r, const Distance &d) {
  if (r.two_input())
    throw std::invalid_argument("attention regression net must take a single input");
  if (states.cols != r.acoustic_dim)
    throw std::invalid_argument("decoder state dim does not match regression net");
  const std::size_t n = states.rows;
  detail::check_targets(targets, n, r, d);
  AuxLossResult out = detail::make_result(states, nullptr, r, n, 0);
  std::vector<double> g(r.out_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto pred = r(states.row(i));
    std::fill(g.begin(), g.end(), 0.0);
    out.value += detail::distance_acc(d, pred, targets[i], 1.0, g);
    ger_acc(out.grad_weight, g, states.row(i));
    axpy(out.grad_bias, g, 1.0);
    gemv_t_acc(r.weight, g, out.grad_phi.row(i));
  }
  return out;
}

/// Sum_i Sum_t q_i(t) d(R(phi_t, psi_i), e_i): one regression per lattice
/// column and token, weighted by the alignment posterior.
inline AuxLossResult joint_regression_loss(const Matrix &phi, const Matrix &psi,
                                           const AlignmentPosterior &q,
                                           const EmbeddingSeq &targets,
                                           const RegressionNet &r, const Distance &d,
                                           PosteriorWeights weights = PosteriorWeights::Normalized) {
  detail::check_joint_inputs(phi, psi, r);
  const std::size_t T = phi.rows, n = psi.rows, D = r.out_dim();
  detail::check_targets(targets, n, r, d);
  const Matrix &w = detail::select_weights(q, weights, n, T);
  AuxLossResult out = detail::make_result(phi, &psi, r, n, T);

  Matrix acoustic(T, D);
  for (std::size_t t = 0; t < T; ++t) r.apply_acoustic(phi.row(t), acoustic.row(t));

  Matrix g_frame(T, D);  // sum_i of dL/dR at frame t
  std::vector<double> lang(D), pred(D), g_token(D), g(D);
  for (std::size_t i = 0; i < n; ++i) {
    lang = r.bias;
    r.apply_language(psi.row(i), lang);
    std::fill(g_token.begin(), g_token.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double wt = w(i, t);
      if (wt == 0.0) continue;
      for (std::size_t j = 0; j < D; ++j) pred[j] = acoustic(t, j) + lang[j];
      std::fill(g.begin(), g.end(), 0.0);
      out.value += wt * detail::distance_acc(d, pred, targets[i], wt, g);
      axpy(g_frame.row(t), g, 1.0);
      axpy(g_token, g, 1.0);
    }
    // language block and bias
    for (std::size_t j = 0; j < D; ++j) {
      auto wrow = out.grad_weight.row(j);
      for (std::size_t c = 0; c < psi.cols; ++c) wrow[r.acoustic_dim + c] += g_token[j] * psi(i, c);
    }
    axpy(out.grad_bias, g_token, 1.0);
    for (std::size_t j = 0; j < D; ++j) {
      const auto wrow = r.weight.row(j);
      for (std::size_t c = 0; c < psi.cols; ++c)
        out.grad_psi(i, c) += wrow[r.acoustic_dim + c] * g_token[j];
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < D; ++j) {
      const double gj = g_frame(t, j);
      if (gj == 0.0) continue;
      auto wrow = out.grad_weight.row(j);
      const auto W = r.weight.row(j);
      for (std::size_t c = 0; c < r.acoustic_dim; ++c) {
        wrow[c] += gj * phi(t, c);
        out.grad_phi(t, c) += W[c] * gj;
      }
    }
  }
  return out;
}

/// Sum_i d(R(phibar_i, psi_i), e_i) with phibar_i = Sum_t q_i(t) phi_t: one
/// regression per token.
inline AuxLossResult token_sync_loss(const Matrix &phi, const Matrix &psi,
                                     const AlignmentPosterior &q,
                                     const EmbeddingSeq &targets, const RegressionNet &r,
                                     const Distance &d,
                                     PosteriorWeights weights = PosteriorWeights::Normalized) {
  detail::check_joint_inputs(phi, psi, r);
  const std::size_t T = phi.rows, n = psi.rows, D = r.out_dim();
  detail::check_targets(targets, n, r, d);
  const Matrix &w = detail::select_weights(q, weights, n, T);
  AuxLossResult out = detail::make_result(phi, &psi, r, n, T);

  std::vector<double> phibar(phi.cols), g(D), dphibar(phi.cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(phibar.begin(), phibar.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) axpy(phibar, phi.row(t), w(i, t));
    const auto pred = r(phibar, psi.row(i));
    std::fill(g.begin(), g.end(), 0.0);
    out.value += detail::distance_acc(d, pred, targets[i], 1.0, g);

    std::fill(dphibar.begin(), dphibar.end(), 0.0);
    for (std::size_t j = 0; j < D; ++j) {
      const double gj = g[j];
      if (gj == 0.0) continue;
      auto grow = out.grad_weight.row(j);
      const auto W = r.weight.row(j);
      for (std::size_t c = 0; c < r.acoustic_dim; ++c) {
        grow[c] += gj * phibar[c];
        dphibar[c] += W[c] * gj;
      }
      for (std::size_t c = 0; c < psi.cols; ++c) {
        grow[r.acoustic_dim + c] += gj * psi(i, c);
        out.grad_psi(i, c) += W[r.acoustic_dim + c] * gj;
      }
    }
    axpy(out.grad_bias, g, 1.0);
    for (std::size_t t = 0; t < T; ++t) axpy(out.grad_phi.row(t), dphibar, w(i, t));
  }
  return out;
}

/// Main loss plus sigma times the auxiliary loss. The auxiliary gradients
/// are returned already scaled by sigma; the caller adds them to its own.
struct MultitaskLoss {
  double value = 0.0;
  double main = 0.0;
  double aux = 0.0;
  std::optional<AuxLossResult> aux_scaled;  // empty when sigma == 0
};

inline void scale(AuxLossResult &r, double s) {
  r.value *= s;
  for (double &v : r.grad_phi.data) v *= s;
  for (double &v : r.grad_psi.data) v *= s;
  for (double &v : r.grad_weight.data) v *= s;
  for (double &v : r.grad_bias) v *= s;
}

/// sigma == 0 never invokes `aux_fn` and returns the main loss unchanged.
template <std::invocable AuxFn>
  requires std::same_as<std::invoke_result_t<AuxFn>, AuxLossResult>
MultitaskLoss multitask_combine(double main_loss, AuxFn &&aux_fn, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be nonnegative");
  MultitaskLoss out;
  out.main = main_loss;
  out.value = main_loss;
  if (sigma == 0.0) return out;
  AuxLossResult aux = std::forward<AuxFn>(aux_fn)();
  out.aux = aux.value;
  out.value = main_loss + sigma * aux.value;
  scale(aux, sigma);
  out.aux_scaled = std::move(aux);
  return out;
}

inline MultitaskLoss multitask_combine(double main_loss, const AuxLossResult &aux,
                                       double sigma) {
  return multitask_combine(main_loss, [&] { return aux; }, sigma);
}

}  // namespace edistill
