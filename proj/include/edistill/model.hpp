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

// Small differentiable transducer and attention models with hand-written
// backward passes.
//
// Transducer:
//   encoder     phi_t = tanh(W_enc [x_{t-1}; x_t; x_{t+1}] + b_enc)   (zero padded)
//   prediction  h_j = tanh(W_p E[y_{j-1}] + U_p h_{j-1} + b_p),  y_0 = blank, h_0 = 0
//               psi_j = h_j for j = 1..N+1
//   joint       logits(t,u) = W_o tanh(W_a phi_t + W_b psi_{u+1} + b_j) + b_o
//
// Attention decoder, step i (y_0 = blank as the start input):
//   s_i     = tanh(W_s E[y_{i-1}] + U_s s_{i-1} + b_s)
//   alpha_i = softmax_t(s_i . W_k phi_t),  c_i = sum_t alpha_i(t) phi_t
//   phi^d_i = tanh(W_c [s_i; c_i] + b_c)        (pre-softmax activation)
//   log p(y_i = k) = log_softmax(Lambda phi^d_i)_k over the K-1 non-blank ids

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "edistill/decode.hpp"
#include "edistill/distill_loss.hpp"
#include "edistill/lattice.hpp"
#include "edistill/numeric.hpp"
#include "edistill/rng.hpp"
#include "edistill/types.hpp"

namespace edistill {

enum class DecoderKind { Transducer, Attention };

inline const char *to_string(DecoderKind k) {
  return k == DecoderKind::Transducer ? "transducer" : "attention";
}

inline DecoderKind decoder_kind_from_string(const std::string &s) {
  if (s == "transducer") return DecoderKind::Transducer;
  if (s == "attention") return DecoderKind::Attention;
  throw std::invalid_argument("unknown decoder kind '" + s + "'");
}

struct ModelDims {
  DecoderKind decoder = DecoderKind::Transducer;
  std::size_t feature_dim = 8;
  std::size_t context = 3;     // encoder window, odd
  std::size_t symbols = 19;    // K, blank included
  std::size_t d_token = 16;    // token embedding table width
  std::size_t d_enc = 32;
  std::size_t d_pred = 32;     // transducer prediction net
  std::size_t d_joint = 32;
  std::size_t d_state = 32;    // attention recurrent state
  std::size_t d_dec = 32;      // attention pre-softmax activation
  std::size_t emb_dim = 32;    // D^Emb

  void validate() const {
    if (context % 2 != 1) throw std::invalid_argument("encoder context must be odd");
    if (symbols < 2 || feature_dim < 1 || d_token < 1 || d_enc < 1 || emb_dim < 1)
      throw std::invalid_argument("model dims must be positive");
    if (decoder == DecoderKind::Transducer && (d_pred < 1 || d_joint < 1))
      throw std::invalid_argument("transducer dims must be positive");
    if (decoder == DecoderKind::Attention && (d_state < 1 || d_dec < 1))
      throw std::invalid_argument("attention dims must be positive");
  }

  friend bool operator==(const ModelDims &, const ModelDims &) = default;
};

/// Every trainable tensor. Tensors of the other decoder kind stay empty.
/// The same struct, zero-filled, holds gradients and optimizer moments.
struct ModelParams {
  ModelDims dims;

  Matrix tok_emb;  // K x d_token
  Matrix enc_w;    // d_enc x (context * F)
  std::vector<double> enc_b;

  // transducer
  Matrix pred_w, pred_u;
  std::vector<double> pred_b;
  Matrix joint_wa, joint_wb;
  std::vector<double> joint_b;
  Matrix out_w;  // K x d_joint
  std::vector<double> out_b;

  // attention
  Matrix dec_w, dec_u;
  std::vector<double> dec_b;
  Matrix att_w;   // d_state x d_enc
  Matrix comb_w;  // d_dec x (d_state + d_enc)
  std::vector<double> comb_b;
  Matrix lambda;  // (K-1) x d_dec

  RegressionNet reg;

  /// Visits (name, data) for every tensor in a fixed order.
  template <class F>
  void for_each_tensor(F &&f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F &&f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, const std::vector<double> &d) { n += d.size(); });
    return n;
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_tensor([](std::string_view, std::vector<double> &d) {
      std::fill(d.begin(), d.end(), 0.0);
    });
    return z;
  }

  friend bool operator==(const ModelParams &a, const ModelParams &b) {
    bool same = a.dims == b.dims;
    std::vector<const std::vector<double> *> bs;
    b.for_each_tensor([&](std::string_view, const std::vector<double> &d) { bs.push_back(&d); });
    std::size_t i = 0;
    a.for_each_tensor([&](std::string_view, const std::vector<double> &d) {
      same = same && d == *bs[i++];
    });
    return same;
  }

 private:
  template <class Self, class F>
  static void visit(Self &p, F &f) {
    f("tok_emb", p.tok_emb.data);
    f("enc_w", p.enc_w.data);
    f("enc_b", p.enc_b);
    f("pred_w", p.pred_w.data);
    f("pred_u", p.pred_u.data);
    f("pred_b", p.pred_b);
    f("joint_wa", p.joint_wa.data);
    f("joint_wb", p.joint_wb.data);
    f("joint_b", p.joint_b);
    f("out_w", p.out_w.data);
    f("out_b", p.out_b);
    f("dec_w", p.dec_w.data);
    f("dec_u", p.dec_u.data);
    f("dec_b", p.dec_b);
    f("att_w", p.att_w.data);
    f("comb_w", p.comb_w.data);
    f("comb_b", p.comb_b);
    f("lambda", p.lambda.data);
    f("reg_w", p.reg.weight.data);
    f("reg_b", p.reg.bias);
  }
};

/// Closed-form parameter count for `dims`.
inline std::size_t expected_parameter_count(const ModelDims &d) {
  std::size_t n = d.symbols * d.d_token + d.d_enc * (d.context * d.feature_dim) + d.d_enc;
  if (d.decoder == DecoderKind::Transducer) {
    n += d.d_pred * d.d_token + d.d_pred * d.d_pred + d.d_pred;
    n += d.d_joint * d.d_enc + d.d_joint * d.d_pred + d.d_joint;
    n += d.symbols * d.d_joint + d.symbols;
    n += d.emb_dim * (d.d_enc + d.d_pred) + d.emb_dim;
  } else {
    n += d.d_state * d.d_token + d.d_state * d.d_state + d.d_state;
    n += d.d_state * d.d_enc;
    n += d.d_dec * (d.d_state + d.d_enc) + d.d_dec;
    n += (d.symbols - 1) * d.d_dec;
    n += d.emb_dim * d.d_dec + d.emb_dim;
  }
  return n;
}

namespace detail {

inline void fill_uniform(std::vector<double> &v, std::uint64_t seed, std::string_view name,
                         double bound) {
  CounterRng rng(seed, CounterRng::stream_id(name));
  for (double &x : v) x = rng.uniform(-bound, bound);
}

inline double fan_in_bound(std::size_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

}  // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a per-tensor stream,
/// biases zero, token embeddings ~ U(-1, 1).
inline ModelParams init_params(std::uint64_t seed, const ModelDims &d) {
  d.validate();
  ModelParams p;
  p.dims = d;
  const std::size_t win = d.context * d.feature_dim;
  p.tok_emb = Matrix(d.symbols, d.d_token);
  p.enc_w = Matrix(d.d_enc, win);
  p.enc_b.assign(d.d_enc, 0.0);
  if (d.decoder == DecoderKind::Transducer) {
    p.pred_w = Matrix(d.d_pred, d.d_token);
    p.pred_u = Matrix(d.d_pred, d.d_pred);
    p.pred_b.assign(d.d_pred, 0.0);
    p.joint_wa = Matrix(d.d_joint, d.d_enc);
    p.joint_wb = Matrix(d.d_joint, d.d_pred);
    p.joint_b.assign(d.d_joint, 0.0);
    p.out_w = Matrix(d.symbols, d.d_joint);
    p.out_b.assign(d.symbols, 0.0);
    p.reg = RegressionNet::joint(d.d_enc, d.d_pred, d.emb_dim);
  } else {
    p.dec_w = Matrix(d.d_state, d.d_token);
    p.dec_u = Matrix(d.d_state, d.d_state);
    p.dec_b.assign(d.d_state, 0.0);
    p.att_w = Matrix(d.d_state, d.d_enc);
    p.comb_w = Matrix(d.d_dec, d.d_state + d.d_enc);
    p.comb_b.assign(d.d_dec, 0.0);
    p.lambda = Matrix(d.symbols - 1, d.d_dec);
    p.reg = RegressionNet::single(d.d_dec, d.emb_dim);
  }
  using detail::fan_in_bound;
  detail::fill_uniform(p.tok_emb.data, seed, "tok_emb", 1.0);
  detail::fill_uniform(p.enc_w.data, seed, "enc_w", fan_in_bound(win));
  detail::fill_uniform(p.pred_w.data, seed, "pred_w", fan_in_bound(d.d_token + d.d_pred));
  detail::fill_uniform(p.pred_u.data, seed, "pred_u", fan_in_bound(d.d_token + d.d_pred));
  detail::fill_uniform(p.joint_wa.data, seed, "joint_wa", fan_in_bound(d.d_enc + d.d_pred));
  detail::fill_uniform(p.joint_wb.data, seed, "joint_wb", fan_in_bound(d.d_enc + d.d_pred));
  detail::fill_uniform(p.out_w.data, seed, "out_w", fan_in_bound(d.d_joint));
  detail::fill_uniform(p.dec_w.data, seed, "dec_w", fan_in_bound(d.d_token + d.d_state));
  detail::fill_uniform(p.dec_u.data, seed, "dec_u", fan_in_bound(d.d_token + d.d_state));
  detail::fill_uniform(p.att_w.data, seed, "att_w", fan_in_bound(d.d_enc));
  detail::fill_uniform(p.comb_w.data, seed, "comb_w", fan_in_bound(d.d_state + d.d_enc));
  detail::fill_uniform(p.lambda.data, seed, "lambda", fan_in_bound(d.d_dec));
  detail::fill_uniform(p.reg.weight.data, seed, "reg_w", fan_in_bound(p.reg.weight.cols));
  return p;
}

// ---------------------------------------------------------------------------
// Encoder

namespace detail {

inline void encoder_window(const ModelDims &d, const FeatureSeq &x, std::size_t t,
                           std::span<double> win) {
  const auto half = static_cast<std::ptrdiff_t>(d.context / 2);
  for (std::size_t c = 0; c < d.context; ++c) {
    const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(c) - half;
    auto dst = win.subspan(c * d.feature_dim, d.feature_dim);
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(x.rows))
      std::fill(dst.begin(), dst.end(), 0.0);
    else
      std::copy_n(x.row(static_cast<std::size_t>(src)).begin(), d.feature_dim, dst.begin());
  }
}

inline void tanh_inplace(std::span<double> v) {
  for (double &x : v) x = std::tanh(x);
}

// grad wrt pre-activation of y = tanh(a): dy * (1 - y^2)
inline void tanh_backward(std::span<const double> y, std::span<const double> dy,
                          std::span<double> da) {
  for (std::size_t i = 0; i < y.size(); ++i) da[i] = dy[i] * (1.0 - y[i] * y[i]);
}

}  // namespace detail

/// Phi: T x d_enc acoustic vectors.
inline Matrix encode(const ModelParams &p, const FeatureSeq &x) {
  const auto &d = p.dims;
  if (x.rows < 1) throw std::invalid_argument("encode: empty feature sequence");
  if (x.cols != d.feature_dim)
    throw std::invalid_argument("encode: feature dim " + std::to_string(x.cols) +
                                " != " + std::to_string(d.feature_dim));
  Matrix phi(x.rows, d.d_enc);
  std::vector<double> win(d.context * d.feature_dim);
  for (std::size_t t = 0; t < x.rows; ++t) {
    detail::encoder_window(d, x, t, win);
    auto out = phi.row(t);
    std::copy(p.enc_b.begin(), p.enc_b.end(), out.begin());
    gemv_acc(p.enc_w, win, out);
    detail::tanh_inplace(out);
  }
  return phi;
}

inline void encode_backward(const ModelParams &p, const FeatureSeq &x, const Matrix &phi,
                            const Matrix &dphi, ModelParams &g) {
  const auto &d = p.dims;
  std::vector<double> win(d.context * d.feature_dim), da(d.d_enc);
  for (std::size_t t = 0; t < x.rows; ++t) {
    detail::tanh_backward(phi.row(t), dphi.row(t), da);
    detail::encoder_window(d, x, t, win);
    ger_acc(g.enc_w, da, win);
    axpy(g.enc_b, da, 1.0);
  }
}

// ---------------------------------------------------------------------------
// Prediction network

namespace detail {

inline void check_tokens(const ModelDims &d, const TokenSeq &tokens) {
  for (int y : tokens)
    if (y <= kBlank || static_cast<std::size_t>(y) >= d.symbols)
      throw std::invalid_argument("token id " + std::to_string(y) + " is out of vocabulary");
}

// h = tanh(W emb[token] + U prev + b)
inline void recurrent_step(const Matrix &emb, const Matrix &w, const Matrix &u,
                           const std::vector<double> &b, int token,
                           std::span<const double> prev, std::span<double> h) {
  std::copy(b.begin(), b.end(), h.begin());
  gemv_acc(w, emb.row(static_cast<std::size_t>(token)), h);
  if (!prev.empty()) gemv_acc(u, prev, h);
  tanh_inplace(h);
}

}  // namespace detail

/// Psi: (N+1) x d_pred; row j is the output after the prefix y_{1:j}.
inline Matrix predict(const ModelParams &p, const TokenSeq &tokens) {
  const auto &d = p.dims;
  detail::check_tokens(d, tokens);
  Matrix psi(tokens.size() + 1, d.d_pred);
  for (std::size_t j = 0; j <= tokens.size(); ++j) {
    const int in = j == 0 ? kBlank : tokens[j - 1];
    const std::span<const double> prev =
        j == 0 ? std::span<const double>{} : std::span<const double>(psi.row(j - 1));
    detail::recurrent_step(p.tok_emb, p.pred_w, p.pred_u, p.pred_b, in, prev, psi.row(j));
  }
  return psi;
}

inline void predict_backward(const ModelParams &p, const TokenSeq &tokens, const Matrix &psi,
                             const Matrix &dpsi, ModelParams &g) {
  const auto &d = p.dims;
  std::vector<double> dh(d.d_pred, 0.0), da(d.d_pred), dprev(d.d_pred, 0.0);
  for (std::size_t j = tokens.size() + 1; j-- > 0;) {
    for (std::size_t k = 0; k < d.d_pred; ++k) dh[k] = dpsi(j, k) + dprev[k];
    detail::tanh_backward(psi.row(j), dh, da);
    const int in = j == 0 ? kBlank : tokens[j - 1];
    const auto x = p.tok_emb.row(static_cast<std::size_t>(in));
    ger_acc(g.pred_w, da, x);
    axpy(g.pred_b, da, 1.0);
    gemv_t_acc(p.pred_w, da, g.tok_emb.row(static_cast<std::size_t>(in)));
    std::fill(dprev.begin(), dprev.end(), 0.0);
    if (j > 0) {
      ger_acc(g.pred_u, da, psi.row(j - 1));
      gemv_t_acc(p.pred_u, da, dprev);
    }
  }
}

// ---------------------------------------------------------------------------
// Joint network

struct JointCache {
  Matrix acoustic;  // T x d_joint:     W_a phi_t
  Matrix language;  // (N+1) x d_joint: W_b psi_u + b_j
  Matrix hidden;    // T(N+1) x d_joint
  std::vector<double> logits;
};

inline void joint_logits_at(const ModelParams &p, std::span<const double> acoustic,
                            std::span<const double> language, std::span<double> hidden,
                            std::span<double> logits) {
  for (std::size_t j = 0; j < hidden.size(); ++j)
    hidden[j] = std::tanh(acoustic[j] + language[j]);
  std::copy(p.out_b.begin(), p.out_b.end(), logits.begin());
  gemv_acc(p.out_w, hidden, logits);
}

/// Log-softmax joint outputs over the full (T, N+1) grid.
inline EmissionLattice joint_emissions(const ModelParams &p, const Matrix &phi,
                                       const Matrix &psi, const TokenSeq &labels,
                                       JointCache *cache = nullptr) {
  const auto &d = p.dims;
  if (phi.cols != d.d_enc || psi.cols != d.d_pred || psi.rows != labels.size() + 1)
    throw std::invalid_argument("joint_emissions: shape mismatch");
  const std::size_t T = phi.rows, U = psi.rows, K = d.symbols;
  JointCache local;
  JointCache &c = cache ? *cache : local;
  c.acoustic = Matrix(T, d.d_joint);
  c.language = Matrix(U, d.d_joint);
  c.hidden = Matrix(T * U, d.d_joint);
  c.logits.assign(T * U * K, 0.0);
  for (std::size_t t = 0; t < T; ++t) gemv_acc(p.joint_wa, phi.row(t), c.acoustic.row(t));
  for (std::size_t u = 0; u < U; ++u) {
    std::copy(p.joint_b.begin(), p.joint_b.end(), c.language.row(u).begin());
    gemv_acc(p.joint_wb, psi.row(u), c.language.row(u));
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u < U; ++u)
      joint_logits_at(p, c.acoustic.row(t), c.language.row(u), c.hidden.row(t * U + u),
                      std::span<double>(c.logits).subspan((t * U + u) * K, K));
  return EmissionLattice::from_logits(T, labels, K, c.logits);
}

/// The transducer lattice the model assigns to (x, tokens).
inline EmissionLattice utterance_lattice(const ModelParams &p, const FeatureSeq &x,
                                         const TokenSeq &tokens) {
  if (p.dims.decoder != DecoderKind::Transducer)
    throw std::invalid_argument("only transducer models define an alignment lattice");
  return joint_emissions(p, encode(p, x), predict(p, tokens), tokens);
}

/// Backpropagates d loss / d logits into dphi, dpsi and joint parameters.
inline void joint_backward(const ModelParams &p, const Matrix &phi, const Matrix &psi,
                           const JointCache &c, std::span<const double> dlogits,
                           Matrix &dphi, Matrix &dpsi, ModelParams &g) {
  const auto &d = p.dims;
  const std::size_t T = phi.rows, U = psi.rows, K = d.symbols;
  Matrix dacoustic(T, d.d_joint), dlanguage(U, d.d_joint);
  std::vector<double> dh(d.d_joint), da(d.d_joint);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < U; ++u) {
      const auto gl = dlogits.subspan((t * U + u) * K, K);
      const auto h = c.hidden.row(t * U + u);
      ger_acc(g.out_w, gl, h);
      axpy(g.out_b, gl, 1.0);
      std::fill(dh.begin(), dh.end(), 0.0);
      gemv_t_acc(p.out_w, gl, dh);
      detail::tanh_backward(h, dh, da);
      axpy(dacoustic.row(t), da, 1.0);
      axpy(dlanguage.row(u), da, 1.0);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    ger_acc(g.joint_wa, dacoustic.row(t), phi.row(t));
    gemv_t_acc(p.joint_wa, dacoustic.row(t), dphi.row(t));
  }
  for (std::size_t u = 0; u < U; ++u) {
    ger_acc(g.joint_wb, dlanguage.row(u), psi.row(u));
    axpy(g.joint_b, dlanguage.row(u), 1.0);
    gemv_t_acc(p.joint_wb, dlanguage.row(u), dpsi.row(u));
  }
}

// ---------------------------------------------------------------------------
// Attention decoder

struct AttentionStep {
  std::vector<double> phi;        // pre-softmax activation, d_dec
  std::vector<double> state;      // s_i, d_state
  std::vector<double> context;    // c_i, d_enc
  std::vector<double> weights;    // alpha_i, T
  std::vector<double> log_probs;  // K-1, index k-1 is token id k
};

/// W_k phi_t for every frame (T x d_state); computed once per utterance.
inline Matrix attention_keys(const ModelParams &p, const Matrix &enc) {
  Matrix keys(enc.rows, p.dims.d_state);
  for (std::size_t t = 0; t < enc.rows; ++t) gemv_acc(p.att_w, enc.row(t), keys.row(t));
  return keys;
}

inline AttentionStep attention_step(const ModelParams &p, const Matrix &enc,
                                    const Matrix &keys, int prev_token,
                                    std::span<const double> prev_state) {
  const auto &d = p.dims;
  if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= d.symbols)
    throw std::invalid_argument("attention_step: token out of range");
  AttentionStep s;
  s.state.assign(d.d_state, 0.0);
  detail::recurrent_step(p.tok_emb, p.dec_w, p.dec_u, p.dec_b, prev_token, prev_state, s.state);
  std::vector<double> scores(enc.rows);
  for (std::size_t t = 0; t < enc.rows; ++t) scores[t] = dot(s.state, keys.row(t));
  s.weights = softmax(scores);
  s.context.assign(d.d_enc, 0.0);
  for (std::size_t t = 0; t < enc.rows; ++t) axpy(s.context, enc.row(t), s.weights[t]);
  s.phi = p.comb_b;
  std::vector<double> joined(s.state);
  joined.insert(joined.end(), s.context.begin(), s.context.end());
  gemv_acc(p.comb_w, joined, s.phi);
  detail::tanh_inplace(s.phi);
  std::vector<double> logits(d.symbols - 1, 0.0);
  gemv_acc(p.lambda, s.phi, logits);
  s.log_probs = log_softmax(logits);
  return s;
}

// ---------------------------------------------------------------------------
// Objectives

enum class AuxKind { None, Joint, TokenSync };

inline const char *to_string(AuxKind k) {
  switch (k) {
    case AuxKind::None: return "none";
    case AuxKind::Joint: return "joint";
    case AuxKind::TokenSync: return "token_sync";
  }
  return "?";
}

inline AuxKind aux_kind_from_string(const std::string &s) {
  if (s == "none") return AuxKind::None;
  if (s == "joint") return AuxKind::Joint;
  if (s == "token_sync") return AuxKind::TokenSync;
  throw std::invalid_argument("unknown aux kind '" + s + "'");
}

struct ObjectiveConfig {
  AuxKind aux = AuxKind::None;
  double sigma = 0.0;
  DistanceKind distance = DistanceKind::L1Normalized;
  PosteriorWeights weights = PosteriorWeights::Normalized;

  double effective_sigma() const { return aux == AuxKind::None ? 0.0 : sigma; }
};

struct LossBreakdown {
  double main = 0.0;
  double aux = 0.0;
  double total = 0.0;
  bool finite = true;
};

/// Posterior plumbing for the transducer objective. `fixed` replaces the
/// posterior computed from the current lattice (finite-difference checks
/// hold q constant this way); `computed` receives the one that was used.
struct PosteriorHooks {
  const AlignmentPosterior *fixed = nullptr;
  AlignmentPosterior *computed = nullptr;
};

/// Transducer NLL plus sigma times the configured embedding loss. When
/// `grad` is non-null it receives the gradient of `total` (accumulated).
inline LossBreakdown transducer_objective(const ModelParams &p, const FeatureSeq &x,
                                          const TokenSeq &tokens, const EmbeddingSeq &targets,
                                          const ObjectiveConfig &cfg, ModelParams *grad,
                                          PosteriorHooks hooks = {}) {
  const Matrix phi = encode(p, x);
  const Matrix psi = predict(p, tokens);
  JointCache cache;
  const EmissionLattice lattice = joint_emissions(p, phi, psi, tokens, &cache);
  const TransducerLoss tl = transducer_loss_and_logit_grads(lattice);
  LossBreakdown out;
  if (!tl.finite) {
    out.main = out.total = tl.loss;
    out.finite = false;
    return out;
  }
  const std::size_t N = tokens.size();
  const MultitaskLoss combined = multitask_combine(
      tl.loss,
      [&] {
        const auto &ab = tl.scores;
        const AlignmentPosterior q =
            hooks.fixed ? *hooks.fixed
                        : alignment_posterior(node_occupancy(ab.alpha, ab.beta, ab.log_Z, lattice));
        if (hooks.computed) *hooks.computed = q;
        Matrix psi_tokens(N, psi.cols);
        std::copy_n(psi.data.begin(), N * psi.cols, psi_tokens.data.begin());
        const Distance dist{cfg.distance, p.reg.out_dim()};
        return cfg.aux == AuxKind::Joint
                   ? joint_regression_loss(phi, psi_tokens, q, targets, p.reg, dist, cfg.weights)
                   : token_sync_loss(phi, psi_tokens, q, targets, p.reg, dist, cfg.weights);
      },
      cfg.effective_sigma());
  out.main = combined.main;
  out.aux = combined.aux;
  out.total = combined.value;
  if (!grad) return out;

  Matrix dphi(phi.rows, phi.cols), dpsi(psi.rows, psi.cols);
  joint_backward(p, phi, psi, cache, tl.grad, dphi, dpsi, *grad);
  if (combined.aux_scaled) {
    const AuxLossResult &a = *combined.aux_scaled;
    axpy(dphi.data, a.grad_phi.data, 1.0);
    axpy(std::span<double>(dpsi.data).first(a.grad_psi.size()), a.grad_psi.data, 1.0);
    axpy(grad->reg.weight.data, a.grad_weight.data, 1.0);
    axpy(grad->reg.bias, a.grad_bias, 1.0);
  }
  encode_backward(p, x, phi, dphi, *grad);
  predict_backward(p, tokens, psi, dpsi, *grad);
  return out;
}

/// Attention cross-entropy plus sigma times the embedding loss on phi^d.
inline LossBreakdown attention_objective(const ModelParams &p, const FeatureSeq &x,
                                         const TokenSeq &tokens, const EmbeddingSeq &targets,
                                         const ObjectiveConfig &cfg, ModelParams *grad) {
  const auto &d = p.dims;
  detail::check_tokens(d, tokens);
  const Matrix enc = encode(p, x);
  const Matrix keys = attention_keys(p, enc);
  const std::size_t N = tokens.size(), T = enc.rows;

  std::vector<AttentionStep> steps;
  steps.reserve(N);
  Matrix states(N, d.d_dec);
  double xent = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const int prev = i == 0 ? kBlank : tokens[i - 1];
    const std::span<const double> prev_state =
        i == 0 ? std::span<const double>{} : std::span<const double>(steps.back().state);
    steps.push_back(attention_step(p, enc, keys, prev, prev_state));
    std::copy(steps.back().phi.begin(), steps.back().phi.end(), states.row(i).begin());
    xent -= steps.back().log_probs[static_cast<std::size_t>(tokens[i] - 1)];
  }

  const MultitaskLoss combined = multitask_combine(
      xent,
      [&] {
        return attention_embedding_loss(states, targets, p.reg,
                                        Distance{cfg.distance, p.reg.out_dim()});
      },
      cfg.effective_sigma());
  LossBreakdown out{combined.main, combined.aux, combined.value, std::isfinite(combined.value)};
  if (!grad) return out;

  ModelParams &g = *grad;
  Matrix denc(T, d.d_enc), dkeys(T, d.d_state);
  std::vector<double> ds_next(d.d_state, 0.0), dphi(d.d_dec), dpre(d.d_dec), dlogits(d.symbols - 1);
  std::vector<double> djoined(d.d_state + d.d_enc), ds(d.d_state), dz(d.d_state), dalpha(T),
      dscore(T);
  for (std::size_t i = N; i-- > 0;) {
    const AttentionStep &s = steps[i];
    // cross-entropy through Lambda
    for (std::size_t k = 0; k + 1 < d.symbols; ++k) dlogits[k] = std::exp(s.log_probs[k]);
    dlogits[static_cast<std::size_t>(tokens[i] - 1)] -= 1.0;
    ger_acc(g.lambda, dlogits, s.phi);
    std::fill(dphi.begin(), dphi.end(), 0.0);
    gemv_t_acc(p.lambda, dlogits, dphi);
    if (combined.aux_scaled) axpy(dphi, combined.aux_scaled->grad_phi.row(i), 1.0);
    // phi^d = tanh(W_c [s; c] + b_c)
    detail::tanh_backward(s.phi, dphi, dpre);
    std::vector<double> joined(s.state);
    joined.insert(joined.end(), s.context.begin(), s.context.end());
    ger_acc(g.comb_w, dpre, joined);
    axpy(g.comb_b, dpre, 1.0);
    std::fill(djoined.begin(), djoined.end(), 0.0);
    gemv_t_acc(p.comb_w, dpre, djoined);
    for (std::size_t k = 0; k < d.d_state; ++k) ds[k] = djoined[k] + ds_next[k];
    const std::span<const double> dctx(djoined.data() + d.d_state, d.d_enc);
    // context and attention weights
    for (std::size_t t = 0; t < T; ++t) {
      dalpha[t] = dot(dctx, enc.row(t));
      axpy(denc.row(t), dctx, s.weights[t]);
    }
    const double mean = dot(s.weights, dalpha);
    for (std::size_t t = 0; t < T; ++t) dscore[t] = s.weights[t] * (dalpha[t] - mean);
    for (std::size_t t = 0; t < T; ++t) {
      axpy(ds, keys.row(t), dscore[t]);
      axpy(dkeys.row(t), s.state, dscore[t]);
    }
    // s_i = tanh(W_s E[y_{i-1}] + U_s s_{i-1} + b_s)
    detail::tanh_backward(s.state, ds, dz);
    const int prev = i == 0 ? kBlank : tokens[i - 1];
    ger_acc(g.dec_w, dz, p.tok_emb.row(static_cast<std::size_t>(prev)));
    axpy(g.dec_b, dz, 1.0);
    gemv_t_acc(p.dec_w, dz, g.tok_emb.row(static_cast<std::size_t>(prev)));
    std::fill(ds_next.begin(), ds_next.end(), 0.0);
    if (i > 0) {
      ger_acc(g.dec_u, dz, steps[i - 1].state);
      gemv_t_acc(p.dec_u, dz, ds_next);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    ger_acc(g.att_w, dkeys.row(t), enc.row(t));
    gemv_t_acc(p.att_w, dkeys.row(t), denc.row(t));
  }
  if (combined.aux_scaled) {
    axpy(g.reg.weight.data, combined.aux_scaled->grad_weight.data, 1.0);
    axpy(g.reg.bias, combined.aux_scaled->grad_bias, 1.0);
  }
  encode_backward(p, x, enc, denc, g);
  return out;
}

inline LossBreakdown objective(const ModelParams &p, const FeatureSeq &x,
                               const TokenSeq &tokens, const EmbeddingSeq &targets,
                               const ObjectiveConfig &cfg, ModelParams *grad,
                               PosteriorHooks hooks = {}) {
  return p.dims.decoder == DecoderKind::Transducer
             ? transducer_objective(p, x, tokens, targets, cfg, grad, hooks)
             : attention_objective(p, x, tokens, targets, cfg, grad);
}

// ---------------------------------------------------------------------------
// Decoding

/// Greedy transducer decoding with the incremental prediction network.
inline GreedyResult greedy_decode_transducer(const ModelParams &p, const FeatureSeq &x,
                                             std::size_t max_symbols_per_frame) {
  const auto &d = p.dims;
  const Matrix phi = encode(p, x);
  Matrix acoustic(phi.rows, d.d_joint);
  for (std::size_t t = 0; t < phi.rows; ++t) gemv_acc(p.joint_wa, phi.row(t), acoustic.row(t));
  std::vector<double> h(d.d_pred), language(d.d_joint), hidden(d.d_joint), logits(d.symbols);
  std::size_t consumed = 0;
  auto refresh_language = [&] {
    language = p.joint_b;
    gemv_acc(p.joint_wb, h, language);
  };
  detail::recurrent_step(p.tok_emb, p.pred_w, p.pred_u, p.pred_b, kBlank, {}, h);
  refresh_language();
  auto scores = [&](std::size_t t, const TokenSeq &prefix) -> std::span<const double> {
    if (prefix.size() > consumed) {
      std::vector<double> prev = h;
      detail::recurrent_step(p.tok_emb, p.pred_w, p.pred_u, p.pred_b, prefix.back(), prev, h);
      consumed = prefix.size();
      refresh_language();
    }
    joint_logits_at(p, acoustic.row(t), language, hidden, logits);
    return logits;
  };
  return greedy_decode_transducer(phi.rows, scores, max_symbols_per_frame);
}

/// Greedy attention decoding from the start input until EOS or max_len.
inline TokenSeq greedy_decode_attention(const ModelParams &p, const FeatureSeq &x, int eos,
                                        std::size_t max_len) {
  const Matrix enc = encode(p, x);
  const Matrix keys = attention_keys(p, enc);
  TokenSeq out;
  std::vector<double> state;
  int prev = kBlank;
  while (out.size() < max_len) {
    AttentionStep s = attention_step(p, enc, keys, prev, state);
    prev = static_cast<int>(argmax(s.log_probs)) + 1;
    out.push_back(prev);
    state = std::move(s.state);
    if (prev == eos) break;
  }
  return out;
}

}  // namespace edistill
