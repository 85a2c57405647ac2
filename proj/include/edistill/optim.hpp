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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edistill {

/// Anything exposing its tensors as (name, std::vector<double>&) pairs in a
/// fixed order. ModelParams is one; tests use single-tensor sets.
template <class P>
concept TensorSet = requires(P &p) {
  p.for_each_tensor([](std::string_view, std::vector<double> &) {});
};

namespace detail {

template <TensorSet P>
std::vector<std::pair<std::string_view, std::vector<double> *>> tensors_of(P &p) {
  std::vector<std::pair<std::string_view, std::vector<double> *>> out;
  p.for_each_tensor([&](std::string_view name, std::vector<double> &d) { out.emplace_back(name, &d); });
  return out;
}

template <TensorSet P>
std::vector<const std::vector<double> *> tensors_of(const P &p) {
  std::vector<const std::vector<double> *> out;
  p.for_each_tensor([&](std::string_view, const std::vector<double> &d) { out.push_back(&d); });
  return out;
}

}  // namespace detail

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments plus the EMA shadow of the parameter trajectory.
template <TensorSet P>
struct OptimizerState {
  AdamConfig adam;
  std::uint64_t step = 0;
  P m;
  P v;
  P ema;
  double ema_decay = 0.99;

  OptimizerState() = default;
  OptimizerState(const P &params, AdamConfig cfg, double decay)
      : adam(cfg), m(zeroed(params)), v(zeroed(params)), ema(params), ema_decay(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must be in [0, 1)");
  }

  static P zeroed(const P &p) {
    P z = p;
    z.for_each_tensor([](std::string_view, std::vector<double> &d) {
      for (double &x : d) x = 0.0;
    });
    return z;
  }
};

/// Bias-corrected Adam update. Throws std::domain_error naming the tensor
/// and index of the first non-finite gradient; nothing is modified then.
template <TensorSet P>
void adam_step(OptimizerState<P> &s, P &params, const P &grads) {
  auto pt = detail::tensors_of(params);
  auto mt = detail::tensors_of(s.m);
  auto vt = detail::tensors_of(s.v);
  const auto gt = detail::tensors_of(grads);
  if (pt.size() != gt.size() || mt.size() != pt.size() || vt.size() != pt.size())
    throw std::invalid_argument("adam_step: tensor sets do not match");
  for (std::size_t k = 0; k < pt.size(); ++k) {
    if (pt[k].second->size() != gt[k]->size() || mt[k].second->size() != gt[k]->size())
      throw std::invalid_argument("adam_step: shape mismatch in tensor " +
                                  std::string(pt[k].first));
    const auto &g = *gt[k];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw std::domain_error("adam_step: non-finite gradient in tensor " +
                                std::string(pt[k].first) + " at index " + std::to_string(i));
  }
  ++s.step;
  const auto &c = s.adam;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < pt.size(); ++k) {
    auto &w = *pt[k].second;
    auto &m = *mt[k].second;
    auto &v = *vt[k].second;
    const auto &g = *gt[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

/// shadow <- decay * shadow + (1 - decay) * params
template <TensorSet P>
void ema_update(OptimizerState<P> &s, const P &params) {
  auto et = detail::tensors_of(s.ema);
  const auto pt = detail::tensors_of(params);
  if (et.size() != pt.size()) throw std::invalid_argument("ema_update: tensor sets do not match");
  const double a = s.ema_decay, b = 1.0 - s.ema_decay;
  for (std::size_t k = 0; k < et.size(); ++k) {
    auto &e = *et[k].second;
    const auto &p = *pt[k];
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = a * e[i] + b * p[i];
  }
}

}  // namespace edistill
