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

// Debug dump of one lattice:
//   {"T", "N", "K", "labels",
//    "log_probs": [t][u][k], "alpha", "beta", "gamma": [t][u],
//    "log_Z", "loss", "q_raw", "q_normalized": [i][t]}
// -inf is written as null. gamma and q are null when log_Z is -inf.

#include <cmath>
#include <optional>

#include <nlohmann/json.hpp>

#include "edistill/io.hpp"
#include "edistill/lattice.hpp"

namespace edistill {

struct LatticeDump {
  EmissionLattice emissions;
  AlphaBetaLattice scores;
  std::optional<Matrix> gamma;
  std::optional<AlignmentPosterior> posterior;
};

inline LatticeDump make_lattice_dump(const EmissionLattice &e) {
  LatticeDump d{e, forward_backward(e), std::nullopt, std::nullopt};
  if (d.scores.log_Z > kLogZero) {
    d.gamma = node_occupancy(d.scores.alpha, d.scores.beta, d.scores.log_Z, e);
    d.posterior = alignment_posterior(*d.gamma);
  }
  return d;
}

namespace detail {

inline nlohmann::json log_value(double v) {
  return std::isinf(v) && v < 0 ? nlohmann::json(nullptr) : nlohmann::json(v);
}

inline double log_value_from(const nlohmann::json &j) {
  return j.is_null() ? kLogZero : j.get<double>();
}

inline nlohmann::json table_json(const ScoreTable &s) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < s.T; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t u = 0; u <= s.N; ++u) row.push_back(log_value(s(t, u)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ScoreTable table_from_json(const nlohmann::json &j, std::size_t T, std::size_t N) {
  ScoreTable s(T, N);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= N; ++u) s(t, u) = log_value_from(j.at(t).at(u));
  return s;
}

}  // namespace detail

inline nlohmann::json lattice_dump_to_json(const LatticeDump &d) {
  const auto &e = d.emissions;
  nlohmann::json lp = nlohmann::json::array();
  for (std::size_t t = 0; t < e.T; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t u = 0; u <= e.N; ++u) {
      nlohmann::json node = nlohmann::json::array();
      for (double v : e.node(t, u)) node.push_back(detail::log_value(v));
      row.push_back(std::move(node));
    }
    lp.push_back(std::move(row));
  }
  const double log_Z = d.scores.log_Z;
  return {{"T", e.T},
          {"N", e.N},
          {"K", e.K},
          {"labels", e.labels},
          {"log_probs", lp},
          {"alpha", detail::table_json(d.scores.alpha)},
          {"beta", detail::table_json(d.scores.beta)},
          {"gamma", d.gamma ? io::matrix_rows(*d.gamma) : nlohmann::json(nullptr)},
          {"log_Z", detail::log_value(log_Z)},
          {"loss", log_Z > kLogZero ? nlohmann::json(-log_Z) : nlohmann::json(nullptr)},
          {"q_raw", d.posterior ? io::matrix_rows(d.posterior->raw) : nlohmann::json(nullptr)},
          {"q_normalized",
           d.posterior ? io::matrix_rows(d.posterior->normalized) : nlohmann::json(nullptr)}};
}

/// Parses a dump and checks it against the documented fields.
inline LatticeDump lattice_dump_from_json(const nlohmann::json &j) {
  const auto T = j.at("T").get<std::size_t>(), N = j.at("N").get<std::size_t>(),
             K = j.at("K").get<std::size_t>();
  EmissionLattice e(T, j.at("labels").get<std::vector<int>>(), K);
  if (e.N != N) throw std::runtime_error("lattice dump: label count does not match N");
  const auto &lp = j.at("log_probs");
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= N; ++u)
      for (std::size_t k = 0; k < K; ++k) e.at(t, u, k) = detail::log_value_from(lp.at(t).at(u).at(k));
  LatticeDump d;
  d.emissions = std::move(e);
  d.scores.alpha = detail::table_from_json(j.at("alpha"), T, N);
  d.scores.beta = detail::table_from_json(j.at("beta"), T, N);
  d.scores.log_Z = detail::log_value_from(j.at("log_Z"));
  if (!j.at("gamma").is_null()) {
    d.gamma = io::matrix_from_rows(j.at("gamma"), N + 1);
    d.posterior = AlignmentPosterior{io::matrix_from_rows(j.at("q_raw"), T),
                                     io::matrix_from_rows(j.at("q_normalized"), T)};
  }
  return d;
}

}  // namespace edistill
