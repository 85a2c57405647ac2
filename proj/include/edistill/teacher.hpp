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

// Frozen contextual token embedder used as the distillation teacher.
//
//   base(y)  = normalize(g),  g ~ N(0, I) drawn from stream ("teacher-base", y)
//   e_i      = normalize(tanh(W_c [base(y_{i-1}); base(y_i); base(y_{i+1})]))
//
// with y_0 = BOS and y_{N+1} = EOS as boundary padding and W_c drawn once
// from the seed. Nothing here is trainable.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edistill/io.hpp"
#include "edistill/numeric.hpp"
#include "edistill/rng.hpp"
#include "edistill/types.hpp"

namespace edistill {

struct TeacherConfig {
  std::size_t dim = 32;
  std::uint64_t seed = 7;
  Vocabulary vocab;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<double> base_embedding(const TeacherConfig &cfg, int token) {
  if (!cfg.vocab.contains(token))
    throw std::invalid_argument("base_embedding: unknown token " + std::to_string(token));
  CounterRng rng(cfg.seed, CounterRng::stream_id("teacher-base",
                                                 static_cast<std::uint64_t>(token)));
  std::vector<double> v(cfg.dim);
  for (double &x : v) x = rng.normal();
  const double n = l2_norm(v);
  for (double &x : v) x /= n;
  return v;
}

class Teacher {
 public:
  explicit Teacher(TeacherConfig cfg) : cfg_(cfg), mix_(cfg.dim, 3 * cfg.dim) {
    if (cfg_.dim < 1) throw std::invalid_argument("teacher dim must be >= 1");
    for (int id = 1; id <= cfg_.vocab.eos(); ++id) base_.push_back(base_embedding(cfg_, id));
    CounterRng rng(cfg_.seed, CounterRng::stream_id("teacher-mix"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    for (double &w : mix_.data) w = scale * rng.normal();
  }

  const TeacherConfig &config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }

  std::span<const double> base(int token) const {
    if (!cfg_.vocab.contains(token))
      throw std::invalid_argument("teacher: unknown token " + std::to_string(token));
    return base_[static_cast<std::size_t>(token - 1)];
  }

  EmbeddingSeq contextual_embed(const TokenSeq &tokens) const {
    const std::size_t n = tokens.size(), D = cfg_.dim;
    EmbeddingSeq out{Matrix(n, D)};
    std::vector<double> ctx(3 * D), h(D);
    for (std::size_t i = 0; i < n; ++i) {
      const int prev = i == 0 ? cfg_.vocab.bos() : tokens[i - 1];
      const int next = i + 1 == n ? cfg_.vocab.eos() : tokens[i + 1];
      std::copy_n(base(prev).begin(), D, ctx.begin());
      std::copy_n(base(tokens[i]).begin(), D, ctx.begin() + D);
      std::copy_n(base(next).begin(), D, ctx.begin() + 2 * D);
      std::fill(h.begin(), h.end(), 0.0);
      gemv_acc(mix_, ctx, h);
      for (double &x : h) x = std::tanh(x);
      const double norm = l2_norm(h);
      for (std::size_t j = 0; j < D; ++j) out.vectors(i, j) = h[j] / norm;
    }
    return out;
  }

  /// Identifies the vocabulary the teacher was built for.
  std::string vocab_hash() const {
    return hex64(fnv1a64("regular=" + std::to_string(cfg_.vocab.regular) +
                         ";bos=" + std::to_string(cfg_.vocab.bos()) +
                         ";eos=" + std::to_string(cfg_.vocab.eos())));
  }

 private:
  const TeacherConfig cfg_;
  std::vector<std::vector<double>> base_;
  Matrix mix_;
};

/// Precomputed targets keyed by utterance id.
struct TargetStore {
  std::map<std::string, EmbeddingSeq> targets;
  nlohmann::json manifest;

  const EmbeddingSeq &get(const std::string &id) const {
    auto it = targets.find(id);
    if (it == targets.end()) throw NotFoundError("no teacher targets for utterance '" + id + "'");
    return it->second;
  }
};

inline std::string target_manifest_path(const std::string &store_path) {
  return store_path + ".manifest.json";
}

/// Embeds every utterance and writes the JSON-lines store plus its sidecar
/// manifest. `Range` elements need `.id` and `.tokens`.
template <class Range>
TargetStore cache_targets(const Teacher &teacher, const Range &dataset,
                          const std::string &path) {
  TargetStore store;
  std::string lines;
  for (const auto &utt : dataset) {
    if (store.targets.count(utt.id))
      throw std::invalid_argument("cache_targets: duplicate utterance id '" + utt.id + "'");
    auto emb = teacher.contextual_embed(utt.tokens);
    nlohmann::json line = {{"id", utt.id}, {"emb", io::matrix_rows(emb.vectors)}};
    lines += line.dump();
    lines += '\n';
    store.targets.emplace(utt.id, std::move(emb));
  }
  store.manifest = {{"format_version", 1},
                    {"seed", teacher.config().seed},
                    {"dim", teacher.dim()},
                    {"vocab_hash", teacher.vocab_hash()},
                    {"count", store.targets.size()},
                    {"checksum", hex64(fnv1a64(lines))}};
  if (!path.empty()) {
    io::write_file(path, lines);
    io::write_file(target_manifest_path(path), store.manifest.dump(2) + "\n");
  }
  return store;
}

inline TargetStore load_targets(const std::string &path) {
  const std::string bytes = io::read_file(path);
  TargetStore store;
  store.manifest = nlohmann::json::parse(io::read_file(target_manifest_path(path)));
  if (store.manifest.value("checksum", std::string{}) != hex64(fnv1a64(bytes)))
    throw std::runtime_error("target store '" + path + "' fails its manifest checksum");
  const std::size_t dim = store.manifest.at("dim").get<std::size_t>();
  std::istringstream in(bytes);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto id = j.at("id").get<std::string>();
    EmbeddingSeq emb{io::matrix_from_rows(j.at("emb"), dim)};
    if (!store.targets.emplace(id, std::move(emb)).second)
      throw std::runtime_error("target store has duplicate id '" + id + "'");
  }
  return store;
}

}  // namespace edistill
