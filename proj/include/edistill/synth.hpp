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

// Synthetic paired corpora: bigram-chain transcripts rendered as noisy
// per-token template frames.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edistill/numeric.hpp"
#include "edistill/rng.hpp"
#include "edistill/io.hpp"
#include "edistill/types.hpp"

namespace edistill {

struct CorpusConfig {
  Vocabulary vocab;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t min_duration = 1;
  std::size_t max_duration = 3;
  std::size_t feature_dim = 8;
  double noise_std = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab.regular < 2) throw std::invalid_argument("corpus needs at least 2 regular tokens");
    if (min_len < 1 || min_len > max_len) throw std::invalid_argument("bad length range");
    if (min_duration < 1 || min_duration > max_duration)
      throw std::invalid_argument("bad duration range");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
  }
};

inline void to_json(nlohmann::json &j, const CorpusConfig &c) {
  j = {{"vocab_size", c.vocab.regular}, {"min_len", c.min_len},
       {"max_len", c.max_len},          {"min_duration", c.min_duration},
       {"max_duration", c.max_duration}, {"feature_dim", c.feature_dim},
       {"noise_std", c.noise_std},      {"seed", c.seed}};
}

inline void from_json(const nlohmann::json &j, CorpusConfig &c) {
  c.vocab.regular = j.value("vocab_size", c.vocab.regular);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.min_duration = j.value("min_duration", c.min_duration);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
}

struct Utterance {
  std::string id;
  TokenSeq tokens;  // BOS y_1 .. y_L EOS
  FeatureSeq features;
};

/// Seeded quantities shared by every utterance of a corpus.
struct CorpusModel {
  CorpusConfig cfg;
  Matrix transitions;  // regular x regular over ids 1..regular, zero diagonal
  Matrix templates;    // regular x feature_dim

  explicit CorpusModel(const CorpusConfig &c) : cfg(c) {
    cfg.validate();
    const std::size_t V = cfg.vocab.regular;
    // Support is the union of kSuccessors random derangements with
    // exp(g) weights, Sinkhorn-balanced to be doubly stochastic so every
    // token is visited equally often in the long run.
    constexpr int kSuccessors = 4;
    transitions = Matrix(V, V);
    CounterRng trng(cfg.seed, CounterRng::stream_id("bigram"));
    std::vector<std::size_t> perm(V);
    for (int k = 0; k < kSuccessors; ++k) {
      bool fixed_point = true;
      while (fixed_point) {
        for (std::size_t i = 0; i < V; ++i) perm[i] = i;
        for (std::size_t i = V; i > 1; --i)
          std::swap(perm[i - 1], perm[static_cast<std::size_t>(
                                     trng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
        fixed_point = false;
        for (std::size_t i = 0; i < V; ++i) fixed_point = fixed_point || perm[i] == i;
      }
      for (std::size_t a = 0; a < V; ++a) transitions(a, perm[a]) = 1.0;
    }
    for (double &p : transitions.data)
      if (p > 0.0) p = std::exp(trng.normal());
    for (int iter = 0; iter < 10000; ++iter) {
      double worst = 0.0;
      for (std::size_t b = 0; b < V; ++b) {
        double s = 0.0;
        for (std::size_t a = 0; a < V; ++a) s += transitions(a, b);
        for (std::size_t a = 0; a < V; ++a) transitions(a, b) /= s;
      }
      for (std::size_t a = 0; a < V; ++a) {
        double s = 0.0;
        for (double p : transitions.row(a)) s += p;
        for (double &p : transitions.row(a)) p /= s;
        worst = std::max(worst, std::abs(s - 1.0));
      }
      if (worst < 1e-13) break;
    }
    templates = Matrix(V, cfg.feature_dim);
    CounterRng frng(cfg.seed, CounterRng::stream_id("templates"));
    for (double &v : templates.data) v = frng.normal();
  }

  std::span<const double> template_of(int token) const {
    return templates.row(static_cast<std::size_t>(token - 1));
  }
};

inline int sample_categorical(std::span<const double> p, CounterRng &rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    acc += p[k];
    if (u < acc) return static_cast<int>(k);
  }
  // rounding tail: last index with positive mass
  for (std::size_t k = p.size(); k-- > 0;)
    if (p[k] > 0.0) return static_cast<int>(k);
  return 0;
}

/// BOS, a bigram-chain sample of L regular tokens, EOS.
inline TokenSeq sample_transcript(const CorpusModel &m, CounterRng &rng) {
  const auto &cfg = m.cfg;
  const auto L = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.min_len), static_cast<std::int64_t>(cfg.max_len)));
  TokenSeq y{cfg.vocab.bos()};
  int prev = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(cfg.vocab.regular)));
  y.push_back(prev);
  for (std::size_t i = 1; i < L; ++i) {
    prev = 1 + sample_categorical(m.transitions.row(static_cast<std::size_t>(prev - 1)), rng);
    y.push_back(prev);
  }
  y.push_back(cfg.vocab.eos());
  return y;
}

/// Each regular token becomes its template repeated for a sampled duration,
/// plus N(0, noise_std^2) per coordinate. Sentinels emit no frames.
inline FeatureSeq render_features(const CorpusModel &m, const TokenSeq &tokens,
                                  CounterRng &rng) {
  const auto &cfg = m.cfg;
  std::vector<std::pair<int, std::size_t>> spans;
  std::size_t T = 0;
  for (int y : tokens) {
    if (cfg.vocab.is_sentinel(y)) continue;
    if (y < 1 || static_cast<std::size_t>(y) > cfg.vocab.regular)
      throw std::invalid_argument("render_features: invalid token " + std::to_string(y));
    const auto dur = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(cfg.min_duration),
                        static_cast<std::int64_t>(cfg.max_duration)));
    spans.emplace_back(y, dur);
    T += dur;
  }
  FeatureSeq x(T, cfg.feature_dim);
  std::size_t t = 0;
  for (auto [y, dur] : spans) {
    const auto tmpl = m.template_of(y);
    for (std::size_t d = 0; d < dur; ++d, ++t)
      for (std::size_t f = 0; f < cfg.feature_dim; ++f)
        x(t, f) = tmpl[f] + (cfg.noise_std > 0.0 ? cfg.noise_std * rng.normal() : 0.0);
  }
  return x;
}

inline std::string utterance_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt-%06zu", index);
  return buf;
}

struct Corpus {
  std::vector<Utterance> utterances;
  nlohmann::json manifest;
};

/// Utterance k depends only on (seed, k): a corpus of n is a prefix of any
/// larger corpus under the same config.
inline Utterance generate_utterance(const CorpusModel &m, std::size_t index) {
  CounterRng rng(m.cfg.seed, CounterRng::stream_id("utt", index));
  Utterance u;
  u.id = utterance_id(index);
  u.tokens = sample_transcript(m, rng);
  u.features = render_features(m, u.tokens, rng);
  return u;
}

inline Corpus gen_corpus(const CorpusConfig &cfg, std::size_t count) {
  const CorpusModel model(cfg);
  Corpus c;
  c.utterances.reserve(count);
  for (std::size_t k = 0; k < count; ++k) c.utterances.push_back(generate_utterance(model, k));
  c.manifest = {{"format_version", 1},
                {"cfg", cfg},
                {"seed", cfg.seed},
                {"count", count},
                {"prng", std::string(CounterRng::kName)}};
  return c;
}

struct Splits {
  std::vector<Utterance> train, dev, test;
};

/// Largest-remainder sizes, so each part is within 1 of its exact share.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> f) {
  double total = 0.0;
  for (double x : f) {
    if (!(x >= 0.0)) throw std::invalid_argument("split fractions must be nonnegative");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = f[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(sizes[k]);
    used += sizes[k];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++sizes[best];
    rem[best] = -1.0;
    ++used;
  }
  return sizes;
}

inline Splits split(const std::vector<Utterance> &corpus, std::array<double, 3> fractions,
                    std::uint64_t seed) {
  const auto sizes = split_sizes(corpus.size(), fractions);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(seed, CounterRng::stream_id("split"));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  Splits s;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    auto &dst = k == 0 ? s.train : k == 1 ? s.dev : s.test;
    std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                  order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[k]));
    std::sort(part.begin(), part.end());
    for (std::size_t idx : part) dst.push_back(corpus[idx]);
    pos += sizes[k];
  }
  return s;
}

/// Nearest-template frame labelling with repeats merged; recovers the
/// transcript exactly from noiseless features (transitions have no
/// self-loops). Returns BOS/EOS-free tokens.
inline TokenSeq nearest_template_decode(const CorpusModel &m, const FeatureSeq &x) {
  TokenSeq out;
  for (std::size_t t = 0; t < x.rows; ++t) {
    int best = 1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < m.cfg.vocab.regular; ++v) {
      double d = 0.0;
      for (std::size_t f = 0; f < x.cols; ++f) {
        const double diff = x(t, f) - m.templates(v, f);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(v + 1);
      }
    }
    if (out.empty() || out.back() != best) out.push_back(best);
  }
  return out;
}

// JSON-lines corpus files.

inline nlohmann::json utterance_to_json(const Utterance &u) {
  return {{"id", u.id}, {"tokens", u.tokens}, {"features", io::matrix_rows(u.features)}};
}

inline Utterance utterance_from_json(const nlohmann::json &j, std::size_t feature_dim) {
  Utterance u;
  u.id = j.at("id").get<std::string>();
  u.tokens = j.at("tokens").get<TokenSeq>();
  u.features = io::matrix_from_rows(j.at("features"), feature_dim);
  return u;
}

inline void write_corpus(const std::string &path, const std::vector<Utterance> &utts) {
  std::string bytes;
  for (const auto &u : utts) {
    bytes += utterance_to_json(u).dump();
    bytes += '\n';
  }
  io::write_file(path, bytes);
}

inline std::vector<Utterance> read_corpus(const std::string &path, std::size_t feature_dim = 0) {
  std::istringstream in(io::read_file(path));
  std::vector<Utterance> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(utterance_from_json(nlohmann::json::parse(line), feature_dim));
    if (!seen.insert(out.back().id).second)
      throw std::runtime_error("corpus '" + path + "' repeats id '" + out.back().id + "'");
  }
  return out;
}

}  // namespace edistill
