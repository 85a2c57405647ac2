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

#include "edistill/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "edistill/decode.hpp"

namespace edistill {
namespace {

TEST(CorpusModel, TransitionRowsAreStochastic) {
  const CorpusModel m{CorpusConfig{}};
  for (std::size_t a = 0; a < m.transitions.rows; ++a) {
    double s = 0.0;
    for (double p : m.transitions.row(a)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(m.transitions(a, a), 0.0);
  }
}

TEST(GenCorpus, DeterministicAndWellFormed) {
  const CorpusConfig cfg;
  const auto a = gen_corpus(cfg, 50), b = gen_corpus(cfg, 50);
  std::string ja, jb;
  for (const auto &u : a.utterances) ja += utterance_to_json(u).dump();
  for (const auto &u : b.utterances) jb += utterance_to_json(u).dump();
  EXPECT_EQ(ja, jb);
  EXPECT_EQ(a.manifest.at("prng"), "splitmix64-counter");
  for (const auto &u : a.utterances) {
    ASSERT_GE(u.tokens.size(), 2 + cfg.min_len);
    ASSERT_LE(u.tokens.size(), 2 + cfg.max_len);
    EXPECT_EQ(u.tokens.front(), cfg.vocab.bos());
    EXPECT_EQ(u.tokens.back(), cfg.vocab.eos());
    const std::size_t L = u.tokens.size() - 2;
    for (std::size_t i = 1; i + 1 < u.tokens.size(); ++i) {
      EXPECT_GE(u.tokens[i], 1);
      EXPECT_LE(u.tokens[i], static_cast<int>(cfg.vocab.regular));
    }
    EXPECT_GE(u.features.rows, L * cfg.min_duration);
    EXPECT_LE(u.features.rows, L * cfg.max_duration);
    EXPECT_EQ(u.features.cols, cfg.feature_dim);
  }
  CorpusConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(gen_corpus(other, 5).utterances[0].tokens, a.utterances[0].tokens);
}

TEST(GenCorpus, EmptyAndPrefixProperty) {
  const auto empty = gen_corpus(CorpusConfig{}, 0);
  EXPECT_TRUE(empty.utterances.empty());
  EXPECT_EQ(empty.manifest.at("count"), 0);
  const auto small = gen_corpus(CorpusConfig{}, 5), big = gen_corpus(CorpusConfig{}, 9);
  for (std::size_t k = 0; k < 5; ++k)
    EXPECT_EQ(small.utterances[k].features, big.utterances[k].features);
}

TEST(GenCorpus, EmpiricalBigramsMatchTransitions) {
  const CorpusConfig cfg;
  const CorpusModel m(cfg);
  const std::size_t V = cfg.vocab.regular;
  Matrix counts(V, V);
  for (const auto &u : gen_corpus(cfg, 10000).utterances)
    for (std::size_t i = 2; i + 1 < u.tokens.size(); ++i)
      counts(static_cast<std::size_t>(u.tokens[i - 1] - 1),
             static_cast<std::size_t>(u.tokens[i] - 1)) += 1.0;
  for (std::size_t a = 0; a < V; ++a) {
    double n = 0.0;
    for (double c : counts.row(a)) n += c;
    ASSERT_GT(n, 0.0);
    double tv = 0.0;
    for (std::size_t b = 0; b < V; ++b) tv += std::abs(counts(a, b) / n - m.transitions(a, b));
    EXPECT_LT(0.5 * tv, 0.02) << "row " << a + 1 << " n=" << n;
  }
}

TEST(RenderFeatures, NoiselessUnitDuration) {
  CorpusConfig cfg;
  cfg.noise_std = 0.0;
  cfg.max_duration = 1;
  const CorpusModel m(cfg);
  CounterRng rng(3);
  const TokenSeq y{cfg.vocab.bos(), 4, 2, 9, cfg.vocab.eos()};
  const auto x = render_features(m, y, rng);
  ASSERT_EQ(x.rows, 3u);
  for (std::size_t f = 0; f < cfg.feature_dim; ++f) {
    EXPECT_EQ(x(0, f), m.template_of(4)[f]);
    EXPECT_EQ(x(2, f), m.template_of(9)[f]);
  }
  EXPECT_EQ(nearest_template_decode(m, x), (TokenSeq{4, 2, 9}));
  EXPECT_THROW(render_features(m, {0}, rng), std::invalid_argument);
}

double template_accuracy(double noise) {
  CorpusConfig cfg;
  cfg.noise_std = noise;
  const CorpusModel m(cfg);
  const auto corpus = gen_corpus(cfg, 300);
  std::size_t errors = 0, total = 0;
  for (const auto &u : corpus.utterances) {
    const auto ref = cfg.vocab.strip_sentinels(u.tokens);
    errors += edit_distance(nearest_template_decode(m, u.features), ref).distance;
    total += ref.size();
  }
  return 1.0 - static_cast<double>(errors) / static_cast<double>(total);
}

TEST(NearestTemplate, AccuracyDegradesWithNoise) {
  const double a0 = template_accuracy(0.0), a3 = template_accuracy(0.3),
               a10 = template_accuracy(1.0);
  EXPECT_GT(a0, 0.99);
  EXPECT_GE(a0, a3);
  EXPECT_GT(a3, a10);
}

TEST(Split, SizesDisjointDeterministic) {
  const auto corpus = gen_corpus(CorpusConfig{}, 101).utterances;
  const auto s = split(corpus, {0.8, 0.1, 0.1}, 4);
  EXPECT_EQ(s.train.size() + s.dev.size() + s.test.size(), corpus.size());
  EXPECT_LT(std::abs(static_cast<double>(s.train.size()) - 80.8), 1.0);
  EXPECT_LT(std::abs(static_cast<double>(s.dev.size()) - 10.1), 1.0);
  std::set<std::string> ids;
  for (const auto *part : {&s.train, &s.dev, &s.test})
    for (const auto &u : *part) EXPECT_TRUE(ids.insert(u.id).second);
  EXPECT_EQ(ids.size(), corpus.size());
  const auto again = split(corpus, {0.8, 0.1, 0.1}, 4);
  ASSERT_EQ(again.dev.size(), s.dev.size());
  for (std::size_t k = 0; k < s.dev.size(); ++k) EXPECT_EQ(again.dev[k].id, s.dev[k].id);

  const auto all = split(corpus, {1.0, 0.0, 0.0}, 4);
  EXPECT_EQ(all.train.size(), corpus.size());
  EXPECT_THROW(split(corpus, {0.5, 0.2, 0.2}, 4), std::invalid_argument);
}

TEST(CorpusFile, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "edistill-synth-roundtrip";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "c.jsonl").string();
  const auto corpus = gen_corpus(CorpusConfig{}, 6).utterances;
  write_corpus(path, corpus);
  const auto back = read_corpus(path, 8);
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_EQ(back[k].id, corpus[k].id);
    EXPECT_EQ(back[k].tokens, corpus[k].tokens);
    EXPECT_EQ(back[k].features, corpus[k].features);
  }
}

}  // namespace
}  // namespace edistill
