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

// One flat JSON document configures every CLI subcommand. Keys not listed
// in config_to_json(RunConfig{}) are rejected; any key can be overridden with
// --key=value on the command line.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edistill/io.hpp"
#include "edistill/model.hpp"
#include "edistill/synth.hpp"
#include "edistill/teacher.hpp"

namespace edistill {

/// Raised for invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  // data generation
  std::string data_dir = "data";
  std::size_t utterances = 2400;
  std::array<double, 3> split_fractions{5.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0};
  std::uint64_t split_seed = 11;
  CorpusConfig corpus;
  std::size_t teacher_dim = 32;
  std::uint64_t teacher_seed = 7;

  // training
  DecoderKind decoder = DecoderKind::Transducer;
  AuxKind aux = AuxKind::None;
  double sigma = 0.0;
  DistanceKind distance = DistanceKind::L1Normalized;
  PosteriorWeights posterior = PosteriorWeights::Normalized;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double ema_decay = 0.99;
  std::string eval_split = "dev";
  std::string out_dir = "run";
  std::size_t train_limit = 0;  // 0 = whole train split
  std::size_t max_symbols_per_frame = 8;
  std::size_t max_decode_len = 40;
  std::size_t threads = 1;
  std::size_t context = 3;
  std::size_t d_token = 16;
  std::size_t d_enc = 32;
  std::size_t d_pred = 32;
  std::size_t d_joint = 32;
  std::size_t d_state = 32;
  std::size_t d_dec = 32;

  // sweep; empty means the decoder's default grid
  std::vector<double> sigmas;

  ObjectiveConfig objective() const { return {aux, sigma, distance, posterior}; }

  TeacherConfig teacher() const { return {teacher_dim, teacher_seed, corpus.vocab}; }

  /// Model shapes for data with `feature_dim` features and `vocab`.
  ModelDims dims(std::size_t feature_dim, const Vocabulary &vocab, std::size_t emb_dim) const {
    ModelDims d;
    d.decoder = decoder;
    d.feature_dim = feature_dim;
    d.context = context;
    d.symbols = vocab.symbols();
    d.d_token = d_token;
    d.d_enc = d_enc;
    d.d_pred = d_pred;
    d.d_joint = d_joint;
    d.d_state = d_state;
    d.d_dec = d_dec;
    d.emb_dim = emb_dim;
    return d;
  }

  void validate() const {
    if (aux == AuxKind::TokenSync && decoder != DecoderKind::Transducer)
      throw ConfigError("aux=token_sync requires decoder=transducer");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
    for (double s : sigmas)
      if (!(s >= 0.0)) throw ConfigError("sweep sigmas must be nonnegative");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
    // checkpoint selection never looks at the test split
    if (eval_split != "dev" && eval_split != "train")
      throw ConfigError("eval_split must be dev or train");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (teacher_dim < 1) throw ConfigError("teacher_dim must be >= 1");
    try {
      corpus.validate();
      split_sizes(utterances, split_fractions);
      dims(corpus.feature_dim, corpus.vocab, teacher_dim).validate();
    } catch (const std::invalid_argument &e) {
      throw ConfigError(e.what());
    }
  }
};

/// The sweep grid used when `sigmas` is empty: powers of two from 1 to 1/16
/// for attention, powers of ten from 1e-1 to 1e-4 for the transducer.
inline std::vector<double> default_sigma_grid(DecoderKind d) {
  if (d == DecoderKind::Attention) return {1.0, 0.5, 0.25, 0.125, 0.0625};
  return {1e-1, 1e-2, 1e-3, 1e-4};
}

inline nlohmann::json config_to_json(const RunConfig &c) {
  return {{"data_dir", c.data_dir},
          {"utterances", c.utterances},
          {"split_fractions", c.split_fractions},
          {"split_seed", c.split_seed},
          {"vocab_size", c.corpus.vocab.regular},
          {"min_len", c.corpus.min_len},
          {"max_len", c.corpus.max_len},
          {"min_duration", c.corpus.min_duration},
          {"max_duration", c.corpus.max_duration},
          {"feature_dim", c.corpus.feature_dim},
          {"noise_std", c.corpus.noise_std},
          {"corpus_seed", c.corpus.seed},
          {"teacher_dim", c.teacher_dim},
          {"teacher_seed", c.teacher_seed},
          {"decoder", to_string(c.decoder)},
          {"aux", to_string(c.aux)},
          {"sigma", c.sigma},
          {"distance", to_string(c.distance)},
          {"posterior", to_string(c.posterior)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"seed", c.seed},
          {"ema_decay", c.ema_decay},
          {"eval_split", c.eval_split},
          {"out_dir", c.out_dir},
          {"train_limit", c.train_limit},
          {"max_symbols_per_frame", c.max_symbols_per_frame},
          {"max_decode_len", c.max_decode_len},
          {"threads", c.threads},
          {"context", c.context},
          {"d_token", c.d_token},
          {"d_enc", c.d_enc},
          {"d_pred", c.d_pred},
          {"d_joint", c.d_joint},
          {"d_state", c.d_state},
          {"d_dec", c.d_dec},
          {"sigmas", c.sigmas}};
}

inline PosteriorWeights posterior_weights_from_string(const std::string &s) {
  if (s == "normalized") return PosteriorWeights::Normalized;
  if (s == "raw") return PosteriorWeights::Raw;
  throw std::invalid_argument("unknown posterior weighting '" + s + "'");
}

/// Parses a full or partial document on top of the defaults.
inline RunConfig config_from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json merged = config_to_json(RunConfig{});
  for (const auto &[key, value] : j.items()) {
    if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    merged[key] = value;
  }
  RunConfig c;
  try {
    const auto &m = merged;
    m.at("data_dir").get_to(c.data_dir);
    m.at("utterances").get_to(c.utterances);
    m.at("split_fractions").get_to(c.split_fractions);
    m.at("split_seed").get_to(c.split_seed);
    m.at("vocab_size").get_to(c.corpus.vocab.regular);
    m.at("min_len").get_to(c.corpus.min_len);
    m.at("max_len").get_to(c.corpus.max_len);
    m.at("min_duration").get_to(c.corpus.min_duration);
    m.at("max_duration").get_to(c.corpus.max_duration);
    m.at("feature_dim").get_to(c.corpus.feature_dim);
    m.at("noise_std").get_to(c.corpus.noise_std);
    m.at("corpus_seed").get_to(c.corpus.seed);
    m.at("teacher_dim").get_to(c.teacher_dim);
    m.at("teacher_seed").get_to(c.teacher_seed);
    c.decoder = decoder_kind_from_string(m.at("decoder").get<std::string>());
    c.aux = aux_kind_from_string(m.at("aux").get<std::string>());
    m.at("sigma").get_to(c.sigma);
    c.distance = distance_kind_from_string(m.at("distance").get<std::string>());
    c.posterior = posterior_weights_from_string(m.at("posterior").get<std::string>());
    m.at("epochs").get_to(c.epochs);
    m.at("batch_size").get_to(c.batch_size);
    m.at("lr").get_to(c.lr);
    m.at("seed").get_to(c.seed);
    m.at("ema_decay").get_to(c.ema_decay);
    m.at("eval_split").get_to(c.eval_split);
    m.at("out_dir").get_to(c.out_dir);
    m.at("train_limit").get_to(c.train_limit);
    m.at("max_symbols_per_frame").get_to(c.max_symbols_per_frame);
    m.at("max_decode_len").get_to(c.max_decode_len);
    m.at("threads").get_to(c.threads);
    m.at("context").get_to(c.context);
    m.at("d_token").get_to(c.d_token);
    m.at("d_enc").get_to(c.d_enc);
    m.at("d_pred").get_to(c.d_pred);
    m.at("d_joint").get_to(c.d_joint);
    m.at("d_state").get_to(c.d_state);
    m.at("d_dec").get_to(c.d_dec);
    m.at("sigmas").get_to(c.sigmas);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

/// Applies "key=value" overrides. Values parse as JSON when they can
/// (numbers, lists, true/false) and as plain strings otherwise; dashes in
/// keys are read as underscores.
inline nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string> &kv) {
  for (const auto &item : kv) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
    std::string key = item.substr(0, eq);
    for (char &ch : key)
      if (ch == '-') ch = '_';
    const std::string raw = item.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    doc[key] = value;
  }
  return doc;
}

inline RunConfig load_config(const std::string &path, const std::vector<std::string> &overrides) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  } catch (const std::runtime_error &e) {
    throw ConfigError(e.what());
  }
  return config_from_json(apply_overrides(std::move(doc), overrides));
}

}  // namespace edistill
