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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "edistill/checkpoint.hpp"
#include "edistill/config.hpp"
#include "edistill/decode.hpp"
#include "edistill/io.hpp"
#include "edistill/model.hpp"
#include "edistill/optim.hpp"
#include "edistill/synth.hpp"
#include "edistill/teacher.hpp"

namespace edistill {

// ---------------------------------------------------------------------------
// Data on disk

namespace files {
inline std::string split(const std::string &dir, const std::string &name) {
  return (std::filesystem::path(dir) / (name + ".jsonl")).string();
}
inline std::string corpus_manifest(const std::string &dir) {
  return (std::filesystem::path(dir) / "corpus_manifest.json").string();
}
inline std::string targets(const std::string &dir) {
  return (std::filesystem::path(dir) / "targets.jsonl").string();
}
inline std::string in(const std::string &dir, const std::string &name) {
  return (std::filesystem::path(dir) / name).string();
}
}  // namespace files

struct DataSummary {
  std::size_t train = 0, dev = 0, test = 0;
};

/// Corpus, splits and teacher targets under cfg.data_dir.
inline DataSummary generate_data(const RunConfig &cfg) {
  std::filesystem::create_directories(cfg.data_dir);
  const Corpus corpus = gen_corpus(cfg.corpus, cfg.utterances);
  const Splits s = split(corpus.utterances, cfg.split_fractions, cfg.split_seed);
  write_corpus(files::split(cfg.data_dir, "train"), s.train);
  write_corpus(files::split(cfg.data_dir, "dev"), s.dev);
  write_corpus(files::split(cfg.data_dir, "test"), s.test);
  const Teacher teacher(cfg.teacher());
  cache_targets(teacher, corpus.utterances, files::targets(cfg.data_dir));
  nlohmann::json manifest = corpus.manifest;
  manifest["split_fractions"] = cfg.split_fractions;
  manifest["split_seed"] = cfg.split_seed;
  manifest["split_sizes"] = {{"train", s.train.size()}, {"dev", s.dev.size()},
                             {"test", s.test.size()}};
  io::write_file(files::corpus_manifest(cfg.data_dir), manifest.dump(2) + "\n");
  return {s.train.size(), s.dev.size(), s.test.size()};
}

struct Dataset {
  CorpusConfig corpus;
  std::vector<Utterance> train, dev, test;
  TargetStore targets;

  const std::vector<Utterance> &split(const std::string &name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
  }
  std::size_t emb_dim() const { return targets.manifest.at("dim").get<std::size_t>(); }
};

inline Dataset load_dataset(const std::string &dir) {
  Dataset d;
  const auto manifest = nlohmann::json::parse(io::read_file(files::corpus_manifest(dir)));
  d.corpus = manifest.at("cfg").get<CorpusConfig>();
  const std::size_t F = d.corpus.feature_dim;
  d.train = read_corpus(files::split(dir, "train"), F);
  d.dev = read_corpus(files::split(dir, "dev"), F);
  d.test = read_corpus(files::split(dir, "test"), F);
  d.targets = load_targets(files::targets(dir));
  return d;
}

// ---------------------------------------------------------------------------
// Evaluation

struct TerReport {
  std::size_t utterances = 0;
  std::size_t reference_tokens = 0;
  EditCounts errors;
  double ter() const {
    return reference_tokens == 0 ? 0.0
                                 : static_cast<double>(errors.distance) /
                                       static_cast<double>(reference_tokens);
  }
};

inline nlohmann::json ter_to_json(const TerReport &r) {
  return {{"utterances", r.utterances},
          {"reference_tokens", r.reference_tokens},
          {"errors", r.errors.distance},
          {"substitutions", r.errors.substitutions},
          {"insertions", r.errors.insertions},
          {"deletions", r.errors.deletions},
          {"ter", r.ter()}};
}

inline TokenSeq decode_utterance(const ModelParams &p, const FeatureSeq &x,
                                 const RunConfig &cfg, const Vocabulary &vocab) {
  if (p.dims.decoder == DecoderKind::Transducer)
    return greedy_decode_transducer(p, x, cfg.max_symbols_per_frame).tokens;
  return greedy_decode_attention(p, x, vocab.eos(), cfg.max_decode_len);
}

/// Greedy decoding over `utts`; sentinels are stripped from both sides
/// before scoring.
inline TerReport evaluate(const ModelParams &p, const std::vector<Utterance> &utts,
                          const RunConfig &cfg, const Vocabulary &vocab) {
  if (utts.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  TerReport r;
  for (const auto &u : utts) {
    const auto hyp = vocab.strip_sentinels(decode_utterance(p, u.features, cfg, vocab));
    const auto ref = vocab.strip_sentinels(u.tokens);
    r.errors += edit_distance(hyp, ref);
    r.reference_tokens += ref.size();
    ++r.utterances;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct EpochMetrics {
  std::size_t epoch = 0;
  double main_loss = 0.0;
  double aux_loss = 0.0;
  double combined_loss = 0.0;
  double dev_ter = 0.0;
  double ema_dev_ter = 0.0;
};

inline constexpr const char *kMetricsHeader =
    "epoch,main_loss,aux_loss,combined_loss,dev_ter,ema_dev_ter";

inline std::string format_metrics(const std::vector<EpochMetrics> &rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const auto &m : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.main_loss,
                  m.aux_loss, m.combined_loss, m.dev_ter, m.ema_dev_ter);
    out += buf;
  }
  return out;
}

inline std::vector<EpochMetrics> parse_metrics(const std::string &csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw std::runtime_error("metrics file has an unexpected header");
  std::vector<EpochMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &m.epoch, &m.main_loss, &m.aux_loss,
                    &m.combined_loss, &m.dev_ter, &m.ema_dev_ter) != 6)
      throw std::runtime_error("bad metrics row '" + line + "'");
    rows.push_back(m);
  }
  return rows;
}

struct RunSummary {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_dev_ter = 0.0;
  TerReport test;
  std::size_t parameter_count = 0;
  std::uint64_t steps = 0;
};

inline nlohmann::json summary_to_json(const RunSummary &s, const RunConfig &cfg) {
  const auto &last = s.epochs.back();
  return {{"config", config_to_json(cfg)},
          {"parameter_count", s.parameter_count},
          {"steps", s.steps},
          {"epochs_run", last.epoch},
          {"best_epoch", s.best_epoch},
          {"best_dev_ter", s.best_dev_ter},
          {"test", ter_to_json(s.test)},
          {"initial", {{"main_loss", s.epochs.front().main_loss},
                       {"aux_loss", s.epochs.front().aux_loss}}},
          {"final", {{"main_loss", last.main_loss},
                     {"aux_loss", last.aux_loss},
                     {"combined_loss", last.combined_loss}}},
          {"max_symbols_per_frame", cfg.max_symbols_per_frame},
          {"decode_ties", "lowest symbol index"}};
}

// ---------------------------------------------------------------------------
// Training

/// Non-finite loss or gradient. The message names the utterance and step.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace files {
inline std::string metrics(const std::string &dir) { return in(dir, "metrics.csv"); }
inline std::string summary(const std::string &dir) { return in(dir, "summary.json"); }
inline std::string best(const std::string &dir) { return in(dir, "checkpoint_best.json"); }
inline std::string last(const std::string &dir) { return in(dir, "checkpoint_last.json"); }
inline std::string nan_dump(const std::string &dir) { return in(dir, "nan_dump.json"); }
}  // namespace files

struct TrainOptions {
  bool resume = false;
  std::ostream *log = nullptr;
};

namespace detail {

struct UttResult {
  LossBreakdown loss;
  ModelParams grad;
};

inline void add_into(ModelParams &acc, const ModelParams &g, double scale) {
  std::vector<const std::vector<double> *> gs;
  g.for_each_tensor([&](std::string_view, const std::vector<double> &d) { gs.push_back(&d); });
  std::size_t k = 0;
  acc.for_each_tensor([&](std::string_view, std::vector<double> &d) { axpy(d, *gs[k++], scale); });
}

// Per-utterance forward/backward, optionally on a fixed thread partition;
// the caller reduces results in index order.
inline void run_batch(const ModelParams &p, const std::vector<const Utterance *> &batch,
                      const TargetStore &targets, const ObjectiveConfig &obj,
                      std::size_t threads, std::vector<UttResult> &out, bool want_grad) {
  out.assign(batch.size(), UttResult{});
  auto work = [&](std::size_t w, std::size_t stride) {
    for (std::size_t i = w; i < batch.size(); i += stride) {
      const Utterance &u = *batch[i];
      if (want_grad) out[i].grad = p.zeros_like();
      out[i].loss = objective(p, u.features, u.tokens, targets.get(u.id), obj,
                              want_grad ? &out[i].grad : nullptr);
    }
  };
  const std::size_t n = std::min(threads, batch.size());
  if (n <= 1) {
    work(0, 1);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work, w, n);
  work(0, n);
  for (auto &t : pool) t.join();
}

inline void write_nan_dump(const RunConfig &cfg, const Utterance &u, std::uint64_t step,
                           std::size_t epoch, const LossBreakdown &l) {
  const nlohmann::json j = {{"utterance", u.id},         {"step", step},
                            {"epoch", epoch},            {"tokens", u.tokens},
                            {"frames", u.features.rows}, {"main_loss", std::to_string(l.main)},
                            {"aux_loss", std::to_string(l.aux)}};
  io::write_file(files::nan_dump(cfg.out_dir), j.dump(2) + "\n");
}

}  // namespace detail

/// Mean losses over `utts` without updating anything.
inline EpochMetrics measure_losses(const ModelParams &p, const std::vector<Utterance> &utts,
                                   const TargetStore &targets, const RunConfig &cfg) {
  std::vector<const Utterance *> all;
  for (const auto &u : utts) all.push_back(&u);
  std::vector<detail::UttResult> res;
  detail::run_batch(p, all, targets, cfg.objective(), cfg.threads, res, false);
  EpochMetrics m;
  for (const auto &r : res) {
    m.main_loss += r.loss.main;
    m.aux_loss += r.loss.aux;
    m.combined_loss += r.loss.total;
  }
  const double n = static_cast<double>(utts.size());
  m.main_loss /= n;
  m.aux_loss /= n;
  m.combined_loss /= n;
  return m;
}

/// Epoch 0 records the untrained model; epochs 1..E follow a seeded shuffle.
/// The best checkpoint is chosen on the EMA model's TER over
/// cfg.eval_split; the test split is decoded once, at that checkpoint.
inline RunSummary train(const RunConfig &cfg, const Dataset &data, const TrainOptions &opts = {}) {
  cfg.validate();
  std::vector<Utterance> train_set = data.train;
  if (cfg.train_limit > 0 && cfg.train_limit < train_set.size())
    train_set.resize(cfg.train_limit);
  if (train_set.empty()) throw std::invalid_argument("train split is empty");
  const auto &eval_set = data.split(cfg.eval_split);
  const Vocabulary vocab = data.corpus.vocab;
  const ModelDims dims = cfg.dims(data.corpus.feature_dim, vocab, data.emb_dim());
  const ObjectiveConfig obj = cfg.objective();
  std::filesystem::create_directories(cfg.out_dir);

  Checkpoint ck;
  RunSummary summary;
  std::size_t start_epoch = 1;
  if (opts.resume && std::filesystem::exists(files::last(cfg.out_dir))) {
    ck = load_checkpoint(files::last(cfg.out_dir));
    if (!(ck.params.dims == dims) || ck.seed != cfg.seed)
      throw CheckpointError("checkpoint to resume from does not match the config");
    summary.epochs = parse_metrics(io::read_file(files::metrics(cfg.out_dir)));
    if (summary.epochs.size() != ck.epoch + 1)
      throw CheckpointError("metrics file and checkpoint disagree on the epoch count");
    start_epoch = ck.epoch + 1;
    if (opts.log) *opts.log << "resuming after epoch " << ck.epoch << "\n";
  } else {
    ck.seed = cfg.seed;
    ck.params = init_params(cfg.seed, dims);
    ck.opt = OptimizerState<ModelParams>(ck.params, {cfg.lr, 0.9, 0.999, 1e-8}, cfg.ema_decay);
    EpochMetrics m0 = measure_losses(ck.params, train_set, data.targets, cfg);
    m0.dev_ter = m0.ema_dev_ter = evaluate(ck.params, eval_set, cfg, vocab).ter();
    summary.epochs.push_back(m0);
    io::write_file(files::metrics(cfg.out_dir), format_metrics(summary.epochs));
    save_checkpoint(files::best(cfg.out_dir), ck);
    save_checkpoint(files::last(cfg.out_dir), ck);
  }
  summary.parameter_count = ck.params.parameter_count();
  for (const auto &m : summary.epochs)
    if (m.epoch == 0 || m.ema_dev_ter < summary.best_dev_ter) {
      summary.best_dev_ter = m.ema_dev_ter;
      summary.best_epoch = m.epoch;
    }

  std::vector<std::size_t> order(train_set.size());
  std::vector<detail::UttResult> results;
  for (std::size_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(cfg.seed, CounterRng::stream_id("shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(
                                  rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Utterance *> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train_set[order[k]]);
      std::sort(batch.begin(), batch.end(),
                [](const Utterance *a, const Utterance *b) { return a->id < b->id; });
      detail::run_batch(ck.params, batch, data.targets, obj, cfg.threads, results, true);
      ModelParams grad = ck.params.zeros_like();
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto &l = results[i].loss;
        if (!l.finite || !std::isfinite(l.total)) {
          detail::write_nan_dump(cfg, *batch[i], ck.opt.step + 1, epoch, l);
          throw TrainingError("non-finite loss for utterance " + batch[i]->id + " at step " +
                              std::to_string(ck.opt.step + 1) + " (epoch " +
                              std::to_string(epoch) + ")");
        }
        m.main_loss += l.main;
        m.aux_loss += l.aux;
        m.combined_loss += l.total;
        detail::add_into(grad, results[i].grad, scale);
      }
      try {
        adam_step(ck.opt, ck.params, grad);
      } catch (const std::domain_error &e) {
        detail::write_nan_dump(cfg, *batch.front(), ck.opt.step + 1, epoch, results[0].loss);
        throw TrainingError(std::string(e.what()) + " at step " +
                            std::to_string(ck.opt.step + 1) + ", batch starting at " +
                            batch.front()->id);
      }
      ema_update(ck.opt, ck.params);
    }
    const double n = static_cast<double>(train_set.size());
    m.main_loss /= n;
    m.aux_loss /= n;
    m.combined_loss /= n;
    m.dev_ter = evaluate(ck.params, eval_set, cfg, vocab).ter();
    m.ema_dev_ter = evaluate(ck.opt.ema, eval_set, cfg, vocab).ter();
    summary.epochs.push_back(m);
    ck.epoch = epoch;
    if (m.ema_dev_ter < summary.best_dev_ter) {
      summary.best_dev_ter = m.ema_dev_ter;
      summary.best_epoch = epoch;
      save_checkpoint(files::best(cfg.out_dir), ck);
    }
    save_checkpoint(files::last(cfg.out_dir), ck);
    io::write_file(files::metrics(cfg.out_dir), format_metrics(summary.epochs));
    if (opts.log) {
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "epoch %zu  main %.4f  aux %.4f  total %.4f  %s TER %.4f  ema %.4f\n", epoch,
                    m.main_loss, m.aux_loss, m.combined_loss, cfg.eval_split.c_str(), m.dev_ter,
                    m.ema_dev_ter);
      *opts.log << buf << std::flush;
    }
  }
  summary.steps = ck.opt.step;
  const Checkpoint best = load_checkpoint(files::best(cfg.out_dir));
  summary.test = evaluate(best.opt.ema, data.test, cfg, vocab);
  io::write_file(files::summary(cfg.out_dir), summary_to_json(summary, cfg).dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  double sigma = 0.0;
  AuxKind aux = AuxKind::None;
  bool ok = false;
  std::string error;
  std::size_t best_epoch = 0;
  double dev_ter = 0.0;
  double test_ter = 0.0;
  bool best = false;
};

inline std::string sigma_label(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", s);
  return buf;
}

inline std::string format_sweep(const std::vector<SweepRow> &rows) {
  std::string out = "sigma,aux,status,best_epoch,dev_ter,test_ter,best_dev\n";
  char buf[256];
  for (const auto &r : rows) {
    if (r.ok) {
      std::snprintf(buf, sizeof buf, "%s,%s,ok,%zu,%.17g,%.17g,%d\n", sigma_label(r.sigma).c_str(),
                    to_string(r.aux), r.best_epoch, r.dev_ter, r.test_ter, r.best ? 1 : 0);
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      std::snprintf(buf, sizeof buf, "%s,%s,failed: %s,,,,0\n", sigma_label(r.sigma).c_str(),
                    to_string(r.aux), msg.c_str());
    }
    out += buf;
  }
  return out;
}

/// Marks the first successful row with the lowest dev TER.
inline void mark_best(std::vector<SweepRow> &rows) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].best = false;
    if (rows[i].ok && (!best || rows[i].dev_ter < rows[*best].dev_ter)) best = i;
  }
  if (best) rows[*best].best = true;
}

/// One training run per sigma, each in out_dir/sigma_<value>. Sigma 0 runs
/// the aux=none baseline. A failed run is recorded and the sweep continues.
inline std::vector<SweepRow> sweep(const RunConfig &base, const Dataset &data,
                                   std::ostream *log = nullptr) {
  std::vector<double> sigmas = base.sigmas.empty() ? default_sigma_grid(base.decoder) : base.sigmas;
  if (std::find(sigmas.begin(), sigmas.end(), 0.0) == sigmas.end()) sigmas.insert(sigmas.begin(), 0.0);
  const bool needs_aux = std::any_of(sigmas.begin(), sigmas.end(), [](double s) { return s > 0.0; });
  if (needs_aux && base.aux == AuxKind::None)
    throw ConfigError("sweep over sigma > 0 needs aux=joint or aux=token_sync");
  std::vector<SweepRow> rows;
  std::filesystem::create_directories(base.out_dir);
  for (double s : sigmas) {
    RunConfig cfg = base;
    cfg.sigma = s;
    cfg.aux = s == 0.0 ? AuxKind::None : base.aux;
    cfg.out_dir = files::in(base.out_dir, "sigma_" + sigma_label(s));
    SweepRow row;
    row.sigma = s;
    row.aux = cfg.aux;
    try {
      if (log) *log << "sweep: sigma " << sigma_label(s) << "\n";
      const RunSummary r = train(cfg, data, {false, log});
      row.ok = true;
      row.best_epoch = r.best_epoch;
      row.dev_ter = r.best_dev_ter;
      row.test_ter = r.test.ter();
    } catch (const std::exception &e) {
      row.error = e.what();
      if (log) *log << "sweep: sigma " << sigma_label(s) << " failed: " << e.what() << "\n";
    }
    rows.push_back(row);
    mark_best(rows);
    io::write_file(files::in(base.out_dir, "sweep.csv"), format_sweep(rows));
  }
  return rows;
}

}  // namespace edistill
