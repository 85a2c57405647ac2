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

#include "edistill/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "edistill/lattice_json.hpp"
#include "edistill/oracle_check.hpp"
#include "test_support.hpp"

namespace edistill {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("edistill_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_config(const fs::path &root) {
  RunConfig c;
  c.data_dir = (root / "data").string();
  c.out_dir = (root / "run").string();
  c.utterances = 48;
  c.corpus.vocab.regular = 4;
  c.corpus.min_len = 2;
  c.corpus.max_len = 5;
  c.corpus.feature_dim = 6;
  c.teacher_dim = 8;
  c.d_token = 6;
  c.d_enc = c.d_pred = c.d_joint = c.d_state = c.d_dec = 8;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e-2;
  return c;
}

class TinyData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("data"));
    const RunConfig c = tiny_config(*root_);
    generate_data(c);
    data_ = new Dataset(load_dataset(c.data_dir));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete root_;
    for (const auto &entry : fs::directory_iterator(fs::temp_directory_path()))
      if (entry.path().filename().string().rfind("edistill_trainer_test_", 0) == 0)
        fs::remove_all(entry.path());
  }

  RunConfig config(const std::string &run) const {
    RunConfig c = tiny_config(*root_);
    c.out_dir = (scratch(run) / "run").string();
    return c;
  }

  static fs::path *root_;
  static Dataset *data_;
};

fs::path *TinyData::root_ = nullptr;
Dataset *TinyData::data_ = nullptr;

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c = config_from_json(config_to_json(RunConfig{}));
  EXPECT_EQ(config_to_json(c), config_to_json(RunConfig{}));
  EXPECT_EQ(c.epochs, 20u);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.ema_decay, 0.99);
  EXPECT_EQ(split_sizes(c.utterances, c.split_fractions), (std::array<std::size_t, 3>{2000, 200, 200}));
}

TEST(Config, RejectsUnknownKeysAndBadCombinations) {
  EXPECT_THROW(config_from_json({{"epoch", 3}}), ConfigError);
  EXPECT_THROW(config_from_json({{"decoder", "attention"}, {"aux", "token_sync"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"sigma", -1.0}}), ConfigError);
  EXPECT_THROW(config_from_json({{"eval_split", "test"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"distance", "cosine"}}), ConfigError);
  EXPECT_THROW(config_from_json({{"epochs", "many"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_NO_THROW(config_from_json({{"decoder", "transducer"}, {"aux", "token_sync"}}));
}

TEST(Config, OverridesParseAsJsonOrString) {
  const auto doc = apply_overrides({{"epochs", 3}}, {"epochs=5", "out-dir=somewhere", "sigmas=[0.5,0.25]",
                                                     "aux=joint", "sigma=1e-2"});
  const RunConfig c = config_from_json(doc);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.out_dir, "somewhere");
  EXPECT_EQ(c.sigmas, (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(c.aux, AuxKind::Joint);
  EXPECT_DOUBLE_EQ(c.sigma, 1e-2);
  EXPECT_THROW(apply_overrides({}, {"epochs"}), ConfigError);
}

TEST(Config, LoadErrors) {
  const fs::path dir = scratch("config");
  EXPECT_THROW(load_config((dir / "missing.json").string(), {}), ConfigError);
  io::write_file((dir / "bad.json").string(), "{not json");
  EXPECT_THROW(load_config((dir / "bad.json").string(), {}), ConfigError);
  io::write_file((dir / "ok.json").string(), R"({"epochs": 4})");
  EXPECT_EQ(load_config((dir / "ok.json").string(), {"batch_size=2"}).batch_size, 2u);
  fs::remove_all(dir);
}

TEST(Config, DefaultSigmaGrids) {
  EXPECT_EQ(default_sigma_grid(DecoderKind::Attention),
            (std::vector<double>{1.0, 0.5, 0.25, 0.125, 0.0625}));
  EXPECT_EQ(default_sigma_grid(DecoderKind::Transducer),
            (std::vector<double>{1e-1, 1e-2, 1e-3, 1e-4}));
}

TEST(Metrics, CsvRoundTripIsExact) {
  std::vector<EpochMetrics> rows{{0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 1.25, 1.25},
                                 {1, 0.1, 2e-17, 0.1 + 2e-17, 0.3, 1.0 / 7.0}};
  const auto csv = format_metrics(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
  const auto back = parse_metrics(csv);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].epoch, rows[i].epoch);
    EXPECT_EQ(back[i].main_loss, rows[i].main_loss);
    EXPECT_EQ(back[i].aux_loss, rows[i].aux_loss);
    EXPECT_EQ(back[i].combined_loss, rows[i].combined_loss);
    EXPECT_EQ(back[i].dev_ter, rows[i].dev_ter);
    EXPECT_EQ(back[i].ema_dev_ter, rows[i].ema_dev_ter);
  }
  EXPECT_THROW(parse_metrics("wrong,header\n"), std::runtime_error);
}

TEST(CheckpointIo, RoundTripAndErrors) {
  const fs::path dir = scratch("checkpoint");
  RunConfig cfg = tiny_config(dir);
  for (auto dec : {DecoderKind::Transducer, DecoderKind::Attention}) {
    cfg.decoder = dec;
    Checkpoint ck;
    ck.seed = 5;
    ck.epoch = 3;
    ck.params = init_params(5, cfg.dims(6, cfg.corpus.vocab, 8));
    ck.opt = OptimizerState<ModelParams>(ck.params, {0.01, 0.9, 0.999, 1e-8}, 0.9);
    ModelParams g = ck.params.zeros_like();
    g.for_each_tensor([](std::string_view, std::vector<double> &d) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::sin(static_cast<double>(i));
    });
    adam_step(ck.opt, ck.params, g);
    ema_update(ck.opt, ck.params);
    const std::string path = (dir / "ck.json").string();
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(checkpoint_to_json(back), checkpoint_to_json(ck));
    EXPECT_EQ(back.opt.step, 1u);
    EXPECT_EQ(back.params.dims, ck.params.dims);

    auto j = checkpoint_to_json(ck);
    j["version"] = "0";
    EXPECT_THROW(checkpoint_from_json(j), CheckpointError);
    j = checkpoint_to_json(ck);
    j["params"]["enc_w"]["data"].erase(0);
    EXPECT_THROW(checkpoint_from_json(j), CheckpointError);
  }
  io::write_file((dir / "junk.json").string(), "[1,");
  EXPECT_THROW(load_checkpoint((dir / "junk.json").string()), CheckpointError);
  fs::remove_all(dir);
}

TEST(GenerateData, DeterministicWithRequestedSplitSizes) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  RunConfig ca = tiny_config(a), cb = tiny_config(b);
  const auto sa = generate_data(ca);
  generate_data(cb);
  EXPECT_EQ(sa.train, 40u);
  EXPECT_EQ(sa.dev, 4u);
  EXPECT_EQ(sa.test, 4u);
  for (const char *f : {"train.jsonl", "dev.jsonl", "test.jsonl", "targets.jsonl",
                        "targets.jsonl.manifest.json", "corpus_manifest.json"})
    EXPECT_EQ(io::read_file((a / "data" / f).string()), io::read_file((b / "data" / f).string()))
        << f;
  const Dataset d = load_dataset(ca.data_dir);
  EXPECT_EQ(d.train.size() + d.dev.size() + d.test.size(), 48u);
  EXPECT_EQ(d.targets.targets.size(), 48u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_F(TinyData, TrainingIsDeterministic) {
  const RunConfig a = config("det_a"), b = config("det_b");
  const auto sa = train(a, *data_);
  const auto sb = train(b, *data_);
  EXPECT_EQ(sa.epochs.size(), 3u);
  EXPECT_EQ(sa.steps, 2u * 10u);
  for (auto f : {files::last, files::best, files::metrics})
    EXPECT_EQ(io::read_file(f(a.out_dir)), io::read_file(f(b.out_dir)));
  const auto summary = nlohmann::json::parse(io::read_file(files::summary(a.out_dir)));
  EXPECT_EQ(summary.at("best_epoch"), sa.best_epoch);
  EXPECT_EQ(summary.at("test").at("utterances"), 4);
}

TEST_F(TinyData, ThreadCountDoesNotChangeResults) {
  RunConfig a = config("thr_a"), b = config("thr_b");
  a.aux = b.aux = AuxKind::Joint;
  a.sigma = b.sigma = 0.1;
  b.threads = 3;
  train(a, *data_);
  train(b, *data_);
  EXPECT_EQ(io::read_file(files::last(a.out_dir)), io::read_file(files::last(b.out_dir)));
  EXPECT_EQ(io::read_file(files::metrics(a.out_dir)), io::read_file(files::metrics(b.out_dir)));
}

TEST_F(TinyData, SigmaZeroMatchesAuxNoneBitForBit) {
  for (auto aux : {AuxKind::Joint, AuxKind::TokenSync}) {
    RunConfig base = config("sz_base"), zero = config("sz_zero");
    zero.aux = aux;
    zero.sigma = 0.0;
    train(base, *data_);
    train(zero, *data_);
    for (auto f : {files::last, files::best, files::metrics})
      EXPECT_EQ(io::read_file(f(base.out_dir)), io::read_file(f(zero.out_dir)));
  }
  RunConfig base = config("sz_att_base"), zero = config("sz_att_zero");
  base.decoder = zero.decoder = DecoderKind::Attention;
  zero.aux = AuxKind::Joint;
  train(base, *data_);
  train(zero, *data_);
  EXPECT_EQ(io::read_file(files::last(base.out_dir)), io::read_file(files::last(zero.out_dir)));
}

TEST_F(TinyData, ResumeReproducesUninterruptedRun) {
  RunConfig full = config("resume_full"), part = config("resume_part");
  full.aux = part.aux = AuxKind::TokenSync;
  full.sigma = part.sigma = 0.1;
  full.epochs = 3;
  train(full, *data_);
  part.epochs = 1;
  train(part, *data_);
  part.epochs = 3;
  train(part, *data_, {true, nullptr});
  for (auto f : {files::last, files::best, files::metrics})
    EXPECT_EQ(io::read_file(f(full.out_dir)), io::read_file(f(part.out_dir)));
  auto sf = nlohmann::json::parse(io::read_file(files::summary(full.out_dir)));
  auto sp = nlohmann::json::parse(io::read_file(files::summary(part.out_dir)));
  sf.erase("config");
  sp.erase("config");
  EXPECT_EQ(sf, sp);
}

TEST_F(TinyData, ResumeRejectsMismatchedConfig) {
  RunConfig c = config("resume_bad");
  c.epochs = 1;
  train(c, *data_);
  c.seed = 2;
  c.epochs = 2;
  EXPECT_THROW(train(c, *data_, {true, nullptr}), CheckpointError);
}

TEST_F(TinyData, NonFiniteLossWritesDiagnosticDump) {
  RunConfig c = config("nan");
  c.aux = AuxKind::Joint;
  c.sigma = 1e308;
  try {
    train(c, *data_);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError &e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  const auto dump = nlohmann::json::parse(io::read_file(files::nan_dump(c.out_dir)));
  EXPECT_EQ(dump.at("step"), 1);
  EXPECT_NO_THROW(data_->targets.get(dump.at("utterance").get<std::string>()));
}

TEST_F(TinyData, EvaluationIsDeterministicAndRejectsEmptySplits) {
  const RunConfig c = config("eval");
  train(c, *data_);
  const Checkpoint ck = load_checkpoint(files::best(c.out_dir));
  const auto r1 = evaluate(ck.opt.ema, data_->dev, c, data_->corpus.vocab);
  const auto r2 = evaluate(ck.opt.ema, data_->dev, c, data_->corpus.vocab);
  EXPECT_EQ(ter_to_json(r1), ter_to_json(r2));
  EXPECT_EQ(r1.errors.distance,
            r1.errors.substitutions + r1.errors.insertions + r1.errors.deletions);
  EXPECT_THROW(evaluate(ck.opt.ema, {}, c, data_->corpus.vocab), std::invalid_argument);
}

TEST_F(TinyData, SingleUtteranceIsMemorized) {
  for (auto dec : {DecoderKind::Transducer, DecoderKind::Attention}) {
    RunConfig c = config("overfit");
    c.decoder = dec;
    c.train_limit = 1;
    c.eval_split = "train";
    c.epochs = 300;
    c.batch_size = 1;
    c.lr = 2e-2;
    c.ema_decay = 0.0;
    Dataset one = *data_;
    one.train.resize(1);
    train(c, one);
    const Checkpoint ck = load_checkpoint(files::last(c.out_dir));
    EXPECT_EQ(evaluate(ck.params, one.train, c, one.corpus.vocab).errors.distance, 0u)
        << to_string(dec);
  }
}

TEST_F(TinyData, SweepRecordsFailuresAndMarksBestRow) {
  RunConfig c = config("sweep");
  c.aux = AuxKind::Joint;
  c.sigmas = {1e308, 0.1};
  const auto rows = sweep(c, *data_);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].sigma, 0.0);
  EXPECT_EQ(rows[0].aux, AuxKind::None);
  EXPECT_TRUE(rows[0].ok);
  EXPECT_FALSE(rows[1].ok);
  EXPECT_NE(rows[1].error.find("non-finite"), std::string::npos);
  EXPECT_TRUE(rows[2].ok);
  std::size_t marked = 0;
  for (const auto &r : rows) marked += r.best;
  EXPECT_EQ(marked, 1u);
  const auto &best = rows[0].best ? rows[0] : rows[2];
  EXPECT_LE(best.dev_ter, std::min(rows[0].dev_ter, rows[2].dev_ter));
  const std::string csv = io::read_file(files::in(c.out_dir, "sweep.csv"));
  EXPECT_EQ(csv, format_sweep(rows));
  EXPECT_NE(csv.find("1e+308,joint,failed"), std::string::npos);

  c.aux = AuxKind::None;
  EXPECT_THROW(sweep(c, *data_), ConfigError);
}

TEST_F(TinyData, SweepOfZeroEqualsLoneBaseline) {
  RunConfig c = config("sweep0"), lone = config("sweep0_lone");
  c.aux = AuxKind::TokenSync;
  c.sigmas = {0.0};
  const auto rows = sweep(c, *data_);
  ASSERT_EQ(rows.size(), 1u);
  const auto s = train(lone, *data_);
  EXPECT_TRUE(rows[0].best);
  EXPECT_EQ(rows[0].dev_ter, s.best_dev_ter);
  EXPECT_EQ(rows[0].test_ter, s.test.ter());
  EXPECT_EQ(io::read_file(files::last(files::in(c.out_dir, "sigma_0"))),
            io::read_file(files::last(lone.out_dir)));
}

TEST(MarkBest, PicksFirstMinimumAmongSuccessfulRows) {
  std::vector<SweepRow> rows(4);
  rows[0] = {0.0, AuxKind::None, true, "", 1, 0.3, 0.3, false};
  rows[1] = {0.1, AuxKind::Joint, false, "boom", 0, 0.0, 0.0, false};
  rows[2] = {0.01, AuxKind::Joint, true, "", 2, 0.2, 0.4, false};
  rows[3] = {0.001, AuxKind::Joint, true, "", 2, 0.2, 0.1, false};
  mark_best(rows);
  EXPECT_FALSE(rows[0].best);
  EXPECT_FALSE(rows[1].best);
  EXPECT_TRUE(rows[2].best);
  EXPECT_FALSE(rows[3].best);
}

TEST_F(TinyData, LatticeDumpMatchesTrainingLossAndRoundTrips) {
  RunConfig c = config("dump");
  c.epochs = 1;
  train(c, *data_);
  const Checkpoint ck = load_checkpoint(files::last(c.out_dir));
  const Utterance &u = data_->dev.front();
  const auto dump = make_lattice_dump(utterance_lattice(ck.params, u.features, u.tokens));
  const auto j = lattice_dump_to_json(dump);
  for (const char *key : {"T", "N", "K", "labels", "log_probs", "alpha", "beta", "gamma", "log_Z",
                          "loss", "q_raw", "q_normalized"})
    EXPECT_TRUE(j.contains(key)) << key;

  const auto loss = objective(ck.params, u.features, u.tokens, data_->targets.get(u.id),
                              c.objective(), nullptr);
  EXPECT_NEAR(j.at("log_Z").get<double>(), -loss.main, 1e-12);

  const auto &gamma = *dump.gamma;
  for (std::size_t i = 0; i < dump.emissions.N; ++i) {
    double sum = 0.0;
    for (std::size_t t = 0; t < dump.emissions.T; ++t) sum += gamma(t, i);
    for (std::size_t t = 0; t < dump.emissions.T; ++t)
      EXPECT_NEAR(gamma(t, i) / sum, dump.posterior->normalized(i, t), 1e-12);
  }

  const auto back = lattice_dump_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(lattice_dump_to_json(back), j);
  EXPECT_EQ(back.emissions.log_probs, dump.emissions.log_probs);
  EXPECT_EQ(back.scores.alpha.values, dump.scores.alpha.values);
}

TEST(LatticeDump, UnreachableNodesSerializeAsNull) {
  std::vector<double> logits(2 * 2 * 3, 0.0);
  logits[1] = logits[7] = kLogZero;  // label 1 impossible at (0,0) and (1,0)
  const auto e = EmissionLattice::from_logits(2, {1}, 3, logits);
  const auto d = make_lattice_dump(e);
  EXPECT_FALSE(d.gamma.has_value());
  const auto j = lattice_dump_to_json(d);
  EXPECT_TRUE(j.at("log_Z").is_null());
  EXPECT_TRUE(j.at("loss").is_null());
  EXPECT_TRUE(j.at("log_probs")[0][0][1].is_null());
  const auto back = lattice_dump_from_json(j);
  EXPECT_EQ(back.scores.log_Z, kLogZero);
  EXPECT_EQ(lattice_dump_to_json(back), j);
}

TEST(OracleCheck, DefaultGridPasses) {
  const auto rep = run_oracle_check(OracleGrid{});
  EXPECT_TRUE(rep.passed()) << (rep.failures.empty() ? "" : rep.failures.front());
  EXPECT_EQ(rep.instances, 5u * 4u * 3u * 3u);
  EXPECT_LT(rep.max_loglik_error, 1e-9);
  EXPECT_LT(rep.max_posterior_error, 1e-9);
  EXPECT_LT(rep.max_loss_error, 1e-9);
  EXPECT_LT(rep.seconds, 60.0);
}

// Backward recursion with an off-by-one in the blank term.
ScoreTable corrupted_backward(const EmissionLattice &e) {
  ScoreTable beta(e.T, e.N);
  for (std::size_t t = e.T; t-- > 0;)
    for (std::size_t u = e.N + 1; u-- > 0;) {
      if (t == e.T - 1 && u == e.N) {
        beta(t, u) = e.blank(t, u);
        continue;
      }
      double no_emit = kLogZero, emit = kLogZero;
      if (t + 1 < e.T) no_emit = beta(t + 1, u) + e.blank(t + 1, u);
      if (u < e.N) emit = beta(t, u + 1) + e.label(t, u);
      beta(t, u) = log_add(no_emit, emit);
    }
  return beta;
}

TEST(OracleCheck, CorruptedBackwardIsDetected) {
  const auto corrupt = corrupted_backward;
  const auto rep = run_oracle_check(OracleGrid{}, corrupt);
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.max_posterior_error, 1e-6);
}

TEST(OracleCheck, EmptyGridIsVacuous) {
  OracleGrid g;
  g.max_T = 0;
  const auto rep = run_oracle_check(g);
  EXPECT_TRUE(rep.vacuous());
  EXPECT_TRUE(rep.passed());
}

}  // namespace
}  // namespace edistill
