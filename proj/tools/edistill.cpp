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

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edistill/checkpoint.hpp"
#include "edistill/config.hpp"
#include "edistill/io.hpp"
#include "edistill/lattice_json.hpp"
#include "edistill/oracle_check.hpp"
#include "edistill/trainer.hpp"

namespace {

using namespace edistill;

constexpr int kOk = 0, kFailure = 1, kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string path;
  void add_to(CLI::App *sub) {
    sub->add_option("--config", path, "JSON config file; any key can also be given as --key=value")
        ->required();
    sub->allow_extras();
    sub->footer("Extra --key=value flags override config keys (dashes read as underscores).");
  }
  RunConfig load(const CLI::App *sub) const {
    if (!std::filesystem::is_regular_file(path))
      throw UsageError("config file '" + path + "' not found");
    std::vector<std::string> kv;
    for (const auto &arg : sub->remaining()) {
      if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos)
        throw UsageError("unexpected argument '" + arg + "' (overrides are --key=value)");
      kv.push_back(arg.substr(2));
    }
    return load_config(path, kv);
  }
};

void write_or_print(const std::string &out, const std::string &text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    io::write_file(out, text);
  }
}

const Utterance &find_utterance(const Dataset &d, const std::string &id) {
  for (const auto *split : {&d.train, &d.dev, &d.test})
    for (const auto &u : *split)
      if (u.id == id) return u;
  throw std::invalid_argument("unknown utterance id '" + id + "'");
}

void check_compatible(const Checkpoint &ck, const Dataset &data) {
  const auto &d = ck.params.dims;
  if (d.feature_dim != data.corpus.feature_dim || d.symbols != data.corpus.vocab.symbols() ||
      d.emb_dim != data.emb_dim())
    throw CheckpointError("checkpoint shapes do not match the data set");
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Training and evaluation of toy transducer and attention models with "
               "teacher-embedding distillation"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, sweep_args, inspect_args;

  auto *gen = app.add_subcommand("gen-data", "generate corpus, splits and teacher targets");
  gen_args.add_to(gen);

  auto *train_cmd = app.add_subcommand("train", "train one model");
  train_args.add_to(train_cmd);
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "continue from checkpoint_last.json in out_dir");

  auto *eval_cmd = app.add_subcommand("eval", "greedy-decode a split and report TER");
  eval_args.add_to(eval_cmd);
  std::string eval_ckpt, eval_split = "dev", eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint (default: out_dir/checkpoint_best.json)");
  eval_cmd->add_option("--split", eval_split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "write the report here instead of stdout");

  auto *sweep_cmd = app.add_subcommand("sweep", "train once per sigma, plus the sigma=0 baseline");
  sweep_args.add_to(sweep_cmd);

  auto *inspect = app.add_subcommand("inspect-lattice", "dump the alignment lattice of one utterance");
  inspect_args.add_to(inspect);
  std::string inspect_ckpt, utt_id, inspect_out;
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint (default: out_dir/checkpoint_best.json)");
  inspect->add_option("--utt", utt_id, "utterance id")->required();
  inspect->add_option("--out", inspect_out, "write the dump here instead of stdout");

  auto *oracle_cmd = app.add_subcommand("oracle-check", "compare lattice and losses against enumeration");
  OracleGrid grid;
  oracle_cmd->add_option("--max-T", grid.max_T, "largest frame count")->capture_default_str();
  oracle_cmd->add_option("--max-N", grid.max_N, "largest label count")->capture_default_str();
  oracle_cmd->add_option("--max-K", grid.max_K, "largest vocabulary size")->capture_default_str();
  oracle_cmd->add_option("--reps", grid.reps, "random lattices per grid cell")->capture_default_str();
  oracle_cmd->add_option("--seed", grid.seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    std::cerr << "\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands()[0]->help());
    return kUsage;
  }

  CLI::App *active = app.get_subcommands()[0];
  try {
    if (active == gen) {
      const RunConfig cfg = gen_args.load(gen);
      const auto s = generate_data(cfg);
      std::cout << "wrote " << cfg.data_dir << ": train " << s.train << ", dev " << s.dev
                << ", test " << s.test << "\n";
    } else if (active == train_cmd) {
      const RunConfig cfg = train_args.load(train_cmd);
      const Dataset data = load_dataset(cfg.data_dir);
      const RunSummary s = train(cfg, data, {resume, &std::cerr});
      std::cout << "best epoch " << s.best_epoch << "  best " << cfg.eval_split << " TER "
                << s.best_dev_ter << "  test TER " << s.test.ter() << "\n";
    } else if (active == eval_cmd) {
      const RunConfig cfg = eval_args.load(eval_cmd);
      const Dataset data = load_dataset(cfg.data_dir);
      const std::string path = eval_ckpt.empty() ? files::best(cfg.out_dir) : eval_ckpt;
      const Checkpoint ck = load_checkpoint(path);
      check_compatible(ck, data);
      const auto &utts = data.split(eval_split);
      nlohmann::json report = ter_to_json(evaluate(ck.opt.ema, utts, cfg, data.corpus.vocab));
      report["checkpoint"] = path;
      report["epoch"] = ck.epoch;
      report["split"] = eval_split;
      report["params"] = "ema";
      write_or_print(eval_out, report.dump(2) + "\n");
    } else if (active == sweep_cmd) {
      const RunConfig cfg = sweep_args.load(sweep_cmd);
      const Dataset data = load_dataset(cfg.data_dir);
      const auto rows = sweep(cfg, data, &std::cerr);
      std::cout << format_sweep(rows);
      for (const auto &r : rows)
        if (!r.ok) return kFailure;
    } else if (active == inspect) {
      const RunConfig cfg = inspect_args.load(inspect);
      const Dataset data = load_dataset(cfg.data_dir);
      const Checkpoint ck =
          load_checkpoint(inspect_ckpt.empty() ? files::best(cfg.out_dir) : inspect_ckpt);
      check_compatible(ck, data);
      const Utterance &u = find_utterance(data, utt_id);
      const auto dump = make_lattice_dump(utterance_lattice(ck.opt.ema, u.features, u.tokens));
      nlohmann::json j = lattice_dump_to_json(dump);
      j["utterance"] = u.id;
      write_or_print(inspect_out, j.dump(2) + "\n");
    } else if (active == oracle_cmd) {
      const OracleReport rep = run_oracle_check(grid);
      if (rep.vacuous()) {
        std::cerr << "warning: empty grid, nothing was checked\n";
        std::cout << "PASS (vacuous): 0 instances\n";
        return kOk;
      }
      for (const auto &f : rep.failures) std::cout << "FAIL " << f << "\n";
      std::cout << (rep.passed() ? "PASS" : "FAIL") << ": " << rep.instances << " instances in "
                << rep.seconds << " s; max errors: log-likelihood " << rep.max_loglik_error
                << ", posterior " << rep.max_posterior_error << ", joint loss "
                << rep.max_loss_error << "\n";
      return rep.passed() ? kOk : kFailure;
    }
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << "\n\n" << active->help();
    return kUsage;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
