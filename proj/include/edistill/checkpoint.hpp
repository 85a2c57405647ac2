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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "edistill/io.hpp"
#include "edistill/model.hpp"
#include "edistill/optim.hpp"

namespace edistill {

inline constexpr const char *kCheckpointVersion = "1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Live parameters, Adam moments and the EMA shadow after `epoch` epochs.
struct Checkpoint {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  ModelParams params;
  OptimizerState<ModelParams> opt;
};

inline void to_json(nlohmann::json &j, const ModelDims &d) {
  j = {{"decoder", to_string(d.decoder)}, {"feature_dim", d.feature_dim},
       {"context", d.context},            {"symbols", d.symbols},
       {"d_token", d.d_token},            {"d_enc", d.d_enc},
       {"d_pred", d.d_pred},              {"d_joint", d.d_joint},
       {"d_state", d.d_state},            {"d_dec", d.d_dec},
       {"emb_dim", d.emb_dim}};
}

inline void from_json(const nlohmann::json &j, ModelDims &d) {
  d.decoder = decoder_kind_from_string(j.at("decoder").get<std::string>());
  j.at("feature_dim").get_to(d.feature_dim);
  j.at("context").get_to(d.context);
  j.at("symbols").get_to(d.symbols);
  j.at("d_token").get_to(d.d_token);
  j.at("d_enc").get_to(d.d_enc);
  j.at("d_pred").get_to(d.d_pred);
  j.at("d_joint").get_to(d.d_joint);
  j.at("d_state").get_to(d.d_state);
  j.at("d_dec").get_to(d.d_dec);
  j.at("emb_dim").get_to(d.emb_dim);
}

namespace detail {

// (rows, cols) of each tensor; vectors are 1 x n.
inline std::pair<std::size_t, std::size_t> tensor_shape(const ModelParams &p,
                                                        std::string_view name,
                                                        std::size_t size) {
  const std::pair<std::string_view, const Matrix *> matrices[] = {
      {"tok_emb", &p.tok_emb}, {"enc_w", &p.enc_w},       {"pred_w", &p.pred_w},
      {"pred_u", &p.pred_u},   {"joint_wa", &p.joint_wa}, {"joint_wb", &p.joint_wb},
      {"out_w", &p.out_w},     {"dec_w", &p.dec_w},       {"dec_u", &p.dec_u},
      {"att_w", &p.att_w},     {"comb_w", &p.comb_w},     {"lambda", &p.lambda},
      {"reg_w", &p.reg.weight}};
  for (const auto &[n, m] : matrices)
    if (n == name) return {m->rows, m->cols};
  return {1, size};
}

inline nlohmann::json tensors_to_json(const ModelParams &p) {
  nlohmann::json out = nlohmann::json::object();
  p.for_each_tensor([&](std::string_view name, const std::vector<double> &d) {
    if (d.empty()) return;
    const auto [r, c] = tensor_shape(p, name, d.size());
    out[std::string(name)] = {{"shape", {r, c}}, {"data", d}};
  });
  return out;
}

// Fills the tensors of `p` (already shaped by init_params) from `j`.
inline void tensors_from_json(const nlohmann::json &j, ModelParams &p) {
  p.for_each_tensor([&](std::string_view name, std::vector<double> &d) {
    if (d.empty()) return;
    const std::string key(name);
    if (!j.contains(key)) throw CheckpointError("checkpoint is missing tensor '" + key + "'");
    auto data = j.at(key).at("data").get<std::vector<double>>();
    if (data.size() != d.size())
      throw CheckpointError("tensor '" + key + "' has " + std::to_string(data.size()) +
                            " values, expected " + std::to_string(d.size()));
    d = std::move(data);
  });
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint &c) {
  const auto &a = c.opt.adam;
  return {{"version", kCheckpointVersion},
          {"dims", c.params.dims},
          {"seed", c.seed},
          {"step", c.opt.step},
          {"epoch", c.epoch},
          {"params", detail::tensors_to_json(c.params)},
          {"optimizer",
           {{"adam", {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}}},
            {"m", detail::tensors_to_json(c.opt.m)},
            {"v", detail::tensors_to_json(c.opt.v)}}},
          {"ema", {{"decay", c.opt.ema_decay}, {"params", detail::tensors_to_json(c.opt.ema)}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json &j) {
  const auto version = j.value("version", std::string{});
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version '" + version + "' (expected '" +
                          kCheckpointVersion + "')");
  Checkpoint c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.epoch = j.at("epoch").get<std::uint64_t>();
  const auto dims = j.at("dims").get<ModelDims>();
  c.params = init_params(0, dims);
  detail::tensors_from_json(j.at("params"), c.params);
  const auto &o = j.at("optimizer");
  const auto &a = o.at("adam");
  AdamConfig adam{a.at("lr").get<double>(), a.at("beta1").get<double>(),
                  a.at("beta2").get<double>(), a.at("eps").get<double>()};
  c.opt = OptimizerState<ModelParams>(c.params, adam, j.at("ema").at("decay").get<double>());
  c.opt.step = j.at("step").get<std::uint64_t>();
  detail::tensors_from_json(o.at("m"), c.opt.m);
  detail::tensors_from_json(o.at("v"), c.opt.v);
  detail::tensors_from_json(j.at("ema").at("params"), c.opt.ema);
  return c;
}

inline void save_checkpoint(const std::string &path, const Checkpoint &c) {
  io::write_file(path, checkpoint_to_json(c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::string &path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception &e) {
    throw CheckpointError("checkpoint '" + path + "' is malformed: " + e.what());
  }
}

}  // namespace edistill
