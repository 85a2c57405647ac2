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

#include "edistill/distill_loss.hpp"

#include <gtest/gtest.h>

#include "edistill/oracle.hpp"
#include "test_support.hpp"

namespace edistill {
namespace {

using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;

constexpr DistanceKind kKinds[] = {DistanceKind::L1Normalized, DistanceKind::L2Squared};

struct JointInstance {
  Matrix phi, psi;
  AlignmentPosterior q;
  EmbeddingSeq targets;
  RegressionNet r;
  Distance d;
};

AlignmentPosterior random_posterior(CounterRng &rng, std::size_t T, std::size_t N) {
  const auto e = testing::random_lattice(rng, T, N, 3);
  const auto ab = forward_backward(e);
  return alignment_posterior(node_occupancy(ab.alpha, ab.beta, ab.log_Z, e));
}

JointInstance random_joint(CounterRng &rng, std::size_t T, std::size_t N, DistanceKind kind,
                           std::size_t da = 4, std::size_t dl = 3, std::size_t D = 5) {
  JointInstance in;
  in.phi = random_matrix(rng, T, da);
  in.psi = random_matrix(rng, N, dl);
  in.q = random_posterior(rng, T, N);
  in.targets.vectors = random_matrix(rng, N, D);
  in.r = RegressionNet::joint(da, dl, D);
  in.r.weight = random_matrix(rng, D, da + dl, 0.5);
  in.r.bias = testing::random_vector(rng, D, 0.5);
  in.d = {kind, D};
  return in;
}

using JointFn = AuxLossResult (*)(const Matrix &, const Matrix &, const AlignmentPosterior &,
                                  const EmbeddingSeq &, const RegressionNet &, const Distance &,
                                  PosteriorWeights);

void expect_fd_match(JointInstance &in, JointFn fn, double tol) {
  const auto eval = [&] {
    return fn(in.phi, in.psi, in.q, in.targets, in.r, in.d, PosteriorWeights::Normalized).value;
  };
  const auto res = fn(in.phi, in.psi, in.q, in.targets, in.r, in.d, PosteriorWeights::Normalized);
  EXPECT_LT(relative_error(res.grad_phi.data, numeric_gradient(eval, in.phi.data)), tol);
  EXPECT_LT(relative_error(res.grad_psi.data, numeric_gradient(eval, in.psi.data)), tol);
  EXPECT_LT(relative_error(res.grad_weight.data, numeric_gradient(eval, in.r.weight.data)), tol);
  EXPECT_LT(relative_error(res.grad_bias, numeric_gradient(eval, in.r.bias)), tol);
}

TEST(Distance, HandValues) {
  const std::vector<double> u{1, 0}, v{0, 1};
  EXPECT_DOUBLE_EQ(distance({DistanceKind::L1Normalized, 2}, u, v).value, 1.0);
  EXPECT_DOUBLE_EQ(distance({DistanceKind::L2Squared, 2}, u, v).value, 2.0);
  for (auto k : kKinds) {
    EXPECT_EQ(distance({k, 2}, u, u).value, 0.0);
    EXPECT_THROW(distance({k, 3}, u, v), std::invalid_argument);
  }
  const auto g = distance({DistanceKind::L2Squared, 2}, u, v).grad;
  EXPECT_EQ(g, (std::vector<double>{2.0, -2.0}));
}

TEST(Distance, KindStrings) {
  EXPECT_EQ(distance_kind_from_string("l1_normalized"), DistanceKind::L1Normalized);
  EXPECT_EQ(distance_kind_from_string("l2"), DistanceKind::L2Squared);
  EXPECT_THROW(distance_kind_from_string("cosine"), std::invalid_argument);
}

TEST(AttentionEmbeddingLoss, ZeroNetZeroTargets) {
  const auto r = RegressionNet::single(4, 3);
  CounterRng rng(1);
  const auto out =
      attention_embedding_loss(random_matrix(rng, 2, 4), {Matrix(2, 3)}, r, {DistanceKind::L1Normalized, 3});
  EXPECT_EQ(out.value, 0.0);
}

TEST(AttentionEmbeddingLoss, ScalarHandArithmetic) {
  RegressionNet r = RegressionNet::single(1, 1);
  r.weight(0, 0) = 1.0;
  const Matrix phi(1, 1, 2.0);
  const EmbeddingSeq e{Matrix(1, 1, 3.0)};
  const auto out = attention_embedding_loss(phi, e, r, {DistanceKind::L2Squared, 1});
  EXPECT_DOUBLE_EQ(out.value, 1.0);
  EXPECT_DOUBLE_EQ(out.grad_phi(0, 0), -2.0);
}

TEST(AttentionEmbeddingLoss, Errors) {
  const auto single = RegressionNet::single(2, 2);
  const auto joint = RegressionNet::joint(2, 1, 2);
  const Distance d{DistanceKind::L2Squared, 2};
  EXPECT_THROW(attention_embedding_loss(Matrix(2, 2), {Matrix(3, 2)}, single, d),
               std::invalid_argument);
  EXPECT_THROW(attention_embedding_loss(Matrix(2, 2), {Matrix(2, 2)}, joint, d),
               std::invalid_argument);
}

TEST(AttentionEmbeddingLoss, MatchesFiniteDifferences) {
  CounterRng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    for (auto kind : kKinds) {
      Matrix states = random_matrix(rng, 3, 4);
      RegressionNet r = RegressionNet::single(4, 5);
      r.weight = random_matrix(rng, 5, 4);
      r.bias = testing::random_vector(rng, 5);
      const EmbeddingSeq e{random_matrix(rng, 3, 5)};
      const Distance d{kind, 5};
      const auto eval = [&] { return attention_embedding_loss(states, e, r, d).value; };
      const auto res = attention_embedding_loss(states, e, r, d);
      EXPECT_LT(relative_error(res.grad_phi.data, numeric_gradient(eval, states.data)), 1e-6);
      EXPECT_LT(relative_error(res.grad_weight.data, numeric_gradient(eval, r.weight.data)), 1e-6);
      EXPECT_LT(relative_error(res.grad_bias, numeric_gradient(eval, r.bias)), 1e-6);
    }
  }
}

TEST(JointRegressionLoss, SingleFrameIsPerTokenSum) {
  CounterRng rng(4);
  for (auto kind : kKinds) {
    auto in = random_joint(rng, 1, 3, kind);
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      expected += distance(in.d, in.r(in.phi.row(0), in.psi.row(i)), in.targets[i]).value;
    const double joint = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
    const double sync = token_sync_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
    EXPECT_NEAR(joint, expected, 1e-12);
    EXPECT_NEAR(sync, joint, 1e-12);
  }
}

TEST(JointRegressionLoss, ZeroNetZeroTargetsIgnoresPosterior) {
  CounterRng rng(5);
  auto in = random_joint(rng, 4, 2, DistanceKind::L1Normalized);
  in.r = RegressionNet::joint(4, 3, 5);
  in.targets.vectors = Matrix(2, 5);
  EXPECT_EQ(joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value, 0.0);
}

TEST(JointRegressionLoss, MatchesOracleAndFiniteDifferences) {
  CounterRng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    for (auto kind : kKinds) {
      auto in = random_joint(rng, 3, 2, kind);
      const double v = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
      EXPECT_NEAR(v, oracle::exact_joint_loss(in.phi, in.psi, in.q.normalized, in.targets, in.r, in.d),
                  1e-12);
      expect_fd_match(in, &joint_regression_loss, 1e-6);
    }
  }
}

TEST(JointRegressionLoss, RawWeightsMatchOracle) {
  CounterRng rng(78);
  auto in = random_joint(rng, 4, 3, DistanceKind::L2Squared);
  const double v = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d,
                                         PosteriorWeights::Raw)
                       .value;
  EXPECT_NEAR(v, oracle::exact_joint_loss(in.phi, in.psi, in.q.raw, in.targets, in.r, in.d), 1e-12);
}

TEST(JointRegressionLoss, ShapeAndNormalizationErrors) {
  CounterRng rng(6);
  auto in = random_joint(rng, 3, 2, DistanceKind::L2Squared);
  auto bad = in.q;
  bad.normalized(0, 0) += 0.01;
  EXPECT_THROW(joint_regression_loss(in.phi, in.psi, bad, in.targets, in.r, in.d),
               std::invalid_argument);
  EXPECT_NO_THROW(joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d,
                                        PosteriorWeights::Raw));
  EXPECT_THROW(token_sync_loss(in.phi, Matrix(3, 3), in.q, in.targets, in.r, in.d),
               std::invalid_argument);
  EXPECT_THROW(joint_regression_loss(in.phi, in.psi, in.q, in.targets,
                                     RegressionNet::single(4, 5), in.d),
               std::invalid_argument);
}

TEST(TokenSyncLoss, MatchesFiniteDifferences) {
  CounterRng rng(88);
  for (int rep = 0; rep < 20; ++rep)
    for (auto kind : kKinds) {
      auto in = random_joint(rng, 4, 3, kind);
      expect_fd_match(in, &token_sync_loss, 1e-6);
    }
}

TEST(TokenSyncLoss, JensenBound) {
  CounterRng rng(99);
  for (int rep = 0; rep < 100; ++rep)
    for (auto kind : kKinds) {
      auto in = random_joint(rng, 1 + rep % 6, 1 + rep % 4, kind);
      const double joint = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
      const double sync = token_sync_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
      EXPECT_LE(sync, joint + 1e-12);
    }
}

double weighted_spread(const JointInstance &in) {
  const Matrix &w = in.q.normalized;
  double total = 0.0;
  for (std::size_t i = 0; i < in.psi.rows; ++i) {
    std::vector<double> bar(in.phi.cols, 0.0);
    for (std::size_t t = 0; t < in.phi.rows; ++t) axpy(bar, in.phi.row(t), w(i, t));
    for (std::size_t t = 0; t < in.phi.rows; ++t) {
      std::vector<double> diff(in.phi.cols), proj(in.r.out_dim(), 0.0);
      for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = in.phi(t, c) - bar[c];
      in.r.apply_acoustic(diff, proj);
      total += w(i, t) * dot(proj, proj);
    }
  }
  return total;
}

TEST(TokenSyncLoss, SquaredL2Decomposition) {
  CounterRng rng(123);
  for (int rep = 0; rep < 100; ++rep) {
    auto in = random_joint(rng, 1 + rep % 6, 1 + rep % 4, DistanceKind::L2Squared);
    const double joint = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
    const double sync = token_sync_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
    EXPECT_NEAR(joint, sync + weighted_spread(in), 1e-9);
  }
}

TEST(AuxLoss, PosteriorCarriesNoGradient) {
  CounterRng rng(7);
  for (auto kind : kKinds) {
    auto in = random_joint(rng, 4, 3, kind);
    for (JointFn fn : {JointFn(&joint_regression_loss), JointFn(&token_sync_loss)}) {
      const auto base = fn(in.phi, in.psi, in.q, in.targets, in.r, in.d, PosteriorWeights::Normalized);
      ASSERT_EQ(base.grad_q.rows, 3u);
      ASSERT_EQ(base.grad_q.cols, 4u);
      for (double v : base.grad_q.data) EXPECT_EQ(v, 0.0);
      for (double delta : {1e-3, -1e-3}) {
        auto q = in.q;
        // move mass between two frames so rows stay normalized
        q.normalized(0, 0) += delta * q.normalized(0, 1);
        q.normalized(0, 1) -= delta * q.normalized(0, 1);
        const auto moved = fn(in.phi, in.psi, q, in.targets, in.r, in.d, PosteriorWeights::Normalized);
        EXPECT_NE(moved.value, base.value);
        for (double v : moved.grad_q.data) EXPECT_EQ(v, 0.0);
      }
    }
  }
}

TEST(AuxLoss, SquaredL2ScalesQuadratically) {
  CounterRng rng(8);
  auto in = random_joint(rng, 3, 2, DistanceKind::L2Squared);
  const double c = 3.0;
  const double base = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
  for (double &v : in.targets.vectors.data) v *= c;
  for (double &v : in.r.weight.data) v *= c;
  for (double &v : in.r.bias) v *= c;
  const double scaled = joint_regression_loss(in.phi, in.psi, in.q, in.targets, in.r, in.d).value;
  EXPECT_NEAR(scaled, c * c * base, 1e-10 * scaled);
}

TEST(MultitaskCombine, Arithmetic) {
  AuxLossResult aux;
  aux.value = 0.5;
  EXPECT_DOUBLE_EQ(multitask_combine(2.0, aux, 0.25).value, 2.125);
  aux.value = 0.0;
  EXPECT_EQ(multitask_combine(2.0, aux, 1.0).value, 2.0);
  EXPECT_THROW(multitask_combine(2.0, aux, -0.1), std::invalid_argument);
}

TEST(MultitaskCombine, ZeroSigmaSkipsAuxiliary) {
  int calls = 0;
  const double main = 1.0 / 3.0;
  const auto out = multitask_combine(
      main,
      [&] {
        ++calls;
        return AuxLossResult{};
      },
      0.0);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(out.value, main);
  EXPECT_FALSE(out.aux_scaled.has_value());
}

TEST(MultitaskCombine, ScalesAuxGradients) {
  AuxLossResult aux;
  aux.value = 2.0;
  aux.grad_phi = Matrix(1, 2, 1.0);
  aux.grad_bias = {4.0};
  const auto out = multitask_combine(1.0, aux, 0.5);
  ASSERT_TRUE(out.aux_scaled);
  EXPECT_EQ(out.aux, 2.0);
  EXPECT_EQ(out.aux_scaled->grad_phi(0, 1), 0.5);
  EXPECT_EQ(out.aux_scaled->grad_bias[0], 2.0);
}

}  // namespace
}  // namespace edistill
