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
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "edistill/lattice.hpp"
#include "edistill/types.hpp"

namespace edistill {

inline TokenSeq blank_removal(std::span<const int> z) {
  TokenSeq out;
  out.reserve(z.size());
  for (int s : z)
    if (s != kBlank) out.push_back(s);
  return out;
}

/// Index of the largest element; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < xs.size(); ++k)
    if (xs[k] > xs[best]) best = k;
  return best;
}

struct GreedyResult {
  TokenSeq tokens;
  std::vector<int> alignment;  // emitted symbols, blanks included
};

/// Frame-synchronous greedy transducer search. `scores(t, prefix)` returns
/// the joint network's symbol scores (logits or log-probs) at frame t given
/// the tokens emitted so far. A token keeps the search on frame t; blank or
/// the per-frame cap moves to t+1. At most T * (1 + max_symbols_per_frame)
/// score evaluations are made.
template <class ScoreFn>
GreedyResult greedy_decode_transducer(std::size_t T, ScoreFn &&scores,
                                      std::size_t max_symbols_per_frame) {
  GreedyResult out;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t emitted = 0;
    while (true) {
      const auto s = scores(t, std::as_const(out.tokens));
      const auto k = static_cast<int>(argmax(s));
      if (k == kBlank || emitted >= max_symbols_per_frame) {
        out.alignment.push_back(kBlank);
        break;
      }
      out.tokens.push_back(k);
      out.alignment.push_back(k);
      ++emitted;
    }
  }
  return out;
}

struct EditCounts {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  EditCounts &operator+=(const EditCounts &o) {
    distance += o.distance;
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    return *this;
  }
  friend bool operator==(const EditCounts &, const EditCounts &) = default;
};

/// Unit-cost Levenshtein distance. The traceback prefers substitution (or
/// match), then insertion, then deletion.
inline EditCounts edit_distance(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t H = hyp.size(), R = ref.size();
  std::vector<std::size_t> d((R + 1) * (H + 1));
  auto at = [&](std::size_t r, std::size_t h) -> std::size_t & { return d[r * (H + 1) + h]; };
  for (std::size_t r = 0; r <= R; ++r) at(r, 0) = r;
  for (std::size_t h = 0; h <= H; ++h) at(0, h) = h;
  for (std::size_t r = 1; r <= R; ++r)
    for (std::size_t h = 1; h <= H; ++h)
      at(r, h) = std::min({at(r - 1, h - 1) + (ref[r - 1] == hyp[h - 1] ? 0u : 1u),
                           at(r, h - 1) + 1, at(r - 1, h) + 1});

  EditCounts c;
  c.distance = at(R, H);
  std::size_t r = R, h = H;
  while (r > 0 || h > 0) {
    if (r > 0 && h > 0) {
      const bool same = ref[r - 1] == hyp[h - 1];
      if (at(r, h) == at(r - 1, h - 1) + (same ? 0u : 1u)) {
        if (!same) ++c.substitutions;
        --r, --h;
        continue;
      }
    }
    if (h > 0 && at(r, h) == at(r, h - 1) + 1) {
      ++c.insertions;
      --h;
    } else {
      ++c.deletions;
      --r;
    }
  }
  return c;
}

}  // namespace edistill
