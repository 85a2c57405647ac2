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

#include <cstddef>
#include <vector>

#include "edistill/numeric.hpp"

namespace edistill {

/// Token ids. 0 is reserved for blank and never appears in a transcript.
using TokenSeq = std::vector<int>;

/// T x F acoustic feature frames.
using FeatureSeq = Matrix;

/// Target embedding vectors e_1..e_N, one row per token.
struct EmbeddingSeq {
  Matrix vectors;

  std::size_t size() const { return vectors.rows; }
  std::size_t dim() const { return vectors.cols; }
  std::span<const double> operator[](std::size_t i) const { return vectors.row(i); }

  friend bool operator==(const EmbeddingSeq &, const EmbeddingSeq &) = default;
};

/// Symbol inventory: 0 = blank, 1..regular = ordinary tokens, then the
/// BOS and EOS sentinels. Transcripts carry the sentinels as real targets.
struct Vocabulary {
  std::size_t regular = 16;

  int bos() const { return static_cast<int>(regular) + 1; }
  int eos() const { return static_cast<int>(regular) + 2; }
  /// K: blank plus every token id.
  std::size_t symbols() const { return regular + 3; }
  bool contains(int id) const { return id >= 1 && id <= eos(); }
  bool is_sentinel(int id) const { return id == bos() || id == eos(); }

  /// Drops sentinels, leaving the scored part of a transcript.
  TokenSeq strip_sentinels(const TokenSeq &tokens) const {
    TokenSeq out;
    for (int y : tokens)
      if (!is_sentinel(y)) out.push_back(y);
    return out;
  }

  friend bool operator==(const Vocabulary &, const Vocabulary &) = default;
};

}  // namespace edistill
