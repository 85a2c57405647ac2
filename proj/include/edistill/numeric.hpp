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
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edistill {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Dense row-major matrix of doubles. Vectors are plain std::vector<double>.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Matrix &, const Matrix &) = default;
};

/// log(exp(a) + exp(b)) without overflow; handles -inf on either side.
inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = kLogZero;
  for (double x : xs) m = std::max(m, x);
  if (m == kLogZero) return kLogZero;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline void log_softmax(std::span<const double> logits, std::span<double> out) {
  assert(logits.size() == out.size());
  const double lse = log_sum_exp(logits);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  log_softmax(logits, out);
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double &v : out) v = std::exp(v);
  return out;
}

// y += A x
inline void gemv_acc(const Matrix &a, std::span<const double> x,
                     std::span<double> y) {
  assert(a.cols == x.size() && a.rows == y.size());
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double *w = a.data.data() + r * a.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) s += w[c] * x[c];
    y[r] += s;
  }
}

// y += A^T x
inline void gemv_t_acc(const Matrix &a, std::span<const double> x,
                       std::span<double> y) {
  assert(a.rows == x.size() && a.cols == y.size());
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double *w = a.data.data() + r * a.cols;
    for (std::size_t c = 0; c < a.cols; ++c) y[c] += w[c] * xr;
  }
}

// A += alpha * x y^T
inline void ger_acc(Matrix &a, std::span<const double> x,
                    std::span<const double> y, double alpha = 1.0) {
  assert(a.rows == x.size() && a.cols == y.size());
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double xr = alpha * x[r];
    if (xr == 0.0) continue;
    double *w = a.data.data() + r * a.cols;
    for (std::size_t c = 0; c < a.cols; ++c) w[c] += xr * y[c];
  }
}

inline void axpy(std::span<double> y, std::span<const double> x, double alpha) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Binomial coefficient in 64-bit; exact for the small arguments used here.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// FNV-1a over a byte string, used for manifest checksums and hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

}  // namespace edistill
