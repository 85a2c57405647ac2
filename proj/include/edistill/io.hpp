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

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edistill/numeric.hpp"

namespace edistill {

namespace io {

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << bytes;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline nlohmann::json matrix_rows(const Matrix &m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Matrix matrix_from_rows(const nlohmann::json &rows, std::size_t cols_if_empty = 0) {
  if (!rows.is_array()) throw std::runtime_error("expected an array of rows");
  Matrix m(rows.size(), rows.empty() ? cols_if_empty : rows[0].size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (rows[r].size() != m.cols) throw std::runtime_error("ragged matrix rows");
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

}  // namespace io

}  // namespace edistill
