#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace trifle {

// Dense matrix of categorical samples: one row per sample, one column per
// circuit variable, row-major.
struct TokenMatrix {
  std::int32_t n_cols = 0;
  std::vector<std::int32_t> tok;

  std::int64_t n_rows() const {
    return n_cols == 0 ? 0 : static_cast<std::int64_t>(tok.size()) / n_cols;
  }
  const std::int32_t* row(std::int64_t r) const { return tok.data() + r * n_cols; }

  void push_row(const std::vector<std::int32_t>& row) {
    if (static_cast<std::int32_t>(row.size()) != n_cols) {
      throw std::invalid_argument("TokenMatrix: row width mismatch");
    }
    tok.insert(tok.end(), row.begin(), row.end());
  }
};

}  // namespace trifle
