#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kscope/fix8.hpp"

namespace kscope {

struct Fix8Vector {
  std::vector<Fix8> elems;
  std::size_t logical_len = 0;

  Fix8Vector() = default;
  explicit Fix8Vector(std::vector<Fix8> v) : elems(std::move(v)), logical_len(elems.size()) {}

  std::size_t size() const { return logical_len; }
  Fix8 operator[](std::size_t i) const { return elems[i]; }
  // Logical elements only; padding is ignored.
  friend bool operator==(const Fix8Vector& a, const Fix8Vector& b);
};

// Zero-pads to the next multiple of `block`; logical_len is preserved.
Fix8Vector pad(const Fix8Vector& v, std::size_t block);

struct Fix8Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Fix8> elems;  // row-major

  Fix8Matrix() = default;
  Fix8Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), elems(r * c) {}
  Fix8Matrix(std::size_t r, std::size_t c, std::vector<Fix8> e);

  Fix8 at(std::size_t r, std::size_t c) const { return elems[r * cols + c]; }
  Fix8& at(std::size_t r, std::size_t c) { return elems[r * cols + c]; }
  Fix8Vector row(std::size_t r) const;

  static Fix8Matrix identity(std::size_t n);
  friend bool operator==(const Fix8Matrix&, const Fix8Matrix&) = default;
};

// Zero-pads a matrix to (rows_to, cols_to).
Fix8Matrix pad(const Fix8Matrix& m, std::size_t rows_to, std::size_t cols_to);

// Tiling of a (1,N)x(N,Q) product into x*y native (a,b) blocks.
struct BlockPlan {
  std::size_t a = 0;  // input elements consumed per block
  std::size_t b = 0;  // outputs produced per block
  std::size_t x = 0;  // ceil(N / a)
  std::size_t y = 0;  // ceil(Q / b)
  std::size_t pad_rows = 0;
  std::size_t pad_cols = 0;

  std::size_t source_rows() const { return a * x - pad_rows; }
  std::size_t source_cols() const { return b * y - pad_cols; }
  friend bool operator==(const BlockPlan&, const BlockPlan&) = default;
};

BlockPlan plan_blocks(std::size_t n, std::size_t q, std::size_t a, std::size_t b);

// Pre-activation sums of v * M, in WideAcc.
std::vector<WideAcc> gemv_acc_ref(const Fix8Vector& v, const Fix8Matrix& m);
// Same sums computed block by block over zero-padded operands.
std::vector<WideAcc> gemv_acc_blocked(const Fix8Vector& v, const Fix8Matrix& m, const BlockPlan& plan);

Fix8Vector gemv_ref(const Fix8Vector& v, const Fix8Matrix& m, const ActTable& act);
Fix8Vector gemv_blocked(const Fix8Vector& v, const Fix8Matrix& m, const BlockPlan& plan, const ActTable& act);

Fix8Matrix gemm_ref(const Fix8Matrix& a, const Fix8Matrix& b, const ActTable& act);
// plan tiles the inner dimension (plan.a) and the output columns (plan.b).
Fix8Matrix gemm_blocked(const Fix8Matrix& a, const Fix8Matrix& b, const BlockPlan& plan, const ActTable& act);

// KMAT fixture format: "KMAT", u16 rows, u16 cols (little-endian), row-major Fix8 bytes.
std::vector<std::uint8_t> to_kmat(const Fix8Matrix& m);
Fix8Matrix from_kmat(std::span<const std::uint8_t> bytes);

}  // namespace kscope
