#include "kscope/blocked_linalg.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "kscope/errors.hpp"

namespace kscope {

bool operator==(const Fix8Vector& a, const Fix8Vector& b) {
  if (a.logical_len != b.logical_len) return false;
  return std::equal(a.elems.begin(), a.elems.begin() + static_cast<std::ptrdiff_t>(a.logical_len), b.elems.begin());
}

Fix8Vector pad(const Fix8Vector& v, std::size_t block) {
  if (block == 0) throw DimensionError("pad: block must be >= 1");
  Fix8Vector out = v;
  const std::size_t padded = (v.logical_len + block - 1) / block * block;
  out.elems.resize(std::max(padded, v.logical_len), kFix8Zero);
  return out;
}

Fix8Matrix::Fix8Matrix(std::size_t r, std::size_t c, std::vector<Fix8> e) : rows(r), cols(c), elems(std::move(e)) {
  if (elems.size() != rows * cols) throw DimensionError("matrix element count != rows*cols");
}

Fix8Vector Fix8Matrix::row(std::size_t r) const {
  const auto first = elems.begin() + static_cast<std::ptrdiff_t>(r * cols);
  return Fix8Vector(std::vector<Fix8>(first, first + static_cast<std::ptrdiff_t>(cols)));
}

Fix8Matrix Fix8Matrix::identity(std::size_t n) {
  Fix8Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = kFix8One;
  return m;
}

Fix8Matrix pad(const Fix8Matrix& m, std::size_t rows_to, std::size_t cols_to) {
  if (rows_to < m.rows || cols_to < m.cols) throw DimensionError("pad: target smaller than source");
  Fix8Matrix out(rows_to, cols_to);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c);
  return out;
}

BlockPlan plan_blocks(std::size_t n, std::size_t q, std::size_t a, std::size_t b) {
  if (n == 0 || q == 0 || a == 0 || b == 0) throw DimensionError("plan_blocks: zero dimension");
  BlockPlan p;
  p.a = a;
  p.b = b;
  p.x = (n + a - 1) / a;
  p.y = (q + b - 1) / b;
  p.pad_rows = p.a * p.x - n;
  p.pad_cols = p.b * p.y - q;
  return p;
}

std::vector<WideAcc> gemv_acc_ref(const Fix8Vector& v, const Fix8Matrix& m) {
  if (v.logical_len != m.rows)
    throw DimensionError("gemv: vector length " + std::to_string(v.logical_len) + " != matrix rows " +
                         std::to_string(m.rows));
  std::vector<WideAcc> acc(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) {
    WideAcc s;
    for (std::size_t i = 0; i < m.rows; ++i) s = acc_add(s, mul(v.elems[i], m.at(i, j)));
    acc[j] = s;
  }
  return acc;
}

std::vector<WideAcc> gemv_acc_blocked(const Fix8Vector& v, const Fix8Matrix& m, const BlockPlan& plan) {
  if (v.logical_len != m.rows) throw DimensionError("gemv_blocked: vector length != matrix rows");
  if (plan.source_rows() != m.rows || plan.source_cols() != m.cols)
    throw DimensionError("gemv_blocked: plan does not match operand dimensions");

  const Fix8Vector vp = pad(v, plan.a);
  const Fix8Matrix mp = pad(m, plan.a * plan.x, plan.b * plan.y);
  std::vector<WideAcc> out(plan.b * plan.y);

  // Output block j outer, input block i inner.
  for (std::size_t j = 0; j < plan.y; ++j) {
    std::vector<WideAcc> block_acc(plan.b);
    for (std::size_t i = 0; i < plan.x; ++i) {
      for (std::size_t c = 0; c < plan.b; ++c) {
        WideAcc partial;
        for (std::size_t r = 0; r < plan.a; ++r)
          partial = acc_add(partial, mul(vp.elems[i * plan.a + r], mp.at(i * plan.a + r, j * plan.b + c)));
        block_acc[c] = acc_add(block_acc[c], partial);
      }
    }
    std::copy(block_acc.begin(), block_acc.end(), out.begin() + static_cast<std::ptrdiff_t>(j * plan.b));
  }
  out.resize(m.cols);
  return out;
}

namespace {

Fix8Vector finish(const std::vector<WideAcc>& acc, const ActTable& act) {
  std::vector<Fix8> out(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = act(requantize(acc[j]));
  return Fix8Vector(std::move(out));
}

}  // namespace

Fix8Vector gemv_ref(const Fix8Vector& v, const Fix8Matrix& m, const ActTable& act) {
  return finish(gemv_acc_ref(v, m), act);
}

Fix8Vector gemv_blocked(const Fix8Vector& v, const Fix8Matrix& m, const BlockPlan& plan, const ActTable& act) {
  return finish(gemv_acc_blocked(v, m, plan), act);
}

Fix8Matrix gemm_ref(const Fix8Matrix& a, const Fix8Matrix& b, const ActTable& act) {
  if (a.cols != b.rows) throw DimensionError("gemm: A.cols != B.rows");
  Fix8Matrix out(a.rows, b.cols);
  for (std::size_t p = 0; p < a.rows; ++p) {
    const Fix8Vector r = gemv_ref(a.row(p), b, act);
    std::copy(r.elems.begin(), r.elems.end(), out.elems.begin() + static_cast<std::ptrdiff_t>(p * b.cols));
  }
  return out;
}

Fix8Matrix gemm_blocked(const Fix8Matrix& a, const Fix8Matrix& b, const BlockPlan& plan, const ActTable& act) {
  if (a.cols != b.rows) throw DimensionError("gemm_blocked: A.cols != B.rows");
  Fix8Matrix out(a.rows, b.cols);
  for (std::size_t p = 0; p < a.rows; ++p) {
    const Fix8Vector r = gemv_blocked(a.row(p), b, plan, act);
    std::copy(r.elems.begin(), r.elems.end(), out.elems.begin() + static_cast<std::ptrdiff_t>(p * b.cols));
  }
  return out;
}

std::vector<std::uint8_t> to_kmat(const Fix8Matrix& m) {
  if (m.rows > 0xFFFF || m.cols > 0xFFFF) throw DimensionError("KMAT: dimensions exceed u16");
  std::vector<std::uint8_t> out{'K', 'M', 'A', 'T'};
  out.push_back(static_cast<std::uint8_t>(m.rows & 0xFF));
  out.push_back(static_cast<std::uint8_t>(m.rows >> 8));
  out.push_back(static_cast<std::uint8_t>(m.cols & 0xFF));
  out.push_back(static_cast<std::uint8_t>(m.cols >> 8));
  for (Fix8 e : m.elems) out.push_back(e.bits());
  return out;
}

Fix8Matrix from_kmat(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("KMAT: truncated header");
  if (std::memcmp(bytes.data(), "KMAT", 4) != 0) throw FormatError("KMAT: bad magic");
  const std::size_t rows = bytes[4] | (bytes[5] << 8);
  const std::size_t cols = bytes[6] | (bytes[7] << 8);
  if (bytes.size() != 8 + rows * cols) throw FormatError("KMAT: payload size does not match header");
  Fix8Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) m.elems[i] = Fix8::from_bits(bytes[8 + i]);
  return m;
}

}  // namespace kscope
