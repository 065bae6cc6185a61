#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "slotner/nn/array.hpp"

namespace slotner::nn {

// Blocked (query, key) pairs of an attention pattern. A blocked pair gets
// the most negative finite value added before softmax and its weight is
// clamped to exactly zero afterwards.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), blocked_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  void block(std::size_t r, std::size_t c) {
    if (r >= rows_ || c >= cols_) {
      throw ShapeError("AttentionMask::block: (" + std::to_string(r) + ", " +
                       std::to_string(c) + ") outside " + std::to_string(rows_) +
                       "x" + std::to_string(cols_));
    }
    blocked_[r * cols_ + c] = 1;
  }
  bool is_blocked(std::size_t r, std::size_t c) const {
    return blocked_[r * cols_ + c] != 0;
  }
  std::size_t blocked_count() const {
    std::size_t n = 0;
    for (auto b : blocked_) n += b;
    return n;
  }
  std::size_t blocked_in_row(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols_; ++c) n += blocked_[r * cols_ + c];
    return n;
  }
  std::vector<std::pair<std::size_t, std::size_t>> blocked_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c)
        if (is_blocked(r, c)) out.emplace_back(r, c);
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> blocked_;
};

namespace kernel {

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      // eight independent partial sums so the loop vectorizes
      accum_t<T> lane[8] = {};
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8) {
        for (std::size_t l = 0; l < 8; ++l) {
          lane[l] += static_cast<accum_t<T>>(arow[p + l]) * brow[p + l];
        }
      }
      accum_t<T> acc{0};
      for (; p < k; ++p) acc += static_cast<accum_t<T>>(arow[p]) * brow[p];
      for (std::size_t l = 0; l < 8; ++l) acc += lane[l];
      c[i * n + j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// In-place softmax over one row; entries flagged in `blocked` (may be null)
// receive the additive lowest-finite mask and end up exactly zero.
template <class T>
void softmax_row(T* x, std::size_t n, const unsigned char* blocked = nullptr) {
  constexpr T kMaskValue = std::numeric_limits<T>::lowest();
  if (blocked) {
    for (std::size_t j = 0; j < n; ++j)
      if (blocked[j]) x[j] += kMaskValue;
  }
  T mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  accum_t<T> sum{0};
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = std::exp(x[j] - mx);
    sum += x[j];
  }
  for (std::size_t j = 0; j < n; ++j) x[j] /= sum;
  if (blocked) {
    for (std::size_t j = 0; j < n; ++j)
      if (blocked[j]) x[j] = T{0};
  }
}

// Attention weights softmax(Q_h K_h^T / sqrt(d) + mask) for every head,
// stacked as [heads * nq x nk].
template <class T>
Array<T> attention_weights(const Array<T>& q, const Array<T>& k, std::size_t heads,
                           const AttentionMask* mask) {
  require_rank2("attention", q);
  require_rank2("attention", k);
  if (q.cols() != k.cols()) throw_shape("attention(q, k)", q.shape, k.shape);
  const std::size_t h = q.cols();
  if (heads == 0 || h % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) +
                     " heads do not divide hidden size " + std::to_string(h));
  }
  const std::size_t nq = q.rows(), nk = k.rows(), d = h / heads;
  if (mask) {
    if (mask->rows() != nq || mask->cols() != nk) {
      throw ShapeError("attention: mask " + std::to_string(mask->rows()) + "x" +
                       std::to_string(mask->cols()) + " does not match " +
                       std::to_string(nq) + " queries x " + std::to_string(nk) + " keys");
    }
    for (std::size_t r = 0; r < nq; ++r) {
      if (mask->blocked_in_row(r) == nk) {
        throw Error("attention: query row " + std::to_string(r) +
                    " has every key blocked");
      }
    }
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  Array<T> w({heads * nq, nk});
  std::vector<unsigned char> row_mask(nk, 0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < nq; ++i) {
      T* out = w.row(hd * nq + i);
      const T* qi = q.row(i) + hd * d;
      for (std::size_t j = 0; j < nk; ++j) {
        const T* kj = k.row(j) + hd * d;
        accum_t<T> acc{0};
        for (std::size_t p = 0; p < d; ++p) acc += qi[p] * kj[p];
        out[j] = acc * scale;
      }
      if (mask) {
        for (std::size_t j = 0; j < nk; ++j) row_mask[j] = mask->is_blocked(i, j);
        softmax_row(out, nk, row_mask.data());
      } else {
        softmax_row(out, nk);
      }
    }
  }
  return w;
}

}  // namespace kernel
}  // namespace slotner::nn
