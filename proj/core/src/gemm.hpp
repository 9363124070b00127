#pragma once

#include <algorithm>
#include <cstdint>

#include "mdcn/parallel.hpp"

namespace mdcn::detail {

constexpr int kGemmRows = 4;
constexpr int kGemmTile = 64;

template <typename T, int R>
void gemm_row_block(std::int64_t N, std::int64_t K, const T* a, std::int64_t lda, const T* b,
                    std::int64_t ldb, T* c, std::int64_t ldc) {
  for (std::int64_t n0 = 0; n0 < N; n0 += kGemmTile) {
    const int nt = static_cast<int>(std::min<std::int64_t>(kGemmTile, N - n0));
    alignas(64) T acc[R][kGemmTile] = {};
    if (nt == kGemmTile) {
      for (std::int64_t k = 0; k < K; ++k) {
        const T* __restrict brow = b + k * ldb + n0;
        for (int r = 0; r < R; ++r) {
          const T av = a[r * lda + k];
          T* __restrict accr = acc[r];
          for (int j = 0; j < kGemmTile; ++j) accr[j] += av * brow[j];
        }
      }
    } else {
      for (std::int64_t k = 0; k < K; ++k) {
        const T* __restrict brow = b + k * ldb + n0;
        for (int r = 0; r < R; ++r) {
          const T av = a[r * lda + k];
          T* __restrict accr = acc[r];
          for (int j = 0; j < nt; ++j) accr[j] += av * brow[j];
        }
      }
    }
    for (int r = 0; r < R; ++r) std::copy(acc[r], acc[r] + nt, c + r * ldc + n0);
  }
}

// C[M x N] = A[M x K] * B[K x N]. Each C element accumulates k = 0..K-1 in order.
template <typename T>
void gemm_nn(int M, std::int64_t N, std::int64_t K, const T* a, std::int64_t lda, const T* b,
             std::int64_t ldb, T* c, std::int64_t ldc) {
  const std::int64_t blocks = (M + kGemmRows - 1) / kGemmRows;
  parallel_for(blocks, [&](std::int64_t b0, std::int64_t b1) {
    for (std::int64_t blk = b0; blk < b1; ++blk) {
      const std::int64_t r0 = blk * kGemmRows;
      const int rows = static_cast<int>(std::min<std::int64_t>(kGemmRows, M - r0));
      const T* ar = a + r0 * lda;
      T* cr = c + r0 * ldc;
      switch (rows) {
        case 4: gemm_row_block<T, 4>(N, K, ar, lda, b, ldb, cr, ldc); break;
        case 3: gemm_row_block<T, 3>(N, K, ar, lda, b, ldb, cr, ldc); break;
        case 2: gemm_row_block<T, 2>(N, K, ar, lda, b, ldb, cr, ldc); break;
        default: gemm_row_block<T, 1>(N, K, ar, lda, b, ldb, cr, ldc); break;
      }
    }
  });
}

// Lane-split dot product with a fixed reduction tree.
template <typename T>
T dot_fixed(const T* __restrict x, const T* __restrict y, std::int64_t n) {
  constexpr int L = 16;
  alignas(64) T lanes[L] = {};
  std::int64_t i = 0;
  for (; i + L <= n; i += L) {
    for (int j = 0; j < L; ++j) lanes[j] += x[i + j] * y[i + j];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += x[i] * y[i];
  for (int width = L / 2; width >= 1; width /= 2) {
    for (int j = 0; j < width; ++j) lanes[j] += lanes[j + width];
  }
  return lanes[0] + tail;
}

// C[M x K] += A[M x N] * B[K x N]^T.
template <typename T>
void gemm_nt_acc(int M, std::int64_t K, std::int64_t N, const T* a, std::int64_t lda, const T* b,
                 std::int64_t ldb, T* c) {
  parallel_for(M, [&](std::int64_t m0, std::int64_t m1) {
    for (std::int64_t m = m0; m < m1; ++m) {
      const T* ar = a + m * lda;
      T* cr = c + m * K;
      for (std::int64_t k = 0; k < K; ++k) cr[k] += dot_fixed(ar, b + k * ldb, N);
    }
  });
}

}  // namespace mdcn::detail
