#pragma once

#include <cstddef>

namespace aen::detail {

// Small dense double-precision GEMM kernels, enough to feed the im2col
// convolution and the dense layers. All matrices are row-major. Outputs
// are accumulated into (callers zero-fill when they want assignment), which
// is exactly what the backward passes need.

// c[M,N] += a[M,K] * b[K,N]
inline void gemm_nn(int M, int N, int K, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  for (int i = 0; i < M; ++i) {
    const double* arow = a + static_cast<size_t>(i) * K;
    double* __restrict crow = c + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* __restrict brow = b + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[M,N] += a[M,K] * b[N,K]^T   (dot products along K)
inline void gemm_nt(int M, int N, int K, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  for (int i = 0; i < M; ++i) {
    const double* __restrict arow = a + static_cast<size_t>(i) * K;
    double* __restrict crow = c + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const double* __restrict brow = b + static_cast<size_t>(j) * K;
      // Four accumulators so the reduction vectorises without fast-math.
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += arow[k + 0] * brow[k + 0];
        s1 += arow[k + 1] * brow[k + 1];
        s2 += arow[k + 2] * brow[k + 2];
        s3 += arow[k + 3] * brow[k + 3];
      }
      for (; k < K; ++k) s0 += arow[k] * brow[k];
      crow[j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// c[M,N] += a[K,M]^T * b[K,N]
inline void gemm_tn(int M, int N, int K, const double* __restrict a,
                    const double* __restrict b, double* __restrict c) {
  for (int k = 0; k < K; ++k) {
    const double* __restrict arow = a + static_cast<size_t>(k) * M;
    const double* __restrict brow = b + static_cast<size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* __restrict crow = c + static_cast<size_t>(i) * N;
      for (int j = 0; j < N; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace aen::detail
