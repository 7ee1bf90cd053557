#pragma once

#include <cstddef>

namespace flowmil::nn {

// Deterministic single-threaded GEMM kernels. Accumulation order inside each
// output element is fixed, so results are bitwise reproducible run to run.
// Register blocking over 4 rows keeps the inner loop vectorizable; matrices
// in this pipeline are small enough that no cache tiling is needed.

/// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
    int i = 0;
    for (; i + 4 <= M; i += 4) {
        const T* a0 = A + static_cast<std::size_t>(i + 0) * K;
        const T* a1 = A + static_cast<std::size_t>(i + 1) * K;
        const T* a2 = A + static_cast<std::size_t>(i + 2) * K;
        const T* a3 = A + static_cast<std::size_t>(i + 3) * K;
        T* c0 = C + static_cast<std::size_t>(i + 0) * N;
        T* c1 = C + static_cast<std::size_t>(i + 1) * N;
        T* c2 = C + static_cast<std::size_t>(i + 2) * N;
        T* c3 = C + static_cast<std::size_t>(i + 3) * N;
        for (int k = 0; k < K; ++k) {
            const T* b = B + static_cast<std::size_t>(k) * N;
            const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * K;
        T* c = C + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T aik = a[k];
            const T* b = B + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

/// C[M x N] += A[M x K] * B[N x K]^T. Dot products use 32 independent
/// accumulator chains reduced in a fixed order.
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * K;
        T* c = C + static_cast<std::size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* b = B + static_cast<std::size_t>(j) * K;
            T acc[32] = {};
            int k = 0;
            for (; k + 32 <= K; k += 32)
                for (int u = 0; u < 32; ++u) acc[u] += a[k + u] * b[k + u];
            T tail = T(0);
            for (; k < K; ++k) tail += a[k] * b[k];
            T lo = T(0), hi = T(0);
            for (int u = 0; u < 16; ++u) lo += acc[u];
            for (int u = 16; u < 32; ++u) hi += acc[u];
            c[j] += (lo + hi) + tail;
        }
    }
}

/// C[K x N] += A[M x K]^T * B[M x N]. The m-loop is outermost so every C row
/// accumulates contributions in fixed m order.
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
    for (int m = 0; m < M; ++m) {
        const T* a = A + static_cast<std::size_t>(m) * K;
        const T* b = B + static_cast<std::size_t>(m) * N;
        int k = 0;
        for (; k + 4 <= K; k += 4) {
            T* c0 = C + static_cast<std::size_t>(k + 0) * N;
            T* c1 = C + static_cast<std::size_t>(k + 1) * N;
            T* c2 = C + static_cast<std::size_t>(k + 2) * N;
            T* c3 = C + static_cast<std::size_t>(k + 3) * N;
            const T v0 = a[k + 0], v1 = a[k + 1], v2 = a[k + 2], v3 = a[k + 3];
            for (int j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
        for (; k < K; ++k) {
            T* c = C + static_cast<std::size_t>(k) * N;
            const T vk = a[k];
            for (int j = 0; j < N; ++j) c[j] += vk * b[j];
        }
    }
}

}  // namespace flowmil::nn
