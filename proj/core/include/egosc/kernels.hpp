#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

// Hand-rolled dense kernels. Everything funnels through one gemm_nn with an
// 8x32 register tile; each output element accumulates over k in ascending
// order through a single accumulator, so results are bit-reproducible
// without relaxed FP semantics.

namespace egosc::kern {

template <typename T>
void transpose(std::int64_t rows, std::int64_t cols, const T* __restrict__ in,
               T* __restrict__ out) {
  constexpr std::int64_t B = 32;
  for (std::int64_t i0 = 0; i0 < rows; i0 += B) {
    const std::int64_t i1 = std::min(i0 + B, rows);
    for (std::int64_t j0 = 0; j0 < cols; j0 += B) {
      const std::int64_t j1 = std::min(j0 + B, cols);
      for (std::int64_t i = i0; i < i1; ++i)
        for (std::int64_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

// C (M,N) = A (M,K) · B (K,N); accumulates into C when accumulate is set.
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* __restrict__ A,
             const T* __restrict__ B, T* __restrict__ C, bool accumulate = false) {
  constexpr std::int64_t MR = 8, NR = 32;
  std::int64_t j0 = 0;
  for (; j0 + NR <= N; j0 += NR) {
    std::int64_t i0 = 0;
    for (; i0 + MR <= M; i0 += MR) {
      T acc[MR][NR];
      for (std::int64_t r = 0; r < MR; ++r)
        for (std::int64_t c = 0; c < NR; ++c)
          acc[r][c] = accumulate ? C[(i0 + r) * N + j0 + c] : T(0);
      for (std::int64_t k = 0; k < K; ++k) {
        const T* __restrict__ b = B + k * N + j0;
        for (std::int64_t r = 0; r < MR; ++r) {
          const T a = A[(i0 + r) * K + k];
          for (std::int64_t c = 0; c < NR; ++c) acc[r][c] += a * b[c];
        }
      }
      for (std::int64_t r = 0; r < MR; ++r)
        for (std::int64_t c = 0; c < NR; ++c) C[(i0 + r) * N + j0 + c] = acc[r][c];
    }
    for (; i0 < M; ++i0) {
      T acc[NR];
      for (std::int64_t c = 0; c < NR; ++c) acc[c] = accumulate ? C[i0 * N + j0 + c] : T(0);
      for (std::int64_t k = 0; k < K; ++k) {
        const T a = A[i0 * K + k];
        const T* __restrict__ b = B + k * N + j0;
        for (std::int64_t c = 0; c < NR; ++c) acc[c] += a * b[c];
      }
      for (std::int64_t c = 0; c < NR; ++c) C[i0 * N + j0 + c] = acc[c];
    }
  }
  if (j0 < N) {
    const std::int64_t nr = N - j0;
    for (std::int64_t i = 0; i < M; ++i) {
      T* __restrict__ c = C + i * N + j0;
      if (!accumulate) std::fill(c, c + nr, T(0));
      for (std::int64_t k = 0; k < K; ++k) {
        const T ak = A[i * K + k];
        const T* __restrict__ b = B + k * N + j0;
        for (std::int64_t j = 0; j < nr; ++j) c[j] += ak * b[j];
      }
    }
  }
}

// C (M,N) = A (M,K) · B(N,K)ᵀ. The transpose scratch is thread-local and
// grow-only; a fresh allocation per call showed up hard in profiles.
template <typename T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
  thread_local std::vector<T> bt;
  if (static_cast<std::int64_t>(bt.size()) < K * N) bt.resize(static_cast<std::size_t>(K * N));
  transpose(N, K, B, bt.data());
  gemm_nn(M, N, K, A, bt.data(), C, accumulate);
}

// C (M,N) = A(K,M)ᵀ · B (K,N)
template <typename T>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C,
             bool accumulate = false) {
  thread_local std::vector<T> at;
  if (static_cast<std::int64_t>(at.size()) < M * K) at.resize(static_cast<std::size_t>(M * K));
  transpose(K, M, A, at.data());
  gemm_nn(M, N, K, at.data(), B, C, accumulate);
}

// Windows of a time-major (L, C) signal are contiguous, so im2col rows are
// straight memcpys of K·C values.
template <typename T>
void im2col_rows(std::int64_t L, std::int64_t C, std::int64_t K, std::int64_t stride,
                 const T* __restrict__ x, std::int64_t Lout, T* __restrict__ cols) {
  const std::int64_t w = K * C;
  for (std::int64_t t = 0; t < Lout; ++t)
    std::memcpy(cols + t * w, x + t * stride * C, static_cast<std::size_t>(w) * sizeof(T));
}

template <typename T>
void col2im_rows_add(std::int64_t L, std::int64_t C, std::int64_t K, std::int64_t stride,
                     const T* __restrict__ cols, std::int64_t Lout, T* __restrict__ dx) {
  const std::int64_t w = K * C;
  (void)L;
  for (std::int64_t t = 0; t < Lout; ++t) {
    T* __restrict__ dst = dx + t * stride * C;
    const T* __restrict__ src = cols + t * w;
    for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
  }
}

// exp for hot loops. The float path is branch-free (Cody-Waite reduction,
// degree-5 polynomial, within a couple of ulp) and written so the compiler
// can vectorize it; double falls through to libm, which keeps the
// double-precision instantiations reference-accurate for gradient checks.
inline double fexp(double x) { return std::exp(x); }

inline float fexp(float x) {
  x = std::min(std::max(x, -87.0f), 88.0f);
  // Round-to-nearest via the 1.5*2^23 magic constant; std::floor blocks
  // gcc's vectorizer here.
  const float fi = (x * 1.44269504f + 12582912.0f) - 12582912.0f;
  const float r = (x - fi * 0.693359375f) - fi * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t e = static_cast<std::int32_t>(fi);
  return p * std::bit_cast<float>((e + 127) << 23);
}

inline double ftanh(double x) { return std::tanh(x); }

inline float ftanh(float x) {
  const float e2 = fexp(2.0f * x);
  return (e2 - 1.0f) / (e2 + 1.0f);
}

// Array forms. gcc refuses to if-convert the range clamp inside fexp, which
// keeps the scalar loop from vectorizing, so the 8-lane path is spelled out
// with vector extensions (gcc and clang both lower these; elements never
// interact, so results stay deterministic).
#if defined(__GNUC__) || defined(__clang__)
namespace detail {

typedef float vf8 __attribute__((vector_size(32)));
typedef std::int32_t vi8 __attribute__((vector_size(32)));

inline vf8 vbc(float v) { return vf8{v, v, v, v, v, v, v, v}; }

inline vf8 vexp8(vf8 x) {
  const vf8 hi = vbc(88.0f), lo = vbc(-87.0f);
  x = x > hi ? hi : x;
  x = x < lo ? lo : x;
  const vf8 magic = vbc(12582912.0f);
  const vf8 fi = (x * vbc(1.44269504f) + magic) - magic;
  const vf8 r = (x - fi * vbc(0.693359375f)) - fi * vbc(-2.12194440e-4f);
  vf8 p = vbc(1.9875691500e-4f);
  p = p * r + vbc(1.3981999507e-3f);
  p = p * r + vbc(8.3334519073e-3f);
  p = p * r + vbc(4.1665795894e-2f);
  p = p * r + vbc(1.6666665459e-1f);
  p = p * r + vbc(5.0000001201e-1f);
  p = p * r * r + r + vbc(1.0f);
  const vi8 bits = (__builtin_convertvector(fi, vi8) + 127) << 23;
  return p * std::bit_cast<vf8>(bits);
}

}  // namespace detail

inline void vexp(const float* in, float* out, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    detail::vf8 x;
    std::memcpy(&x, in + i, sizeof x);
    const detail::vf8 y = detail::vexp8(x);
    std::memcpy(out + i, &y, sizeof y);
  }
  for (; i < n; ++i) out[i] = fexp(in[i]);
}

inline void vtanh(const float* in, float* out, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    detail::vf8 x;
    std::memcpy(&x, in + i, sizeof x);
    const detail::vf8 e2 = detail::vexp8(x + x);
    const detail::vf8 one = detail::vbc(1.0f);
    const detail::vf8 y = (e2 - one) / (e2 + one);
    std::memcpy(out + i, &y, sizeof y);
  }
  for (; i < n; ++i) out[i] = ftanh(in[i]);
}
#else
inline void vexp(const float* in, float* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = fexp(in[i]);
}
inline void vtanh(const float* in, float* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = ftanh(in[i]);
}
#endif

inline void vexp(const double* in, double* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}
inline void vtanh(const double* in, double* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
}

}  // namespace egosc::kern
