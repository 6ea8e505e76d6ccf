#include "bone/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define BONE_X86 1
#include <immintrin.h>
#else
#define BONE_X86 0
#endif

namespace bone::kernels::avx2 {

bool available() {
#if BONE_X86
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

#if BONE_X86

// Layout: broadcast a[i,k] against a vector of output columns, k sequential.
// Each output element sees the same (mul, add) sequence as the scalar
// reference, so results are bitwise identical. No FMA for the same reason.
void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r) {
  const std::size_t rv = r - r % 8;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < rv; j += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (std::size_t k = 0; k < q; ++k) {
        __m256 av = _mm256_set1_ps(a[i * q + k]);
        __m256 bv = _mm256_loadu_ps(b + k * r + j);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(av, bv));
      }
      _mm256_storeu_ps(c + i * r + j, acc);
    }
    for (std::size_t j = rv; j < r; ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < q; ++k) acc += a[i * q + k] * b[k * r + j];
      c[i * r + j] = acc;
    }
  }
}

void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r) {
  const std::size_t rv = r - r % 4;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < rv; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t k = 0; k < q; ++k) {
        __m256d av = _mm256_set1_pd(a[i * q + k]);
        __m256d bv = _mm256_loadu_pd(b + k * r + j);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, bv));
      }
      _mm256_storeu_pd(c + i * r + j, acc);
    }
    for (std::size_t j = rv; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < q; ++k) acc += a[i * q + k] * b[k * r + j];
      c[i * r + j] = acc;
    }
  }
}

void add(const float* a, const float* b, float* o, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(o + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                          _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) o[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* o, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(o + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                          _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) o[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* o, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(o + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                          _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) o[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* o, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(o + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                          _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) o[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* o, std::size_t n) {
  const __m256 sv = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(o + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), sv));
  }
  for (; i < n; ++i) o[i] = a[i] * s;
}

void scale(const double* a, double s, double* o, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(o + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  }
  for (; i < n; ++i) o[i] = a[i] * s;
}

#else  // !BONE_X86

void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r) {
  scalar::matmul(a, b, c, p, q, r);
}
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r) {
  scalar::matmul(a, b, c, p, q, r);
}
void add(const float* a, const float* b, float* o, std::size_t n) {
  scalar::add(a, b, o, n);
}
void add(const double* a, const double* b, double* o, std::size_t n) {
  scalar::add(a, b, o, n);
}
void mul(const float* a, const float* b, float* o, std::size_t n) {
  scalar::mul(a, b, o, n);
}
void mul(const double* a, const double* b, double* o, std::size_t n) {
  scalar::mul(a, b, o, n);
}
void scale(const float* a, float s, float* o, std::size_t n) {
  scalar::scale(a, s, o, n);
}
void scale(const double* a, double s, double* o, std::size_t n) {
  scalar::scale(a, s, o, n);
}

#endif

}  // namespace bone::kernels::avx2
