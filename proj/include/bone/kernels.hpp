#pragma once

// Dense arithmetic kernels used by the tensor layer.
//
// Every kernel has a scalar reference implementation and, where the loop is
// data-parallel, an AVX2 variant. The AVX2 variants preserve the reference
// accumulation order element-for-element (broadcast-A over a vector of output
// columns, sequential k, no FMA contraction), so dispatched results are
// bitwise identical to the scalar path. Selection happens once at startup;
// set BONE_KERNEL=scalar in the environment to force the reference path.

#include <cstddef>
#include <string>

namespace bone::kernels {

// c[p,r] = a[p,q] * b[q,r], row-major, c overwritten.
namespace scalar {
void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r);
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r);
void add(const float* a, const float* b, float* o, std::size_t n);
void add(const double* a, const double* b, double* o, std::size_t n);
void mul(const float* a, const float* b, float* o, std::size_t n);
void mul(const double* a, const double* b, double* o, std::size_t n);
void scale(const float* a, float s, float* o, std::size_t n);
void scale(const double* a, double s, double* o, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool available();
void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r);
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r);
void add(const float* a, const float* b, float* o, std::size_t n);
void add(const double* a, const double* b, double* o, std::size_t n);
void mul(const float* a, const float* b, float* o, std::size_t n);
void mul(const double* a, const double* b, double* o, std::size_t n);
void scale(const float* a, float s, float* o, std::size_t n);
void scale(const double* a, double s, double* o, std::size_t n);
}  // namespace avx2

// Name of the backend the dispatcher selected ("scalar" or "avx2").
const std::string& backend_name();

void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r);
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r);
void add(const float* a, const float* b, float* o, std::size_t n);
void add(const double* a, const double* b, double* o, std::size_t n);
void mul(const float* a, const float* b, float* o, std::size_t n);
void mul(const double* a, const double* b, double* o, std::size_t n);
void scale(const float* a, float s, float* o, std::size_t n);
void scale(const double* a, double s, double* o, std::size_t n);

// Strided matmul over sub-blocks of larger row-major matrices:
//   c[i*ldc + j] (+)= sum_k a[i*lda + k] * b[k*ldb + j]
// Scalar only; used for block views into a weight matrix.
template <typename T>
void matmul_strided(const T* a, std::size_t lda, const T* b, std::size_t ldb,
                    T* c, std::size_t ldc, std::size_t p, std::size_t q,
                    std::size_t r, bool accumulate) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (std::size_t k = 0; k < q; ++k) {
        acc += a[i * lda + k] * b[k * ldb + j];
      }
      c[i * ldc + j] = acc;
    }
  }
}

// c[i*ldc+j] (+)= sum_k a[k*lda + i] * b[k*ldb + j]   (a transposed)
template <typename T>
void matmul_at_strided(const T* a, std::size_t lda, const T* b,
                       std::size_t ldb, T* c, std::size_t ldc, std::size_t p,
                       std::size_t q, std::size_t r, bool accumulate) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (std::size_t k = 0; k < q; ++k) {
        acc += a[k * lda + i] * b[k * ldb + j];
      }
      c[i * ldc + j] = acc;
    }
  }
}

}  // namespace bone::kernels
