#include "bone/kernels.hpp"

namespace bone::kernels::scalar {

namespace {

// Reference semantics: each output element is a sequential sum over k of
// a[i,k]*b[k,j]. The SIMD variants must reproduce this order exactly.
template <typename T>
void matmul_impl(const T* a, const T* b, T* c, std::size_t p, std::size_t q,
                 std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < q; ++k) {
        acc += a[i * q + k] * b[k * r + j];
      }
      c[i * r + j] = acc;
    }
  }
}

template <typename T>
void add_impl(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

template <typename T>
void mul_impl(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}

template <typename T>
void scale_impl(const T* a, T s, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * s;
}

}  // namespace

void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r) {
  matmul_impl(a, b, c, p, q, r);
}
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r) {
  matmul_impl(a, b, c, p, q, r);
}
void add(const float* a, const float* b, float* o, std::size_t n) {
  add_impl(a, b, o, n);
}
void add(const double* a, const double* b, double* o, std::size_t n) {
  add_impl(a, b, o, n);
}
void mul(const float* a, const float* b, float* o, std::size_t n) {
  mul_impl(a, b, o, n);
}
void mul(const double* a, const double* b, double* o, std::size_t n) {
  mul_impl(a, b, o, n);
}
void scale(const float* a, float s, float* o, std::size_t n) {
  scale_impl(a, s, o, n);
}
void scale(const double* a, double s, double* o, std::size_t n) {
  scale_impl(a, s, o, n);
}

}  // namespace bone::kernels::scalar
