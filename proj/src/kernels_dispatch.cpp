#include "bone/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace bone::kernels {

namespace {

struct Backend {
  std::string name;
  bool use_avx2 = false;
};

const Backend& backend() {
  static const Backend b = [] {
    Backend sel;
    const char* forced = std::getenv("BONE_KERNEL");
    if (forced && std::strcmp(forced, "scalar") == 0) {
      sel.name = "scalar";
    } else if (avx2::available()) {
      sel.name = "avx2";
      sel.use_avx2 = true;
    } else {
      sel.name = "scalar";
    }
    return sel;
  }();
  return b;
}

}  // namespace

const std::string& backend_name() { return backend().name; }

void matmul(const float* a, const float* b, float* c, std::size_t p,
            std::size_t q, std::size_t r) {
  backend().use_avx2 ? avx2::matmul(a, b, c, p, q, r)
                     : scalar::matmul(a, b, c, p, q, r);
}
void matmul(const double* a, const double* b, double* c, std::size_t p,
            std::size_t q, std::size_t r) {
  backend().use_avx2 ? avx2::matmul(a, b, c, p, q, r)
                     : scalar::matmul(a, b, c, p, q, r);
}
void add(const float* a, const float* b, float* o, std::size_t n) {
  backend().use_avx2 ? avx2::add(a, b, o, n) : scalar::add(a, b, o, n);
}
void add(const double* a, const double* b, double* o, std::size_t n) {
  backend().use_avx2 ? avx2::add(a, b, o, n) : scalar::add(a, b, o, n);
}
void mul(const float* a, const float* b, float* o, std::size_t n) {
  backend().use_avx2 ? avx2::mul(a, b, o, n) : scalar::mul(a, b, o, n);
}
void mul(const double* a, const double* b, double* o, std::size_t n) {
  backend().use_avx2 ? avx2::mul(a, b, o, n) : scalar::mul(a, b, o, n);
}
void scale(const float* a, float s, float* o, std::size_t n) {
  backend().use_avx2 ? avx2::scale(a, s, o, n) : scalar::scale(a, s, o, n);
}
void scale(const double* a, double s, double* o, std::size_t n) {
  backend().use_avx2 ? avx2::scale(a, s, o, n) : scalar::scale(a, s, o, n);
}

}  // namespace bone::kernels
