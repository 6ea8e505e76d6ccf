#include <doctest.h>

#include <vector>

#include "bone/kernels.hpp"
#include "bone/rng.hpp"

using namespace bone;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return rng.template normal_vec<T>(n, 1.0);
}

}  // namespace

TEST_CASE("dispatcher reports a known backend") {
  CHECK((kernels::backend_name() == "scalar" || kernels::backend_name() == "avx2"));
}

TEST_CASE_TEMPLATE("avx2 matmul is bitwise equal to the scalar reference", T, float, double) {
  if (!kernels::avx2::available()) return;
  // Sizes straddle the vector width, including ragged tails.
  for (std::size_t p : {1, 3, 8}) {
    for (std::size_t q : {1, 5, 16}) {
      for (std::size_t r : {1, 2, 7, 8, 9, 16, 33}) {
        auto a = random_vec<T>(p * q, 1 + p * 100 + q * 10 + r);
        auto b = random_vec<T>(q * r, 2 + p * 100 + q * 10 + r);
        std::vector<T> cs(p * r), cv(p * r);
        kernels::scalar::matmul(a.data(), b.data(), cs.data(), p, q, r);
        kernels::avx2::matmul(a.data(), b.data(), cv.data(), p, q, r);
        for (std::size_t i = 0; i < cs.size(); ++i) {
          REQUIRE(cs[i] == cv[i]);  // bitwise, not approximate
        }
      }
    }
  }
}

TEST_CASE_TEMPLATE("avx2 elementwise kernels match scalar bitwise", T, float, double) {
  if (!kernels::avx2::available()) return;
  for (std::size_t n : {1, 3, 7, 8, 9, 31, 64, 100}) {
    auto a = random_vec<T>(n, 11 + n);
    auto b = random_vec<T>(n, 13 + n);
    std::vector<T> s(n), v(n);
    kernels::scalar::add(a.data(), b.data(), s.data(), n);
    kernels::avx2::add(a.data(), b.data(), v.data(), n);
    CHECK(s == v);
    kernels::scalar::mul(a.data(), b.data(), s.data(), n);
    kernels::avx2::mul(a.data(), b.data(), v.data(), n);
    CHECK(s == v);
    kernels::scalar::scale(a.data(), T(0.37), s.data(), n);
    kernels::avx2::scale(a.data(), T(0.37), v.data(), n);
    CHECK(s == v);
  }
}

TEST_CASE("dispatched matmul equals the scalar reference bitwise") {
  auto a = random_vec<double>(9 * 17, 5);
  auto b = random_vec<double>(17 * 13, 6);
  std::vector<double> cs(9 * 13), cd(9 * 13);
  kernels::scalar::matmul(a.data(), b.data(), cs.data(), 9, 17, 13);
  kernels::matmul(a.data(), b.data(), cd.data(), 9, 17, 13);
  CHECK(cs == cd);
}

TEST_CASE("strided matmul matches contiguous on an embedded block") {
  // 4x4 block at offset (1,2) of an 8x8 matrix times a contiguous 4x4.
  auto big = random_vec<double>(64, 21);
  auto rhs = random_vec<double>(16, 22);
  std::vector<double> packed(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) packed[i * 4 + j] = big[(i + 1) * 8 + j + 2];
  std::vector<double> want(16), got(64, 0.0);
  kernels::scalar::matmul(packed.data(), rhs.data(), want.data(), 4, 4, 4);
  kernels::matmul_strided(big.data() + 1 * 8 + 2, 8, rhs.data(), 4, got.data() + 8 + 2,
                          8, 4, 4, 4, false);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(got[(i + 1) * 8 + j + 2] == want[i * 4 + j]);
}
