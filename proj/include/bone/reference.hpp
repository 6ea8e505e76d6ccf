#pragma once

// Naive reference implementations of every ΔW construction, written as plain
// per-block double loops over std::vector<double>. This is a deliberately
// independent path from the tensor/kernel stack: no shared kernels, no
// autodiff, no dispatch. The test suites and the `oracle-check` command
// compare the production ops against these.

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bone::reference {

using Mat = std::vector<double>;  // row-major

inline Mat matmul(const Mat& a, const Mat& b, std::size_t p, std::size_t q,
                  std::size_t r) {
  Mat c(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q; ++k)
      for (std::size_t j = 0; j < r; ++j) c[i * r + j] += a[i * q + k] * b[k * r + j];
  return c;
}

// table maps the (row-block, col-block) grid, row-major, to bone block index.
inline Mat delta_w_blocked(const Mat& w, std::size_t n, std::size_t m,
                           const Mat& bone, std::size_t b,
                           const std::vector<std::size_t>& table) {
  if (n % b != 0 || m % b != 0) throw std::invalid_argument("bad blocking");
  const std::size_t nb = n / b, mb = m / b;
  Mat out(n * m, 0.0);
  for (std::size_t rb = 0; rb < nb; ++rb) {
    for (std::size_t cb = 0; cb < mb; ++cb) {
      const std::size_t g = table.at(rb * mb + cb);
      for (std::size_t x = 0; x < b; ++x) {
        for (std::size_t y = 0; y < b; ++y) {
          double acc = 0.0;
          for (std::size_t z = 0; z < b; ++z)
            acc += w[(rb * b + x) * m + cb * b + z] * bone[(g * b + z) * b + y];
          out[(rb * b + x) * m + cb * b + y] = acc + bone[(g * b + x) * b + y];
        }
      }
    }
  }
  return out;
}

inline std::vector<std::size_t> col_table(std::size_t nb, std::size_t mb) {
  std::vector<std::size_t> t(nb * mb);
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = 0; c < mb; ++c) t[r * mb + c] = r;
  return t;
}

inline std::vector<std::size_t> row_table(std::size_t nb, std::size_t mb) {
  std::vector<std::size_t> t(nb * mb);
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = 0; c < mb; ++c) t[r * mb + c] = c;
  return t;
}

inline Mat delta_w_col(const Mat& w, std::size_t n, std::size_t m, const Mat& bone,
                       std::size_t b) {
  return delta_w_blocked(w, n, m, bone, b, col_table(n / b, m / b));
}

inline Mat delta_w_row(const Mat& w, std::size_t n, std::size_t m, const Mat& bone,
                       std::size_t b) {
  return delta_w_blocked(w, n, m, bone, b, row_table(n / b, m / b));
}

inline Mat delta_w_square(const Mat& w, std::size_t n, const Mat& bone) {
  Mat out = matmul(w, bone, n, n, n);
  for (std::size_t i = 0; i < n * n; ++i) out[i] += bone[i];
  return out;
}

inline Mat delta_w_unconstrained(const Mat& w, std::size_t n, std::size_t m,
                                 const Mat& a, const Mat& badd, std::size_t b) {
  const std::size_t nb = n / b, mb = m / b;
  Mat out(n * m, 0.0);
  for (std::size_t rb = 0; rb < nb; ++rb)
    for (std::size_t cb = 0; cb < mb; ++cb)
      for (std::size_t x = 0; x < b; ++x)
        for (std::size_t y = 0; y < b; ++y) {
          double acc = 0.0;
          for (std::size_t z = 0; z < b; ++z)
            acc += w[(rb * b + x) * m + cb * b + z] * a[(cb * b + z) * b + y];
          out[(rb * b + x) * m + cb * b + y] = acc + badd[(cb * b + x) * b + y];
        }
  return out;
}

inline Mat delta_w_hadamard(const Mat& w, std::size_t n, std::size_t m,
                            const Mat& bone, std::size_t b) {
  const std::size_t nb = n / b, mb = m / b;
  Mat out(n * m, 0.0);
  for (std::size_t rb = 0; rb < nb; ++rb)
    for (std::size_t cb = 0; cb < mb; ++cb)
      for (std::size_t x = 0; x < b; ++x)
        for (std::size_t y = 0; y < b; ++y)
          out[(rb * b + x) * m + cb * b + y] =
              w[(rb * b + x) * m + cb * b + y] * bone[(cb * b + x) * b + y] +
              bone[(cb * b + x) * b + y];
  return out;
}

inline Mat lora_delta_w(const Mat& a, const Mat& b, std::size_t n, std::size_t r,
                        std::size_t m) {
  return matmul(a, b, n, r, m);
}

}  // namespace bone::reference
