#include <doctest.h>

#include <cmath>
#include <functional>

#include "bone/rng.hpp"
#include "bone/tensor.hpp"

using namespace bone;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, bool rg = false) {
  Rng rng(seed);
  auto n = shape_numel(shape);
  return Tensor<double>(std::move(shape), rng.normal_vec<double>(n, 1.0), rg);
}

// Central finite differences of a scalar-valued function of one leaf tensor.
double fd_max_rel_err(Tensor<double>& leaf,
                      const std::function<Tensor<double>()>& loss_fn,
                      double h = 1e-5) {
  leaf.zero_grad();  // may carry accumulation from an earlier backward
  backward(loss_fn());
  const std::vector<double> analytic = leaf.grad();
  leaf.zero_grad();
  double worst = 0.0;
  auto& buf = leaf.mutable_data();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + h;
    const double up = loss_fn().item();
    buf[i] = orig - h;
    const double down = loss_fn().item();
    buf[i] = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace

TEST_CASE("sum gradient is all ones; frozen inputs get no gradient") {
  auto bone_t = random_tensor({2, 3, 3}, 1, true);
  auto frozen = random_tensor({2, 3, 3}, 2, false);
  auto loss = reduce_sum_all(add(bone_t, frozen));
  backward(loss);
  for (double g : bone_t.grad()) CHECK(g == 1.0);
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  auto t = random_tensor({2, 2}, 3, true);
  CHECK_THROWS_AS(backward(add(t, t)), std::invalid_argument);
  auto detached = reduce_sum_all(random_tensor({2, 2}, 4, false));
  CHECK_THROWS_AS(backward(detached), std::invalid_argument);
}

TEST_CASE("tanh gradient at zero is exactly one") {
  Tensor<double> x({1}, {0.0}, true);
  backward(reduce_sum_all(tanh(x)));
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("finite differences validate every differentiable op") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto a = random_tensor({4, 5}, seed * 100 + 1, true);

    auto b5x3 = random_tensor({5, 3}, seed * 100 + 2);
    CHECK(fd_max_rel_err(a, [&] {
            return reduce_sum_all(matmul(a, b5x3));
          }) < 1e-5);

    CHECK(fd_max_rel_err(a, [&] {
            return reduce_sum_all(mul(tanh(a), a));
          }) < 1e-5);

    CHECK(fd_max_rel_err(a, [&] {
            return reduce_sum_all(mul(transpose2d(a), transpose2d(a)));
          }) < 1e-5);

    CHECK(fd_max_rel_err(a, [&] {
            return reduce_sum_all(mul(reduce_sum(reshape(a, {2, 10}), {0}),
                                      reduce_sum(reshape(a, {2, 10}), {0})));
          }) < 1e-5);

    CHECK(fd_max_rel_err(a, [&] {
            return reduce_sum_all(scale(mul(a, a), 0.7));
          }) < 1e-5);

    auto blocks = random_tensor({2, 3, 4, 4}, seed * 100 + 3, true);
    auto shared = random_tensor({3, 4, 4}, seed * 100 + 4, true);
    CHECK(fd_max_rel_err(shared, [&] {
            return reduce_sum_all(mul(batched_block_matmul(blocks, shared),
                                      batched_block_matmul(blocks, shared)));
          }) < 1e-5);
    CHECK(fd_max_rel_err(blocks, [&] {
            return reduce_sum_all(mul(batched_block_matmul(blocks, shared),
                                      batched_block_matmul(blocks, shared)));
          }) < 1e-5);
  }
}

TEST_CASE("matmul gradients against hand-computed values") {
  // loss = sum(a*b): d/da = ones * b^T, d/db = a^T * ones
  Tensor<double> a({2, 2}, {1, 2, 3, 4}, true);
  Tensor<double> b({2, 2}, {5, 6, 7, 8}, true);
  backward(reduce_sum_all(matmul(a, b)));
  CHECK(a.grad() == std::vector<double>{11, 15, 11, 15});
  CHECK(b.grad() == std::vector<double>{4, 4, 6, 6});
}

TEST_CASE("gradient accumulates once per use of a shared node") {
  auto a = random_tensor({3, 3}, 9, true);
  auto shared = matmul(a, a);  // a used twice
  backward(reduce_sum_all(shared));
  auto g1 = a.grad();
  a.zero_grad();
  CHECK(fd_max_rel_err(a, [&] { return reduce_sum_all(matmul(a, a)); }) < 1e-5);
  (void)g1;
}

TEST_CASE("recompute thunks rebuild dropped buffers bitwise") {
  auto a = random_tensor({4, 4}, 11, true);
  auto b = random_tensor({4, 4}, 12);

  auto run = [&](bool drop) {
    auto prod = matmul(a, b);
    auto activated = tanh(prod);
    auto loss = reduce_sum_all(mul(activated, activated));
    const std::vector<double> val = activated.data();
    if (drop) {
      drop_for_recompute(prod);
      drop_for_recompute(activated);
    }
    backward(loss);
    auto g = a.grad();
    a.zero_grad();
    return std::make_pair(val, g);
  };

  auto [v_cached, g_cached] = run(false);
  auto [v_drop, g_drop] = run(true);
  CHECK(v_cached == v_drop);
  CHECK(g_cached == g_drop);
}
