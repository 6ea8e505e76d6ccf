#pragma once

// Central finite-difference gradient checking for the adapter variants.
// The loss is ‖X(W+ΔW)ᵀ‖² at a random point of the adapter state.

#include <cstdint>
#include <vector>

#include "bone/adapter.hpp"
#include "bone/rng.hpp"

namespace bone {

struct GradCheckOptions {
  std::size_t n = 16;
  std::size_t m = 16;
  std::size_t batch = 4;
  double h = 1e-5;
  // Test hook: scales one analytic gradient entry so the check must fail.
  bool corrupt = false;
};

// Returns the worst per-element relative error between the analytic gradient
// and central differences, over all trainable tensors of the variant.
template <typename T>
double adapter_grad_max_rel_err(const AdapterConfig& cfg, std::uint64_t seed,
                                const GradCheckOptions& opt = {}) {
  Rng rng(derive_seed(seed, 0x9c));
  Tensor<T> w({opt.n, opt.m}, rng.template normal_vec<T>(opt.n * opt.m, 1.0), false);
  Tensor<T> x({opt.batch, opt.m}, rng.template normal_vec<T>(opt.batch * opt.m, 1.0));

  AdapterState<T> state = init_adapter<T>(cfg, opt.n, opt.m, seed);
  for (auto* p : state.trainable()) {
    auto& buf = p->mutable_data();
    for (auto& v : buf) v = T(rng.normal() * 0.1);
  }

  auto loss_value = [&]() {
    Tensor<T> y = adapter_forward(x, w, state, cfg);
    return double(reduce_sum_all(mul(y, y)).item());
  };

  // Analytic gradients.
  {
    Tensor<T> y = adapter_forward(x, w, state, cfg);
    backward(reduce_sum_all(mul(y, y)));
  }

  double worst = 0.0;
  bool corrupted = !opt.corrupt;
  for (auto* p : state.trainable()) {
    std::vector<T> analytic = p->grad();
    if (!corrupted && !analytic.empty()) {
      analytic[0] = analytic[0] * T(1.1) + T(1);
      corrupted = true;
    }
    auto& buf = p->mutable_data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const T orig = buf[i];
      buf[i] = orig + T(opt.h);
      const double up = loss_value();
      buf[i] = orig - T(opt.h);
      const double down = loss_value();
      buf[i] = orig;
      const double fd = (up - down) / (2.0 * opt.h);
      const double rel = std::abs(double(analytic[i]) - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
    p->zero_grad();
  }
  return worst;
}

// A 16×16 desk config of every variant at comparable sizes.
inline std::vector<AdapterConfig> gradcheck_suite() {
  std::vector<AdapterConfig> cfgs;
  cfgs.push_back({Variant::kLora, 0, 0, 4});
  cfgs.push_back({Variant::kBoneCol, 4});
  cfgs.push_back({Variant::kBoneRow, 4});
  cfgs.push_back({Variant::kBoneBoth, 4, 8});
  cfgs.push_back({Variant::kBoneUnconstrained, 4});
  cfgs.push_back({Variant::kBoneHadamard, 4});
  return cfgs;
}

}  // namespace bone
