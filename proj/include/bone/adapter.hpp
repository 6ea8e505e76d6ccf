#pragma once

// Block-affine adapters and the LoRA baseline.
//
// A frozen weight W is stored [out_features, in_features] (n rows, m cols);
// the forward pass computes Y = X · (W + ΔW)^T. ΔW is built per b×b block of
// W as  ΔW_blk = W_blk · bone[g] + bone[g]  where g is the bone block the
// W block is assigned to: its row-block index (col grouping), column-block
// index (row grouping), or an arbitrary balanced assignment (grouped form).
// The trainable tensor is zero-initialized, so ΔW vanishes at init and the
// adapted model starts bitwise equal to the base model.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bone/rng.hpp"
#include "bone/tensor.hpp"

namespace bone {

enum class Variant {
  kLora,
  kBoneCol,
  kBoneRow,
  kBoneBoth,
  kBoneUnconstrained,
  kBoneHadamard,
};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kLora: return "lora";
    case Variant::kBoneCol: return "bone_col";
    case Variant::kBoneRow: return "bone_row";
    case Variant::kBoneBoth: return "bone_both";
    case Variant::kBoneUnconstrained: return "bone_unconstrained";
    case Variant::kBoneHadamard: return "bone_hadamard";
  }
  throw std::logic_error("unknown variant");
}

inline std::optional<Variant> variant_from_name(const std::string& s) {
  for (Variant v : {Variant::kLora, Variant::kBoneCol, Variant::kBoneRow,
                    Variant::kBoneBoth, Variant::kBoneUnconstrained,
                    Variant::kBoneHadamard}) {
    if (s == variant_name(v)) return v;
  }
  return std::nullopt;
}

// Maps a W block (row-block index, column-block index) to its bone block.
using BlockAssignment = std::function<std::size_t(std::size_t, std::size_t)>;

struct AdapterConfig {
  Variant variant = Variant::kBoneCol;
  std::size_t block_size = 0;   // bone variants
  std::size_t group_count = 0;  // bone_both
  std::size_t rank = 0;         // lora
  bool recompute = false;
  // bone_both only; defaults to contiguous chunks of row-major block order.
  BlockAssignment assignment;
};

inline bool is_bone_variant(Variant v) { return v != Variant::kLora; }

// Throws std::invalid_argument if the config cannot adapt an n×m matrix.
inline void validate_config(const AdapterConfig& cfg, std::size_t n, std::size_t m) {
  if (cfg.variant == Variant::kLora) {
    if (cfg.rank == 0 || cfg.rank > std::min(n, m)) {
      throw std::invalid_argument("lora rank " + std::to_string(cfg.rank) +
                                  " invalid for " + std::to_string(n) + "x" +
                                  std::to_string(m));
    }
    return;
  }
  const std::size_t b = cfg.block_size;
  if (b == 0 || n % b != 0 || m % b != 0) {
    throw std::invalid_argument("block size " + std::to_string(b) +
                                " does not divide " + std::to_string(n) + "x" +
                                std::to_string(m));
  }
  if (cfg.variant == Variant::kBoneBoth) {
    const std::size_t nblocks = (n / b) * (m / b);
    if (cfg.group_count == 0 || nblocks % cfg.group_count != 0) {
      throw std::invalid_argument("group count " + std::to_string(cfg.group_count) +
                                  " does not divide " + std::to_string(nblocks) +
                                  " blocks");
    }
  }
}

template <typename T>
struct AdapterState {
  Variant variant = Variant::kBoneCol;
  Tensor<T> bone;  // bone_col/row/both/hadamard: [j, b, b]
  Tensor<T> a;     // unconstrained: A [m/b, b, b]; lora: A [n, r]
  Tensor<T> b;     // unconstrained: B [m/b, b, b]; lora: B [r, m]

  std::vector<Tensor<T>*> trainable() {
    if (variant == Variant::kLora || variant == Variant::kBoneUnconstrained)
      return {&a, &b};
    return {&bone};
  }
  std::vector<const Tensor<T>*> trainable() const {
    if (variant == Variant::kLora || variant == Variant::kBoneUnconstrained)
      return {&a, &b};
    return {&bone};
  }

  std::size_t num_params() const {
    std::size_t total = 0;
    for (const auto* t : trainable()) total += t->numel();
    return total;
  }
};

namespace detail {

// Materialized block→group table for an n/b × m/b grid.
inline std::vector<std::size_t> build_assignment(std::size_t nb, std::size_t mb,
                                                 std::size_t groups,
                                                 const BlockAssignment& fn) {
  std::vector<std::size_t> table(nb * mb);
  std::vector<std::size_t> counts(groups, 0);
  for (std::size_t r = 0; r < nb; ++r) {
    for (std::size_t c = 0; c < mb; ++c) {
      std::size_t g = fn ? fn(r, c) : (r * mb + c) / (nb * mb / groups);
      if (g >= groups) {
        throw std::invalid_argument("block assignment out of range: group " +
                                    std::to_string(g));
      }
      table[r * mb + c] = g;
      ++counts[g];
    }
  }
  const std::size_t expect = nb * mb / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] != expect) {
      throw std::invalid_argument("unbalanced block assignment: group " +
                                  std::to_string(g) + " has " +
                                  std::to_string(counts[g]) + " blocks, expected " +
                                  std::to_string(expect));
    }
  }
  return table;
}

// ΔW for all multiplicative bone variants: per block,
//   ΔW_blk = W_blk · bone[g]  + bone[g]         (hadamard=false)
//   ΔW_blk = W_blk ∘ bone[g]  + bone[g]         (hadamard=true)
// Differentiable w.r.t. bone; W is expected frozen.
template <typename T>
Tensor<T> delta_w_blocked(const Tensor<T>& w, const Tensor<T>& bone,
                          std::vector<std::size_t> group_of_block,
                          bool hadamard) {
  require_rank(w, 2, "delta_w");
  require_rank(bone, 3, "delta_w");
  const std::size_t n = w.dim(0), m = w.dim(1), b = bone.dim(1);
  if (bone.dim(2) != b || b == 0 || n % b != 0 || m % b != 0) {
    throw std::invalid_argument("delta_w: bone blocks " + shape_str(bone.shape()) +
                                " do not tile " + shape_str(w.shape()));
  }
  const std::size_t nb = n / b, mb = m / b, bb = b * b;
  if (group_of_block.size() != nb * mb) {
    throw std::invalid_argument("delta_w: assignment covers " +
                                std::to_string(group_of_block.size()) +
                                " blocks, expected " + std::to_string(nb * mb));
  }
  for (std::size_t g : group_of_block) {
    if (g >= bone.dim(0)) throw std::invalid_argument("delta_w: assignment exceeds bone blocks");
  }

  auto fwd = [n, m, b, nb, mb, bb, hadamard, table = group_of_block](Node<T>& nd) {
    const auto& wv = nd.parents[0]->value;
    const auto& kv = nd.parents[1]->value;
    std::vector<T> out(n * m);
    for (std::size_t r = 0; r < nb; ++r) {
      for (std::size_t c = 0; c < mb; ++c) {
        const T* wblk = wv.data() + (r * b) * m + c * b;
        const T* kblk = kv.data() + table[r * mb + c] * bb;
        T* oblk = out.data() + (r * b) * m + c * b;
        if (hadamard) {
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y)
              oblk[x * m + y] = wblk[x * m + y] * kblk[x * b + y] + kblk[x * b + y];
        } else {
          kernels::matmul_strided(wblk, m, kblk, b, oblk, m, b, b, b, false);
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y) oblk[x * m + y] += kblk[x * b + y];
        }
      }
    }
    check_finite(out, "delta_w");
    return out;
  };
  auto bwd = [m, b, nb, mb, bb, hadamard, table = group_of_block](Node<T>& nd) {
    auto& pw = *nd.parents[0];
    auto& pk = *nd.parents[1];
    if (!pk.requires_grad) return;
    pw.ensure_value();
    const auto& wv = pw.value;
    std::vector<T> g(pk.numel(), T(0));
    for (std::size_t r = 0; r < nb; ++r) {
      for (std::size_t c = 0; c < mb; ++c) {
        const T* wblk = wv.data() + (r * b) * m + c * b;
        const T* dblk = nd.grad.data() + (r * b) * m + c * b;
        T* gblk = g.data() + table[r * mb + c] * bb;
        if (hadamard) {
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y)
              gblk[x * b + y] += wblk[x * m + y] * dblk[x * m + y] + dblk[x * m + y];
        } else {
          // g_bone += W_blk^T · D_blk + D_blk
          kernels::matmul_at_strided(wblk, m, dblk, m, gblk, b, b, b, b, true);
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y) gblk[x * b + y] += dblk[x * m + y];
        }
      }
    }
    pk.accumulate_grad(g.data(), g.size());
  };
  return make_op<T>({n, m}, {w.node(), bone.node()}, fwd, bwd);
}

}  // namespace detail

// ΔW = W·bone + bone for square W, the full-rank special case.
template <typename T>
Tensor<T> delta_w_square(const Tensor<T>& w, const Tensor<T>& bone) {
  require_rank(w, 2, "delta_w_square");
  if (w.dim(0) != w.dim(1)) {
    throw std::invalid_argument("delta_w_square: W must be square, got " +
                                shape_str(w.shape()));
  }
  if (bone.shape() != w.shape()) {
    throw std::invalid_argument("delta_w_square: bone shape " +
                                shape_str(bone.shape()) + " != " + shape_str(w.shape()));
  }
  return add(matmul(w, bone), bone);
}

namespace detail {

template <typename T>
void check_blocking(const Tensor<T>& w, const Tensor<T>& bone, const char* op) {
  require_rank(w, 2, op);
  require_rank(bone, 3, op);
  const std::size_t b = bone.dim(1);
  if (bone.dim(2) != b || b == 0 || w.dim(0) % b != 0 || w.dim(1) % b != 0) {
    throw std::invalid_argument(std::string(op) + ": blocks " +
                                shape_str(bone.shape()) + " do not tile " +
                                shape_str(w.shape()));
  }
}

}  // namespace detail

// Column grouping: one bone block per row-block, shared across that row.
template <typename T>
Tensor<T> delta_w_col(const Tensor<T>& w, const Tensor<T>& bone) {
  detail::check_blocking(w, bone, "delta_w_col");
  const std::size_t b = bone.dim(1), nb = w.dim(0) / b, mb = w.dim(1) / b;
  if (bone.dim(0) != nb) {
    throw std::invalid_argument("delta_w_col: expected " + std::to_string(nb) +
                                " bone blocks, got " + std::to_string(bone.dim(0)));
  }
  std::vector<std::size_t> table(nb * mb);
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = 0; c < mb; ++c) table[r * mb + c] = r;
  return detail::delta_w_blocked(w, bone, std::move(table), false);
}

// Row grouping: one bone block per column-block, shared down that column.
template <typename T>
Tensor<T> delta_w_row(const Tensor<T>& w, const Tensor<T>& bone) {
  detail::check_blocking(w, bone, "delta_w_row");
  const std::size_t b = bone.dim(1), nb = w.dim(0) / b, mb = w.dim(1) / b;
  if (bone.dim(0) != mb) {
    throw std::invalid_argument("delta_w_row: expected " + std::to_string(mb) +
                                " bone blocks, got " + std::to_string(bone.dim(0)));
  }
  std::vector<std::size_t> table(nb * mb);
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = 0; c < mb; ++c) table[r * mb + c] = c;
  return detail::delta_w_blocked(w, bone, std::move(table), false);
}

// Arbitrary balanced grouping of the block grid into g groups.
template <typename T>
Tensor<T> delta_w_grouped(const Tensor<T>& w, const Tensor<T>& bone,
                          const BlockAssignment& assignment = {}) {
  detail::check_blocking(w, bone, "delta_w_grouped");
  const std::size_t b = bone.dim(1), nb = w.dim(0) / b, mb = w.dim(1) / b;
  if ((nb * mb) % bone.dim(0) != 0) {
    throw std::invalid_argument("delta_w_grouped: " + std::to_string(bone.dim(0)) +
                                " groups do not divide " + std::to_string(nb * mb) +
                                " blocks");
  }
  auto table = detail::build_assignment(nb, mb, bone.dim(0), assignment);
  return detail::delta_w_blocked(w, bone, std::move(table), false);
}

// Ablation: ΔW_blk = W_blk·A[c] + B[c]; the additive term no longer carries
// the frozen weight.
template <typename T>
Tensor<T> delta_w_unconstrained(const Tensor<T>& w, const Tensor<T>& a,
                                const Tensor<T>& b_add) {
  if (a.shape() != b_add.shape()) {
    throw std::invalid_argument("delta_w_unconstrained: A and B shapes differ");
  }
  require_rank(w, 2, "delta_w_unconstrained");
  require_rank(a, 3, "delta_w_unconstrained");
  const std::size_t n = w.dim(0), m = w.dim(1), b = a.dim(1);
  if (a.dim(2) != b || b == 0 || n % b != 0 || m % b != 0 || a.dim(0) != m / b) {
    throw std::invalid_argument("delta_w_unconstrained: blocks " +
                                shape_str(a.shape()) + " do not tile " +
                                shape_str(w.shape()));
  }
  const std::size_t nb = n / b, mb = m / b, bb = b * b;
  auto fwd = [n, m, b, nb, mb, bb](detail::Node<T>& nd) {
    const auto& wv = nd.parents[0]->value;
    const auto& av = nd.parents[1]->value;
    const auto& bv = nd.parents[2]->value;
    std::vector<T> out(n * m);
    for (std::size_t r = 0; r < nb; ++r) {
      for (std::size_t c = 0; c < mb; ++c) {
        const T* wblk = wv.data() + (r * b) * m + c * b;
        T* oblk = out.data() + (r * b) * m + c * b;
        kernels::matmul_strided(wblk, m, av.data() + c * bb, b, oblk, m, b, b, b, false);
        for (std::size_t x = 0; x < b; ++x)
          for (std::size_t y = 0; y < b; ++y) oblk[x * m + y] += bv[c * bb + x * b + y];
      }
    }
    detail::check_finite(out, "delta_w_unconstrained");
    return out;
  };
  auto bwd = [m, b, nb, mb, bb](detail::Node<T>& nd) {
    auto& pw = *nd.parents[0];
    auto& pa = *nd.parents[1];
    auto& pb = *nd.parents[2];
    if (pa.requires_grad) {
      pw.ensure_value();
      std::vector<T> g(pa.numel(), T(0));
      for (std::size_t r = 0; r < nb; ++r)
        for (std::size_t c = 0; c < mb; ++c)
          kernels::matmul_at_strided(pw.value.data() + (r * b) * m + c * b, m,
                                     nd.grad.data() + (r * b) * m + c * b, m,
                                     g.data() + c * bb, b, b, b, b, true);
      pa.accumulate_grad(g.data(), g.size());
    }
    if (pb.requires_grad) {
      std::vector<T> g(pb.numel(), T(0));
      for (std::size_t r = 0; r < nb; ++r)
        for (std::size_t c = 0; c < mb; ++c)
          for (std::size_t x = 0; x < b; ++x)
            for (std::size_t y = 0; y < b; ++y)
              g[c * bb + x * b + y] += nd.grad[(r * b + x) * m + c * b + y];
      pb.accumulate_grad(g.data(), g.size());
    }
  };
  return detail::make_op<T>({n, m}, {w.node(), a.node(), b_add.node()}, fwd, bwd);
}

// Ablation: per-block elementwise product instead of the matrix product.
template <typename T>
Tensor<T> delta_w_hadamard(const Tensor<T>& w, const Tensor<T>& bone) {
  detail::check_blocking(w, bone, "delta_w_hadamard");
  const std::size_t b = bone.dim(1), nb = w.dim(0) / b, mb = w.dim(1) / b;
  if (bone.dim(0) != mb) {
    throw std::invalid_argument("delta_w_hadamard: expected " + std::to_string(mb) +
                                " bone blocks, got " + std::to_string(bone.dim(0)));
  }
  std::vector<std::size_t> table(nb * mb);
  for (std::size_t r = 0; r < nb; ++r)
    for (std::size_t c = 0; c < mb; ++c) table[r * mb + c] = c;
  return detail::delta_w_blocked(w, bone, std::move(table), true);
}

// LoRA baseline: ΔW = A·B.
template <typename T>
Tensor<T> lora_delta_w(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul(a, b);
}

// Dispatches to the variant's ΔW construction. W is [n, m] = [out, in].
template <typename T>
Tensor<T> delta_w(const Tensor<T>& w, const AdapterState<T>& state,
                  const AdapterConfig& cfg) {
  validate_config(cfg, w.dim(0), w.dim(1));
  switch (cfg.variant) {
    case Variant::kLora: return lora_delta_w(state.a, state.b);
    case Variant::kBoneCol: return delta_w_col(w, state.bone);
    case Variant::kBoneRow: return delta_w_row(w, state.bone);
    case Variant::kBoneBoth: return delta_w_grouped(w, state.bone, cfg.assignment);
    case Variant::kBoneUnconstrained: return delta_w_unconstrained(w, state.a, state.b);
    case Variant::kBoneHadamard: return delta_w_hadamard(w, state.bone);
  }
  throw std::logic_error("unknown variant");
}

// Y = X · (W + ΔW)^T. With cfg.recompute the ΔW chain is dropped after the
// forward pass and rebuilt on demand during backward; results are bitwise
// identical to the cached mode.
template <typename T>
Tensor<T> adapter_forward(const Tensor<T>& x, const Tensor<T>& w,
                          const AdapterState<T>& state, const AdapterConfig& cfg) {
  require_rank(x, 2, "adapter_forward");
  if (x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("adapter_forward: input width " +
                                std::to_string(x.dim(1)) + " != in_features " +
                                std::to_string(w.dim(1)));
  }
  Tensor<T> dw = delta_w(w, state, cfg);
  Tensor<T> merged = add(w, dw);
  Tensor<T> merged_t = transpose2d(merged);
  Tensor<T> y = matmul(x, merged_t);
  if (cfg.recompute) {
    drop_for_recompute(dw);
    drop_for_recompute(merged);
    drop_for_recompute(merged_t);
  }
  return y;
}

// Zero-initialized state (ΔW == 0); LoRA draws A from N(0, 1/sqrt(r)).
template <typename T>
AdapterState<T> init_adapter(const AdapterConfig& cfg, std::size_t n, std::size_t m,
                             std::uint64_t seed) {
  validate_config(cfg, n, m);
  AdapterState<T> st;
  st.variant = cfg.variant;
  const std::size_t b = cfg.block_size;
  switch (cfg.variant) {
    case Variant::kLora: {
      Rng rng(derive_seed(seed, 0x10f4));
      st.a = Tensor<T>({n, cfg.rank},
                       rng.template normal_vec<T>(n * cfg.rank,
                                                  1.0 / std::sqrt(double(cfg.rank))),
                       true);
      st.b = Tensor<T>::zeros({cfg.rank, m}, true);
      break;
    }
    case Variant::kBoneCol:
      st.bone = Tensor<T>::zeros({n / b, b, b}, true);
      break;
    case Variant::kBoneRow:
    case Variant::kBoneHadamard:
      st.bone = Tensor<T>::zeros({m / b, b, b}, true);
      break;
    case Variant::kBoneBoth:
      st.bone = Tensor<T>::zeros({cfg.group_count, b, b}, true);
      break;
    case Variant::kBoneUnconstrained:
      st.a = Tensor<T>::zeros({m / b, b, b}, true);
      st.b = Tensor<T>::zeros({m / b, b, b}, true);
      break;
  }
  return st;
}

// W + ΔW as a plain (non-differentiable) tensor.
template <typename T>
Tensor<T> merge(const Tensor<T>& w, const AdapterState<T>& state,
                const AdapterConfig& cfg) {
  Tensor<T> dw = delta_w(w, state, cfg);
  std::vector<T> out(w.numel());
  kernels::add(w.data().data(), dw.data().data(), out.data(), out.size());
  return Tensor<T>(w.shape(), std::move(out));
}

// Trainable parameter count over a catalog of [out, in] shapes.
inline std::uint64_t param_count(
    const std::vector<std::pair<std::size_t, std::size_t>>& shapes,
    const AdapterConfig& cfg) {
  std::uint64_t total = 0;
  for (auto [n, m] : shapes) {
    validate_config(cfg, n, m);
    switch (cfg.variant) {
      case Variant::kLora: total += std::uint64_t(n + m) * cfg.rank; break;
      case Variant::kBoneCol: total += std::uint64_t(n) * cfg.block_size; break;
      case Variant::kBoneRow:
      case Variant::kBoneHadamard: total += std::uint64_t(m) * cfg.block_size; break;
      case Variant::kBoneBoth:
        total += std::uint64_t(cfg.group_count) * cfg.block_size * cfg.block_size;
        break;
      case Variant::kBoneUnconstrained:
        total += 2 * std::uint64_t(m) * cfg.block_size;
        break;
    }
  }
  return total;
}

}  // namespace bone
