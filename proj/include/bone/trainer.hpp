#pragma once

// Deterministic training loop over a frozen model with adapters, plus the
// analytic memory accounting used to compare cached vs recompute modes.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bone/model.hpp"

namespace bone {

enum class OptimizerKind { kSgd, kAdamW };

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdamW ? "adamw" : "sgd";
}

inline std::optional<OptimizerKind> optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adamw") return OptimizerKind::kAdamW;
  return std::nullopt;
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Holds first/second moment buffers for the trainable tensors only.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Tensor<T>*> params)
      : cfg_(cfg), params_(std::move(params)) {
    if (cfg_.kind == OptimizerKind::kAdamW) {
      for (auto* p : params_) {
        m_.emplace_back(p->numel(), T(0));
        v_.emplace_back(p->numel(), T(0));
      }
    }
  }

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = *params_[i];
      if (!p.has_grad()) continue;  // zero-grad params stay put under sgd
      const std::vector<T>& g = p.grad();
      std::vector<T>& w = p.mutable_data();
      if (cfg_.kind == OptimizerKind::kSgd) {
        for (std::size_t j = 0; j < w.size(); ++j)
          w[j] -= T(cfg_.lr) * (g[j] + T(cfg_.weight_decay) * w[j]);
      } else {
        const T bc1 = T(1) - T(std::pow(cfg_.beta1, double(t_)));
        const T bc2 = T(1) - T(std::pow(cfg_.beta2, double(t_)));
        for (std::size_t j = 0; j < w.size(); ++j) {
          m_[i][j] = T(cfg_.beta1) * m_[i][j] + (T(1) - T(cfg_.beta1)) * g[j];
          v_[i][j] = T(cfg_.beta2) * v_[i][j] + (T(1) - T(cfg_.beta2)) * g[j] * g[j];
          const T mhat = m_[i][j] / bc1;
          const T vhat = v_[i][j] / bc2;
          w[j] -= T(cfg_.lr) * (mhat / (std::sqrt(vhat) + T(cfg_.eps)) +
                                T(cfg_.weight_decay) * w[j]);
        }
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t state_floats() const {
    std::size_t n = 0;
    for (const auto& b : m_) n += b.size();
    for (const auto& b : v_) n += b.size();
    return n;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainRun {
  ShapeList layer_shapes;
  std::vector<Nonlinearity> nonlinearities;
  std::uint64_t model_seed = 0;
  SyntheticTask task;
  AdapterConfig adapter;
  OptimizerConfig optimizer;
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;  // adapter init (and anything run-local)
};

struct MemoryReport {
  std::uint64_t params_bytes = 0;
  std::uint64_t grads_bytes = 0;
  std::uint64_t optimizer_bytes = 0;
  std::uint64_t cached_delta_bytes = 0;  // one n×m ΔW buffer per adapted matrix

  std::uint64_t peak_tracked_bytes() const {
    return params_bytes + grads_bytes + optimizer_bytes + cached_delta_bytes;
  }
};

// Analytic byte accounting from shapes; nothing is measured from the
// allocator. Cached mode charges one full ΔW buffer per adapted matrix,
// recompute mode charges none.
inline MemoryReport account_memory(const TrainRun& run, std::size_t dtype_size) {
  MemoryReport rep;
  std::uint64_t params = param_count(run.layer_shapes, run.adapter);
  rep.params_bytes = params * dtype_size;
  rep.grads_bytes = params * dtype_size;
  rep.optimizer_bytes =
      run.optimizer.kind == OptimizerKind::kAdamW ? 2 * params * dtype_size : 0;
  if (!run.adapter.recompute) {
    for (auto [n, m] : run.layer_shapes)
      rep.cached_delta_bytes += std::uint64_t(n) * m * dtype_size;
  }
  return rep;
}

using LossLogEntries = std::vector<std::pair<std::size_t, double>>;

template <typename T>
struct TrainResult {
  FrozenLinearModel<T> model;  // adapters hold the trained state
  LossLogEntries log;          // loss at each step, before that step's update
  MemoryReport memory;
};

template <typename T>
TrainResult<T> train(const TrainRun& run) {
  if (run.batch_size == 0 || run.batch_size > run.task.dataset_size) {
    throw std::invalid_argument("batch size " + std::to_string(run.batch_size) +
                                " invalid for dataset of " +
                                std::to_string(run.task.dataset_size));
  }
  TrainResult<T> result;
  result.model = build_model<T>(run.layer_shapes, run.nonlinearities, run.model_seed);
  attach_adapters(result.model, run.adapter, run.seed);
  Dataset<T> ds = generate_task(run.task, result.model);

  std::vector<Tensor<T>*> params;
  for (auto& layer : result.model.layers)
    for (auto* t : layer.adapter->trainable()) params.push_back(t);
  Optimizer<T> opt(run.optimizer, params);

  const std::size_t in = result.model.input_dim();
  const std::size_t out = result.model.output_dim();
  const bool regression = run.task.kind == TaskKind::kTeacherStudentRegression;

  // Seeded shuffle of the visiting order, walked cyclically. The run seed
  // controls this, so each seed sees a different batch sequence even when the
  // adapter init is deterministic zeros.
  std::vector<std::size_t> order(run.task.dataset_size);
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng shuffle_rng(derive_seed(run.seed, 0xba7c));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

  std::size_t cursor = 0;
  for (std::size_t step = 0; step < run.steps; ++step) {
    std::vector<T> xbuf(run.batch_size * in);
    std::vector<T> tbuf(regression ? run.batch_size * out : 0);
    std::vector<std::size_t> lbuf(regression ? 0 : run.batch_size);
    for (std::size_t i = 0; i < run.batch_size; ++i) {
      const std::size_t row = order[(cursor + i) % run.task.dataset_size];
      std::copy_n(ds.inputs.data().data() + row * in, in, xbuf.data() + i * in);
      if (regression) {
        std::copy_n(ds.targets.data().data() + row * out, out, tbuf.data() + i * out);
      } else {
        lbuf[i] = ds.labels[row];
      }
    }
    cursor = (cursor + run.batch_size) % run.task.dataset_size;

    Tensor<T> x({run.batch_size, in}, std::move(xbuf));
    Tensor<T> loss;
    try {
      Tensor<T> pred = result.model.forward(x);
      loss = regression
                 ? mse_loss(pred, Tensor<T>({run.batch_size, out}, std::move(tbuf)))
                 : softmax_cross_entropy(pred, lbuf);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("training aborted at step " + std::to_string(step) +
                               ": " + e.what());
    }
    result.log.emplace_back(step, double(loss.item()));
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  result.memory = account_memory(run, sizeof(T));
  return result;
}

}  // namespace bone
