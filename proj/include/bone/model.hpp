#pragma once

// Frozen linear models and synthetic fine-tuning tasks at desk scale. The
// model is a stack of frozen [out, in] weights with optional adapters; the
// adapters are the only trainable parameters.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bone/adapter.hpp"
#include "bone/catalog.hpp"
#include "bone/rng.hpp"
#include "bone/tensor.hpp"

namespace bone {

enum class Nonlinearity { kNone, kTanh };

inline const char* nonlinearity_name(Nonlinearity n) {
  return n == Nonlinearity::kTanh ? "tanh" : "none";
}

inline std::optional<Nonlinearity> nonlinearity_from_name(const std::string& s) {
  if (s == "tanh") return Nonlinearity::kTanh;
  if (s == "none") return Nonlinearity::kNone;
  return std::nullopt;
}

template <typename T>
struct FrozenLinearModel {
  struct Layer {
    Tensor<T> w;  // frozen, requires_grad=false
    Nonlinearity act = Nonlinearity::kNone;
    std::optional<AdapterState<T>> adapter;
  };

  std::vector<Layer> layers;
  AdapterConfig adapter_config;
  bool adapters_attached = false;

  std::size_t input_dim() const { return layers.front().w.dim(1); }
  std::size_t output_dim() const { return layers.back().w.dim(0); }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& layer : layers) {
      if (layer.adapter) {
        h = adapter_forward(h, layer.w, *layer.adapter, adapter_config);
      } else {
        h = matmul(h, transpose2d(layer.w));
      }
      if (layer.act == Nonlinearity::kTanh) h = tanh(h);
    }
    return h;
  }

  std::size_t trainable_params() const {
    std::size_t total = 0;
    for (const auto& layer : layers)
      if (layer.adapter) total += layer.adapter->num_params();
    return total;
  }
};

// W entries ~ N(0, 1/sqrt(in)); layer i's out must chain into layer i+1's in.
template <typename T>
FrozenLinearModel<T> build_model(const ShapeList& layer_shapes,
                                 const std::vector<Nonlinearity>& acts,
                                 std::uint64_t seed) {
  if (layer_shapes.empty()) throw std::invalid_argument("build_model: no layers");
  if (acts.size() != layer_shapes.size()) {
    throw std::invalid_argument("build_model: " + std::to_string(acts.size()) +
                                " nonlinearities for " +
                                std::to_string(layer_shapes.size()) + " layers");
  }
  for (std::size_t i = 0; i + 1 < layer_shapes.size(); ++i) {
    if (layer_shapes[i].first != layer_shapes[i + 1].second) {
      throw std::invalid_argument(
          "build_model: layer " + std::to_string(i) + " output " +
          std::to_string(layer_shapes[i].first) + " does not chain into layer " +
          std::to_string(i + 1) + " input " +
          std::to_string(layer_shapes[i + 1].second));
    }
  }
  FrozenLinearModel<T> model;
  for (std::size_t i = 0; i < layer_shapes.size(); ++i) {
    auto [out, in] = layer_shapes[i];
    Rng rng(derive_seed(seed, i));
    typename FrozenLinearModel<T>::Layer layer;
    layer.w = Tensor<T>({out, in},
                        rng.template normal_vec<T>(out * in, 1.0 / std::sqrt(double(in))),
                        false);
    layer.act = acts[i];
    model.layers.push_back(std::move(layer));
  }
  return model;
}

// Fills every adapter slot with a zero-ΔW initialized state.
template <typename T>
void attach_adapters(FrozenLinearModel<T>& model, const AdapterConfig& cfg,
                     std::uint64_t seed) {
  for (auto& layer : model.layers) validate_config(cfg, layer.w.dim(0), layer.w.dim(1));
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    layer.adapter = init_adapter<T>(cfg, layer.w.dim(0), layer.w.dim(1),
                                    derive_seed(seed, 0xad00 + i));
  }
  model.adapter_config = cfg;
  model.adapters_attached = true;
}

// --- synthetic tasks --------------------------------------------------------

enum class TaskKind { kTeacherStudentRegression, kModularClassification };

struct SyntheticTask {
  TaskKind kind = TaskKind::kTeacherStudentRegression;
  std::size_t dataset_size = 4096;
  std::uint64_t seed = 0;
  // teacher_student_regression: teacher = base model with each W perturbed by
  // scale * U V^T, U,V Gaussian of rank `rank`.
  std::size_t rank = 4;
  double scale = 0.1;
  // modular_classification: labels are (a + b) mod modulus.
  std::size_t modulus = 7;
};

template <typename T>
struct Dataset {
  Tensor<T> inputs;               // [dataset_size, input_dim]
  Tensor<T> targets;              // regression: [dataset_size, output_dim]
  std::vector<std::size_t> labels;  // classification only
};

template <typename T>
Dataset<T> generate_task(const SyntheticTask& task, const FrozenLinearModel<T>& model) {
  Dataset<T> ds;
  const std::size_t in = model.input_dim();
  const std::size_t out = model.output_dim();
  if (task.kind == TaskKind::kTeacherStudentRegression) {
    Rng data_rng(derive_seed(task.seed, 0xda7a));
    ds.inputs = Tensor<T>({task.dataset_size, in},
                          data_rng.template normal_vec<T>(task.dataset_size * in, 1.0));
    // Teacher: base weights plus a rank-limited perturbation.
    FrozenLinearModel<T> teacher;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const auto& w = model.layers[i].w;
      const std::size_t n = w.dim(0), m = w.dim(1);
      Rng prng(derive_seed(task.seed, 0x7e4c + i));
      std::vector<T> wt = w.data();
      if (task.scale != 0.0 && task.rank > 0) {
        auto u = prng.template normal_vec<T>(n * task.rank, 1.0);
        auto v = prng.template normal_vec<T>(m * task.rank, 1.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < m; ++c) {
            T acc = T(0);
            for (std::size_t k = 0; k < task.rank; ++k)
              acc += u[r * task.rank + k] * v[c * task.rank + k];
            wt[r * m + c] += T(task.scale) * acc;
          }
      }
      typename FrozenLinearModel<T>::Layer layer;
      layer.w = Tensor<T>({n, m}, std::move(wt), false);
      layer.act = model.layers[i].act;
      teacher.layers.push_back(std::move(layer));
    }
    ds.targets = Tensor<T>(Shape{task.dataset_size, out},
                           teacher.forward(ds.inputs).data());
    return ds;
  }
  // Modular addition: inputs are the one-hot pair (a, b), label (a+b) mod k.
  const std::size_t k = task.modulus;
  if (in != 2 * k || out != k) {
    throw std::invalid_argument("modular task with modulus " + std::to_string(k) +
                                " needs a " + std::to_string(2 * k) + "->" +
                                std::to_string(k) + " model, got " +
                                std::to_string(in) + "->" + std::to_string(out));
  }
  Rng rng(derive_seed(task.seed, 0xda7a));
  std::vector<T> x(task.dataset_size * in, T(0));
  ds.labels.resize(task.dataset_size);
  for (std::size_t i = 0; i < task.dataset_size; ++i) {
    const std::size_t a = rng.uniform_int(k);
    const std::size_t b = rng.uniform_int(k);
    x[i * in + a] = T(1);
    x[i * in + k + b] = T(1);
    ds.labels[i] = (a + b) % k;
  }
  ds.inputs = Tensor<T>({task.dataset_size, in}, std::move(x));
  return ds;
}

// --- losses -----------------------------------------------------------------

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T> diff = sub(pred, target);
  return scale(reduce_sum_all(mul(diff, diff)), T(1) / T(pred.numel()));
}

// Mean softmax cross-entropy against integer labels; gradient is
// (softmax - onehot) / batch.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::vector<std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw std::invalid_argument("softmax_cross_entropy: " +
                                std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(batch));
  }
  for (std::size_t l : labels)
    if (l >= classes) throw std::invalid_argument("softmax_cross_entropy: label out of range");

  auto softmax_of = [batch, classes](const std::vector<T>& z) {
    std::vector<T> p(batch * classes);
    for (std::size_t i = 0; i < batch; ++i) {
      T mx = z[i * classes];
      for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[i * classes + c]);
      T denom = T(0);
      for (std::size_t c = 0; c < classes; ++c) {
        p[i * classes + c] = std::exp(z[i * classes + c] - mx);
        denom += p[i * classes + c];
      }
      for (std::size_t c = 0; c < classes; ++c) p[i * classes + c] /= denom;
    }
    return p;
  };

  auto fwd = [batch, classes, labels, softmax_of](detail::Node<T>& nd) {
    const auto& z = nd.parents[0]->value;
    auto p = softmax_of(z);
    T loss = T(0);
    for (std::size_t i = 0; i < batch; ++i)
      loss -= std::log(std::max(p[i * classes + labels[i]],
                                std::numeric_limits<T>::min()));
    std::vector<T> out{loss / T(batch)};
    detail::check_finite(out, "softmax_cross_entropy");
    return out;
  };
  auto bwd = [batch, classes, labels, softmax_of](detail::Node<T>& nd) {
    auto& pz = *nd.parents[0];
    if (!pz.requires_grad) return;
    pz.ensure_value();
    auto g = softmax_of(pz.value);
    for (std::size_t i = 0; i < batch; ++i) g[i * classes + labels[i]] -= T(1);
    const T s = nd.grad[0] / T(batch);
    for (auto& x : g) x *= s;
    pz.accumulate_grad(g.data(), g.size());
  };
  return detail::make_op<T>({}, {logits.node()}, fwd, bwd);
}

}  // namespace bone
