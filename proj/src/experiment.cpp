#include "bone/experiment.hpp"

#include <filesystem>
#include <fstream>

namespace bone {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("config error: " + msg);
}

const json& require_key(const json& j, const char* key, const char* where) {
  if (!j.contains(key)) fail(std::string(where) + " is missing '" + key + "'");
  return j.at(key);
}

}  // namespace

ExperimentConfig parse_experiment(const json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;

  const json& model = require_key(j, "model", "config");
  const json& adapter = require_key(j, "adapter", "config");
  const json& train = require_key(j, "train", "config");
  cfg.output_dir = require_key(j, "output_dir", "config").get<std::string>();
  cfg.dtype = j.value("dtype", "f32");
  if (cfg.dtype != "f32" && cfg.dtype != "f64") fail("dtype must be f32 or f64");

  // model
  for (const auto& s : require_key(model, "layer_shapes", "model")) {
    if (!s.is_array() || s.size() != 2) fail("layer_shapes entries must be [out, in]");
    cfg.base.layer_shapes.emplace_back(s[0].get<std::size_t>(), s[1].get<std::size_t>());
  }
  if (cfg.base.layer_shapes.empty()) fail("model has no layers");
  for (std::size_t i = 0; i + 1 < cfg.base.layer_shapes.size(); ++i) {
    if (cfg.base.layer_shapes[i].first != cfg.base.layer_shapes[i + 1].second) {
      fail("layer " + std::to_string(i) + " output does not chain into layer " +
           std::to_string(i + 1));
    }
  }
  for (const auto& a : require_key(model, "nonlinearities", "model")) {
    auto act = nonlinearity_from_name(a.get<std::string>());
    if (!act) fail("unknown nonlinearity '" + a.get<std::string>() + "'");
    cfg.base.nonlinearities.push_back(*act);
  }
  if (cfg.base.nonlinearities.size() != cfg.base.layer_shapes.size()) {
    fail("nonlinearities count differs from layer count");
  }
  cfg.base.model_seed = model.value("seed", 0ULL);

  // adapter
  const std::string vname = require_key(adapter, "variant", "adapter").get<std::string>();
  auto variant = variant_from_name(vname);
  if (!variant) fail("unknown adapter variant '" + vname + "'");
  cfg.base.adapter.variant = *variant;
  cfg.base.adapter.block_size = adapter.value("block_size", 0ULL);
  cfg.base.adapter.group_count = adapter.value("group_count", 0ULL);
  cfg.base.adapter.rank = adapter.value("rank", 0ULL);
  cfg.base.adapter.recompute = adapter.value("recompute", false);
  for (auto [n, m] : cfg.base.layer_shapes) {
    try {
      validate_config(cfg.base.adapter, n, m);
    } catch (const std::invalid_argument& e) {
      fail(std::string("adapter does not fit model: ") + e.what());
    }
  }

  // train
  const json& task = require_key(train, "task", "train");
  const std::string kind = task.value("kind", "teacher_student_regression");
  if (kind == "teacher_student_regression") {
    cfg.base.task.kind = TaskKind::kTeacherStudentRegression;
    cfg.base.task.rank = task.value("rank", 4ULL);
    cfg.base.task.scale = task.value("scale", 0.1);
  } else if (kind == "modular_classification") {
    cfg.base.task.kind = TaskKind::kModularClassification;
    cfg.base.task.modulus = task.value("modulus", 7ULL);
    if (cfg.base.layer_shapes.front().second != 2 * cfg.base.task.modulus ||
        cfg.base.layer_shapes.back().first != cfg.base.task.modulus) {
      fail("modular task dims do not match the model");
    }
  } else {
    fail("unknown task kind '" + kind + "'");
  }
  cfg.base.task.dataset_size = task.value("dataset_size", 4096ULL);
  cfg.base.task.seed = task.value("seed", 0ULL);
  if (cfg.base.task.dataset_size == 0) fail("dataset_size must be positive");

  const std::string oname = train.value("optimizer", "adamw");
  auto opt = optimizer_from_name(oname);
  if (!opt) fail("unknown optimizer '" + oname + "'");
  cfg.base.optimizer.kind = *opt;
  cfg.base.optimizer.lr = require_key(train, "lr", "train").get<double>();
  cfg.base.optimizer.weight_decay = train.value("weight_decay", 0.0);
  cfg.base.steps = require_key(train, "steps", "train").get<std::size_t>();
  cfg.base.batch_size = train.value("batch_size", 64ULL);
  if (cfg.base.batch_size == 0 || cfg.base.batch_size > cfg.base.task.dataset_size) {
    fail("batch_size must be in [1, dataset_size]");
  }
  for (const auto& s : require_key(train, "seeds", "train")) {
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }
  if (cfg.seeds.empty()) fail("train.seeds is empty");
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config error: invalid JSON in '" + path + "': " + e.what());
  }
  return parse_experiment(j);
}

namespace {

template <typename T>
Checkpoint build_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed,
                            const TrainResult<T>& result) {
  Checkpoint ckpt;
  for (std::size_t i = 0; i < result.model.layers.size(); ++i) {
    const auto& st = *result.model.layers[i].adapter;
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (st.variant) {
      case Variant::kLora:
        ckpt.tensors.push_back(to_record(prefix + "lora_a", st.a));
        ckpt.tensors.push_back(to_record(prefix + "lora_b", st.b));
        break;
      case Variant::kBoneUnconstrained:
        ckpt.tensors.push_back(to_record(prefix + "a", st.a));
        ckpt.tensors.push_back(to_record(prefix + "b", st.b));
        break;
      default:
        ckpt.tensors.push_back(to_record(prefix + "bone", st.bone));
    }
  }
  ckpt.metadata = {{"config", cfg.raw},
                   {"seed", seed},
                   {"step", cfg.base.steps},
                   {"dtype", cfg.dtype},
                   {"lora_init", "gaussian(0, 1/sqrt(r))"}};
  return ckpt;
}

template <typename T>
RunArtifacts run_one_seed_t(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainRun run = cfg.base;
  run.seed = seed;
  TrainResult<T> result = train<T>(run);

  std::filesystem::create_directories(cfg.output_dir);
  const std::string stem = cfg.output_dir + "/" +
                           variant_name(cfg.base.adapter.variant) + "_" +
                           std::to_string(seed);
  RunArtifacts art{stem + ".csv", stem + ".ckpt", stem + "_memory.json"};

  write_loss_log(art.loss_csv, result.log);
  save_checkpoint(art.checkpoint, build_checkpoint(cfg, seed, result));

  nlohmann::json mem = {{"params_bytes", result.memory.params_bytes},
                        {"grads_bytes", result.memory.grads_bytes},
                        {"optimizer_bytes", result.memory.optimizer_bytes},
                        {"cached_delta_bytes", result.memory.cached_delta_bytes},
                        {"peak_tracked_bytes", result.memory.peak_tracked_bytes()}};
  const std::string tmp = art.memory_json + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << mem.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, art.memory_json);
  return art;
}

// Restores adapter state tensors into a freshly built model.
template <typename T>
FrozenLinearModel<T> restore_model(const ExperimentConfig& cfg, std::uint64_t seed,
                                   const Checkpoint& ckpt) {
  FrozenLinearModel<T> model =
      build_model<T>(cfg.base.layer_shapes, cfg.base.nonlinearities, cfg.base.model_seed);
  attach_adapters(model, cfg.base.adapter, seed);
  auto find = [&ckpt](const std::string& name) -> const TensorRecord& {
    for (const auto& rec : ckpt.tensors)
      if (rec.name == name) return rec;
    throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& st = *model.layers[i].adapter;
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (st.variant) {
      case Variant::kLora:
        st.a = from_record<T>(find(prefix + "lora_a"), true);
        st.b = from_record<T>(find(prefix + "lora_b"), true);
        break;
      case Variant::kBoneUnconstrained:
        st.a = from_record<T>(find(prefix + "a"), true);
        st.b = from_record<T>(find(prefix + "b"), true);
        break;
      default:
        st.bone = from_record<T>(find(prefix + "bone"), true);
    }
  }
  return model;
}

template <typename T>
double merge_checkpoint_t(const ExperimentConfig& cfg, std::uint64_t seed,
                          const Checkpoint& ckpt, const std::string& out_path) {
  FrozenLinearModel<T> model = restore_model<T>(cfg, seed, ckpt);

  std::vector<Tensor<T>> merged;
  for (const auto& layer : model.layers)
    merged.push_back(merge(layer.w, *layer.adapter, cfg.base.adapter));

  // Probe: live adapter forward vs the merged plain forward.
  Rng rng(derive_seed(cfg.base.model_seed, 0x4afe));
  const std::size_t in = model.input_dim();
  Tensor<T> x({8, in}, rng.template normal_vec<T>(8 * in, 1.0));
  Tensor<T> live = model.forward(x);
  Tensor<T> h = x;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    h = matmul(h, transpose2d(merged[i]));
    if (model.layers[i].act == Nonlinearity::kTanh) h = tanh(h);
  }
  double max_diff = 0.0;
  for (std::size_t i = 0; i < live.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(double(live.data()[i]) - double(h.data()[i])));
  }

  Checkpoint out;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    out.tensors.push_back(to_record("layer" + std::to_string(i) + ".weight", merged[i]));
  }
  out.metadata = ckpt.metadata;
  out.metadata["merged"] = true;
  save_checkpoint(out_path, out);
  return max_diff;
}

}  // namespace

Checkpoint checkpoint_from_result(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const TrainResult<float>& result) {
  return build_checkpoint(cfg, seed, result);
}
Checkpoint checkpoint_from_result(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const TrainResult<double>& result) {
  return build_checkpoint(cfg, seed, result);
}

RunArtifacts run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.dtype == "f64" ? run_one_seed_t<double>(cfg, seed)
                            : run_one_seed_t<float>(cfg, seed);
}

std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg) {
  std::vector<RunArtifacts> arts;
  for (std::uint64_t seed : cfg.seeds) arts.push_back(run_one_seed(cfg, seed));
  return arts;
}

double merge_checkpoint(const std::string& ckpt_path, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.metadata.contains("config")) {
    throw std::runtime_error("checkpoint has no embedded config; cannot rebuild model");
  }
  ExperimentConfig cfg = parse_experiment(ckpt.metadata.at("config"));
  cfg.dtype = ckpt.metadata.value("dtype", cfg.dtype);
  const std::uint64_t seed = ckpt.metadata.value("seed", 0ULL);
  return cfg.dtype == "f64" ? merge_checkpoint_t<double>(cfg, seed, ckpt, out_path)
                            : merge_checkpoint_t<float>(cfg, seed, ckpt, out_path);
}

}  // namespace bone
