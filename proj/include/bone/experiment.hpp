#pragma once

// Experiment configs (JSON) and the orchestration behind the CLI commands:
// validated parsing, per-seed training with artifact output, checkpoint
// export, and merge verification.

#include <string>
#include <vector>

#include <json.hpp>

#include "bone/checkpoint.hpp"
#include "bone/trainer.hpp"

namespace bone {

struct ExperimentConfig {
  TrainRun base;                    // per-seed runs override base.seed
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::string dtype = "f32";        // "f32" | "f64"
  nlohmann::json raw;               // config as parsed, for metadata embedding
};

// Throws std::invalid_argument with a readable message on any violation of
// the module preconditions; nothing is computed for invalid configs.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::string& path);

struct RunArtifacts {
  std::string loss_csv;
  std::string checkpoint;
  std::string memory_json;
};

// Trains one seed and writes {variant}_{seed}.csv/.ckpt/_memory.json under
// output_dir. Deterministic byte-for-byte given identical config.
RunArtifacts run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// All seeds in order.
std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg);

// Rebuilds the model recorded in a training checkpoint, restores the adapter
// state, verifies merged-forward equivalence on a probe batch, and writes the
// merged weights to out_path. Returns the max abs deviation observed.
double merge_checkpoint(const std::string& ckpt_path, const std::string& out_path);

// Checkpoint helpers shared by trainer output and merge.
Checkpoint checkpoint_from_result(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const TrainResult<float>& result);
Checkpoint checkpoint_from_result(const ExperimentConfig& cfg, std::uint64_t seed,
                                  const TrainResult<double>& result);

}  // namespace bone
