// Experiment runner: train / param-count / grad-check / merge / compare /
// oracle-check. Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bone/catalog.hpp"
#include "bone/experiment.hpp"
#include "bone/gradcheck.hpp"
#include "bone/reference.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Published tables truncate to 0.1M (e.g. 72,876,032 -> 72.8M); match that.
std::string millions(std::uint64_t v) {
  const std::uint64_t tenths = v / 100000;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%" PRIu64 ".%" PRIu64 "M", tenths / 10, tenths % 10);
  return buf;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              long long seed_override, const std::string& dtype_override) {
  bone::ExperimentConfig cfg = bone::load_experiment(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  if (!dtype_override.empty()) cfg.dtype = dtype_override;
  if (seed_override >= 0) cfg.seeds = {std::uint64_t(seed_override)};
  for (std::uint64_t seed : cfg.seeds) {
    auto art = bone::run_one_seed(cfg, seed);
    std::printf("seed %" PRIu64 ": wrote %s, %s, %s\n", seed, art.loss_csv.c_str(),
                art.checkpoint.c_str(), art.memory_json.c_str());
  }
  return kOk;
}

int cmd_param_count(const std::string& catalog_name, const std::string& variant_name,
                    std::uint64_t size, std::uint64_t group_count) {
  const bone::ShapeCatalog* cat = bone::find_catalog(catalog_name);
  bone::ShapeList shapes;
  if (cat) {
    shapes = cat->shapes;
  } else {
    bone::ExperimentConfig cfg = bone::load_experiment(catalog_name);
    shapes = cfg.base.layer_shapes;
  }
  auto variant = bone::variant_from_name(variant_name);
  if (!variant) throw std::invalid_argument("unknown variant '" + variant_name + "'");
  bone::AdapterConfig acfg;
  acfg.variant = *variant;
  if (*variant == bone::Variant::kLora) {
    acfg.rank = size;
  } else {
    acfg.block_size = size;
    acfg.group_count = group_count;
  }
  const std::uint64_t total = bone::param_count(shapes, acfg);
  std::printf("%-20s %-20s %15s  (%s)\n", catalog_name.c_str(), variant_name.c_str(),
              with_commas(total).c_str(), millions(total).c_str());
  return kOk;
}

int cmd_grad_check(const std::string& dtype, bool corrupt) {
  const double tol = dtype == "f32" ? 1e-2 : 1e-5;
  bone::GradCheckOptions opt;
  opt.corrupt = corrupt;
  bool all_pass = true;
  for (const auto& cfg : bone::gradcheck_suite()) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const double err = dtype == "f32"
                             ? bone::adapter_grad_max_rel_err<float>(cfg, seed, opt)
                             : bone::adapter_grad_max_rel_err<double>(cfg, seed, opt);
      worst = std::max(worst, err);
    }
    const bool pass = worst <= tol;
    all_pass = all_pass && pass;
    std::printf("%-20s max rel err %.3e  %s\n", bone::variant_name(cfg.variant),
                worst, pass ? "PASS" : "FAIL");
  }
  return all_pass ? kOk : kRuntimeError;
}

int cmd_merge(const std::string& ckpt_path, const std::string& out_path) {
  bone::Checkpoint ckpt = bone::load_checkpoint(ckpt_path);
  const std::string dtype = ckpt.metadata.value("dtype", "f32");
  const double tol = dtype == "f64" ? 1e-12 : 1e-3;
  const double diff = bone::merge_checkpoint(ckpt_path, out_path);
  std::printf("max forward deviation after merge: %.3e (tolerance %.0e)\n", diff, tol);
  if (diff > tol) {
    std::fprintf(stderr, "merge verification failed\n");
    return kRuntimeError;
  }
  std::printf("wrote %s\n", out_path.c_str());
  return kOk;
}

double loss_at(const std::vector<std::pair<std::size_t, double>>& log, std::size_t step) {
  for (const auto& [s, l] : log)
    if (s == step) return l;
  return log.back().second;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_compare(const std::vector<std::string>& paths) {
  std::map<std::string, std::vector<std::pair<double, double>>> by_variant;
  std::printf("%-40s %14s %14s\n", "log", "loss@100", "loss@final");
  for (const auto& path : paths) {
    auto log = bone::read_loss_log(path);
    if (log.empty()) throw std::runtime_error("'" + path + "' has no rows");
    const double at100 = loss_at(log, 100);
    const double fin = log.back().second;
    std::printf("%-40s %14.6g %14.6g\n", path.c_str(), at100, fin);
    // Group by "{variant}_{seed}.csv" stem when the name follows that shape.
    std::string base = path.substr(path.find_last_of('/') + 1);
    const auto us = base.find_last_of('_');
    std::string variant = us == std::string::npos ? base : base.substr(0, us);
    by_variant[variant].emplace_back(at100, fin);
  }
  if (paths.size() > 1) {
    std::printf("\n%-40s %14s %14s\n", "variant (median)", "loss@100", "loss@final");
    for (const auto& [variant, rows] : by_variant) {
      std::vector<double> a, f;
      for (auto [x, y] : rows) {
        a.push_back(x);
        f.push_back(y);
      }
      std::printf("%-40s %14.6g %14.6g\n", variant.c_str(), median(a), median(f));
    }
  }
  return kOk;
}

int cmd_oracle_check() {
  const double tol = 1e-13;
  double worst = 0.0;
  std::string worst_case = "none";
  auto check = [&](const std::string& label, const std::vector<double>& got,
                   const bone::reference::Mat& want) {
    double max_abs = 1.0, max_diff = 0.0;
    for (double v : want) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t i = 0; i < want.size(); ++i)
      max_diff = std::max(max_diff, std::abs(got[i] - want[i]));
    const double rel = max_diff / max_abs;
    if (rel > worst) {
      worst = rel;
      worst_case = label;
    }
  };

  for (std::size_t n : {8, 16, 32, 64}) {
    for (std::size_t m : {8, 16, 32, 64}) {
      for (std::size_t b : {2, 4, 8}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
          bone::Rng rng(bone::derive_seed(seed, n * 1000 + m * 10 + b));
          const std::size_t nb = n / b, mb = m / b;
          auto wv = rng.normal_vec<double>(n * m, 1.0);
          bone::Tensor<double> w({n, m}, wv);
          const std::string tag = std::to_string(n) + "x" + std::to_string(m) +
                                  " b=" + std::to_string(b);

          auto kcol = rng.normal_vec<double>(nb * b * b, 1.0);
          check("col " + tag,
                bone::delta_w_col(w, bone::Tensor<double>({nb, b, b}, kcol)).data(),
                bone::reference::delta_w_col(wv, n, m, kcol, b));

          auto krow = rng.normal_vec<double>(mb * b * b, 1.0);
          check("row " + tag,
                bone::delta_w_row(w, bone::Tensor<double>({mb, b, b}, krow)).data(),
                bone::reference::delta_w_row(wv, n, m, krow, b));

          check("hadamard " + tag,
                bone::delta_w_hadamard(w, bone::Tensor<double>({mb, b, b}, krow)).data(),
                bone::reference::delta_w_hadamard(wv, n, m, krow, b));

          auto ka = rng.normal_vec<double>(mb * b * b, 1.0);
          auto kb = rng.normal_vec<double>(mb * b * b, 1.0);
          check("unconstrained " + tag,
                bone::delta_w_unconstrained(w, bone::Tensor<double>({mb, b, b}, ka),
                                            bone::Tensor<double>({mb, b, b}, kb))
                    .data(),
                bone::reference::delta_w_unconstrained(wv, n, m, ka, kb, b));

          // Grouped form with g = half the block count (contiguous chunks).
          const std::size_t g = std::max<std::size_t>(1, nb * mb / 2);
          auto kg = rng.normal_vec<double>(g * b * b, 1.0);
          std::vector<std::size_t> table(nb * mb);
          for (std::size_t i = 0; i < table.size(); ++i)
            table[i] = i / (table.size() / g);
          check("grouped " + tag,
                bone::delta_w_grouped(w, bone::Tensor<double>({g, b, b}, kg)).data(),
                bone::reference::delta_w_blocked(wv, n, m, kg, b, table));

          if (n == m) {
            auto ksq = rng.normal_vec<double>(n * n, 1.0);
            check("square " + tag,
                  bone::delta_w_square(w, bone::Tensor<double>({n, n}, ksq)).data(),
                  bone::reference::delta_w_square(wv, n, ksq));
            const std::size_t r = b;
            auto la = rng.normal_vec<double>(n * r, 1.0);
            auto lb = rng.normal_vec<double>(r * m, 1.0);
            check("lora " + tag,
                  bone::lora_delta_w(bone::Tensor<double>({n, r}, la),
                                     bone::Tensor<double>({r, m}, lb))
                      .data(),
                  bone::reference::lora_delta_w(la, lb, n, r, m));
          }
        }
      }
    }
  }
  std::printf("oracle sweep: worst rel err %.3e at %s (tolerance %.0e)\n", worst,
              worst_case.c_str(), tol);
  return worst <= tol ? kOk : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-affine adapter experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dtype, gc_dtype, ckpt_path, out_path;
  long long seed_override = -1;
  std::uint64_t size = 0, group_count = 0;
  std::string catalog_name, variant_name;
  std::vector<std::string> log_paths;
  bool corrupt = false;

  auto* train = app.add_subcommand("train", "run a training experiment from a config");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "override output_dir");
  train->add_option("--seed-override", seed_override, "run only this seed");
  train->add_option("--dtype", dtype, "override dtype")
      ->check(CLI::IsMember({"f32", "f64"}));

  auto* pc = app.add_subcommand("param-count", "trainable parameter count on a catalog");
  pc->add_option("catalog", catalog_name, "built-in catalog name or config path")->required();
  pc->add_option("variant", variant_name, "adapter variant")->required();
  pc->add_option("size", size, "block size (bone) or rank (lora)")->required();
  pc->add_option("--group-count", group_count, "groups for bone_both");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every variant");
  gc->add_option("--dtype", gc_dtype, "dtype (f32 uses tolerance 1e-2)")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->default_val("f64");
  gc->add_flag("--corrupt", corrupt, "negative-control hook: corrupt one gradient");

  auto* mg = app.add_subcommand("merge", "merge adapters into plain weights");
  mg->add_option("checkpoint", ckpt_path, "training checkpoint")->required();
  mg->add_option("out", out_path, "merged output path")->required();

  auto* cp = app.add_subcommand("compare", "loss summary at step 100 and final");
  cp->add_option("logs", log_paths, "loss CSV files")->required()->expected(-1);

  app.add_subcommand("oracle-check", "sweep every delta_w against naive loops");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;  // bad usage is a validation error
  }

  try {
    if (app.got_subcommand("train"))
      return cmd_train(config_path, out_dir, seed_override, dtype);
    if (app.got_subcommand("param-count"))
      return cmd_param_count(catalog_name, variant_name, size, group_count);
    if (app.got_subcommand("grad-check")) return cmd_grad_check(gc_dtype, corrupt);
    if (app.got_subcommand("merge")) return cmd_merge(ckpt_path, out_path);
    if (app.got_subcommand("compare")) return cmd_compare(log_paths);
    if (app.got_subcommand("oracle-check")) return cmd_oracle_check();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kValidationError;
}
