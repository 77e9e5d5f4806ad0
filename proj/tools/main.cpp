// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// fsdiff command line: pretraining, few-shot adaptation, sampling,
// evaluation, synthetic data generation and weight-ablation sweeps.
//
// Exit codes: 0 success, 1 runtime failure, 2 validation failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fsdiff/checkpoint.hpp"
#include "fsdiff/dataset.hpp"
#include "fsdiff/denoiser.hpp"
#include "fsdiff/diffusion.hpp"
#include "fsdiff/image_io.hpp"
#include "fsdiff/metrics.hpp"
#include "fsdiff/synthetic.hpp"
#include "fsdiff/training.hpp"

namespace fs = std::filesystem;
using namespace fsdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct RunPaths {
  std::string dataset_dir;
  std::string source_checkpoint;
  std::string out_dir;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  RunPaths paths;
  bool dump_config = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args, bool needs_source) {
  cmd->add_option("--config", args.config_path, "flat key=value config file");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set seed=7")
      ->expected(-1);
  cmd->add_option("--dataset", args.paths.dataset_dir, "directory of training PNGs");
  cmd->add_option("--out", args.paths.out_dir, "output directory for this run");
  if (needs_source) {
    cmd->add_option("--source", args.paths.source_checkpoint, "source model checkpoint");
  }
  cmd->add_flag("--dump-config", args.dump_config, "print the resolved config and exit");
}

// Resolves config file + --set overrides into a TrainConfig and paths.
// Path-like keys may live in the file as well; flags win.
std::pair<TrainConfig, RunPaths> resolve_config(const CommonArgs& args) {
  KeyValues kv;
  if (!args.config_path.empty()) kv = read_key_values_file(args.config_path);
  for (const std::string& s : args.overrides) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    }
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  RunPaths paths;
  auto take = [&kv](const char* key) {
    std::string v;
    if (auto it = kv.find(key); it != kv.end()) {
      v = it->second;
      kv.erase(it);
    }
    return v;
  };
  paths.dataset_dir = take("dataset_dir");
  paths.source_checkpoint = take("source_checkpoint");
  paths.out_dir = take("out_dir");
  if (!args.paths.dataset_dir.empty()) paths.dataset_dir = args.paths.dataset_dir;
  if (!args.paths.source_checkpoint.empty()) paths.source_checkpoint = args.paths.source_checkpoint;
  if (!args.paths.out_dir.empty()) paths.out_dir = args.paths.out_dir;
  return {train_config_from_key_values(kv), paths};
}

// FSDIFF_OUT_ROOT reroots relative output directories.
fs::path resolve_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw std::invalid_argument("missing output directory (--out or out_dir)");
  fs::path p(out_dir);
  if (const char* root = std::getenv("FSDIFF_OUT_ROOT"); root && *root && p.is_relative()) {
    p = fs::path(root) / p;
  }
  return p;
}

void dump_config(const TrainConfig& cfg, const RunPaths& paths) {
  KeyValues kv = to_key_values(cfg);
  if (!paths.dataset_dir.empty()) kv["dataset_dir"] = paths.dataset_dir;
  if (!paths.source_checkpoint.empty()) kv["source_checkpoint"] = paths.source_checkpoint;
  if (!paths.out_dir.empty()) kv["out_dir"] = paths.out_dir;
  std::cout << serialize_key_values(kv);
}

Dataset load_dataset_checked(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("missing dataset directory (--dataset)");
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument("dataset directory does not exist: " + dir);
  }
  return Dataset::load_dir(dir);
}

// Shared run harness for pretrain/adapt: wires CSV log, periodic
// checkpoints and sample grids under `out`.
Checkpoint run_training(const TrainConfig& cfg, const Dataset& dataset, const fs::path& out,
                        const Checkpoint* source) {
  fs::create_directories(out);
  std::ofstream log_file(out / "log.csv", std::ios::trunc);
  if (!log_file) throw std::runtime_error("cannot open " + (out / "log.csv").string());
  CsvLogger logger(log_file);

  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& row) {
    logger.log(row);
    if (!log_file) throw std::runtime_error("log write failed");
  };
  hooks.on_checkpoint = [&](const Checkpoint& ckpt) {
    save_checkpoint(out / ("ckpt_" + std::to_string(ckpt.iteration) + ".ckpt"), ckpt);
  };
  hooks.on_samples = [&](int64_t iteration, const std::vector<Tensor>& images) {
    write_png(out / ("samples_" + std::to_string(iteration) + ".png"), tile_grid(images, 2));
  };

  Checkpoint final_ckpt = source ? adapt(cfg, *source, dataset, hooks)
                                 : train_scratch(cfg, dataset, hooks);
  save_checkpoint(out / "model.ckpt", final_ckpt);
  std::ofstream cfg_echo(out / "config.txt", std::ios::trunc);
  cfg_echo << serialize_key_values(to_key_values(cfg));
  return final_ckpt;
}

int cmd_pretrain(const CommonArgs& args) {
  auto [cfg, paths] = resolve_config(args);
  cfg.mode = TrainMode::kScratch;
  validate(cfg);
  if (args.dump_config) {
    dump_config(cfg, paths);
    return kExitOk;
  }
  const Dataset dataset = load_dataset_checked(paths.dataset_dir);
  const fs::path out = resolve_out_dir(paths.out_dir);
  run_training(cfg, dataset, out, nullptr);
  std::cout << "pretrain: finished " << cfg.iterations << " iterations -> " << out << "\n";
  return kExitOk;
}

int cmd_adapt(const CommonArgs& args, const std::string& mode_flag) {
  auto [cfg, paths] = resolve_config(args);
  if (!mode_flag.empty()) cfg.mode = train_mode_from_string(mode_flag);
  if (cfg.mode == TrainMode::kScratch) cfg.mode = TrainMode::kPa;
  validate(cfg);
  if (args.dump_config) {
    dump_config(cfg, paths);
    return kExitOk;
  }
  if (paths.source_checkpoint.empty()) {
    throw std::invalid_argument("adapt needs --source checkpoint");
  }
  const Dataset dataset = load_dataset_checked(paths.dataset_dir);
  const Checkpoint source = load_checkpoint_for(paths.source_checkpoint, cfg.model);
  const fs::path out = resolve_out_dir(paths.out_dir);
  run_training(cfg, dataset, out, &source);
  std::cout << "adapt(" << to_string(cfg.mode) << "): finished " << cfg.iterations
            << " iterations -> " << out << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& checkpoint_path, int count, uint64_t seed,
               const std::string& out_dir) {
  if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const fs::path out = resolve_out_dir(out_dir);
  fs::create_directories(out);

  const Denoiser net(ckpt.config.model);
  const DenoiserModel model(net, ckpt.params);
  const std::vector<Tensor> images =
      sample_images(model, ckpt.schedule, ckpt.config.model.channels,
                    ckpt.config.model.image_size, ckpt.config.model.image_size, count, seed);
  char name[32];
  for (size_t i = 0; i < images.size(); ++i) {
    std::snprintf(name, sizeof(name), "sample_%04zu.png", i);
    write_png(out / name, images[i]);
  }
  write_png(out / "grid.png", tile_grid(images, 2));
  std::cout << "sample: wrote " << images.size() << " images -> " << out << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& generated_dir, const std::string& training_dir,
             const std::string& report_path, bool flip_augment, uint64_t backend_seed,
             const std::string& distance_csv) {
  const Dataset generated = load_dataset_checked(generated_dir);
  const Dataset training = load_dataset_checked(training_dir);
  if (generated.channels() != training.channels() || generated.height() != training.height() ||
      generated.width() != training.width()) {
    throw std::invalid_argument("eval: generated and training image dimensions differ");
  }

  RandomProjectionConfig bcfg;
  bcfg.seed = backend_seed;
  bcfg.channels = generated.channels();
  const RandomProjectionBackend backend(bcfg);
  EvalOptions opts;
  opts.flip_augment_training = flip_augment;
  const EvalReport report = evaluate(generated.images(), training.images(), backend, opts);

  const std::string json = to_json(report);
  if (report_path.empty()) {
    std::cout << json << "\n";
  } else {
    const fs::path out = resolve_out_dir(report_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + out.string());
    f << json << "\n";
    std::cout << "eval: report -> " << out << "\n";
  }
  if (!distance_csv.empty()) {
    std::vector<Tensor> train_set = training.images();
    if (flip_augment) {
      for (const Tensor& img : training.images()) train_set.push_back(hflip(img));
    }
    const Tensor table = distance_table(generated.images(), train_set, backend);
    std::ofstream f(distance_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + distance_csv);
    for (int64_t g = 0; g < table.dim(0); ++g) {
      for (int64_t t = 0; t < table.dim(1); ++t) {
        if (t) f << ',';
        f << format_double(table[g * table.dim(1) + t]);
      }
      f << '\n';
    }
  }
  return kExitOk;
}

int cmd_make_synthetic(const std::string& out_dir, int count, const std::string& style_name,
                       int64_t size, int64_t channels, uint64_t seed) {
  const SyntheticStyle style = synthetic_style_from_string(style_name);
  const fs::path out = resolve_out_dir(out_dir);
  fs::create_directories(out);
  const std::vector<Tensor> images = make_synthetic(style, channels, size, count, seed);
  char name[32];
  for (size_t i = 0; i < images.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    write_png(out / name, images[i]);
  }
  std::cout << "make-synthetic: wrote " << images.size() << " " << to_string(style)
            << " images -> " << out << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonArgs& args, const std::string& mode_flag, const std::string& param,
              const std::vector<double>& values) {
  if (param != "lambda2" && param != "lambda3" && param != "lambda4") {
    throw std::invalid_argument("sweep: --param must be lambda2, lambda3 or lambda4");
  }
  if (values.empty()) throw std::invalid_argument("sweep: --values must not be empty");
  auto [base_cfg, paths] = resolve_config(args);
  if (!mode_flag.empty()) base_cfg.mode = train_mode_from_string(mode_flag);
  if (base_cfg.mode == TrainMode::kScratch) base_cfg.mode = TrainMode::kPa;
  validate(base_cfg);
  if (paths.source_checkpoint.empty()) {
    throw std::invalid_argument("sweep needs --source checkpoint");
  }
  const Dataset dataset = load_dataset_checked(paths.dataset_dir);
  const Checkpoint source = load_checkpoint_for(paths.source_checkpoint, base_cfg.model);
  const fs::path root = resolve_out_dir(paths.out_dir);

  for (double v : values) {
    TrainConfig cfg = base_cfg;
    if (param == "lambda2") cfg.weights.lambda2 = v;
    if (param == "lambda3") cfg.weights.lambda3 = v;
    if (param == "lambda4") cfg.weights.lambda4 = v;
    validate(cfg);
    std::string tag = format_double(v);
    for (char& c : tag) {
      if (c == '.') c = 'p';  // filesystem-friendly value tag
    }
    const fs::path out = root / (param + "_" + tag);
    run_training(cfg, dataset, out, &source);
    std::cout << "sweep: " << param << "=" << format_double(v) << " -> " << out << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale diffusion training and few-shot pairwise adaptation"};
  app.require_subcommand(1);

  CommonArgs pretrain_args;
  CLI::App* pretrain = app.add_subcommand("pretrain", "train a model from scratch");
  add_common_options(pretrain, pretrain_args, false);

  CommonArgs adapt_args;
  std::string adapt_mode;
  CLI::App* adapt_cmd = app.add_subcommand("adapt", "adapt a source checkpoint (pa or finetune)");
  add_common_options(adapt_cmd, adapt_args, true);
  adapt_cmd->add_option("--mode", adapt_mode, "pa (default) or finetune");

  std::string sample_ckpt, sample_out;
  int sample_count = 9;
  uint64_t sample_seed = 0;
  CLI::App* sample = app.add_subcommand("sample", "ancestral sampling from a checkpoint");
  sample->add_option("--checkpoint", sample_ckpt, "model checkpoint")->required();
  sample->add_option("--count", sample_count, "number of images");
  sample->add_option("--seed", sample_seed, "base seed; image i uses seed+i");
  sample->add_option("--out", sample_out, "output directory")->required();

  std::string eval_generated, eval_training, eval_report, eval_csv;
  bool eval_flip = false;
  uint64_t eval_seed = 17;
  CLI::App* eval = app.add_subcommand("eval", "diversity/quality report for generated images");
  eval->add_option("--generated", eval_generated, "directory of generated PNGs")->required();
  eval->add_option("--training", eval_training, "directory of training PNGs")->required();
  eval->add_option("--out", eval_report, "report JSON path (stdout when omitted)");
  eval->add_flag("--flip-augment-training", eval_flip,
                 "also compare against mirrored training samples");
  eval->add_option("--backend-seed", eval_seed, "perceptual backend seed");
  eval->add_option("--distance-csv", eval_csv, "write the full distance table");

  std::string synth_out, synth_style = "mixed";
  int synth_count = 64;
  int64_t synth_size = 16, synth_channels = 1;
  uint64_t synth_seed = 0;
  CLI::App* synth = app.add_subcommand("make-synthetic", "generate a toy PNG dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--style", synth_style, "gradients|blobs|stripes|checker|mixed");
  synth->add_option("--size", synth_size, "image side length");
  synth->add_option("--channels", synth_channels, "1 (gray) or 3 (rgb)");
  synth->add_option("--seed", synth_seed, "generator seed");

  CommonArgs sweep_args;
  std::string sweep_mode, sweep_param;
  std::vector<double> sweep_values;
  CLI::App* sweep = app.add_subcommand("sweep", "one-axis ablation over a loss weight");
  add_common_options(sweep, sweep_args, true);
  sweep->add_option("--mode", sweep_mode, "pa (default) or finetune");
  sweep->add_option("--param", sweep_param, "lambda2|lambda3|lambda4")->required();
  sweep->add_option("--values", sweep_values, "weight values to try")->required()->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(pretrain_args);
    if (adapt_cmd->parsed()) return cmd_adapt(adapt_args, adapt_mode);
    if (sample->parsed()) return cmd_sample(sample_ckpt, sample_count, sample_seed, sample_out);
    if (eval->parsed()) {
      return cmd_eval(eval_generated, eval_training, eval_report, eval_flip, eval_seed, eval_csv);
    }
    if (synth->parsed()) {
      return cmd_make_synthetic(synth_out, synth_count, synth_style, synth_size, synth_channels,
                                synth_seed);
    }
    if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_mode, sweep_param, sweep_values);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
