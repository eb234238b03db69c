// featmatch command line: train, ablate, sweep, eval.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "featmatch/checkpoint.hpp"
#include "featmatch/experiment.hpp"

namespace fm = featmatch;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool single_thread = false;
  std::size_t seeds = 3;
  std::string axis;
  std::vector<std::size_t> values;
  std::string checkpoint;
  std::string data = "test";
};

fm::ExperimentConfig load(const Options& o) {
  fm::ExperimentConfig cfg = fm::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

int cmd_train(const Options& o) {
  fm::ExperimentConfig cfg = load(o);
  const auto r = fm::run_experiment(cfg, fm::RunOptions{true, o.single_thread});
  std::printf("test_error=%.6f test_error_no_augf=%.6f epochs=%zu iterations=%zu time=%.1fs\n", r.test_error,
              r.test_error_no_augf, r.epochs, r.iterations, r.seconds);
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  return 0;
}

int cmd_ablate(const Options& o) {
  fm::ExperimentConfig cfg = load(o);
  if (o.seeds == 0) throw fm::ConfigError("ablate: --seeds must be positive");
  const auto rows = fm::run_ablation(cfg, o.seeds, fm::RunOptions{true, o.single_thread});
  std::filesystem::create_directories(cfg.output_dir);
  fm::write_ablation_csv(std::filesystem::path(cfg.output_dir) / "ablation.csv", rows);
  std::cout << fm::format_ablation_table(rows);
  return 0;
}

int cmd_sweep(const Options& o) {
  fm::ExperimentConfig cfg = load(o);
  const auto axis = fm::parse_axis(o.axis);
  if (o.seeds == 0) throw fm::ConfigError("sweep: --seeds must be positive");
  const auto rows = fm::run_sensitivity(axis, o.values, cfg, o.seeds, fm::RunOptions{true, o.single_thread});
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = std::filesystem::path(cfg.output_dir) / ("sweep_" + o.axis + ".csv");
  fm::write_sweep_csv(path, axis, rows);
  for (const auto& r : rows) {
    std::printf("%s=%zu error=%.2f%% +- %.2f\n", o.axis.c_str(), r.value, 100.0 * r.error.mean, 100.0 * r.error.stddev);
  }
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

// --data: "test" regenerates the checkpoint config's test split; a .json path
// uses that config's test split; anything else is read as a binary image file
// with the checkpoint's layout.
int cmd_eval(const Options& o) {
  fm::Checkpoint ck = fm::load_checkpoint(o.checkpoint);
  const std::uint64_t iteration = ck.header.iteration;
  // The trainer decides whether AugF was trained, which needs the schedule.
  fm::Trainer trainer(ck.config, fm::prepare_data(ck.config));
  trainer.restore(std::move(ck.state), std::move(ck.metrics));
  fm::Dataset test;
  if (o.data == "test") {
    test = trainer.data().test;
  } else if (std::filesystem::path(o.data).extension() == ".json") {
    test = fm::prepare_data(fm::load_config(o.data)).test;
  } else {
    fm::ImageLayout layout = ck.config.dataset.layout;
    layout.num_classes = ck.config.dataset.classes;
    test = fm::load_binary_images(o.data, layout);
  }
  const fm::Network& net = trainer.state().net;
  if (test.shape.dim() != net.encoder.layers.front().weight.value.rows()) {
    throw fm::ConfigError("eval: data sample width does not match the checkpoint model");
  }
  const auto r = fm::evaluate(net, trainer.augf_in_use() ? &trainer.state().prototypes : nullptr, test);
  std::printf("samples=%zu error=%.6f error_no_augf=%.6f iteration=%llu\n", r.samples, r.error, r.error_no_augf,
              static_cast<unsigned long long>(iteration));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FeatMatch semi-supervised training"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train one model and write metrics, report and checkpoint");
  train->add_option("--config", o.config, "JSON config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", o.seed, "override the config seed");
  train->add_option("--out", o.out, "output directory");
  train->add_flag("--single-thread", o.single_thread, "disable worker threads");

  auto* ablate = app.add_subcommand("ablate", "run the four ablation rows over several seeds");
  ablate->add_option("--config", o.config, "JSON config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", o.seeds, "number of seeds")->required();
  ablate->add_option("--out", o.out, "output directory");
  ablate->add_flag("--single-thread", o.single_thread, "run cells sequentially");

  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over prototypes per class or extraction interval");
  sweep->add_option("--axis", o.axis, "pk or ip")->required()->check(CLI::IsMember({"pk", "ip"}));
  sweep->add_option("--values", o.values, "values to sweep")->required();
  sweep->add_option("--config", o.config, "JSON config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--seeds", o.seeds, "seeds per value");
  sweep->add_option("--out", o.out, "output directory");
  sweep->add_flag("--single-thread", o.single_thread, "run cells sequentially");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "'test', a config .json, or a binary image file");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(o);
    if (*ablate) return cmd_ablate(o);
    if (*sweep) return cmd_sweep(o);
    if (*eval) return cmd_eval(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
