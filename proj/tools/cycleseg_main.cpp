// cycleseg experiment runner: train / evaluate / ablate / sweep / synth / plot
// over the cycle-consistent semi-supervised segmentation framework.
//
// Exit codes: 0 success, 1 validation or usage error, 2 runtime failure
// (e.g. a loss went non-finite mid-training).

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cycleseg/experiments/commands.hpp"

extern "C" void openblas_set_num_threads(int num_threads);

namespace {

using cycleseg::experiments::AblationTarget;
using cycleseg::experiments::KeyValueConfig;
using cycleseg::experiments::RunConfig;
using cycleseg::experiments::RunMode;

std::vector<uint64_t> parse_u64_list(const std::string& csv) {
  std::vector<uint64_t> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    size_t pos = 0;
    uint64_t v = 0;
    try {
      v = std::stoull(cell, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != cell.size() || cell.empty())
      throw std::invalid_argument("expected a comma-separated integer list, got '" + csv + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list: '" + csv + "'");
  return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(cell, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != cell.size() || cell.empty())
      throw std::invalid_argument("expected a comma-separated number list, got '" + csv + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list: '" + csv + "'");
  return out;
}

/// Options shared by every subcommand; merged into a RunConfig in the fixed
/// order preset -> config file -> --set pairs -> direct flags.
struct CommonArgs {
  std::string preset = "shapes-desk";
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  std::optional<std::string> run_dir;
  std::optional<std::string> device;
  std::optional<std::string> data_root;
  std::optional<double> fraction;
  std::optional<std::string> mode;
  std::optional<std::string> ablation_target;
  bool deterministic = true;
  bool quiet = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--preset", preset, "named preset: shapes-desk, voc, cityscapes")
        ->capture_default_str();
    cmd.add_option("--config", config_path, "key = value config file layered over the preset");
    cmd.add_option("--set", sets, "single config override, key=value (repeatable)");
    cmd.add_option("--seed", seed, "training seed (hparams.seed)");
    cmd.add_option("--run-dir", run_dir, "run directory (run.dir)");
    cmd.add_option("--device", device, "compute device (only cpu is available)");
    cmd.add_option("--data-root", data_root,
                   "dataset base directory; <name> is appended (overrides $SSCGAN_DATA_ROOT)");
    cmd.add_option("--fraction", fraction, "labeled fraction in (0, 1] (split.fraction)");
    cmd.add_option("--mode", mode, "run mode: full, partial, semi, ablation");
    cmd.add_option("--ablation-target", ablation_target,
                   "loss term removed when --mode ablation: cycle_labels, cycle_image, "
                   "disc_labels, disc_image");
    cmd.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "record deterministic mode in the config (CPU runs are always deterministic)");
    cmd.add_flag("--quiet", quiet, "suppress per-epoch progress lines");
  }

  RunConfig build() const {
    RunConfig c = cycleseg::experiments::preset_config(preset);
    if (!config_path.empty()) c.apply_kv(KeyValueConfig::load(config_path));
    KeyValueConfig overrides;
    for (const std::string& pair : sets) {
      const auto eq = pair.find('=');
      if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--set expects key=value, got '" + pair + "'");
      overrides.set(pair.substr(0, eq), pair.substr(eq + 1));
    }
    c.apply_kv(overrides);
    if (seed) c.hparams.seed = *seed;
    if (run_dir) c.run_dir = *run_dir;
    if (device) c.device = *device;
    if (data_root) c.dataset.root = *data_root + "/" + c.dataset.name;
    if (fraction) c.fraction = *fraction;
    if (mode) c.mode = cycleseg::experiments::parse_run_mode(*mode);
    if (ablation_target)
      c.ablation_target = cycleseg::experiments::parse_ablation_target(*ablation_target);
    c.deterministic = deterministic;
    return c;
  }
};

std::string default_run_dir(const RunConfig& c) {
  std::string dir = std::string("runs/") + cycleseg::experiments::to_string(c.mode);
  if (c.mode == RunMode::ablation && c.ablation_target != AblationTarget::none)
    dir += std::string("_wo_") + cycleseg::experiments::to_string(c.ablation_target);
  char frac[32];
  std::snprintf(frac, sizeof(frac), "%g", c.fraction);
  dir += std::string("_f") + frac + "_seed" + std::to_string(c.hparams.seed);
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  openblas_set_num_threads(1);

  CLI::App app{"cycle-consistent semi-supervised segmentation experiments"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, ablate_args, sweep_args, synth_args;

  CLI::App* train = app.add_subcommand("train", "train one run and write its artifacts");
  train_args.attach(*train);

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "per-class IoU report for a saved segmentation generator");
  eval_args.attach(*evaluate);
  std::string checkpoint;
  evaluate->add_option("--checkpoint", checkpoint,
                       "segmentation generator checkpoint (default <run-dir>/G_IS_best.net)");

  CLI::App* ablate =
      app.add_subcommand("ablate", "full model plus the four single-term ablations");
  ablate_args.attach(*ablate);
  std::string ablate_seeds = "0,1,2";
  ablate->add_option("--seeds", ablate_seeds, "comma-separated seeds")->capture_default_str();

  CLI::App* sweep = app.add_subcommand("sweep", "labeled-fraction sweep of partial vs semi");
  sweep_args.attach(*sweep);
  std::string sweep_seeds = "0,1,2", sweep_fractions = "0.1,0.3,1";
  sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds")->capture_default_str();
  sweep->add_option("--fractions", sweep_fractions, "comma-separated labeled fractions")
      ->capture_default_str();

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic shapes dataset");
  synth_args.attach(*synth);

  CLI::App* plot = app.add_subcommand("plot", "loss curves, mIoU-vs-fraction, and qualitative panels");
  std::vector<std::string> plot_runs;
  std::string plot_out = "plots";
  plot->add_option("runs", plot_runs, "run directories to plot")->required();
  plot->add_option("--out", plot_out, "output directory for images")->capture_default_str();

  try {
    app.parse(argc, argv);

    if (*train) {
      RunConfig c = train_args.build();
      if (c.run_dir.empty()) c.run_dir = default_run_dir(c);
      cycleseg::experiments::TrainOptions opts;
      opts.verbose = !train_args.quiet;
      cycleseg::experiments::cmd_train(c, std::cout, opts);
    } else if (*evaluate) {
      RunConfig c = eval_args.build();
      std::string path = checkpoint;
      if (path.empty() && !c.run_dir.empty())
        path = cycleseg::trainer::network_checkpoint_path(c.run_dir, "G_IS", "best");
      if (path.empty())
        throw std::invalid_argument("evaluate: give --checkpoint or --run-dir");
      cycleseg::experiments::cmd_evaluate(c, path, std::cout);
    } else if (*ablate) {
      RunConfig c = ablate_args.build();
      if (c.run_dir.empty()) c.run_dir = "runs/ablate";
      cycleseg::experiments::TrainOptions opts;
      opts.verbose = !ablate_args.quiet;
      cycleseg::experiments::cmd_ablate(c, parse_u64_list(ablate_seeds), std::cout, opts);
    } else if (*sweep) {
      RunConfig c = sweep_args.build();
      if (c.run_dir.empty()) c.run_dir = "runs/sweep";
      cycleseg::experiments::TrainOptions opts;
      opts.verbose = !sweep_args.quiet;
      cycleseg::experiments::cmd_sweep(c, parse_double_list(sweep_fractions),
                                       parse_u64_list(sweep_seeds), std::cout, opts);
    } else if (*synth) {
      RunConfig c = synth_args.build();
      const std::string root = cycleseg::experiments::cmd_synth(c, std::cout);
      std::cout << "dataset ready under " << root << "\n";
    } else if (*plot) {
      cycleseg::experiments::cmd_plot(plot_runs, plot_out, std::cout);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0; any parse problem is a usage error
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
