#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cycleseg/data/split.hpp"
#include "cycleseg/experiments/config.hpp"
#include "cycleseg/experiments/plots.hpp"
#include "cycleseg/experiments/reports.hpp"
#include "cycleseg/networks/checkpoint.hpp"
#include "cycleseg/trainer/trainer.hpp"

namespace cycleseg::experiments {

namespace fs = std::filesystem;

/// Parsed contents of a run's metrics log, one entry per completed epoch.
struct MetricsLog {
  std::vector<int64_t> epochs;
  std::vector<double> lrs;
  std::vector<LossReport> reports;  // totals reconstructed from the weights
  std::vector<double> val_mious;
};

namespace cmd_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  return cells;
}

}  // namespace cmd_detail

/// Reads metrics.csv back into memory. `lambdas` supplies the weights used to
/// reconstruct the total_G / total_D columns, which the log does not store.
inline MetricsLog parse_metrics_log(const std::string& path, const HyperParams& lambdas) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("parse_metrics_log: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("parse_metrics_log: empty file " + path);
  if (line != trainer::kMetricsHeader)
    throw std::runtime_error("parse_metrics_log: unexpected header in " + path);
  MetricsLog log;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = cmd_detail::split_csv_line(line);
    if (cells.size() != 11)
      throw std::runtime_error("parse_metrics_log: malformed row in " + path + ": " + line);
    LossReport r;
    log.epochs.push_back(std::stoll(cells[0]));
    log.lrs.push_back(std::stod(cells[1]));
    r.seg_ce = std::stod(cells[2]);
    r.img_l2 = std::stod(cells[3]);
    r.cycle_labels = std::stod(cells[4]);
    r.cycle_image = std::stod(cells[5]);
    r.disc_labels = std::stod(cells[6]);
    r.disc_image = std::stod(cells[7]);
    r.adv_gen_labels = std::stod(cells[8]);
    r.adv_gen_image = std::stod(cells[9]);
    r.total_G = r.seg_ce + lambdas.lambda1 * r.img_l2 + lambdas.lambda2 * r.cycle_labels +
                lambdas.lambda3 * r.cycle_image + lambdas.lambda4 * r.adv_gen_labels +
                lambdas.lambda5 * r.adv_gen_image;
    r.total_D = r.disc_labels + r.disc_image;
    log.reports.push_back(r);
    log.val_mious.push_back(std::stod(cells[10]));
  }
  return log;
}

/// The λ vector a run actually trains with: partial/full zero every auxiliary
/// weight, ablation zeroes its one target.
inline HyperParams training_lambdas(const RunConfig& c) {
  HyperParams h = c.effective_hparams();
  if (c.mode == RunMode::partial || c.mode == RunMode::full)
    h.lambda1 = h.lambda2 = h.lambda3 = h.lambda4 = h.lambda5 = 0;
  return h;
}

/// Generates the shapes dataset (train/ and val/ splits) under the resolved
/// data root. The validation set uses an adjacent, disjoint seed stream.
inline std::string cmd_synth(const RunConfig& c, std::ostream& log) {
  c.validate();
  if (c.dataset.name.rfind("shapes", 0) != 0)
    throw std::invalid_argument("synth: dataset '" + c.dataset.name +
                                "' is not synthetic; provide it under the data root instead");
  const std::string root = resolve_data_root(c);
  log << "synthesizing " << c.synth_n_train << " train + " << c.synth_n_val
      << " val images under " << root << "\n";
  write_shapes_dataset(c.synth_config(c.synth_n_train, c.synth_seed), root + "/train");
  write_shapes_dataset(c.synth_config(c.synth_n_val, c.synth_seed + 1), root + "/val");
  return root;
}

/// Resolves the data root, synthesizing the shapes dataset on first use.
/// Non-synthetic datasets must already exist on disk.
inline std::string ensure_dataset(const RunConfig& c, std::ostream& log) {
  const std::string root = resolve_data_root(c);
  if (fs::exists(fs::path(root) / "train" / "images") &&
      fs::exists(fs::path(root) / "val" / "images"))
    return root;
  if (c.dataset.name.rfind("shapes", 0) == 0) return cmd_synth(c, log);
  throw std::invalid_argument("dataset '" + c.dataset.name + "' not found under " + root +
                              " (expected train/images, train/masks, val/images, val/masks)");
}

/// Loads the train and validation halves of the dataset under `root`.
inline std::pair<LoadedDataset, LoadedDataset> load_train_val(const RunConfig& c,
                                                              const std::string& root) {
  DatasetSpec train_spec = c.dataset;
  train_spec.root = (fs::path(root) / "train").string();
  DatasetSpec val_spec = c.dataset;
  val_spec.root = (fs::path(root) / "val").string();
  return {load_dataset(train_spec), load_dataset(val_spec)};
}

struct TrainOutcome {
  trainer::FitResult result;
  MetricsLog log;          // complete per-epoch history from metrics.csv
  std::string run_dir;
  bool reused = false;     // run directory was already complete; nothing trained
  bool resumed = false;    // training continued from a mid-run checkpoint
};

namespace cmd_detail {

/// Highest `trainer_epoch{N}.state` in the run directory, or nullopt.
inline std::optional<int64_t> latest_checkpoint_epoch(const std::string& run_dir) {
  std::optional<int64_t> best;
  if (!fs::exists(run_dir)) return best;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("trainer_epoch", 0) != 0 || entry.path().extension() != ".state") continue;
    const std::string digits = name.substr(13, name.size() - 13 - 6);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
    const int64_t e = std::stoll(digits);
    if (!best || e > *best) best = e;
  }
  return best;
}

/// Number of data rows in a metrics log, 0 if absent or malformed.
inline int64_t metrics_rows(const std::string& path) {
  std::ifstream is(path);
  if (!is) return 0;
  std::string line;
  if (!std::getline(is, line) || line != trainer::kMetricsHeader) return 0;
  int64_t rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  return rows;
}

/// Drops metrics rows for epochs >= `from_epoch` so a resumed run can append
/// its own rows without duplicates.
inline void truncate_metrics(const std::string& path, int64_t from_epoch) {
  std::ifstream is(path);
  if (!is) return;
  std::string line;
  std::vector<std::string> kept;
  if (!std::getline(is, line)) return;
  kept.push_back(line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < from_epoch) kept.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : kept) os << l << "\n";
}

inline std::pair<int64_t, double> read_best_record(const std::string& run_dir) {
  std::ifstream is(run_dir + "/best.txt");
  std::string key;
  int64_t epoch = -1;
  double miou = -1;
  if (!(is >> key >> epoch >> key >> miou))
    throw std::runtime_error("cannot parse " + run_dir + "/best.txt");
  return {epoch, miou};
}

}  // namespace cmd_detail

struct TrainOptions {
  bool reuse_completed = true;  // return results of an already-finished run
  bool verbose = false;         // per-epoch progress lines on stdout
};

/// Trains one run end to end: resolves the dataset (synthesizing shapes data
/// on first use), writes the resolved config and split files, dispatches to
/// the semi-supervised loop or the partial baseline, and reports the run's
/// history. Completed run directories are reused; interrupted ones resume
/// from their newest checkpoint.
inline TrainOutcome cmd_train(const RunConfig& c, std::ostream& log,
                              const TrainOptions& opts = {}) {
  c.validate();
  if (c.run_dir.empty()) throw std::invalid_argument("run.dir must be set");
  fs::create_directories(c.run_dir);
  {
    std::ofstream resolved(c.run_dir + "/config.resolved.txt");
    if (!resolved) throw std::invalid_argument("run dir not writable: " + c.run_dir);
    resolved << c.to_kv().serialize();
  }

  const std::string root = ensure_dataset(c, log);
  const auto [train, val] = load_train_val(c, root);
  std::vector<std::string> train_ids, val_ids;
  for (const auto& item : train.items) train_ids.push_back(item.id);
  for (const auto& item : val.items) val_ids.push_back(item.id);
  const SplitSpec split = make_split(train_ids, val_ids, c.fraction, c.hparams.seed);

  TrainOutcome out;
  out.run_dir = c.run_dir;
  const HyperParams lambdas = training_lambdas(c);
  const std::string metrics_path = c.run_dir + "/metrics.csv";

  const bool complete =
      cmd_detail::metrics_rows(metrics_path) == c.hparams.total_epochs &&
      fs::exists(c.run_dir + "/best.txt") &&
      fs::exists(trainer::network_checkpoint_path(c.run_dir, "G_IS", "best"));
  if (complete && opts.reuse_completed) {
    log << "run " << c.run_dir << " already complete; reusing its results\n";
    out.reused = true;
  } else {
    trainer::TrainState state = trainer::make_train_state(c.arch(), c.effective_hparams());
    if (const auto resume = cmd_detail::latest_checkpoint_epoch(c.run_dir);
        resume && *resume > 0 && *resume < c.hparams.total_epochs && !complete) {
      trainer::load_checkpoint(state, c.run_dir, "epoch" + std::to_string(*resume));
      cmd_detail::truncate_metrics(metrics_path, *resume);
      out.resumed = true;
      log << "resuming " << c.run_dir << " from epoch " << *resume << "\n";
    } else if (complete) {
      // Completed but reuse disabled: retrain from scratch.
      fs::remove(metrics_path);
    }
    log << "training " << to_string(c.mode);
    if (c.mode == RunMode::ablation) log << " (without " << to_string(c.ablation_target) << ")";
    log << "  fraction " << c.fraction << "  seed " << c.hparams.seed << "  -> " << c.run_dir
        << "\n";
    trainer::FitConfig fc;
    fc.run_dir = c.run_dir;
    fc.checkpoint_every = c.checkpoint_every;
    fc.eval_batch = c.eval_batch;
    fc.verbose = opts.verbose;
    if (c.mode == RunMode::partial || c.mode == RunMode::full)
      trainer::fit_partial_baseline(state, train, val, split, fc);
    else
      trainer::fit(state, train, val, split, fc);
  }

  // Uniformly reconstruct the outcome from the run's own artifacts, so a
  // reused, resumed, and fresh run all report through the same path.
  out.log = parse_metrics_log(metrics_path, lambdas);
  out.result.val_mious = out.log.val_mious;
  out.result.epoch_means = out.log.reports;
  out.result.final_val_miou = out.log.val_mious.empty() ? -1 : out.log.val_mious.back();
  std::tie(out.result.best_epoch, out.result.best_val_miou) =
      cmd_detail::read_best_record(c.run_dir);
  log << "run " << c.run_dir << ": best val mIoU " << detail::fmt4(out.result.best_val_miou)
      << " at epoch " << out.result.best_epoch << ", final " << detail::fmt4(out.result.final_val_miou)
      << "\n";
  return out;
}

struct EvalOutcome {
  std::vector<double> per_class;  // kAbsentIoU where a class never occurs
  double miou = 0;
};

/// Evaluates a saved segmentation generator checkpoint over the validation
/// set and writes per-class text and CSV reports next to the metrics log (or
/// to stdout only when the run dir is empty).
inline EvalOutcome cmd_evaluate(const RunConfig& c, const std::string& checkpoint_path,
                                std::ostream& os) {
  c.validate();
  if (!fs::exists(checkpoint_path))
    throw std::invalid_argument("evaluate: checkpoint not found: " + checkpoint_path);
  const std::string root = ensure_dataset(c, os);
  DatasetSpec val_spec = c.dataset;
  val_spec.root = (fs::path(root) / "val").string();
  const LoadedDataset val = load_dataset(val_spec);

  RandomEngine rng(mix_seed(c.hparams.seed, trainer::kGisInitStream));
  Network<float> g_is = build_generator<float>("G_IS", c.arch().seg, rng);
  load_network(g_is, checkpoint_path);

  EvalOutcome out;
  const ConfusionAccumulator acc = trainer::segmentation_confusion(g_is, val, c.eval_batch);
  out.per_class = iou_per_class(acc);
  out.miou = mean_iou(acc);

  IouReportColumn col;
  col.name = fs::path(checkpoint_path).stem().string();
  col.iou = out.per_class;
  col.mean = out.miou;
  write_iou_report_text(os, {col});
  if (!c.run_dir.empty()) {
    fs::create_directories(c.run_dir);
    std::ofstream txt(c.run_dir + "/eval_report.txt");
    write_iou_report_text(txt, {col});
    std::ofstream csv(c.run_dir + "/eval_report.csv");
    write_iou_report_csv(csv, {col});
  }
  return out;
}

struct StudyOutcome {
  std::vector<ResultRow> rows;
  std::vector<TrainOutcome> runs;
  std::string report_text;
};

namespace cmd_detail {

inline std::string fraction_tag(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", fraction);
  return buf;
}

inline std::string render_study(const std::string& title, const std::string& reference_header,
                                const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  write_result_table(os, title, reference_header, rows);
  return os.str();
}

inline void save_study(const std::string& dir, const std::string& stem, const StudyOutcome& s) {
  fs::create_directories(dir);
  std::ofstream txt(dir + "/" + stem + ".txt");
  txt << s.report_text;
  std::ofstream csv(dir + "/" + stem + ".csv");
  write_result_csv(csv, s.rows);
}

}  // namespace cmd_detail

/// Runs the full model plus the four single-term ablations with identical
/// seeds and splits, reusing finished run directories, and emits a table of
/// desk-scale means against the published VOC reference column.
inline StudyOutcome cmd_ablate(const RunConfig& base, const std::vector<uint64_t>& seeds,
                               std::ostream& log, const TrainOptions& opts = {}) {
  if (base.run_dir.empty()) throw std::invalid_argument("run.dir must be set");
  if (seeds.empty()) throw std::invalid_argument("ablate: at least one seed required");
  const AblationTarget targets[] = {AblationTarget::none, AblationTarget::cycle_labels,
                                    AblationTarget::cycle_image, AblationTarget::disc_labels,
                                    AblationTarget::disc_image};
  StudyOutcome study;
  for (const AblationTarget t : targets) {
    ResultRow row;
    row.label = t == AblationTarget::none ? "full model" : std::string("w/o ") + to_string(t);
    row.reference = voc_reference_ablation(t);
    for (const uint64_t seed : seeds) {
      RunConfig c = base;
      c.mode = RunMode::ablation;
      c.ablation_target = t;
      c.hparams.seed = seed;
      c.run_dir = base.run_dir + "/" +
                  (t == AblationTarget::none ? "full" : std::string("wo_") + to_string(t)) +
                  "_seed" + std::to_string(seed);
      TrainOutcome run = cmd_train(c, log, opts);
      row.seed_scores.push_back(run.result.best_val_miou);
      study.runs.push_back(std::move(run));
    }
    study.rows.push_back(std::move(row));
  }
  study.report_text = cmd_detail::render_study(
      "Ablation study, labeled fraction " + cmd_detail::fraction_tag(base.fraction) +
          " (desk scale)",
      "VOC 20% reference", study.rows);
  cmd_detail::save_study(base.run_dir, "ablation_report", study);
  log << study.report_text;
  return study;
}

/// Sweeps labeled fraction x {partial, semi} x seed, reusing finished runs,
/// and emits a supervision-level table with mean +/- half-range per cell and
/// the published VOC reference column.
inline StudyOutcome cmd_sweep(const RunConfig& base, const std::vector<double>& fractions,
                              const std::vector<uint64_t>& seeds, std::ostream& log,
                              const TrainOptions& opts = {}) {
  if (base.run_dir.empty()) throw std::invalid_argument("run.dir must be set");
  if (fractions.empty() || seeds.empty())
    throw std::invalid_argument("sweep: fractions and seeds must be non-empty");
  StudyOutcome study;
  std::vector<Series> curves(2);
  curves[0].label = "partial";
  curves[0].markers = true;
  curves[1].label = "semi";
  curves[1].markers = true;
  for (const double fraction : fractions) {
    for (const RunMode mode : {RunMode::partial, RunMode::semi}) {
      ResultRow row;
      row.label = std::string(to_string(mode)) + "  fraction " +
                  cmd_detail::fraction_tag(fraction);
      if (const VocReferenceRow* ref = voc_reference_for_fraction(fraction))
        row.reference = mode == RunMode::partial ? ref->partial : ref->ours;
      else if (mode == RunMode::partial && fraction == 1.0)
        row.reference = kVocReferenceFullyLabeled;
      for (const uint64_t seed : seeds) {
        RunConfig c = base;
        c.mode = mode;
        c.ablation_target = AblationTarget::none;
        c.fraction = fraction;
        c.hparams.seed = seed;
        c.run_dir = base.run_dir + "/sweep_" + to_string(mode) + "_f" +
                    cmd_detail::fraction_tag(fraction) + "_seed" + std::to_string(seed);
        TrainOutcome run = cmd_train(c, log, opts);
        row.seed_scores.push_back(run.result.best_val_miou);
        study.runs.push_back(std::move(run));
      }
      curves[mode == RunMode::partial ? 0 : 1].xs.push_back(fraction);
      curves[mode == RunMode::partial ? 0 : 1].ys.push_back(row.mean());
      study.rows.push_back(std::move(row));
    }
  }
  study.report_text = cmd_detail::render_study("Supervision sweep (desk scale)", "VOC reference",
                                               study.rows);
  cmd_detail::save_study(base.run_dir, "sweep_report", study);
  if (fractions.size() >= 2)
    draw_line_chart(base.run_dir + "/miou_vs_fraction.png", "validation mIoU vs labeled fraction",
                    "labeled fraction", "mIoU", curves);
  log << study.report_text;
  return study;
}

/// Emits loss-curve and validation-mIoU plots for each run directory, a
/// cross-run mIoU-vs-fraction chart when fractions differ, and qualitative
/// input / ground truth / prediction panels from each run's best checkpoint.
/// Returns the image files written.
inline std::vector<std::string> cmd_plot(const std::vector<std::string>& run_dirs,
                                         const std::string& out_dir, std::ostream& log) {
  if (run_dirs.empty()) throw std::invalid_argument("plot: no run directories given");
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  std::map<std::string, Series> fraction_curves;  // mode -> (fraction, best miou) points

  for (const std::string& dir : run_dirs) {
    if (!fs::exists(dir + "/config.resolved.txt"))
      throw std::invalid_argument("plot: " + dir + " has no config.resolved.txt");
    RunConfig c;
    c.apply_kv(KeyValueConfig::load(dir + "/config.resolved.txt"));
    const std::string stem = fs::path(dir).filename().string();
    const MetricsLog m = parse_metrics_log(dir + "/metrics.csv", training_lambdas(c));
    std::vector<double> xs(m.epochs.begin(), m.epochs.end());

    std::vector<Series> losses;
    const std::pair<const char*, double LossReport::*> fields[] = {
        {"seg_ce", &LossReport::seg_ce},
        {"img_l2", &LossReport::img_l2},
        {"cycle_labels", &LossReport::cycle_labels},
        {"cycle_image", &LossReport::cycle_image},
        {"disc_labels", &LossReport::disc_labels},
        {"disc_image", &LossReport::disc_image},
        {"adv_gen_labels", &LossReport::adv_gen_labels},
        {"adv_gen_image", &LossReport::adv_gen_image},
    };
    for (const auto& [name, member] : fields) {
      Series s;
      s.label = name;
      s.xs = xs;
      for (const LossReport& r : m.reports) s.ys.push_back(r.*member);
      if (std::any_of(s.ys.begin(), s.ys.end(), [](double v) { return v != 0.0; }))
        losses.push_back(std::move(s));  // skip terms the run never trained
    }
    const std::string loss_png = out_dir + "/losses_" + stem + ".png";
    draw_line_chart(loss_png, "training losses: " + stem, "epoch", "loss", losses);
    written.push_back(loss_png);

    Series miou;
    miou.label = "val mIoU";
    miou.xs = xs;
    miou.ys = m.val_mious;
    const std::string miou_png = out_dir + "/val_miou_" + stem + ".png";
    draw_line_chart(miou_png, "validation mIoU: " + stem, "epoch", "mIoU", {miou});
    written.push_back(miou_png);

    const std::string best_net = trainer::network_checkpoint_path(dir, "G_IS", "best");
    if (fs::exists(best_net)) {
      RandomEngine rng(mix_seed(c.hparams.seed, trainer::kGisInitStream));
      Network<float> g_is = build_generator<float>("G_IS", c.arch().seg, rng);
      load_network(g_is, best_net);
      const std::string root = ensure_dataset(c, log);
      DatasetSpec val_spec = c.dataset;
      val_spec.root = (fs::path(root) / "val").string();
      const LoadedDataset val = load_dataset(val_spec);
      std::vector<int64_t> picks;
      for (int64_t i = 0; i < std::min<int64_t>(4, val.size()); ++i) picks.push_back(i);
      const std::string trip_png = out_dir + "/qualitative_" + stem + ".png";
      draw_qualitative_panel(trip_png, g_is, val, picks);
      written.push_back(trip_png);
    }

    const auto [best_epoch, best_miou] = cmd_detail::read_best_record(dir);
    (void)best_epoch;
    Series& curve = fraction_curves[to_string(c.mode)];
    curve.label = to_string(c.mode);
    curve.markers = true;
    curve.xs.push_back(c.fraction);
    curve.ys.push_back(best_miou);
  }

  std::vector<Series> cross;
  for (auto& [mode, curve] : fraction_curves) {
    std::vector<size_t> order(curve.xs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return curve.xs[a] < curve.xs[b]; });
    Series sorted;
    sorted.label = curve.label;
    sorted.markers = true;
    for (size_t i : order) {
      sorted.xs.push_back(curve.xs[i]);
      sorted.ys.push_back(curve.ys[i]);
    }
    size_t distinct = sorted.xs.empty() ? 0 : 1;
    for (size_t i = 1; i < sorted.xs.size(); ++i)
      if (sorted.xs[i] != sorted.xs[i - 1]) ++distinct;
    if (distinct >= 2) cross.push_back(std::move(sorted));
  }
  if (!cross.empty()) {
    const std::string png = out_dir + "/miou_vs_fraction.png";
    draw_line_chart(png, "validation mIoU vs labeled fraction", "labeled fraction", "mIoU",
                    cross);
    written.push_back(png);
  }
  for (const std::string& f : written) log << "wrote " << f << "\n";
  return written;
}

}  // namespace cycleseg::experiments
