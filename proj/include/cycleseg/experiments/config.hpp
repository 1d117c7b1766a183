#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycleseg/core/hyperparams.hpp"
#include "cycleseg/data/dataset.hpp"
#include "cycleseg/data/shapes.hpp"
#include "cycleseg/trainer/trainer.hpp"

namespace cycleseg::experiments {

/// Flat dotted-key configuration text: one `key = value` per line, `#`
/// comments, later assignments win. This is both the on-disk config format
/// and the merge layer between presets, config files, and CLI overrides.
class KeyValueConfig {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing config key: " + key);
    return it->second;
  }

  void merge_from(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                    ": expected `key = value`, got: " + line);
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream text;
    text << is.rdbuf();
    return parse(text.str(), path);
  }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

  // Typed accessors; every parse failure names the offending key.
  int64_t get_i64(const std::string& key) const {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("config key " + key + ": expected integer, got '" + get(key) +
                                  "'");
    }
  }
  uint64_t get_u64(const std::string& key) const {
    try {
      size_t pos = 0;
      const uint64_t v = std::stoull(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("config key " + key + ": expected unsigned integer, got '" +
                                  get(key) + "'");
    }
  }
  double get_double(const std::string& key) const {
    try {
      size_t pos = 0;
      const double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("config key " + key + ": expected number, got '" + get(key) +
                                  "'");
    }
  }
  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + key + ": expected true/false, got '" + v + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

enum class RunMode { full, partial, semi, ablation };
enum class AblationTarget { none, cycle_labels, cycle_image, disc_labels, disc_image };

inline const char* to_string(RunMode m) {
  switch (m) {
    case RunMode::full: return "full";
    case RunMode::partial: return "partial";
    case RunMode::semi: return "semi";
    case RunMode::ablation: return "ablation";
  }
  return "?";
}

inline const char* to_string(AblationTarget t) {
  switch (t) {
    case AblationTarget::none: return "none";
    case AblationTarget::cycle_labels: return "cycle_labels";
    case AblationTarget::cycle_image: return "cycle_image";
    case AblationTarget::disc_labels: return "disc_labels";
    case AblationTarget::disc_image: return "disc_image";
  }
  return "?";
}

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "full") return RunMode::full;
  if (s == "partial") return RunMode::partial;
  if (s == "semi") return RunMode::semi;
  if (s == "ablation") return RunMode::ablation;
  throw std::invalid_argument("run.mode must be one of full|partial|semi|ablation, got '" + s +
                              "'");
}

inline AblationTarget parse_ablation_target(const std::string& s) {
  if (s == "none") return AblationTarget::none;
  if (s == "cycle_labels") return AblationTarget::cycle_labels;
  if (s == "cycle_image") return AblationTarget::cycle_image;
  if (s == "disc_labels") return AblationTarget::disc_labels;
  if (s == "disc_image") return AblationTarget::disc_image;
  throw std::invalid_argument(
      "run.ablation_target must be one of none|cycle_labels|cycle_image|disc_labels|disc_image, "
      "got '" +
      s + "'");
}

/// Fully resolved description of one run: dataset, split, hyperparameters,
/// network sizes, and mode. Defaults are the shapes-desk preset.
struct RunConfig {
  DatasetSpec dataset{/*root=*/"", "shapes-desk", 4, 255, 64, 64};
  double fraction = 0.1;
  HyperParams hparams;  // total_epochs etc. overwritten by presets below
  int64_t gen_width = 4, res_blocks = 1, disc_width = 4, disc_blocks = 3;
  std::string run_dir;
  RunMode mode = RunMode::semi;
  AblationTarget ablation_target = AblationTarget::none;
  std::string device = "cpu";
  bool deterministic = true;
  int64_t checkpoint_every = 10;
  int64_t eval_batch = 8;
  // Parameters for synthesizing the shapes dataset (`synth`, or on demand).
  // synth.seed is independent of hparams.seed so that every run of a sweep
  // trains against the identical generated dataset.
  int64_t synth_n_train = 200, synth_n_val = 50;
  uint64_t synth_seed = 0;
  double synth_noise_sigma = 8.0;
  int64_t synth_min_shapes = 1, synth_max_shapes = 3;

  void validate() const {
    dataset.validate();
    hparams.validate();
    if (!(fraction > 0.0 && fraction <= 1.0))
      throw std::invalid_argument("split.fraction must be in (0, 1], got " +
                                  std::to_string(fraction));
    if (mode == RunMode::full && fraction != 1.0)
      throw std::invalid_argument("run.mode full uses every label: set split.fraction = 1.0");
    if (ablation_target != AblationTarget::none && mode != RunMode::ablation)
      throw std::invalid_argument(
          "run.ablation_target is only meaningful with run.mode = ablation");
    if (gen_width < 1 || res_blocks < 1 || disc_width < 1 || disc_blocks < 1)
      throw std::invalid_argument("arch.* values must be positive");
    if (device != "cpu")
      throw std::invalid_argument("run.device: only 'cpu' is supported, got '" + device + "'");
    if (checkpoint_every < 1) throw std::invalid_argument("run.checkpoint_every must be >= 1");
    if (eval_batch < 1) throw std::invalid_argument("run.eval_batch must be >= 1");
    if (synth_n_train < 1 || synth_n_val < 1 || synth_min_shapes < 1 ||
        synth_max_shapes < synth_min_shapes || synth_noise_sigma < 0)
      throw std::invalid_argument("synth.* values out of range");
  }

  /// The λ vector actually trained with: ablation zeroes exactly one weight.
  HyperParams effective_hparams() const {
    HyperParams h = hparams;
    switch (ablation_target) {
      case AblationTarget::none: break;
      case AblationTarget::cycle_labels: h.lambda2 = 0; break;
      case AblationTarget::cycle_image: h.lambda3 = 0; break;
      case AblationTarget::disc_labels: h.lambda4 = 0; break;
      case AblationTarget::disc_image: h.lambda5 = 0; break;
    }
    return h;
  }

  trainer::ArchConfig arch() const {
    return trainer::make_arch(dataset.num_classes, 3, gen_width, res_blocks, disc_width,
                              disc_blocks);
  }

  ShapesConfig synth_config(int64_t n_images, uint64_t seed) const {
    ShapesConfig cfg;
    cfg.n_images = n_images;
    cfg.height = dataset.target_h;
    cfg.width = dataset.target_w;
    cfg.num_classes = dataset.num_classes;
    cfg.noise_sigma = synth_noise_sigma;
    cfg.seed = seed;
    cfg.min_shapes = synth_min_shapes;
    cfg.max_shapes = synth_max_shapes;
    return cfg;
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    kv.set("dataset.root", dataset.root);
    kv.set("dataset.name", dataset.name);
    kv.set("dataset.num_classes", std::to_string(dataset.num_classes));
    kv.set("dataset.ignore_index", std::to_string(dataset.ignore_index));
    kv.set("dataset.height", std::to_string(dataset.target_h));
    kv.set("dataset.width", std::to_string(dataset.target_w));
    kv.set("split.fraction", fmt(fraction));
    kv.set("hparams.lambda1", fmt(hparams.lambda1));
    kv.set("hparams.lambda2", fmt(hparams.lambda2));
    kv.set("hparams.lambda3", fmt(hparams.lambda3));
    kv.set("hparams.lambda4", fmt(hparams.lambda4));
    kv.set("hparams.lambda5", fmt(hparams.lambda5));
    kv.set("hparams.learning_rate", fmt(hparams.learning_rate));
    kv.set("hparams.beta1", fmt(hparams.beta1));
    kv.set("hparams.beta2", fmt(hparams.beta2));
    kv.set("hparams.adam_epsilon", fmt(hparams.adam_epsilon));
    kv.set("hparams.batch_size", std::to_string(hparams.batch_size));
    kv.set("hparams.total_epochs", std::to_string(hparams.total_epochs));
    kv.set("hparams.decay_start_epoch", std::to_string(hparams.decay_start_epoch));
    kv.set("hparams.seed", std::to_string(hparams.seed));
    kv.set("arch.gen_width", std::to_string(gen_width));
    kv.set("arch.res_blocks", std::to_string(res_blocks));
    kv.set("arch.disc_width", std::to_string(disc_width));
    kv.set("arch.disc_blocks", std::to_string(disc_blocks));
    kv.set("run.dir", run_dir);
    kv.set("run.mode", to_string(mode));
    kv.set("run.ablation_target", to_string(ablation_target));
    kv.set("run.device", device);
    kv.set("run.deterministic", deterministic ? "true" : "false");
    kv.set("run.checkpoint_every", std::to_string(checkpoint_every));
    kv.set("run.eval_batch", std::to_string(eval_batch));
    kv.set("synth.n_train", std::to_string(synth_n_train));
    kv.set("synth.n_val", std::to_string(synth_n_val));
    kv.set("synth.seed", std::to_string(synth_seed));
    kv.set("synth.noise_sigma", fmt(synth_noise_sigma));
    kv.set("synth.min_shapes", std::to_string(synth_min_shapes));
    kv.set("synth.max_shapes", std::to_string(synth_max_shapes));
    return kv;
  }

  /// Overlays `kv` onto this config; any key outside the schema is an error
  /// naming that key.
  void apply_kv(const KeyValueConfig& kv) {
    for (const auto& [key, value] : kv.entries()) {
      if (key == "dataset.root") dataset.root = value;
      else if (key == "dataset.name") dataset.name = value;
      else if (key == "dataset.num_classes") dataset.num_classes = kv.get_i64(key);
      else if (key == "dataset.ignore_index")
        dataset.ignore_index = static_cast<int32_t>(kv.get_i64(key));
      else if (key == "dataset.height") dataset.target_h = kv.get_i64(key);
      else if (key == "dataset.width") dataset.target_w = kv.get_i64(key);
      else if (key == "split.fraction") fraction = kv.get_double(key);
      else if (key == "hparams.lambda1") hparams.lambda1 = kv.get_double(key);
      else if (key == "hparams.lambda2") hparams.lambda2 = kv.get_double(key);
      else if (key == "hparams.lambda3") hparams.lambda3 = kv.get_double(key);
      else if (key == "hparams.lambda4") hparams.lambda4 = kv.get_double(key);
      else if (key == "hparams.lambda5") hparams.lambda5 = kv.get_double(key);
      else if (key == "hparams.learning_rate") hparams.learning_rate = kv.get_double(key);
      else if (key == "hparams.beta1") hparams.beta1 = kv.get_double(key);
      else if (key == "hparams.beta2") hparams.beta2 = kv.get_double(key);
      else if (key == "hparams.adam_epsilon") hparams.adam_epsilon = kv.get_double(key);
      else if (key == "hparams.batch_size") hparams.batch_size = kv.get_i64(key);
      else if (key == "hparams.total_epochs") hparams.total_epochs = kv.get_i64(key);
      else if (key == "hparams.decay_start_epoch") hparams.decay_start_epoch = kv.get_i64(key);
      else if (key == "hparams.seed") hparams.seed = kv.get_u64(key);
      else if (key == "arch.gen_width") gen_width = kv.get_i64(key);
      else if (key == "arch.res_blocks") res_blocks = kv.get_i64(key);
      else if (key == "arch.disc_width") disc_width = kv.get_i64(key);
      else if (key == "arch.disc_blocks") disc_blocks = kv.get_i64(key);
      else if (key == "run.dir") run_dir = value;
      else if (key == "run.mode") mode = parse_run_mode(value);
      else if (key == "run.ablation_target") ablation_target = parse_ablation_target(value);
      else if (key == "run.device") device = value;
      else if (key == "run.deterministic") deterministic = kv.get_bool(key);
      else if (key == "run.checkpoint_every") checkpoint_every = kv.get_i64(key);
      else if (key == "run.eval_batch") eval_batch = kv.get_i64(key);
      else if (key == "synth.n_train") synth_n_train = kv.get_i64(key);
      else if (key == "synth.n_val") synth_n_val = kv.get_i64(key);
      else if (key == "synth.seed") synth_seed = kv.get_u64(key);
      else if (key == "synth.noise_sigma") synth_noise_sigma = kv.get_double(key);
      else if (key == "synth.min_shapes") synth_min_shapes = kv.get_i64(key);
      else if (key == "synth.max_shapes") synth_max_shapes = kv.get_i64(key);
      else throw std::invalid_argument("unknown config key: " + key);
    }
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
  }
};

/// Named presets carrying per-dataset sizes and schedules. `shapes-desk` is
/// the self-synthesizing desk-scale dataset; `voc` and `cityscapes` describe
/// the full-scale benchmark layouts.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;  // defaults are already the shapes-desk shape
  if (name == "shapes-desk") {
    c.hparams.total_epochs = 50;
    c.hparams.decay_start_epoch = 20;
    return c;
  }
  if (name == "voc") {
    c.dataset = DatasetSpec{"", "voc", 21, 255, 200, 200};
    c.gen_width = 64;
    c.res_blocks = 9;
    c.disc_width = 64;
    c.disc_blocks = 3;
    c.checkpoint_every = 25;
    c.eval_batch = 2;
    return c;  // HyperParams defaults: 400 epochs, decay from 100
  }
  if (name == "cityscapes") {
    c.dataset = DatasetSpec{"", "cityscapes", 20, 255, 128, 256};
    c.gen_width = 64;
    c.res_blocks = 9;
    c.disc_width = 64;
    c.disc_blocks = 3;
    c.checkpoint_every = 25;
    c.eval_batch = 2;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + name +
                              "' (available: shapes-desk, voc, cityscapes)");
}

/// Dataset directory resolution: an explicit dataset.root wins; otherwise
/// $SSCGAN_DATA_ROOT/<name>; otherwise ./data/<name>.
inline std::string resolve_data_root(const RunConfig& c) {
  if (!c.dataset.root.empty()) return c.dataset.root;
  if (const char* env = std::getenv("SSCGAN_DATA_ROOT"); env && *env)
    return std::string(env) + "/" + c.dataset.name;
  return "data/" + c.dataset.name;
}

}  // namespace cycleseg::experiments
