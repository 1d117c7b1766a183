#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "cycleseg/core/random.hpp"

namespace cycleseg {

// Stream tags feeding mix_seed so every consumer of the run seed draws from
// its own independent sequence.
inline constexpr uint64_t kSplitStream = 0x51;
inline constexpr uint64_t kLabeledStream = 0x4C;
inline constexpr uint64_t kUnlabeledStream = 0x55;

/// Deterministic partition of the training ids into labeled and unlabeled
/// pools, plus the validation ids used for mIoU.
struct SplitSpec {
  double labeled_fraction = 1.0;
  uint64_t seed = 0;
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  std::vector<std::string> validation;
};

/// Shuffles `train_ids` with the seeded generator and takes the first
/// round(fraction * n) as labeled; the rest become unlabeled.
inline SplitSpec make_split(const std::vector<std::string>& train_ids,
                            const std::vector<std::string>& val_ids, double fraction,
                            uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("make_split: labeled fraction must be in (0, 1], got " +
                                std::to_string(fraction));
  if (train_ids.empty()) throw std::invalid_argument("make_split: no training ids");
  const auto n = static_cast<int64_t>(train_ids.size());
  const auto n_labeled = static_cast<int64_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_labeled < 1)
    throw std::invalid_argument("make_split: fraction " + std::to_string(fraction) +
                                " of " + std::to_string(n) + " images rounds to zero labeled");

  SplitSpec split;
  split.labeled_fraction = fraction;
  split.seed = seed;
  split.validation = val_ids;
  std::vector<std::string> shuffled = train_ids;
  RandomEngine rng(mix_seed(seed, kSplitStream));
  rng.shuffle(shuffled);
  split.labeled.assign(shuffled.begin(), shuffled.begin() + n_labeled);
  split.unlabeled.assign(shuffled.begin() + n_labeled, shuffled.end());
  return split;
}

namespace detail {
inline void write_id_file(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write split file " + path.string());
  for (const auto& id : ids) os << id << "\n";
}

inline std::vector<std::string> read_id_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read split file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}
}  // namespace detail

/// Writes split_labeled.txt / split_unlabeled.txt / split_val.txt, one id per
/// line, into the run directory.
inline void save_split(const std::string& dir, const SplitSpec& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  detail::write_id_file(fs::path(dir) / "split_labeled.txt", split.labeled);
  detail::write_id_file(fs::path(dir) / "split_unlabeled.txt", split.unlabeled);
  detail::write_id_file(fs::path(dir) / "split_val.txt", split.validation);
}

inline SplitSpec load_split(const std::string& dir) {
  namespace fs = std::filesystem;
  SplitSpec split;
  split.labeled = detail::read_id_file(fs::path(dir) / "split_labeled.txt");
  split.unlabeled = detail::read_id_file(fs::path(dir) / "split_unlabeled.txt");
  split.validation = detail::read_id_file(fs::path(dir) / "split_val.txt");
  const auto total = split.labeled.size() + split.unlabeled.size();
  split.labeled_fraction =
      total == 0 ? 1.0 : static_cast<double>(split.labeled.size()) / static_cast<double>(total);
  return split;
}

/// Partition sanity: labeled and unlabeled are disjoint, cover exactly the
/// training ids, and neither overlaps validation.
inline void validate_split(const SplitSpec& split, const std::vector<std::string>& train_ids) {
  std::unordered_set<std::string> seen;
  for (const auto& id : split.labeled)
    if (!seen.insert(id).second)
      throw std::invalid_argument("split: duplicate labeled id " + id);
  for (const auto& id : split.unlabeled)
    if (!seen.insert(id).second)
      throw std::invalid_argument("split: id " + id + " appears in both pools");
  std::unordered_set<std::string> train(train_ids.begin(), train_ids.end());
  if (seen.size() != train.size())
    throw std::invalid_argument("split: pools do not cover the training set");
  for (const auto& id : seen)
    if (!train.count(id)) throw std::invalid_argument("split: unknown training id " + id);
  for (const auto& id : split.validation)
    if (seen.count(id))
      throw std::invalid_argument("split: validation id " + id + " overlaps the training pools");
}

}  // namespace cycleseg
