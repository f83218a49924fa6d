#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "birr/augment.hpp"
#include "birr/labels.hpp"
#include "birr/tensor.hpp"

namespace birr {

struct ManifestEntry {
  std::string path;  // relative to the dataset root, '/' separated
  int class_id = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::vector<std::size_t> class_counts;  // indexed by class id
  std::vector<std::string> warnings;      // skipped directories
  std::vector<std::string> rejected;      // undecodable files, relative paths

  std::size_t size() const { return entries.size(); }
};

// Indexes root/<class-code>/<file> in lexicographic order. Every file is
// decoded once; undecodable files land in `rejected`. Throws DataError when
// no image is found.
DatasetManifest scan_dataset(const std::filesystem::path& root,
                             const LabelTable& labels = LabelTable::defaults());

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
std::string to_string(Split split);
Split parse_split(const std::string& text);

using SplitFractions = std::array<double, 3>;
inline constexpr SplitFractions kDefaultFractions{0.70, 0.15, 0.15};

struct SplitManifest {
  std::filesystem::path root;
  std::array<std::vector<ManifestEntry>, 3> parts;  // indexed by Split
  std::uint64_t seed = 0;
  SplitFractions fractions = kDefaultFractions;

  const std::vector<ManifestEntry>& operator[](Split s) const {
    return parts[static_cast<std::size_t>(s)];
  }
  std::vector<ManifestEntry>& operator[](Split s) { return parts[static_cast<std::size_t>(s)]; }
};

// Stratified by class. Each class is shuffled with its own derived stream
// and cut into floor(fraction * n) items per split; the leftover items of a
// class go to distinct splits, always to the split furthest below its
// largest-remainder share of the grand total. Hence every split is within
// one item of fraction * n for every class, and the split totals equal the
// largest-remainder apportionment of the whole manifest.
// Throws ConfigError for bad fractions and DataError for a class with fewer
// than 3 images.
SplitManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& fractions,
                            std::uint64_t seed);

// One record per line: path <TAB> class id <TAB> tag, after '#' header lines.
std::string format_manifest(const DatasetManifest& manifest);
std::string format_split(const SplitManifest& split);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
void save_split(const SplitManifest& split, const std::filesystem::path& path);
SplitManifest load_split(const std::filesystem::path& path);

struct SynthOptions {
  std::size_t per_class = 60;
  int image_size = 64;
  std::uint64_t seed = 0;
};

// Writes per_class PNG images into out_root/<code>/ for every class of
// `labels`. Denominations get a palette color with class-indexed stripes;
// OTHER gets random shapes on random backgrounds. Returns the scanned
// manifest of what was written.
DatasetManifest synth_generate(const std::filesystem::path& out_root, const SynthOptions& options,
                               const LabelTable& labels = LabelTable::defaults());

struct Batch {
  Tensor images;  // N x R x R x 3
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the loader's entry list
};

struct LoaderOptions {
  std::size_t batch_size = 32;
  int resolution = 224;
  std::uint64_t shuffle_seed = 0;
  bool shuffle = true;
  std::optional<AugmentConfig> augment;  // applied only when enabled
  std::size_t workers = 0;               // 0 = hardware concurrency
};

// Decode -> augment -> resize -> normalize, one batch at a time. Epoch e
// visits items in the order of a shuffle seeded by (shuffle_seed, e); item
// augmentation draws from a stream seeded by (shuffle_seed, e, item), so
// output is independent of the worker count. Decoding failures raise
// ItemError naming the path.
class BatchLoader {
 public:
  // Throws UsageError when augmentation is enabled for a non-train split.
  BatchLoader(std::filesystem::path root, std::vector<ManifestEntry> entries, Split split,
              LoaderOptions options);

  std::size_t size() const { return entries_.size(); }
  std::size_t batches_per_epoch() const;
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  Batch batch(std::size_t epoch, std::size_t index) const;

  const std::vector<ManifestEntry>& entries() const { return entries_; }

 private:
  Tensor load_item(std::size_t item, std::size_t epoch) const;

  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
  Split split_;
  LoaderOptions options_;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// processed exactly once; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace birr
