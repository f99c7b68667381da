#pragma once

#include <array>
#include <string>

#include "dcnet/image.hpp"

namespace dcnet {

inline constexpr int kNumClasses = 7;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {"MEL", "NV",  "BCC", "AKIEC",
                                                                     "BKL", "DF",  "VASC"};
using ClassCounts = std::array<std::int64_t, kNumClasses>;

int class_index(const std::string& name);

struct ManifestRecord {
  std::string id;
  int label = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  ClassCounts class_counts() const;
};

// Ground-truth table: header "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC", one-hot
// 0.0/1.0 rows, unique ids.
DatasetManifest parse_manifest(const std::string& path);

struct SplitSpec {
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
  std::uint64_t seed = 0;

  ClassCounts train_counts(const DatasetManifest& m) const;
  ClassCounts test_counts(const DatasetManifest& m) const;
};

// Per class: shuffle ids by a class-named stream of the seed, hold out
// floor((1-ratio)*n) for test (ratio quantized to 1/1000 so the arithmetic
// stays exact), keep the rest for training.
SplitSpec stratified_split(const DatasetManifest& m, double ratio, std::uint64_t seed);

// "image_id,split" lines, split in {train,test}, sorted by id.
void write_split(const std::string& path, const SplitSpec& s);
SplitSpec read_split(const std::string& path);

struct PlanEntry {
  std::string id;
  int label = 0;
  bool train = true;
  std::vector<TransformDesc> transforms;  // entry 0 is always identity
};

struct AugmentationPlan {
  std::vector<PlanEntry> entries;  // train block then test block, ids sorted
  bool deviated = false;           // some cell needed a remainder spread
  std::string deviation_note;

  ClassCounts train_totals() const;
  ClassCounts test_totals() const;
};

// Per class and split: multiplicity = target / count; a non-divisible
// target spreads the remainder over the lexicographically first ids and
// flags the plan. Targets below the source count are rejected. Transform
// draws are seeded per (image id, slot).
AugmentationPlan plan_balance(const DatasetManifest& m, const SplitSpec& s,
                              const ClassCounts& train_targets, const ClassCounts& test_targets,
                              std::uint64_t seed);

// "split,image_id,class,slot,transform" lines.
void write_plan(const std::string& path, const AugmentationPlan& plan);
AugmentationPlan read_plan(const std::string& path);

// Probes id.{raw,png,jpg,jpeg} under dir.
std::string resolve_image_path(const std::string& dir, const std::string& id);

struct MaterializeReport {
  std::int64_t written = 0;
  ClassCounts class_totals{};
  std::string manifest_path;
  std::string stats_path;  // train split only
};

// Writes one augmented image per plan slot into out_dir plus a manifest
// "output_id,source_id,class,transform". Identity slots are byte copies of
// the source file; transformed slots are written losslessly. The train
// split also gets channel statistics (stats.txt). Failures remove whatever
// partial output this call created.
MaterializeReport materialize(const AugmentationPlan& plan, bool train_split,
                              const std::string& image_dir, const std::string& out_dir);

void write_stats(const std::string& path, const ChannelStats& stats);
ChannelStats read_stats(const std::string& path);

// Deterministic sample order: global position iter*batch_size + j indexes a
// per-epoch seeded permutation, so any iteration's batch is a pure function
// of (seed, iter) and resuming cannot drift.
std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t iter,
                                        std::int64_t batch_size, std::int64_t n);

// Materialized images behind an output manifest; loads, center-crops,
// resizes and normalizes on demand, caching decoded images while the cache
// budget lasts.
class ImageDataset {
 public:
  ImageDataset(const std::string& manifest_path, const std::string& image_dir,
               std::int64_t input_size, ChannelStats stats,
               std::int64_t cache_budget_bytes = std::int64_t(1) << 30);

  std::int64_t size() const { return static_cast<std::int64_t>(items_.size()); }
  int label(std::int64_t i) const { return items_[i].label; }
  const std::string& id(std::int64_t i) const { return items_[i].output_id; }
  const ChannelStats& stats() const { return stats_; }

  // Throws IoError on decode failure (callers may exclude and count).
  ImageBuffer load_preprocessed(std::int64_t i) const;
  TensorPtr batch(const std::vector<std::int64_t>& indices) const;
  std::vector<std::int64_t> labels(const std::vector<std::int64_t>& indices) const;

 private:
  struct Item {
    std::string output_id;
    int label = 0;
  };
  std::vector<Item> items_;
  std::string dir_;
  std::int64_t input_size_;
  ChannelStats stats_;
  std::int64_t cache_budget_;
  mutable std::vector<ImageBuffer> cache_;
  mutable std::int64_t cache_used_ = 0;
};

}  // namespace dcnet
