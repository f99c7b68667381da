#include "dcnet/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace fs = std::filesystem;

namespace dcnet {

namespace {

using i64 = std::int64_t;

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

constexpr const char* kGroundTruthHeader = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC";
constexpr const char* kOutputHeader = "output_id,source_id,class,transform";
constexpr const char* kPlanHeader = "split,image_id,class,slot,transform";

std::map<std::string, int> label_map(const DatasetManifest& m) {
  std::map<std::string, int> out;
  for (const auto& r : m.records) out[r.id] = r.label;
  return out;
}

ClassCounts count_ids(const std::vector<std::string>& ids, const std::map<std::string, int>& labels,
                      const char* what) {
  ClassCounts c{};
  for (const auto& id : ids) {
    auto it = labels.find(id);
    if (it == labels.end())
      throw ValidationError(std::string(what) + ": id " + id + " not in the manifest");
    ++c[it->second];
  }
  return c;
}

std::string slot_ext(const std::string& src_ext, int slot) {
  if (slot == 0) return src_ext;
  return src_ext == "raw" ? "raw" : "png";
}

std::string output_name(const std::string& id, int slot, const std::string& src_ext) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_a%04d.", slot);
  return id + buf + slot_ext(src_ext, slot);
}

}  // namespace

int class_index(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == kClassNames[i]) return i;
  throw ValidationError("unknown class name: " + name);
}

ClassCounts DatasetManifest::class_counts() const {
  ClassCounts c{};
  for (const auto& r : records) ++c[r.label];
  return c;
}

DatasetManifest parse_manifest(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kGroundTruthHeader)
    throw ValidationError(path + ": expected header \"" + kGroundTruthHeader + "\"");
  DatasetManifest m;
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_fields(lines[ln]);
    const std::string where = path + ":" + std::to_string(ln + 1);
    if (f.size() != 1 + kNumClasses)
      throw ValidationError(where + ": expected 8 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ValidationError(where + ": empty image id");
    if (!seen.insert(f[0]).second) throw ValidationError(where + ": duplicate id " + f[0]);
    int label = -1;
    for (int j = 0; j < kNumClasses; ++j) {
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(f[j + 1], &used);
        if (used != f[j + 1].size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ValidationError(where + ": bad value \"" + f[j + 1] + "\"");
      }
      if (v != 0.0 && v != 1.0)
        throw ValidationError(where + ": one-hot values must be 0.0 or 1.0");
      if (v == 1.0) {
        if (label >= 0) throw ValidationError(where + ": more than one positive label");
        label = j;
      }
    }
    if (label < 0) throw ValidationError(where + ": no positive label");
    m.records.push_back({f[0], label});
  }
  return m;
}

ClassCounts SplitSpec::train_counts(const DatasetManifest& m) const {
  return count_ids(train_ids, label_map(m), "split");
}
ClassCounts SplitSpec::test_counts(const DatasetManifest& m) const {
  return count_ids(test_ids, label_map(m), "split");
}

SplitSpec stratified_split(const DatasetManifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ValidationError("split ratio must be in (0,1]");
  const i64 r1000 = std::llround(ratio * 1000.0);
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& r : m.records) by_class[r.label].push_back(r.id);
  Rng root = Rng(seed).fork("split");
  SplitSpec s;
  s.seed = seed;
  for (int j = 0; j < kNumClasses; ++j) {
    auto& ids = by_class[j];
    if (ids.empty())
      throw ValidationError(std::string("class ") + kClassNames[j] + " has no images");
    Rng rng = root.fork(kClassNames[j]);
    rng.shuffle(ids);
    const i64 n = static_cast<i64>(ids.size());
    const i64 test_n = n * (1000 - r1000) / 1000;
    s.train_ids.insert(s.train_ids.end(), ids.begin(), ids.end() - test_n);
    s.test_ids.insert(s.test_ids.end(), ids.end() - test_n, ids.end());
  }
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

void write_split(const std::string& path, const SplitSpec& s) {
  std::vector<std::pair<std::string, const char*>> rows;
  for (const auto& id : s.train_ids) rows.emplace_back(id, "train");
  for (const auto& id : s.test_ids) rows.emplace_back(id, "test");
  std::sort(rows.begin(), rows.end());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& [id, tag] : rows) os << id << ',' << tag << '\n';
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

SplitSpec read_split(const std::string& path) {
  SplitSpec s;
  std::unordered_set<std::string> seen;
  const auto lines = read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_fields(lines[ln]);
    const std::string where = path + ":" + std::to_string(ln + 1);
    if (f.size() != 2) throw ValidationError(where + ": expected \"image_id,split\"");
    if (!seen.insert(f[0]).second) throw ValidationError(where + ": duplicate id " + f[0]);
    if (f[1] == "train")
      s.train_ids.push_back(f[0]);
    else if (f[1] == "test")
      s.test_ids.push_back(f[0]);
    else
      throw ValidationError(where + ": split must be train or test, got " + f[1]);
  }
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

ClassCounts AugmentationPlan::train_totals() const {
  ClassCounts c{};
  for (const auto& e : entries)
    if (e.train) c[e.label] += static_cast<i64>(e.transforms.size());
  return c;
}
ClassCounts AugmentationPlan::test_totals() const {
  ClassCounts c{};
  for (const auto& e : entries)
    if (!e.train) c[e.label] += static_cast<i64>(e.transforms.size());
  return c;
}

AugmentationPlan plan_balance(const DatasetManifest& m, const SplitSpec& s,
                              const ClassCounts& train_targets, const ClassCounts& test_targets,
                              std::uint64_t seed) {
  const auto labels = label_map(m);
  Rng root = Rng(seed).fork("plan");
  AugmentationPlan plan;
  std::ostringstream note;

  auto plan_split = [&](const std::vector<std::string>& ids, const ClassCounts& targets,
                        bool train) {
    std::array<std::vector<std::string>, kNumClasses> by_class;
    for (const auto& id : ids) {
      auto it = labels.find(id);
      if (it == labels.end()) throw ValidationError("plan: id " + id + " not in the manifest");
      by_class[it->second].push_back(id);
    }
    std::vector<PlanEntry> block;
    for (int j = 0; j < kNumClasses; ++j) {
      auto& cell = by_class[j];
      std::sort(cell.begin(), cell.end());
      const i64 n = static_cast<i64>(cell.size());
      const i64 target = targets[j];
      if (n == 0) {
        if (target != 0)
          throw ValidationError(std::string("plan: class ") + kClassNames[j] + " has no " +
                                (train ? "train" : "test") + " images but target " +
                                std::to_string(target));
        continue;
      }
      if (target < n)
        throw ValidationError(std::string("plan: target ") + std::to_string(target) +
                              " below source count " + std::to_string(n) + " for class " +
                              kClassNames[j]);
      const i64 base = target / n;
      const i64 rem = target % n;
      if (rem != 0) {
        plan.deviated = true;
        note << (train ? "train " : "test ") << kClassNames[j] << ": target " << target
             << " is not a multiple of " << n << ", spreading remainder " << rem << "; ";
      }
      for (i64 i = 0; i < n; ++i) {
        PlanEntry e;
        e.id = cell[i];
        e.label = j;
        e.train = train;
        const i64 mult = base + (i < rem ? 1 : 0);
        e.transforms.push_back(TransformDesc{});
        for (i64 slot = 1; slot < mult; ++slot) {
          Rng r = root.fork(e.id + "#" + std::to_string(slot));
          e.transforms.push_back(draw_transform(r));
        }
        block.push_back(std::move(e));
      }
    }
    std::sort(block.begin(), block.end(),
              [](const PlanEntry& a, const PlanEntry& b) { return a.id < b.id; });
    for (auto& e : block) plan.entries.push_back(std::move(e));
  };

  plan_split(s.train_ids, train_targets, true);
  plan_split(s.test_ids, test_targets, false);
  plan.deviation_note = note.str();
  return plan;
}

void write_plan(const std::string& path, const AugmentationPlan& plan) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << kPlanHeader << '\n';
  for (const auto& e : plan.entries)
    for (std::size_t slot = 0; slot < e.transforms.size(); ++slot)
      os << (e.train ? "train" : "test") << ',' << e.id << ',' << kClassNames[e.label] << ','
         << slot << ',' << transform_str(e.transforms[slot]) << '\n';
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

AugmentationPlan read_plan(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kPlanHeader)
    throw ValidationError(path + ": expected header \"" + kPlanHeader + "\"");
  AugmentationPlan plan;
  PlanEntry* cur = nullptr;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_fields(lines[ln]);
    const std::string where = path + ":" + std::to_string(ln + 1);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 fields");
    const bool train = f[0] == "train";
    if (!train && f[0] != "test") throw ValidationError(where + ": bad split " + f[0]);
    const int label = class_index(f[2]);
    i64 slot = 0;
    try {
      slot = std::stoll(f[3]);
    } catch (const std::exception&) {
      throw ValidationError(where + ": bad slot " + f[3]);
    }
    if (!cur || cur->id != f[1] || cur->train != train) {
      plan.entries.push_back({f[1], label, train, {}});
      cur = &plan.entries.back();
    }
    if (slot != static_cast<i64>(cur->transforms.size()) || cur->label != label)
      throw ValidationError(where + ": slots for " + f[1] + " are not contiguous");
    cur->transforms.push_back(parse_transform(f[4]));
    if (slot == 0 && !cur->transforms[0].is_identity())
      throw ValidationError(where + ": slot 0 must be the identity");
  }
  return plan;
}

std::string resolve_image_path(const std::string& dir, const std::string& id) {
  for (const char* ext : {".raw", ".png", ".jpg", ".jpeg"}) {
    std::string p = dir + "/" + id + ext;
    if (fs::exists(p)) return p;
  }
  throw IoError("no image for id " + id + " under " + dir + " (tried .raw/.png/.jpg/.jpeg)");
}

MaterializeReport materialize(const AugmentationPlan& plan, bool train_split,
                              const std::string& image_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> created;
  auto cleanup = [&]() {
    for (const auto& p : created) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  };
  try {
    MaterializeReport rep;
    StatsAccumulator acc;
    std::ofstream manifest;
    const std::string manifest_path = out_dir + "/manifest.csv";
    manifest.open(manifest_path, std::ios::trunc);
    if (!manifest) throw IoError("cannot open " + manifest_path + " for writing");
    created.push_back(manifest_path);
    manifest << kOutputHeader << '\n';

    for (const auto& e : plan.entries) {
      if (e.train != train_split) continue;
      const std::string src = resolve_image_path(image_dir, e.id);
      const std::string src_ext = src.substr(src.find_last_of('.') + 1);
      const ImageBuffer img = read_image(src);
      for (std::size_t slot = 0; slot < e.transforms.size(); ++slot) {
        const std::string name = output_name(e.id, static_cast<int>(slot), src_ext);
        const std::string out_path = out_dir + "/" + name;
        created.push_back(out_path);
        if (e.transforms[slot].is_identity()) {
          fs::copy_file(src, out_path, fs::copy_options::overwrite_existing);
          if (train_split) acc.add(img);
        } else {
          const ImageBuffer timg = apply_transform(img, e.transforms[slot]);
          write_image(out_path, timg);
          if (train_split) acc.add(timg);
        }
        manifest << name << ',' << e.id << ',' << kClassNames[e.label] << ','
                 << transform_str(e.transforms[slot]) << '\n';
        ++rep.written;
        ++rep.class_totals[e.label];
      }
    }
    manifest.flush();
    if (!manifest) throw IoError("failed writing " + manifest_path);
    manifest.close();
    rep.manifest_path = manifest_path;
    if (train_split && rep.written > 0) {
      rep.stats_path = out_dir + "/stats.txt";
      created.push_back(rep.stats_path);
      write_stats(rep.stats_path, acc.finish());
    }
    return rep;
  } catch (...) {
    cleanup();
    throw;
  }
}

void write_stats(const std::string& path, const ChannelStats& stats) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  char buf[256];
  std::snprintf(buf, sizeof(buf), "mean %.17g %.17g %.17g\nstd %.17g %.17g %.17g\n",
                stats.mean[0], stats.mean[1], stats.mean[2], stats.stddev[0], stats.stddev[1],
                stats.stddev[2]);
  os << buf;
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

ChannelStats read_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  ChannelStats s;
  std::string tag1, tag2;
  is >> tag1 >> s.mean[0] >> s.mean[1] >> s.mean[2] >> tag2 >> s.stddev[0] >> s.stddev[1] >>
      s.stddev[2];
  if (!is || tag1 != "mean" || tag2 != "std")
    throw ValidationError(path + ": malformed stats file");
  return s;
}

std::vector<i64> batch_indices(std::uint64_t seed, i64 iter, i64 batch_size, i64 n) {
  if (n < 1) throw ValidationError("batch_indices: empty dataset");
  if (batch_size < 1 || iter < 0) throw ValidationError("batch_indices: bad iteration/batch size");
  Rng root = Rng(seed).fork("shuffle");
  std::vector<i64> out(static_cast<std::size_t>(batch_size));
  std::vector<i64> perm;
  i64 perm_epoch = -1;
  for (i64 j = 0; j < batch_size; ++j) {
    const i64 pos = iter * batch_size + j;
    const i64 epoch = pos / n;
    if (epoch != perm_epoch) {
      perm.resize(static_cast<std::size_t>(n));
      for (i64 i = 0; i < n; ++i) perm[i] = i;
      Rng r = root.fork(std::to_string(epoch));
      r.shuffle(perm);
      perm_epoch = epoch;
    }
    out[j] = perm[pos % n];
  }
  return out;
}

ImageDataset::ImageDataset(const std::string& manifest_path, const std::string& image_dir,
                           i64 input_size, ChannelStats stats, i64 cache_budget_bytes)
    : dir_(image_dir), input_size_(input_size), stats_(stats), cache_budget_(cache_budget_bytes) {
  if (input_size < 1) throw ValidationError("dataset input size must be positive");
  const auto lines = read_lines(manifest_path);
  if (lines.empty() || lines[0] != kOutputHeader)
    throw ValidationError(manifest_path + ": expected header \"" + kOutputHeader + "\"");
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_fields(lines[ln]);
    if (f.size() != 4)
      throw ValidationError(manifest_path + ":" + std::to_string(ln + 1) + ": expected 4 fields");
    items_.push_back({f[0], class_index(f[2])});
  }
  cache_.resize(items_.size());
}

ImageBuffer ImageDataset::load_preprocessed(i64 i) const {
  if (i < 0 || i >= size()) throw ValidationError("dataset index out of range");
  if (!cache_[i].pixels.empty()) return cache_[i];
  ImageBuffer img = read_image(dir_ + "/" + items_[i].output_id);
  img = center_square_crop(img);
  img = resize_bilinear(img, input_size_, input_size_);
  const i64 bytes = static_cast<i64>(img.pixels.size());
  if (cache_used_ + bytes <= cache_budget_) {
    cache_[i] = img;
    cache_used_ += bytes;
  }
  return img;
}

TensorPtr ImageDataset::batch(const std::vector<i64>& indices) const {
  std::vector<ImageBuffer> bufs;
  bufs.reserve(indices.size());
  for (i64 i : indices) bufs.push_back(load_preprocessed(i));
  return normalize(bufs, stats_);
}

std::vector<i64> ImageDataset::labels(const std::vector<i64>& indices) const {
  std::vector<i64> out;
  out.reserve(indices.size());
  for (i64 i : indices) out.push_back(label(i));
  return out;
}

}  // namespace dcnet
