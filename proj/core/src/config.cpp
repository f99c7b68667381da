#include "dcnet/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dcnet {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::int64_t parse_i64(const std::string& v) {
  std::size_t used = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size() || v.empty()) throw ValidationError("expected an integer, got \"" + v + "\"");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  const std::int64_t s = parse_i64(v);
  if (s < 0) throw ValidationError("expected a non-negative integer, got \"" + v + "\"");
  return static_cast<std::uint64_t>(s);
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size() || v.empty()) throw ValidationError("expected a number, got \"" + v + "\"");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("expected true/false, got \"" + v + "\"");
}

std::vector<std::int64_t> parse_int_list(const std::string& v) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_i64(trim(item)));
  if (out.empty()) throw ValidationError("expected a comma-separated integer list");
  return out;
}

std::string fmt_int_list(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

ClassCounts parse_counts(const std::string& v) {
  const auto list = parse_int_list(v);
  if (list.size() != kNumClasses)
    throw ValidationError("expected " + std::to_string(kNumClasses) + " counts, got " +
                          std::to_string(list.size()));
  ClassCounts c{};
  std::copy(list.begin(), list.end(), c.begin());
  return c;
}

std::string fmt_counts(const ClassCounts& c) {
  return fmt_int_list(std::vector<std::int64_t>(c.begin(), c.end()));
}

struct KeyDef {
  const char* name;
  const char* help;
  std::string (*get)(const RunConfig&);
  void (*set)(RunConfig&, const std::string&);
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"arch.blocks", "dense layers per block",
       [](const RunConfig& c) { return fmt_int_list(c.arch.block_sizes); },
       [](RunConfig& c, const std::string& v) { c.arch.block_sizes = parse_int_list(v); }},
      {"arch.growth", "channels added per dense layer",
       [](const RunConfig& c) { return std::to_string(c.arch.growth); },
       [](RunConfig& c, const std::string& v) { c.arch.growth = parse_i64(v); }},
      {"arch.compression", "transition channel factor",
       [](const RunConfig& c) { return fmt_double(c.arch.compression); },
       [](RunConfig& c, const std::string& v) { c.arch.compression = parse_double(v); }},
      {"arch.stem_channels", "stem convolution output channels",
       [](const RunConfig& c) { return std::to_string(c.arch.stem_channels); },
       [](RunConfig& c, const std::string& v) { c.arch.stem_channels = parse_i64(v); }},
      {"arch.classes", "classifier output width",
       [](const RunConfig& c) { return std::to_string(c.arch.num_classes); },
       [](RunConfig& c, const std::string& v) { c.arch.num_classes = parse_i64(v); }},
      {"arch.input_size", "square input resolution",
       [](const RunConfig& c) { return std::to_string(c.arch.input_size); },
       [](RunConfig& c, const std::string& v) { c.arch.input_size = parse_i64(v); }},
      {"arch.freeze", "first trainable dense layer as block,layer (1-based), or none",
       [](const RunConfig& c) {
         return c.arch.freeze ? std::to_string(c.arch.freeze->first) + "," +
                                    std::to_string(c.arch.freeze->second)
                              : std::string("none");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "none") {
           c.arch.freeze.reset();
           return;
         }
         const auto list = parse_int_list(v);
         if (list.size() != 2) throw ValidationError("expected block,layer or none");
         c.arch.freeze = std::make_pair(static_cast<int>(list[0]), static_cast<int>(list[1]));
       }},
      {"loss.lambda", "center-loss weight in the joint objective",
       [](const RunConfig& c) { return fmt_double(c.loss.lambda); },
       [](RunConfig& c, const std::string& v) { c.loss.lambda = parse_double(v); }},
      {"loss.center_alpha", "center update rate",
       [](const RunConfig& c) { return fmt_double(c.center_alpha); },
       [](RunConfig& c, const std::string& v) { c.center_alpha = parse_double(v); }},
      {"loss.center_mean", "average the center term over the batch instead of summing",
       [](const RunConfig& c) { return std::string(c.loss.center_mean ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.loss.center_mean = parse_bool(v); }},
      {"optim.lr", "base learning rate",
       [](const RunConfig& c) { return fmt_double(c.optim.base_lr); },
       [](RunConfig& c, const std::string& v) { c.optim.base_lr = parse_double(v); }},
      {"optim.momentum", "SGD momentum",
       [](const RunConfig& c) { return fmt_double(c.optim.momentum); },
       [](RunConfig& c, const std::string& v) { c.optim.momentum = parse_double(v); }},
      {"optim.weight_decay", "L2 coupling on trainable parameters",
       [](const RunConfig& c) { return fmt_double(c.optim.weight_decay); },
       [](RunConfig& c, const std::string& v) { c.optim.weight_decay = parse_double(v); }},
      {"optim.lr_step", "iterations between learning-rate decays",
       [](const RunConfig& c) { return std::to_string(c.optim.lr_step); },
       [](RunConfig& c, const std::string& v) { c.optim.lr_step = parse_i64(v); }},
      {"optim.lr_factor", "learning-rate decay factor",
       [](const RunConfig& c) { return fmt_double(c.optim.lr_factor); },
       [](RunConfig& c, const std::string& v) { c.optim.lr_factor = parse_double(v); }},
      {"optim.max_iter", "training iterations",
       [](const RunConfig& c) { return std::to_string(c.optim.max_iter); },
       [](RunConfig& c, const std::string& v) { c.optim.max_iter = parse_i64(v); }},
      {"optim.batch_size", "samples per iteration",
       [](const RunConfig& c) { return std::to_string(c.optim.batch_size); },
       [](RunConfig& c, const std::string& v) { c.optim.batch_size = parse_i64(v); }},
      {"data.split_ratio", "training fraction of the stratified split",
       [](const RunConfig& c) { return fmt_double(c.split_ratio); },
       [](RunConfig& c, const std::string& v) { c.split_ratio = parse_double(v); }},
      {"data.train_targets", "per-class balanced training counts",
       [](const RunConfig& c) { return fmt_counts(c.train_targets); },
       [](RunConfig& c, const std::string& v) { c.train_targets = parse_counts(v); }},
      {"data.test_targets", "per-class balanced test counts",
       [](const RunConfig& c) { return fmt_counts(c.test_targets); },
       [](RunConfig& c, const std::string& v) { c.test_targets = parse_counts(v); }},
      {"data.manifest", "ground-truth csv path",
       [](const RunConfig& c) { return c.manifest; },
       [](RunConfig& c, const std::string& v) { c.manifest = v; }},
      {"data.image_dir", "source image directory",
       [](const RunConfig& c) { return c.image_dir; },
       [](RunConfig& c, const std::string& v) { c.image_dir = v; }},
      {"data.train_dir", "materialized training set directory",
       [](const RunConfig& c) { return c.train_dir; },
       [](RunConfig& c, const std::string& v) { c.train_dir = v; }},
      {"data.test_dir", "materialized test set directory",
       [](const RunConfig& c) { return c.test_dir; },
       [](RunConfig& c, const std::string& v) { c.test_dir = v; }},
      {"run.out_dir", "output directory for checkpoints, logs and reports",
       [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"run.resume", "checkpoint to continue training from",
       [](const RunConfig& c) { return c.resume; },
       [](RunConfig& c, const std::string& v) { c.resume = v; }},
      {"run.import", "checkpoint whose weights seed the model before training",
       [](const RunConfig& c) { return c.import_path; },
       [](RunConfig& c, const std::string& v) { c.import_path = v; }},
      {"run.seed", "master seed; every random stream derives from it",
       [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
      {"run.log_every", "iterations between training log lines",
       [](const RunConfig& c) { return std::to_string(c.log_every); },
       [](RunConfig& c, const std::string& v) { c.log_every = parse_i64(v); }},
      {"run.checkpoint_every", "iterations between periodic checkpoints",
       [](const RunConfig& c) { return std::to_string(c.checkpoint_every); },
       [](RunConfig& c, const std::string& v) { c.checkpoint_every = parse_i64(v); }},
      {"run.workers", "worker threads (1 keeps runs bit-deterministic)",
       [](const RunConfig& c) { return std::to_string(c.workers); },
       [](RunConfig& c, const std::string& v) { c.workers = parse_i64(v); }},
  };
  return table;
}

const KeyDef* find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

std::vector<ConfigKey> config_keys(const RunConfig& cfg) {
  std::vector<ConfigKey> out;
  for (const auto& k : key_table()) out.push_back({k.name, k.get(cfg), k.help});
  std::sort(out.begin(), out.end(),
            [](const ConfigKey& a, const ConfigKey& b) { return a.name < b.name; });
  return out;
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyDef* k = find_key(key);
  if (!k) throw ValidationError("unknown config key \"" + key + "\"");
  try {
    k->set(cfg, value);
  } catch (const ValidationError& e) {
    throw ValidationError(key + ": " + e.what());
  }
}

std::string config_get(const RunConfig& cfg, const std::string& key) {
  const KeyDef* k = find_key(key);
  if (!k) throw ValidationError("unknown config key \"" + key + "\"");
  return k->get(cfg);
}

void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> errors;
  int ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(ln);
    if (eq == std::string::npos) {
      errors.push_back(where + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      config_set(cfg, key, value);
    } catch (const ValidationError& e) {
      errors.push_back(where + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  parse_config_text(cfg, ss.str(), path);
}

void validate(const RunConfig& cfg) {
  std::vector<std::string> errors;
  auto collect = [&](const std::function<void()>& fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      errors.push_back(e.what());
    }
  };
  collect([&] { validate(cfg.arch); });
  collect([&] { validate(cfg.optim); });
  if (!(cfg.loss.lambda >= 0.0) || !std::isfinite(cfg.loss.lambda))
    errors.push_back("loss.lambda must be a finite non-negative number");
  if (!(cfg.center_alpha > 0.0) || cfg.center_alpha > 1.0)
    errors.push_back("loss.center_alpha must be in (0,1]");
  if (!(cfg.split_ratio > 0.0) || cfg.split_ratio > 1.0)
    errors.push_back("data.split_ratio must be in (0,1]");
  for (int j = 0; j < kNumClasses; ++j) {
    if (cfg.train_targets[j] < 0) errors.push_back("data.train_targets must be non-negative");
    if (cfg.test_targets[j] < 0) errors.push_back("data.test_targets must be non-negative");
  }
  if (cfg.log_every < 1) errors.push_back("run.log_every must be at least 1");
  if (cfg.checkpoint_every < 1) errors.push_back("run.checkpoint_every must be at least 1");
  if (cfg.workers < 1) errors.push_back("run.workers must be at least 1");
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys(cfg)) out += k.name + " = " + k.value + "\n";
  return out;
}

std::uint64_t config_digest(const RunConfig& cfg) {
  std::uint64_t h = kFnvOffset;
  for (const auto& k : config_keys(cfg)) {
    if (k.name.rfind("arch.", 0) != 0 && k.name.rfind("loss.", 0) != 0) continue;
    h = fnv1a64(k.name + "=" + k.value + "\n", h);
  }
  return h;
}

}  // namespace dcnet
