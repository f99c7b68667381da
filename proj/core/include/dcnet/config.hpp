#pragma once

#include <string>

#include "dcnet/datapipe.hpp"
#include "dcnet/losses.hpp"
#include "dcnet/model.hpp"
#include "dcnet/optim.hpp"

namespace dcnet {

// Every knob of a run as flat "section.key = value" text. Unknown keys are
// rejected; parsing and validation report all problems at once.
struct RunConfig {
  ArchConfig arch;
  OptimizerConfig optim;
  LossConfig loss;
  double center_alpha = 0.5;

  double split_ratio = 0.8;
  ClassCounts train_targets{40095, 69732, 37492, 36418, 41360, 35052, 35226};
  ClassCounts test_targets{10434, 17433, 9282, 9035, 10293, 8763, 8764};

  std::string manifest;    // ground-truth csv
  std::string image_dir;   // source images
  std::string train_dir;   // materialized train set
  std::string test_dir;    // materialized test set
  std::string out_dir = "run";
  std::string resume;      // checkpoint to continue from
  std::string import_path; // checkpoint to seed frozen layers from

  std::uint64_t seed = 1;
  std::int64_t log_every = 100;
  std::int64_t checkpoint_every = 5000;
  std::int64_t workers = 1;
};

struct ConfigKey {
  std::string name;
  std::string value;  // current, formatted
  std::string help;
};

// All keys with their current values, sorted by name.
std::vector<ConfigKey> config_keys(const RunConfig& cfg);

// Setter used by both the file parser and CLI flag overrides.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);
std::string config_get(const RunConfig& cfg, const std::string& key);

// Parses "key = value" lines ('#' comments, blank lines allowed) on top of
// cfg. Collects every malformed line, unknown key and bad value into one
// ValidationError.
void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void load_config_file(RunConfig& cfg, const std::string& path);

// Cross-field validation, all findings in one ValidationError.
void validate(const RunConfig& cfg);

// The full key set as reloadable config text.
std::string resolved_config(const RunConfig& cfg);

// FNV-1a over the arch.* and loss.* key/value lines: the part of the config
// a checkpoint must agree on to be loadable.
std::uint64_t config_digest(const RunConfig& cfg);

}  // namespace dcnet
