#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/metrics.hpp"
#include "dcnet/ops.hpp"
#include "dcnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace dcnet;

namespace {

struct Cli {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  // defaults -> config file (flag or DCNET_CONFIG) -> flag overrides
  RunConfig resolve() const {
    RunConfig cfg;
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("DCNET_CONFIG")) path = env;
    }
    if (!path.empty()) load_config_file(cfg, path);
    for (const auto& [k, v] : overrides) config_set(cfg, k, v);
    return cfg;
  }
};

// Every config key becomes a --section.key flag with its default in --help.
void add_config_flags(CLI::App* cmd, Cli& cli) {
  cmd->add_option("--config", cli.config_path, "config file (DCNET_CONFIG sets the default)");
  for (const auto& key : config_keys(RunConfig{})) {
    const std::string name = key.name;
    cmd->add_option_function<std::string>(
           "--" + name, [&cli, name](const std::string& v) { cli.overrides[name] = v; },
           key.help + " [default: " + (key.value.empty() ? "<empty>" : key.value) + "]")
        ->type_name("VAL");
  }
}

void write_resolved(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << resolved_config(cfg);
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

void print_counts(const char* tag, const ClassCounts& c) {
  std::int64_t total = 0;
  std::printf("%-6s", tag);
  for (int j = 0; j < kNumClasses; ++j) {
    std::printf(" %s=%lld", kClassNames[j], static_cast<long long>(c[j]));
    total += c[j];
  }
  std::printf(" total=%lld\n", static_cast<long long>(total));
}

ChannelStats eval_stats(const Checkpoint& ckpt, const std::string& data_dir) {
  const TensorPtr* m = ckpt.find("norm.mean");
  const TensorPtr* s = ckpt.find("norm.std");
  if (m && s && (*m)->numel() == 3 && (*s)->numel() == 3) {
    ChannelStats st;
    for (int c = 0; c < 3; ++c) {
      st.mean[c] = (*m)->data[c];
      st.stddev[c] = (*s)->data[c];
    }
    return st;
  }
  const std::string fallback = data_dir + "/stats.txt";
  if (fs::exists(fallback)) {
    std::fprintf(stderr, "warning: checkpoint has no normalization stats, using %s\n",
                 fallback.c_str());
    return read_stats(fallback);
  }
  throw ValidationError("no normalization statistics in the checkpoint or " + fallback);
}

int cmd_split(const Cli& cli, const std::string& out) {
  const RunConfig cfg = cli.resolve();
  if (cfg.manifest.empty()) throw ValidationError("data.manifest is required");
  const DatasetManifest m = parse_manifest(cfg.manifest);
  const SplitSpec s = stratified_split(m, cfg.split_ratio, cfg.seed);
  write_split(out, s);
  write_resolved(cfg, out + ".resolved.cfg");
  print_counts("train", s.train_counts(m));
  print_counts("test", s.test_counts(m));
  if (s.test_ids.empty()) std::fprintf(stderr, "warning: the test split is empty\n");
  std::printf("split written to %s\n", out.c_str());
  return 0;
}

int cmd_plan(const Cli& cli, const std::string& split_path, const std::string& out) {
  const RunConfig cfg = cli.resolve();
  if (cfg.manifest.empty()) throw ValidationError("data.manifest is required");
  const DatasetManifest m = parse_manifest(cfg.manifest);
  const SplitSpec s = read_split(split_path);
  const AugmentationPlan plan = plan_balance(m, s, cfg.train_targets, cfg.test_targets, cfg.seed);
  write_plan(out, plan);
  write_resolved(cfg, out + ".resolved.cfg");
  print_counts("train", plan.train_totals());
  print_counts("test", plan.test_totals());
  if (plan.deviated)
    std::fprintf(stderr, "warning: targets were not exact multiples: %s\n",
                 plan.deviation_note.c_str());
  std::printf("plan written to %s\n", out.c_str());
  return 0;
}

int cmd_materialize(const Cli& cli, const std::string& plan_path, const std::string& split,
                    std::string out_dir) {
  const RunConfig cfg = cli.resolve();
  if (split != "train" && split != "test")
    throw ValidationError("--split must be train or test, got " + split);
  if (cfg.image_dir.empty()) throw ValidationError("data.image_dir is required");
  const bool train = split == "train";
  if (out_dir.empty()) out_dir = train ? cfg.train_dir : cfg.test_dir;
  if (out_dir.empty())
    throw ValidationError("no output directory (--out or data." + split + "_dir)");
  const AugmentationPlan plan = read_plan(plan_path);
  const MaterializeReport rep = materialize(plan, train, cfg.image_dir, out_dir);
  write_resolved(cfg, out_dir + "/resolved.cfg");
  print_counts(split.c_str(), rep.class_totals);
  std::printf("%lld images written under %s\n", static_cast<long long>(rep.written),
              out_dir.c_str());
  return 0;
}

int cmd_train(const Cli& cli) {
  const RunConfig cfg = cli.resolve();
  validate(cfg);
  if (cfg.train_dir.empty()) throw ValidationError("data.train_dir is required");
  const ImageDataset data(cfg.train_dir + "/manifest.csv", cfg.train_dir, cfg.arch.input_size,
                          read_stats(cfg.train_dir + "/stats.txt"));
  DenseNet model(cfg.arch, cfg.seed);
  fs::create_directories(cfg.out_dir);
  write_resolved(cfg, cfg.out_dir + "/resolved.cfg");
  const TrainReport rep = train(model, data, cfg);
  if (!cfg.import_path.empty())
    std::printf("imported %zu tensors (%zu checkpoint names unmatched, %lld left at init)\n",
                rep.import.matched.size(), rep.import.skipped.size(),
                static_cast<long long>(rep.import.untouched));
  std::printf("trained %lld steps (from %lld), log: %s\nfinal checkpoint: %s\n",
              static_cast<long long>(rep.steps), static_cast<long long>(rep.start_iter),
              rep.log_path.c_str(), rep.final_checkpoint.c_str());
  return 0;
}

int cmd_eval(const Cli& cli, const std::string& ckpt_path, std::string data_dir) {
  const RunConfig cfg = cli.resolve();
  if (data_dir.empty()) data_dir = cfg.test_dir;
  if (data_dir.empty()) throw ValidationError("no dataset directory (--data or data.test_dir)");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config_digest != config_digest(cfg))
    std::fprintf(stderr,
                 "WARNING: checkpoint %s was written under a different arch/loss "
                 "configuration; results may be meaningless\n",
                 ckpt_path.c_str());
  DenseNet model(cfg.arch, cfg.seed);
  const ImportReport imp = model.import_weights(ckpt.tensors);
  if (imp.untouched > 0)
    std::fprintf(stderr, "WARNING: %lld model tensors were not in the checkpoint\n",
                 static_cast<long long>(imp.untouched));
  const ImageDataset data(data_dir + "/manifest.csv", data_dir, cfg.arch.input_size,
                          eval_stats(ckpt, data_dir));
  const EvalResult res = evaluate(model, data, cfg.optim.batch_size);
  fs::create_directories(cfg.out_dir);
  write_resolved(cfg, cfg.out_dir + "/eval_resolved.cfg");
  write_score_table(cfg.out_dir + "/scores.csv", res.rows);
  write_metrics_report(cfg.out_dir + "/metrics.txt", res);
  if (!res.failed_ids.empty()) {
    std::fprintf(stderr, "warning: %zu images failed to decode and were excluded:\n",
                 res.failed_ids.size());
    for (const auto& id : res.failed_ids) std::fprintf(stderr, "  %s\n", id.c_str());
  }
  std::fputs(metrics_report(res).c_str(), stdout);
  std::printf("scores: %s/scores.csv\n", cfg.out_dir.c_str());
  return 0;
}

// Double-precision finite-difference sweep; each row is one operator case.
int cmd_gradcheck(const Cli& cli, const std::string& scope, double tol, std::uint64_t seed) {
  (void)cli;
  using D = double;
  using Ptr = TensorPtrT<D>;
  Rng rng(seed);
  auto randn = [&](std::vector<std::int64_t> shape) {
    auto t = zeros<D>(shape, true);
    for (auto& v : t->data) v = rng.normal();
    return t;
  };
  struct Row {
    std::string name;
    GradCheckReport rep;
  };
  std::vector<Row> rows;
  auto check = [&](const std::string& name, const std::string& group,
                   const TensorFn<D>& fn, std::vector<Ptr> xs) {
    if (scope != "all" && scope != group) return;
    rows.push_back({name, finite_diff_check<D>(fn, xs, 1e-5, tol)});
  };
  // Fixed-weight reduction to a scalar, so entry-level sign errors cannot
  // cancel the way a plain sum would let them.
  auto probe = [](const Ptr& y, TapeT<D>& tape) {
    auto w = zeros<D>(y->shape);
    for (std::int64_t i = 0; i < w->numel(); ++i)
      w->data[i] = 0.25 + static_cast<double>((static_cast<std::uint64_t>(i) * 2654435761ull >>
                                               13) & 1023) / 1024.0;
    return sum_all<D>(multiply<D>(y, w, &tape), &tape);
  };

  check("conv2d 3x3 s1 p1", "conv",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(conv2d<D>(xs[0], xs[1], 1, 1, &tape), tape);
        },
        {randn({2, 3, 5, 5}), randn({4, 3, 3, 3})});
  check("conv2d 1x1 s2 p0", "conv",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(conv2d<D>(xs[0], xs[1], 2, 0, &tape), tape);
        },
        {randn({1, 4, 6, 6}), randn({2, 4, 1, 1})});
  check("conv2d 7x7 s2 p3", "conv",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(conv2d<D>(xs[0], xs[1], 2, 3, &tape), tape);
        },
        {randn({1, 2, 9, 9}), randn({3, 2, 7, 7})});
  check("batch_norm train", "bn",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          BatchNormT<D> p = make_batch_norm<D>(3);
          p.gamma = xs[1];
          p.beta = xs[2];
          return probe(batch_norm<D>(xs[0], p, Mode::kTrain, &tape), tape);
        },
        {randn({2, 3, 4, 4}), randn({3}), randn({3})});
  check("relu", "misc",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) { return probe(relu<D>(xs[0], &tape), tape); },
        {randn({3, 7})});
  check("max_pool 3x3 s2 p1", "pool",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(max_pool2d<D>(xs[0], 3, 2, 1, &tape), tape);
        },
        {randn({2, 2, 7, 7})});
  check("avg_pool 2x2", "pool",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) { return probe(avg_pool2x2<D>(xs[0], &tape), tape); },
        {randn({2, 3, 6, 6})});
  check("global_avg_pool", "pool",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(global_avg_pool<D>(xs[0], &tape), tape);
        },
        {randn({2, 5, 4, 4})});
  check("concat_channels", "misc",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(concat_channels<D>({xs[0], xs[1]}, &tape), tape);
        },
        {randn({2, 3, 4, 4}), randn({2, 2, 4, 4})});
  check("linear", "linear",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return probe(linear<D>(xs[0], xs[1], xs[2], &tape), tape);
        },
        {randn({4, 6}), randn({3, 6}), randn({3})});
  check("softmax_cross_entropy", "losses",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          return softmax_cross_entropy<D>(xs[0], {0, 2, 1}, &tape);
        },
        {randn({3, 4})});
  check("center_loss", "losses",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          CenterBankT<D> bank = make_center_bank<D>(3, 5);
          for (std::size_t i = 0; i < bank.centers->data.size(); ++i)
            bank.centers->data[i] = 0.1 * static_cast<double>(i);
          return center_loss<D>(xs[0], {0, 2, 1, 1}, bank, LossConfig{}, &tape);
        },
        {randn({4, 5})});
  check("joint_loss", "losses",
        [&](const std::vector<Ptr>& xs, TapeT<D>& tape) {
          CenterBankT<D> bank = make_center_bank<D>(3, 4);
          auto ls = softmax_cross_entropy<D>(xs[0], {0, 1}, &tape);
          auto lc = center_loss<D>(xs[1], {0, 1}, bank, LossConfig{}, &tape);
          return joint_loss<D>(ls, lc, LossConfig{}, &tape);
        },
        {randn({2, 3}), randn({2, 4})});

  if (rows.empty()) throw ValidationError("unknown gradcheck scope " + scope);
  bool all_pass = true;
  std::printf("%-24s %-12s %s\n", "case", "max_rel_err", "result");
  for (const auto& r : rows) {
    std::printf("%-24s %-12.3g %s\n", r.name.c_str(), r.rep.max_rel_err,
                r.rep.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.rep.pass;
  }
  if (!all_pass) throw Error("gradient check failed");
  std::printf("all %zu cases pass at tol %g\n", rows.size(), tol);
  return 0;
}

int cmd_arch_dump(const Cli& cli) {
  const RunConfig cfg = cli.resolve();
  validate(cfg.arch);
  const LayerPlan plan = plan_architecture(cfg.arch);
  std::fputs(plan_table(plan).c_str(), stdout);
  std::printf("conv layers: %lld\nclassifier input: %lld\n",
              static_cast<long long>(conv_layer_count(plan)),
              static_cast<long long>(feature_dim(plan)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcnet: dense-block classifier toolchain"};
  app.require_subcommand(1);
  Cli cli;

  std::string out, split_path, plan_path, split_name = "train", ckpt_path, data_dir;
  std::string scope = "all";
  double tol = 1e-6;
  std::uint64_t gc_seed = 7;

  auto* sc_split = app.add_subcommand("split", "stratified train/test split of a manifest");
  sc_split->add_option("--out", out, "split csv path")->required();
  add_config_flags(sc_split, cli);

  auto* sc_plan = app.add_subcommand("plan", "per-image augmentation multiplicities");
  sc_plan->add_option("--split", split_path, "split csv from `dcnet split`")->required();
  sc_plan->add_option("--out", out, "plan csv path")->required();
  add_config_flags(sc_plan, cli);

  auto* sc_mat = app.add_subcommand("materialize", "write the augmented images of one split");
  sc_mat->add_option("--plan", plan_path, "plan csv from `dcnet plan`")->required();
  sc_mat->add_option("--split", split_name, "train or test")->required();
  sc_mat->add_option("--out", out, "output directory (defaults to data.*_dir)");
  add_config_flags(sc_mat, cli);

  auto* sc_train = app.add_subcommand("train", "train on a materialized dataset");
  add_config_flags(sc_train, cli);

  auto* sc_eval = app.add_subcommand("eval", "score a materialized dataset with a checkpoint");
  sc_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  sc_eval->add_option("--data", data_dir, "dataset directory (defaults to data.test_dir)");
  add_config_flags(sc_eval, cli);

  auto* sc_gc = app.add_subcommand("gradcheck", "finite-difference check of the operator set");
  sc_gc->add_option("--scope", scope, "all|conv|bn|pool|linear|losses|misc");
  sc_gc->add_option("--tol", tol, "relative-error tolerance");
  sc_gc->add_option("--seed", gc_seed, "input draw seed");

  auto* sc_arch = app.add_subcommand("arch-dump", "print the layer plan");
  add_config_flags(sc_arch, cli);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help/usage
    return code == 0 ? 0 : 1;
  }

  try {
    if (sc_split->parsed()) return cmd_split(cli, out);
    if (sc_plan->parsed()) return cmd_plan(cli, split_path, out);
    if (sc_mat->parsed()) return cmd_materialize(cli, plan_path, split_name, out);
    if (sc_train->parsed()) return cmd_train(cli);
    if (sc_eval->parsed()) return cmd_eval(cli, ckpt_path, data_dir);
    if (sc_gc->parsed()) return cmd_gradcheck(cli, scope, tol, gc_seed);
    if (sc_arch->parsed()) return cmd_arch_dump(cli);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
