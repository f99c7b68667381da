// Acceptance gate: one binary, one pass/fail line per criterion. Criteria
// that exercise the installed toolchain spawn the real CLI; everything else
// runs in-process against the library.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "synthetic.hpp"
#include "dcnet/checkpoint.hpp"
#include "dcnet/optim.hpp"

using namespace dcnet;
namespace fs = std::filesystem;

namespace {

struct Ctx {
  std::string bin;      // dcnet executable
  std::string scratch;  // shared working directory
};

struct CmdResult {
  int code = -1;
  std::string output;
};

CmdResult run_cmd(const Ctx& ctx, const std::string& args) {
  const std::string log = ctx.scratch + "/cmd_output.txt";
  const std::string cmd = ctx.bin + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  if (status == -1)
    r.code = -1;
  else if (WIFEXITED(status))
    r.code = WEXITSTATUS(status);
  else
    r.code = 128;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// ---- published reference distributions -----------------------------------

constexpr ClassCounts kSourceCounts = {1113, 6705, 514, 327, 1099, 115, 142};
constexpr ClassCounts kTrainCounts = {891, 5364, 412, 262, 880, 92, 114};
constexpr ClassCounts kTestCounts = {222, 1341, 102, 65, 219, 23, 28};
constexpr ClassCounts kTrainTargets = {40095, 69732, 37492, 36418, 41360, 35052, 35226};
constexpr ClassCounts kTestTargets = {10434, 17433, 9282, 9035, 10293, 8763, 8764};
constexpr ClassCounts kTrainMult = {45, 13, 91, 139, 47, 381, 309};
constexpr ClassCounts kTestMult = {47, 13, 91, 139, 47, 381, 313};

std::string counts_str(const ClassCounts& c) {
  std::string s;
  for (int j = 0; j < kNumClasses; ++j) s += (j ? "," : "") + std::to_string(c[j]);
  return s;
}

DatasetManifest reference_manifest(const Ctx& ctx) {
  const std::string dir = ctx.scratch + "/reference";
  fs::create_directories(dir);
  const std::string path = dir + "/truth.csv";
  if (!fs::exists(path)) dcnet::testsupport::write_counts_manifest(path, kSourceCounts);
  return parse_manifest(path);
}

// ---- criterion 1: architecture shape ---------------------------------------

bool criterion_1(const Ctx& ctx, std::string& detail) {
  auto base = run_cmd(ctx, "arch-dump");
  if (base.code != 0) {
    detail = "arch-dump exited " + std::to_string(base.code);
    return false;
  }
  if (!contains(base.output, "conv layers: 61") ||
      !contains(base.output, "classifier input: 608")) {
    detail = "default plan is not 61 convs into a 608-wide classifier";
    return false;
  }
  auto wide =
      run_cmd(ctx, "arch-dump --arch.blocks 6,12,24,16 --arch.freeze none");
  if (wide.code != 0 || !contains(wide.output, "classifier input: 1024")) {
    detail = "6,12,24,16 plan does not reach a 1024-wide classifier";
    return false;
  }
  detail = "61 convs / 608 features by default; 6,12,24,16 reaches 1024";
  return true;
}

// ---- criterion 2: stratified split cells -----------------------------------

bool criterion_2(const Ctx& ctx, std::string& detail) {
  auto m = reference_manifest(ctx);
  auto s = stratified_split(m, 0.8, 7);
  auto train = s.train_counts(m);
  auto test = s.test_counts(m);
  if (train != kTrainCounts || test != kTestCounts) {
    detail = "got train " + counts_str(train) + " test " + counts_str(test);
    return false;
  }
  std::set<std::string> ids(s.train_ids.begin(), s.train_ids.end());
  for (const auto& id : s.test_ids)
    if (!ids.insert(id).second) {
      detail = "split reuses id " + id;
      return false;
    }
  detail = "80/20 split reproduces every class cell (8015 train / 2000 test)";
  return true;
}

// ---- criterion 3: class-balancing plan --------------------------------------

bool criterion_3(const Ctx& ctx, std::string& detail) {
  auto m = reference_manifest(ctx);
  auto s = stratified_split(m, 0.8, 7);
  auto plan = plan_balance(m, s, kTrainTargets, kTestTargets, 7);
  if (plan.train_totals() != kTrainTargets || plan.test_totals() != kTestTargets) {
    detail = "plan totals " + counts_str(plan.train_totals()) + " / " +
             counts_str(plan.test_totals());
    return false;
  }
  if (plan.deviated) {
    detail = "targets should divide the class counts exactly, but plan deviated";
    return false;
  }
  for (const auto& e : plan.entries) {
    const auto want = e.train ? kTrainMult[e.label] : kTestMult[e.label];
    if (static_cast<std::int64_t>(e.transforms.size()) != want) {
      detail = "id " + e.id + " has " + std::to_string(e.transforms.size()) +
               " slots, expected " + std::to_string(want);
      return false;
    }
    if (!e.transforms[0].is_identity()) {
      detail = "id " + e.id + " does not keep its original as slot 0";
      return false;
    }
  }
  detail = "balanced totals 295375 train / 74004 test with uniform multiplicities";
  return true;
}

// ---- criterion 4: loss definitions -----------------------------------------

bool criterion_4(const Ctx&, std::string& detail) {
  auto uniform = softmax_cross_entropy<double>(zeros<double>({2, 7}), {0, 4});
  if (std::abs(uniform->item() - std::log(7.0)) > 1e-12) {
    detail = "uniform 7-way cross entropy is not ln 7";
    return false;
  }
  auto hand = softmax_cross_entropy<double>(make_tensor<double>({1, 3}, {1, 2, 3}), {2});
  if (std::abs(hand->item() - 0.40760596444438079) > 1e-12) {
    detail = "cross entropy hand case off: " + std::to_string(hand->item());
    return false;
  }
  auto bank = make_center_bank<double>(3, 2);
  auto lc = center_loss<double>(make_tensor<double>({1, 2}, {2.0, 2.0}), {1}, bank, LossConfig{});
  if (lc->item() != 4.0) {
    detail = "center loss of (2,2) against a zero center is not 4";
    return false;
  }
  auto bank2 = make_center_bank<double>(2, 2);
  center_update<double>(bank2, make_tensor<double>({1, 2}, {2.0, 0.0}), {0});
  if (bank2.centers->data != std::vector<double>{0.5, 0.0, 0.0, 0.0}) {
    detail = "center update hand case is not (0.5, 0)";
    return false;
  }

  // lambda 0: the joint graph must reproduce pure-softmax gradients bitwise
  Rng rng(17);
  auto x = zeros<double>({4, 3});
  for (auto& v : x->data) v = rng.normal();
  const std::vector<std::int64_t> labels{0, 1, 2, 1};
  auto grads = [&](bool with_center) {
    auto w = zeros<double>({3, 3}, true);
    for (std::size_t i = 0; i < 9; ++i) w->data[i] = 0.1 * static_cast<double>(i % 4) - 0.2;
    auto b = zeros<double>({3}, true);
    TapeT<double> tape;
    auto logits = linear<double>(x, w, b, &tape);
    auto ls = softmax_cross_entropy<double>(logits, labels, &tape);
    LossConfig cfg;
    cfg.lambda = 0.0;
    auto loss = ls;
    if (with_center) {
      auto cb = make_center_bank<double>(3, 3);
      auto cl = center_loss<double>(logits, labels, cb, cfg, &tape);
      loss = joint_loss<double>(ls, cl, cfg, &tape);
    }
    tape.backward(loss);
    return w->grad;
  };
  if (grads(true) != grads(false)) {
    detail = "lambda 0 joint gradients differ from pure softmax";
    return false;
  }
  detail = "ln7 / 0.40761 / center 4.0 / update (0.5,0) / lambda-0 bitwise identity";
  return true;
}

// ---- criterion 5: gradients -------------------------------------------------

bool criterion_5(const Ctx&, std::string& detail) {
  auto f = dcnet::testsupport::gradient_sweep<float>(1e-3, 1001, 2);
  auto d = dcnet::testsupport::gradient_sweep<double>(1e-6, 1002, 2);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "float %d cases worst %.2e (%s); double %d cases worst %.2e (%s)", f.cases,
                f.worst, f.worst_case.c_str(), d.cases, d.worst, d.worst_case.c_str());
  detail = buf;
  return f.pass && d.pass && f.cases >= 20 && d.cases >= 20;
}

// ---- criterion 6: learning-rate schedule ------------------------------------

bool criterion_6(const Ctx&, std::string& detail) {
  OptimizerConfig cfg;  // 0.01, step 20000, factor 0.1, max 75000
  std::set<double> seen;
  for (std::int64_t it = 0; it < cfg.max_iter; ++it) seen.insert(lr_at(it, cfg));
  const std::set<double> want{0.01, 0.001, 0.0001, 0.00001};
  if (seen != want) {
    detail = "observed " + std::to_string(seen.size()) + " distinct rates";
    return false;
  }
  if (lr_at(19999, cfg) != 0.01 || lr_at(20000, cfg) != 0.001 || lr_at(40000, cfg) != 0.0001 ||
      lr_at(60000, cfg) != 0.00001) {
    detail = "drop boundaries are misplaced";
    return false;
  }
  detail = "exactly {1e-2,1e-3,1e-4,1e-5} with drops at 20000/40000/60000";
  return true;
}

// ---- criterion 7: the center term compacts classes --------------------------

// Two-layer extractor on a 7-cluster plane; identical runs except lambda.
// Returns the mean over classes of the within-class feature variance.
double toy_intra_variance(double lambda, std::uint64_t seed) {
  const int classes = 7, pool_n = 700, batch = 32, steps = 2000;
  Rng rng(seed);
  auto pool = zeros<float>({pool_n, 2});
  std::vector<std::int64_t> pool_labels(pool_n);
  for (int i = 0; i < pool_n; ++i) {
    const int c = i % classes;
    const double ang = 2.0 * 3.14159265358979312 * c / classes;
    pool_labels[i] = c;
    pool->data[i * 2 + 0] = static_cast<float>(2.0 * std::cos(ang) + 0.3 * rng.normal());
    pool->data[i * 2 + 1] = static_cast<float>(2.0 * std::sin(ang) + 0.3 * rng.normal());
  }

  auto w1 = he_init<float>({16, 2}, 2, seed + 1);
  auto b1 = zeros<float>({16}, true);
  auto w2 = he_init<float>({2, 16}, 16, seed + 2);
  auto b2 = zeros<float>({2}, true);
  auto wc = he_init<float>({classes, 2}, 2, seed + 3);
  auto bc = zeros<float>({classes}, true);
  for (auto& t : {w1, w2, wc}) t->requires_grad = true;

  OptimizerConfig ocfg;
  ocfg.base_lr = 0.001;
  ocfg.momentum = 0.0;  // the summed center term makes momentum overshoot here
  ocfg.weight_decay = 0.0;
  ocfg.lr_step = steps + 1;
  ocfg.max_iter = steps + 1;
  ocfg.batch_size = batch;
  Sgd opt({{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}, {"wc", wc}, {"bc", bc}}, ocfg);

  auto bank = make_center_bank<float>(classes, 2);
  LossConfig lcfg;
  lcfg.lambda = lambda;

  auto forward_features = [&](const TensorPtr& x, Tape* tape) {
    auto h = relu<float>(linear<float>(x, w1, b1, tape), tape);
    return linear<float>(h, w2, b2, tape);
  };

  Rng draw = Rng(seed).fork("batches");
  for (int it = 0; it < steps; ++it) {
    auto xb = zeros<float>({batch, 2});
    std::vector<std::int64_t> yb(batch);
    for (int j = 0; j < batch; ++j) {
      const auto pick = static_cast<std::int64_t>(draw.below(pool_n));
      xb->data[j * 2 + 0] = pool->data[pick * 2 + 0];
      xb->data[j * 2 + 1] = pool->data[pick * 2 + 1];
      yb[j] = pool_labels[pick];
    }
    for (auto& t : {w1, b1, w2, b2, wc, bc}) t->zero_grad();
    Tape tape;
    auto feats = forward_features(xb, &tape);
    auto logits = linear<float>(feats, wc, bc, &tape);
    auto ls = softmax_cross_entropy<float>(logits, yb, &tape);
    auto lc = center_loss<float>(feats, yb, bank, lcfg, &tape);
    auto loss = joint_loss<float>(ls, lc, lcfg, &tape);
    tape.backward(loss);
    opt.step(ocfg.base_lr);
    center_update<float>(bank, feats, yb);
  }

  auto feats = forward_features(pool, nullptr);
  std::vector<double> mean(classes * 2, 0.0);
  std::vector<std::int64_t> n(classes, 0);
  for (int i = 0; i < pool_n; ++i) {
    const auto c = pool_labels[i];
    mean[c * 2 + 0] += feats->data[i * 2 + 0];
    mean[c * 2 + 1] += feats->data[i * 2 + 1];
    ++n[c];
  }
  for (int c = 0; c < classes; ++c) {
    mean[c * 2 + 0] /= static_cast<double>(n[c]);
    mean[c * 2 + 1] /= static_cast<double>(n[c]);
  }
  double intra = 0.0;
  for (int c = 0; c < classes; ++c) {
    double var = 0.0;
    for (int i = 0; i < pool_n; ++i) {
      if (pool_labels[i] != c) continue;
      const double dx = feats->data[i * 2 + 0] - mean[c * 2 + 0];
      const double dy = feats->data[i * 2 + 1] - mean[c * 2 + 1];
      var += dx * dx + dy * dy;
    }
    intra += var / static_cast<double>(n[c]);
  }
  return intra / classes;
}

bool criterion_7(const Ctx&, std::string& detail) {
  const double with_center = toy_intra_variance(0.8, 2024);
  const double softmax_only = toy_intra_variance(0.0, 2024);
  const double ratio = with_center / softmax_only;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "intra-class variance %.4g with the center term vs %.4g without (ratio %.3f)",
                with_center, softmax_only, ratio);
  detail = buf;
  return ratio <= 0.5;
}

// ---- criteria 8 and 10: the full pipeline through the CLI -------------------

struct Pipeline {
  std::string src;        // synthetic images + truth.csv
  std::string work;       // split/plan/materialized sets
  std::string config;     // shared config file
  std::string train_dir;
  std::string test_dir;
};

Pipeline pipeline_paths(const Ctx& ctx) {
  Pipeline p;
  p.src = ctx.scratch + "/pipeline/src";
  p.work = ctx.scratch + "/pipeline/work";
  p.config = p.work + "/run.cfg";
  p.train_dir = p.work + "/train";
  p.test_dir = p.work + "/test";
  return p;
}

// Build (or reuse) the synthetic corpus and its materialized splits.
bool ensure_pipeline(const Ctx& ctx, const Pipeline& p, std::string& detail) {
  if (fs::exists(p.train_dir + "/stats.txt") && fs::exists(p.test_dir + "/manifest.csv"))
    return true;
  fs::remove_all(ctx.scratch + "/pipeline");
  fs::create_directories(p.work);

  dcnet::testsupport::SyntheticSpec spec;  // 700 images, 64x64
  dcnet::testsupport::make_synthetic_dataset(p.src, spec);

  std::ofstream cfg(p.config);
  cfg << "arch.blocks = 2,4,4\n"
      << "arch.growth = 12\n"
      << "arch.stem_channels = 24\n"
      << "arch.input_size = 64\n"
      << "arch.freeze = none\n"
      << "optim.lr = 0.01\n"
      << "optim.lr_step = 1000\n"
      << "optim.max_iter = 3000\n"
      << "optim.batch_size = 16\n"
      << "loss.lambda = 0.8\n"
      << "data.split_ratio = 0.8\n"
      << "data.train_targets = 86,86,86,86,86,85,85\n"
      << "data.test_targets = 20,21,19,18,21,20,21\n"
      << "data.manifest = " << p.src << "/truth.csv\n"
      << "data.image_dir = " << p.src << "\n"
      << "data.train_dir = " << p.train_dir << "\n"
      << "data.test_dir = " << p.test_dir << "\n"
      << "run.seed = 5\n"
      << "run.log_every = 100\n"
      << "run.checkpoint_every = 1500\n";
  cfg.close();

  auto split = run_cmd(ctx, "split --config " + p.config + " --out " + p.work + "/split.csv");
  if (split.code != 0) {
    detail = "split failed: " + split.output.substr(0, 200);
    return false;
  }
  auto plan = run_cmd(ctx, "plan --config " + p.config + " --split " + p.work +
                               "/split.csv --out " + p.work + "/plan.csv");
  if (plan.code != 0) {
    detail = "plan failed: " + plan.output.substr(0, 200);
    return false;
  }
  for (const char* side : {"train", "test"}) {
    auto mat = run_cmd(ctx, std::string("materialize --config ") + p.config + " --plan " +
                                p.work + "/plan.csv --split " + side);
    if (mat.code != 0) {
      detail = std::string(side) + " materialize failed: " + mat.output.substr(0, 200);
      return false;
    }
  }
  return true;
}

bool run_training(const Ctx& ctx, const Pipeline& p, const std::string& out_dir,
                  const std::string& extra, std::string& detail) {
  fs::remove_all(out_dir);
  auto r = run_cmd(ctx, "train --config " + p.config + " --run.out_dir " + out_dir +
                            (extra.empty() ? "" : " " + extra));
  if (r.code != 0) {
    detail = "train failed (" + std::to_string(r.code) + "): " + r.output.substr(0, 200);
    return false;
  }
  return true;
}

bool ensure_run_a(const Ctx& ctx, const Pipeline& p, std::string& detail) {
  const std::string run_a = ctx.scratch + "/pipeline/runA";
  if (fs::exists(run_a + "/ckpt_1500.dckp") && fs::exists(run_a + "/ckpt_3000.dckp")) return true;
  if (!ensure_pipeline(ctx, p, detail)) return false;
  return run_training(ctx, p, run_a, "", detail);
}

double parse_metric(const std::string& path, const std::string& key) {
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind(key + "=", 0) == 0) return std::stod(line.substr(key.size() + 1));
  return -1.0;
}

bool criterion_8(const Ctx& ctx, std::string& detail) {
  auto p = pipeline_paths(ctx);
  if (!ensure_pipeline(ctx, p, detail)) return false;

  const std::string run_a = ctx.scratch + "/pipeline/runA";
  const std::string run_b = ctx.scratch + "/pipeline/runB";
  if (!run_training(ctx, p, run_a, "", detail)) return false;
  if (!run_training(ctx, p, run_b, "", detail)) return false;

  const auto digest_a = file_digest(run_a + "/ckpt_3000.dckp");
  const auto digest_b = file_digest(run_b + "/ckpt_3000.dckp");
  if (digest_a != digest_b) {
    detail = "identical runs produced different final checkpoints";
    return false;
  }

  const std::string eval_dir = ctx.scratch + "/pipeline/evalA";
  auto ev = run_cmd(ctx, "eval --config " + p.config + " --checkpoint " + run_a +
                             "/ckpt_3000.dckp --run.out_dir " + eval_dir);
  if (ev.code != 0) {
    detail = "eval failed (" + std::to_string(ev.code) + "): " + ev.output.substr(0, 200);
    return false;
  }
  const double bal = parse_metric(eval_dir + "/metrics.txt", "balanced_accuracy");
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "run A == run B byte for byte; held-out balanced accuracy %.4f", bal);
  detail = buf;
  return bal >= 0.90;
}

bool criterion_9(const Ctx&, std::string& detail) {
  const std::string readme = std::string(DCNET_SOURCE_DIR) + "/README.md";
  std::ifstream is(readme);
  if (!is) {
    detail = "README.md missing";
    return false;
  }
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  for (const char* dep : {"OpenBLAS", "libpng", "libjpeg"}) {
    if (!contains(text, dep)) {
      detail = std::string("README does not document the ") + dep + " dependency";
      return false;
    }
  }
  detail = "library-backed kernels (OpenBLAS, libpng, libjpeg) documented in README";
  return true;
}

bool criterion_10(const Ctx& ctx, std::string& detail) {
  auto p = pipeline_paths(ctx);
  if (!ensure_run_a(ctx, p, detail)) return false;
  const std::string run_a = ctx.scratch + "/pipeline/runA";
  const std::string run_c = ctx.scratch + "/pipeline/runC";
  if (!run_training(ctx, p, run_c, "--run.resume " + run_a + "/ckpt_1500.dckp", detail))
    return false;
  const auto resumed = file_digest(run_c + "/ckpt_3000.dckp");
  const auto straight = file_digest(run_a + "/ckpt_3000.dckp");
  if (resumed != straight) {
    detail = "resumed final checkpoint differs from the straight run";
    return false;
  }
  detail = "resume at 1500 reproduces the straight 3000-iteration checkpoint bitwise";
  return true;
}

// ---- CLI exit-code contract --------------------------------------------------

bool exit_codes(const Ctx& ctx, std::string& detail) {
  struct Case {
    std::string args;
    int want;
  };
  const std::string missing = ctx.scratch + "/no_such_manifest.csv";
  const std::vector<Case> cases = {
      {"--help", 0},
      {"arch-dump", 0},
      {"", 1},                                   // no subcommand: usage
      {"split", 1},                              // missing required --out: usage
      {"no-such-command", 1},
      {"gradcheck --scope bogus", 2},            // validation
      {"arch-dump --arch.blocks 0", 2},          // validation
      {"split --out " + ctx.scratch + "/s.csv --data.manifest " + missing, 3},  // io
  };
  for (const auto& c : cases) {
    auto r = run_cmd(ctx, c.args);
    if (r.code != c.want) {
      detail = "`" + c.args + "` exited " + std::to_string(r.code) + ", expected " +
               std::to_string(c.want);
      return false;
    }
  }
  detail = "0/1/2/3 contract holds over " + std::to_string(cases.size()) + " invocations";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  Ctx ctx;
  std::vector<int> which;
  bool all = false, codes = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--bin" && i + 1 < argc)
      ctx.bin = argv[++i];
    else if (a == "--scratch" && i + 1 < argc)
      ctx.scratch = argv[++i];
    else if (a == "--criterion" && i + 1 < argc)
      which.push_back(std::atoi(argv[++i]));
    else if (a == "--all")
      all = true;
    else if (a == "--exit-codes")
      codes = true;
    else {
      std::fprintf(stderr,
                   "usage: acceptance_tests --bin <dcnet> --scratch <dir> "
                   "(--criterion N | --all | --exit-codes)\n");
      return 2;
    }
  }
  if (ctx.bin.empty() || ctx.scratch.empty()) {
    std::fprintf(stderr, "--bin and --scratch are required\n");
    return 2;
  }
  fs::create_directories(ctx.scratch);
  if (all)
    for (int i = 1; i <= 10; ++i) which.push_back(i);

  bool ok = true;
  if (codes) {
    std::string detail;
    const bool pass = exit_codes(ctx, detail);
    std::printf("exit codes: %s — %s\n", pass ? "PASS" : "FAIL", detail.c_str());
    ok = ok && pass;
  }
  using Fn = bool (*)(const Ctx&, std::string&);
  const Fn criteria[10] = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                           criterion_6, criterion_7, criterion_8, criterion_9, criterion_10};
  for (int n : which) {
    if (n < 1 || n > 10) {
      std::fprintf(stderr, "no criterion %d\n", n);
      return 2;
    }
    std::string detail;
    const bool pass = criteria[n - 1](ctx, detail);
    std::printf("criterion %d: %s — %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    ok = ok && pass;
  }
  return ok ? 0 : 1;
}
