#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "synthetic.hpp"
#include "dcnet/metrics.hpp"

using namespace dcnet;

namespace {

namespace fs = std::filesystem;

std::string scratch_dir(const char* name) {
  auto dir = fs::temp_directory_path() / "dcnet_eval_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Materialized synthetic images, identity slots only.
struct TinyData {
  std::string dir;
  std::string manifest;
  ChannelStats stats;
};

TinyData tiny_dataset(const char* name, std::int64_t per_class) {
  TinyData d;
  d.dir = scratch_dir(name);
  dcnet::testsupport::SyntheticSpec spec;
  spec.counts.fill(per_class);
  auto truth = dcnet::testsupport::make_synthetic_dataset(d.dir + "/src", spec);
  auto m = parse_manifest(truth);
  auto s = stratified_split(m, 1.0, 5);
  ClassCounts targets;
  targets.fill(per_class);
  auto plan = plan_balance(m, s, targets, ClassCounts{}, 5);
  auto rep = materialize(plan, true, d.dir + "/src", d.dir + "/out");
  d.manifest = rep.manifest_path;
  d.stats = read_stats(rep.stats_path);
  return d;
}

ArchConfig tiny_arch() {
  ArchConfig cfg;
  cfg.block_sizes = {2, 2};
  cfg.growth = 8;
  cfg.stem_channels = 16;
  cfg.input_size = 32;
  cfg.freeze.reset();
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("diagonal confusion matrix scores perfectly") {
  ConfusionMatrix cm(7);
  for (int j = 0; j < 7; ++j) cm.at(j, j) = 10 + j;
  CHECK(balanced_accuracy(cm) == 1.0);
  CHECK(overall_accuracy(cm) == 1.0);
  for (double r : per_class_recall(cm)) CHECK(r == 1.0);
}

TEST_CASE("constant predictor scores 1/7 balanced on any support") {
  ConfusionMatrix cm(7);
  const ClassCounts support = {222, 1341, 102, 65, 219, 23, 28};
  for (int j = 0; j < 7; ++j) cm.at(j, 1) = support[j];  // everything called NV
  CHECK(balanced_accuracy(cm) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(overall_accuracy(cm) == doctest::Approx(1341.0 / 2000.0).epsilon(1e-12));
}

TEST_CASE("two-class hand case") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 8;
  cm.at(0, 1) = 2;
  cm.at(1, 0) = 4;
  cm.at(1, 1) = 6;
  auto rec = per_class_recall(cm);
  CHECK(rec[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(rec[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(balanced_accuracy(cm) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(overall_accuracy(cm) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("balanced accuracy ignores prediction-column imbalance") {
  // permuting which wrong column errors land in changes nothing
  ConfusionMatrix a(3), b(3);
  a.at(0, 0) = 5;
  a.at(0, 1) = 5;
  b.at(0, 0) = 5;
  b.at(0, 2) = 5;
  a.at(1, 1) = 3;
  b.at(1, 1) = 3;
  a.at(2, 2) = 4;
  b.at(2, 2) = 4;
  CHECK(balanced_accuracy(a) == balanced_accuracy(b));
}

TEST_CASE("with equal support, balanced equals overall accuracy") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 6;
  cm.at(0, 1) = 4;
  cm.at(1, 1) = 8;
  cm.at(1, 2) = 2;
  cm.at(2, 2) = 5;
  cm.at(2, 0) = 5;
  CHECK(balanced_accuracy(cm) == doctest::Approx(overall_accuracy(cm)).epsilon(1e-12));
}

TEST_CASE("empty truth rows are excluded, not averaged as zero") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 1;
  cm.at(1, 1) = 1;
  // class 2 never appears
  CHECK(balanced_accuracy(cm) == 1.0);
  CHECK(empty_classes(cm) == std::vector<int>{2});
  auto rec = per_class_recall(cm);
  CHECK(std::isnan(rec[2]));
}

TEST_CASE("all-empty matrix cannot be scored") {
  ConfusionMatrix cm(3);
  CHECK_THROWS_AS((void)balanced_accuracy(cm), ValidationError);
  CHECK_THROWS_AS((void)overall_accuracy(cm), ValidationError);
}

TEST_CASE("merge adds cell-wise") {
  ConfusionMatrix a(2), b(2);
  a.at(0, 0) = 1;
  a.at(1, 0) = 2;
  b.at(0, 0) = 3;
  b.at(1, 1) = 4;
  a.merge(b);
  CHECK(a.at(0, 0) == 4);
  CHECK(a.at(1, 0) == 2);
  CHECK(a.at(1, 1) == 4);
  ConfusionMatrix c(3);
  CHECK_THROWS_AS(a.merge(c), ValidationError);
}

TEST_CASE("score table carries ids and probability rows") {
  std::vector<ScoreRow> rows(2);
  rows[0].id = "alpha";
  rows[0].truth = 0;
  rows[0].pred = 1;
  rows[0].probs = {0.1, 0.4, 0.1, 0.1, 0.1, 0.1, 0.1};
  rows[1].id = "beta";
  rows[1].truth = 6;
  rows[1].pred = 6;
  rows[1].probs = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  auto path = scratch_dir("scores") + "/scores.csv";
  write_score_table(path, rows);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC");
  std::getline(is, line);
  CHECK(line.rfind("alpha,", 0) == 0);
  CHECK(line.find("0.4") != std::string::npos);
  std::getline(is, line);
  CHECK(line.rfind("beta,", 0) == 0);
  CHECK_FALSE(std::getline(is, line));
}

TEST_CASE("metrics report lists accuracies and per-class recalls") {
  EvalResult r;
  for (int j = 0; j < 7; ++j)
    for (std::int64_t i = 0; i < 3; ++i) r.cm.add(j, j);
  r.cm.at(0, 1) += 1;
  auto text = metrics_report(r);
  CHECK(text.find("balanced_accuracy=") != std::string::npos);
  CHECK(text.find("overall_accuracy=") != std::string::npos);
  CHECK(text.find("recall_MEL=") != std::string::npos);
  CHECK(text.find("recall_VASC=") != std::string::npos);
  CHECK(text.find("samples=22") != std::string::npos);
  CHECK(text.find("decode_failures=0") != std::string::npos);
}

TEST_CASE("metrics report marks excluded classes") {
  EvalResult r;
  r.cm.add(0, 0);
  r.cm.add(1, 1);
  auto text = metrics_report(r);
  CHECK(text.find("recall_BCC=excluded") != std::string::npos);
  CHECK(text.find("warning_empty_classes=") != std::string::npos);
}

TEST_CASE("evaluate with a zeroed classifier ties every class to index zero") {
  auto data = tiny_dataset("zero_fc", 2);
  ImageDataset ds(data.manifest, data.dir + "/out", 32, data.stats);
  DenseNet net(tiny_arch(), 3);
  for (auto& [name, t] : net.named_parameters())
    if (name.rfind("fc.", 0) == 0) std::fill(t->data.begin(), t->data.end(), 0.f);
  auto result = evaluate(net, ds, 4);
  CHECK(result.failed_ids.empty());
  REQUIRE(result.rows.size() == 14);
  for (const auto& row : result.rows) {
    CHECK(row.pred == 0);  // equal logits, lowest index wins
    CHECK(row.probs.size() == 7);
    double sum = 0;
    for (double p : row.probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
  // every sample lands in column 0 of its truth row
  for (int j = 0; j < 7; ++j) CHECK(result.cm.at(j, 0) == 2);
}

TEST_CASE("evaluate batches match one-by-one evaluation") {
  auto data = tiny_dataset("batch_eq", 2);
  ImageDataset ds(data.manifest, data.dir + "/out", 32, data.stats);
  DenseNet net(tiny_arch(), 11);
  auto by4 = evaluate(net, ds, 4);
  auto by1 = evaluate(net, ds, 1);
  REQUIRE(by4.rows.size() == by1.rows.size());
  for (std::size_t i = 0; i < by4.rows.size(); ++i) {
    CHECK(by4.rows[i].id == by1.rows[i].id);
    CHECK(by4.rows[i].pred == by1.rows[i].pred);
  }
}

TEST_CASE("evaluate excludes undecodable images but keeps the rest") {
  auto data = tiny_dataset("decode_fail", 2);
  ImageDataset ds(data.manifest, data.dir + "/out", 32, data.stats, 0);
  // truncate one materialized file behind the dataset's back
  std::string victim = data.dir + "/out/" + ds.id(3);  // output ids carry the extension
  REQUIRE(fs::exists(victim));
  fs::resize_file(victim, 6);
  DenseNet net(tiny_arch(), 3);
  auto result = evaluate(net, ds, 4);
  REQUIRE(result.failed_ids.size() == 1);
  CHECK(result.failed_ids[0] == ds.id(3));
  CHECK(result.rows.size() == 13);
  CHECK(result.cm.total() == 13);
}

TEST_SUITE_END();
