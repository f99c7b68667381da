#pragma once

#include <string>

#include "dcnet/datapipe.hpp"
#include "dcnet/model.hpp"

namespace dcnet {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  explicit ConfusionMatrix(int num_classes);

  int classes = 0;
  std::vector<std::int64_t> counts;  // classes * classes, row-major

  std::int64_t& at(int truth, int pred) { return counts[truth * classes + pred]; }
  std::int64_t at(int truth, int pred) const { return counts[truth * classes + pred]; }
  void add(int truth, int pred) { ++at(truth, pred); }
  std::int64_t row_sum(int truth) const;
  std::int64_t total() const;
  void merge(const ConfusionMatrix& other);
};

// recall_j = cm[j,j] / row_j; empty rows come back as NaN and are skipped by
// the mean, so callers can warn about them separately.
std::vector<double> per_class_recall(const ConfusionMatrix& cm);
std::vector<int> empty_classes(const ConfusionMatrix& cm);
double balanced_accuracy(const ConfusionMatrix& cm);  // mean of non-empty recalls
double overall_accuracy(const ConfusionMatrix& cm);   // trace / total

struct ScoreRow {
  std::string id;
  int truth = 0;
  int pred = 0;
  std::vector<double> probs;
};

struct EvalResult {
  ConfusionMatrix cm{kNumClasses};
  std::vector<ScoreRow> rows;
  std::vector<std::string> failed_ids;  // undecodable images, excluded from cm
};

// Inference-mode pass over the whole dataset. Predictions take the argmax of
// the softmax probabilities; ties go to the lowest class index.
EvalResult evaluate(DenseNet& model, const ImageDataset& ds, std::int64_t batch_size);

// "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC" probability rows.
void write_score_table(const std::string& path, const std::vector<ScoreRow>& rows);

// key=value lines: accuracies, per-class recalls, exclusions, failure count.
std::string metrics_report(const EvalResult& r);
void write_metrics_report(const std::string& path, const EvalResult& r);

}  // namespace dcnet
