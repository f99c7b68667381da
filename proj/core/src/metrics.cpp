#include "dcnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dcnet/losses.hpp"

namespace dcnet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : classes(num_classes) {
  if (num_classes < 1) throw ValidationError("confusion matrix needs at least one class");
  counts.assign(static_cast<std::size_t>(classes) * classes, 0);
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < classes; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t(0));
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes) throw ValidationError("confusion matrix size mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
  std::vector<double> r(cm.classes);
  for (int j = 0; j < cm.classes; ++j) {
    const std::int64_t row = cm.row_sum(j);
    r[j] = row == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : static_cast<double>(cm.at(j, j)) / static_cast<double>(row);
  }
  return r;
}

std::vector<int> empty_classes(const ConfusionMatrix& cm) {
  std::vector<int> out;
  for (int j = 0; j < cm.classes; ++j)
    if (cm.row_sum(j) == 0) out.push_back(j);
  return out;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0;
  int n = 0;
  for (double r : per_class_recall(cm))
    if (!std::isnan(r)) {
      sum += r;
      ++n;
    }
  if (n == 0) throw ValidationError("balanced accuracy of an empty matrix");
  return sum / n;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::int64_t t = cm.total();
  if (t == 0) throw ValidationError("overall accuracy of an empty matrix");
  std::int64_t diag = 0;
  for (int j = 0; j < cm.classes; ++j) diag += cm.at(j, j);
  return static_cast<double>(diag) / static_cast<double>(t);
}

EvalResult evaluate(DenseNet& model, const ImageDataset& ds, std::int64_t batch_size) {
  if (batch_size < 1) throw ValidationError("evaluate: batch size must be positive");
  const int classes = static_cast<int>(model.config().num_classes);
  EvalResult res;
  res.cm = ConfusionMatrix(classes);

  std::vector<ImageBuffer> bufs;
  std::vector<std::int64_t> kept;
  for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
    const std::int64_t stop = std::min(ds.size(), start + batch_size);
    bufs.clear();
    kept.clear();
    for (std::int64_t i = start; i < stop; ++i) {
      if (ds.label(i) >= classes)
        throw ValidationError("evaluate: label " + std::to_string(ds.label(i)) +
                              " outside the model's " + std::to_string(classes) + " classes");
      try {
        bufs.push_back(ds.load_preprocessed(i));
        kept.push_back(i);
      } catch (const Error&) {
        res.failed_ids.push_back(ds.id(i));
      }
    }
    if (kept.empty()) continue;
    const TensorPtr x = normalize(bufs, ds.stats());
    const TensorPtr probs = softmax_probs(model.forward(x, Mode::kInference).logits);
    for (std::size_t row = 0; row < kept.size(); ++row) {
      const std::int64_t i = kept[row];
      ScoreRow sr;
      sr.id = ds.id(i);
      sr.truth = ds.label(i);
      sr.probs.resize(classes);
      int best = 0;
      for (int j = 0; j < classes; ++j) {
        sr.probs[j] = probs->data[row * classes + j];
        if (sr.probs[j] > sr.probs[best]) best = j;
      }
      sr.pred = best;
      res.cm.add(sr.truth, sr.pred);
      res.rows.push_back(std::move(sr));
    }
  }
  return res;
}

void write_score_table(const std::string& path, const std::vector<ScoreRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "image";
  for (const char* c : kClassNames) os << ',' << c;
  os << '\n';
  char buf[32];
  for (const auto& r : rows) {
    os << r.id;
    for (double p : r.probs) {
      std::snprintf(buf, sizeof(buf), "%.9g", p);
      os << ',' << buf;
    }
    os << '\n';
  }
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

std::string metrics_report(const EvalResult& r) {
  std::ostringstream os;
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    os << key << '=' << buf << '\n';
  };
  os << "samples=" << r.cm.total() << '\n';
  put("balanced_accuracy", balanced_accuracy(r.cm));
  put("overall_accuracy", overall_accuracy(r.cm));
  auto class_name = [&](int j) {
    return r.cm.classes == kNumClasses ? std::string(kClassNames[j]) : std::to_string(j);
  };
  const auto recall = per_class_recall(r.cm);
  for (int j = 0; j < r.cm.classes; ++j) {
    os << "recall_" << class_name(j) << '=';
    if (std::isnan(recall[j]))
      os << "excluded";
    else {
      std::snprintf(buf, sizeof(buf), "%.9g", recall[j]);
      os << buf;
    }
    os << '\n';
  }
  const auto empty = empty_classes(r.cm);
  if (!empty.empty()) {
    os << "warning_empty_classes=";
    for (std::size_t k = 0; k < empty.size(); ++k) os << (k ? "," : "") << class_name(empty[k]);
    os << '\n';
  }
  os << "decode_failures=" << r.failed_ids.size() << '\n';
  return os.str();
}

void write_metrics_report(const std::string& path, const EvalResult& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << metrics_report(r);
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace dcnet
