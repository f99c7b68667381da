#pragma once

#include <functional>
#include <unordered_set>
#include <vector>

#include "dcnet/tensor.hpp"

namespace dcnet {

template <typename T>
struct TapeNodeT {
  const char* op;
  std::vector<TensorPtrT<T>> inputs;
  TensorPtrT<T> output;
  std::function<void()> backward;  // reads output->grad, accumulates into inputs
};

struct BackwardStats {
  std::int64_t nodes_visited = 0;
  std::int64_t rules_run = 0;
};

// Records operations in forward order, so the reverse replay is already
// topological. A tape is single-owner: it must not be shared while
// recording or while backward() runs.
template <typename T>
class TapeT {
 public:
  void record(const char* op, std::vector<TensorPtrT<T>> inputs, TensorPtrT<T> output,
              std::function<void()> backward) {
    produced_.insert(output.get());
    nodes_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
  }

  // Seeds d(loss)/d(loss) = 1 and replays every node once in reverse order.
  // Nodes whose output never received a gradient propagate nothing.
  BackwardStats backward(const TensorPtrT<T>& loss) {
    if (!loss || !loss->is_scalar()) {
      throw ShapeError("backward requires a scalar loss, got " +
                       (loss ? shape_str(loss->shape) : std::string("null")));
    }
    if (!produced(loss.get())) {
      throw Error("backward: loss tensor was not produced on this tape");
    }
    loss->ensure_grad();
    loss->grad[0] += T(1);
    BackwardStats stats;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      ++stats.nodes_visited;
      if (!it->output->grad.empty()) {
        it->backward();
        ++stats.rules_run;
      }
    }
    return stats;
  }

  bool produced(const TensorT<T>* t) const { return produced_.count(t) != 0; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    produced_.clear();
  }

 private:
  std::vector<TapeNodeT<T>> nodes_;
  std::unordered_set<const TensorT<T>*> produced_;
};

using Tape = TapeT<float>;

}  // namespace dcnet
