#pragma once

#include <string>
#include <utility>

#include "dcnet/tensor.hpp"

namespace dcnet {

struct OptimizerConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::int64_t lr_step = 20000;   // iterations per decay step
  double lr_factor = 0.1;
  std::int64_t max_iter = 75000;
  std::int64_t batch_size = 32;
};

void validate(const OptimizerConfig& cfg);

// base_lr * factor^floor(iter / lr_step), by iterated multiplication so the
// default schedule hits 0.01/0.001/1e-4/1e-5 exactly.
double lr_at(std::int64_t iter, const OptimizerConfig& cfg);

// SGD with momentum and coupled weight decay over named parameters. Frozen
// parameters (requires_grad false) are skipped; a trainable parameter with
// no gradient is an error. BN running stats and centers are simply never
// registered here.
class Sgd {
 public:
  Sgd(std::vector<std::pair<std::string, TensorPtr>> params, const OptimizerConfig& cfg);

  // g = grad + weight_decay * param; buf = momentum * buf + g;
  // param -= lr * buf.
  void step(double lr);

  // Buffers under "<param>.momentum", for checkpointing.
  std::vector<std::pair<std::string, TensorPtr>> named_buffers() const;

 private:
  std::vector<std::pair<std::string, TensorPtr>> params_;
  std::vector<TensorPtr> buffers_;
  OptimizerConfig cfg_;
};

}  // namespace dcnet
