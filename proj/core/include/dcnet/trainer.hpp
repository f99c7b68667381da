#pragma once

#include "dcnet/checkpoint.hpp"
#include "dcnet/config.hpp"

namespace dcnet {

struct LogPoint {
  std::int64_t iter = 0;  // completed iterations
  double loss = 0, ls = 0, lc = 0, lr = 0;
};

struct TrainReport {
  std::int64_t start_iter = 0;
  std::int64_t steps = 0;
  std::string final_checkpoint;
  std::string log_path;
  std::vector<LogPoint> curve;       // points that went to the log
  ImportReport import;               // populated when run.import seeded the model
};

// Deep copy of everything a resumed run needs: model state, momentum
// buffers, class centers, the normalization stats ("norm.mean"/"norm.std")
// and the master seed ("rng_state", four 16-bit chunks).
Checkpoint snapshot(const DenseNet& model, const Sgd& opt, const CenterBank& bank,
                    const ChannelStats& stats, std::uint64_t seed, std::uint64_t iteration,
                    std::uint64_t digest);

// Iterations start_iter..max_iter of: draw batch -> forward -> joint loss ->
// backward -> SGD step at the scheduled rate -> center update. Logs
// "iter,loss,ls,lc,lr" rows, checkpoints periodically and at the end, and
// aborts with a batch diagnostic on a non-finite loss. run.resume continues
// a checkpoint bit-exactly; run.import only seeds weights.
TrainReport train(DenseNet& model, const ImageDataset& data, const RunConfig& cfg);

}  // namespace dcnet
