#include "dcnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace fs = std::filesystem;

namespace dcnet {

namespace {

TensorPtr copy_tensor(const TensorPtr& t) {
  return make_tensor<float>(t->shape, t->data);
}

TensorPtr encode_seed(std::uint64_t seed) {
  auto t = zeros<float>({4});
  for (int k = 0; k < 4; ++k)
    t->data[k] = static_cast<float>((seed >> (16 * k)) & 0xffffull);
  return t;
}

std::uint64_t decode_seed(const TensorPtr& t) {
  if (!t || t->numel() != 4) throw ValidationError("checkpoint rng_state has the wrong shape");
  std::uint64_t seed = 0;
  for (int k = 0; k < 4; ++k)
    seed |= static_cast<std::uint64_t>(std::llround(t->data[k])) << (16 * k);
  return seed;
}

TensorPtr stats_tensor(const std::array<double, 3>& v) {
  auto t = zeros<float>({3});
  for (int c = 0; c < 3; ++c) t->data[c] = static_cast<float>(v[c]);
  return t;
}

// Live target tensors for everything snapshot() saves, minus bookkeeping.
std::vector<std::pair<std::string, TensorPtr>> state_slots(const DenseNet& model, const Sgd& opt,
                                                           const CenterBank& bank) {
  auto slots = model.named_state();
  for (auto& kv : opt.named_buffers()) slots.push_back(kv);
  slots.emplace_back("centers", bank.centers);
  return slots;
}

void restore(const Checkpoint& ckpt, const std::vector<std::pair<std::string, TensorPtr>>& slots) {
  std::unordered_set<std::string> known = {"norm.mean", "norm.std", "rng_state"};
  for (const auto& [name, dst] : slots) {
    const TensorPtr* src = ckpt.find(name);
    if (!src) throw ValidationError("checkpoint is missing tensor " + name);
    if ((*src)->shape != dst->shape)
      throw ValidationError("checkpoint tensor " + name + " has shape " +
                            shape_str((*src)->shape) + ", expected " + shape_str(dst->shape));
    dst->data = (*src)->data;
    known.insert(name);
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (!known.count(name))
      throw ValidationError("checkpoint carries unexpected tensor " + name);
}

}  // namespace

Checkpoint snapshot(const DenseNet& model, const Sgd& opt, const CenterBank& bank,
                    const ChannelStats& stats, std::uint64_t seed, std::uint64_t iteration,
                    std::uint64_t digest) {
  Checkpoint c;
  c.iteration = iteration;
  c.config_digest = digest;
  for (const auto& [name, t] : state_slots(model, opt, bank))
    c.tensors.emplace_back(name, copy_tensor(t));
  c.tensors.emplace_back("norm.mean", stats_tensor(stats.mean));
  c.tensors.emplace_back("norm.std", stats_tensor(stats.stddev));
  c.tensors.emplace_back("rng_state", encode_seed(seed));
  return c;
}

TrainReport train(DenseNet& model, const ImageDataset& data, const RunConfig& cfg) {
  validate(cfg);
  if (data.size() < 1) throw ValidationError("train: empty dataset");
  if (!cfg.resume.empty() && !cfg.import_path.empty())
    throw ValidationError("run.resume and run.import are mutually exclusive");

  const std::uint64_t digest = config_digest(cfg);
  CenterBank bank =
      make_center_bank<float>(cfg.arch.num_classes, model.feature_dim(),
                              static_cast<float>(cfg.center_alpha));
  Sgd opt(model.named_parameters(), cfg.optim);

  TrainReport rep;
  if (!cfg.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(cfg.resume);
    if (ckpt.config_digest != digest)
      throw ValidationError("checkpoint " + cfg.resume +
                            " was written under a different arch/loss configuration");
    if (decode_seed(*ckpt.find("rng_state")) != cfg.seed)
      throw ValidationError("checkpoint " + cfg.resume + " used a different master seed");
    restore(ckpt, state_slots(model, opt, bank));
    const TensorPtr* cm = ckpt.find("norm.mean");
    const TensorPtr* cs = ckpt.find("norm.std");
    if (!cm || !cs) throw ValidationError("checkpoint is missing normalization statistics");
    for (int c = 0; c < 3; ++c) {
      if ((*cm)->data[c] != static_cast<float>(data.stats().mean[c]) ||
          (*cs)->data[c] != static_cast<float>(data.stats().stddev[c]))
        throw ValidationError(
            "checkpoint normalization statistics differ from the dataset's stats");
    }
    rep.start_iter = static_cast<std::int64_t>(ckpt.iteration);
    if (rep.start_iter > cfg.optim.max_iter)
      throw ValidationError("checkpoint iteration " + std::to_string(rep.start_iter) +
                            " is past optim.max_iter");
  } else if (!cfg.import_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(cfg.import_path);
    rep.import = model.import_weights(ckpt.tensors);
  }

  fs::create_directories(cfg.out_dir);
  rep.log_path = cfg.out_dir + "/train_log.csv";
  const bool append = rep.start_iter > 0 && fs::exists(rep.log_path);
  std::ofstream log(rep.log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open " + rep.log_path + " for writing");
  if (!append) log << "iter,loss,ls,lc,lr\n";

  std::int64_t last_saved = -1;
  auto save_at = [&](std::int64_t iter) {
    const std::string path = cfg.out_dir + "/ckpt_" + std::to_string(iter) + ".dckp";
    save_checkpoint(path, snapshot(model, opt, bank, data.stats(), cfg.seed,
                                   static_cast<std::uint64_t>(iter), digest));
    last_saved = iter;
    return path;
  };

  const auto params = model.named_parameters();
  for (std::int64_t iter = rep.start_iter; iter < cfg.optim.max_iter; ++iter) {
    const double lr = lr_at(iter, cfg.optim);
    const auto idx = batch_indices(cfg.seed, iter, cfg.optim.batch_size, data.size());
    const TensorPtr x = data.batch(idx);
    const auto labels = data.labels(idx);

    for (const auto& [name, p] : params) p->zero_grad();
    Tape tape;
    auto out = model.forward(x, Mode::kTrain, &tape);
    const TensorPtr ls = softmax_cross_entropy(out.logits, labels, &tape);
    const TensorPtr lc = center_loss(out.features, labels, bank, cfg.loss, &tape);
    const TensorPtr total = joint_loss(ls, lc, cfg.loss, &tape);

    if (!std::isfinite(total->data[0])) {
      std::string ids;
      for (std::size_t j = 0; j < idx.size(); ++j) ids += (j ? ", " : "") + data.id(idx[j]);
      char head[160];
      std::snprintf(head, sizeof(head),
                    "training aborted: non-finite loss %g at iteration %lld (lr %g); batch: ",
                    static_cast<double>(total->data[0]), static_cast<long long>(iter), lr);
      throw Error(head + ids);
    }

    tape.backward(total);
    opt.step(lr);
    center_update(bank, out.features, labels);
    ++rep.steps;

    const std::int64_t done = iter + 1;
    if (done % cfg.log_every == 0 || done == cfg.optim.max_iter) {
      LogPoint p{done, total->data[0], ls->data[0], lc->data[0], lr};
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(p.iter), p.loss, p.ls, p.lc, p.lr);
      log << buf;
      log.flush();
      if (!log) throw IoError("failed writing " + rep.log_path);
      rep.curve.push_back(p);
    }
    if (done % cfg.checkpoint_every == 0) save_at(done);
  }

  rep.final_checkpoint = last_saved == cfg.optim.max_iter
                             ? cfg.out_dir + "/ckpt_" + std::to_string(last_saved) + ".dckp"
                             : save_at(cfg.optim.max_iter);
  return rep;
}

}  // namespace dcnet
