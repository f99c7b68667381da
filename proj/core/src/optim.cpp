#include "dcnet/optim.hpp"

namespace dcnet {

void validate(const OptimizerConfig& cfg) {
  if (!(cfg.base_lr > 0)) throw ValidationError("base_lr must be positive");
  if (cfg.momentum < 0 || cfg.momentum >= 1) throw ValidationError("momentum must be in [0,1)");
  if (cfg.weight_decay < 0) throw ValidationError("weight_decay must be non-negative");
  if (cfg.lr_step < 1) throw ValidationError("lr_step must be positive");
  if (!(cfg.lr_factor > 0) || cfg.lr_factor >= 1)
    throw ValidationError("lr_factor must be in (0,1)");
  if (cfg.max_iter < 0) throw ValidationError("max_iter must be non-negative");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be positive");
}

double lr_at(std::int64_t iter, const OptimizerConfig& cfg) {
  if (iter < 0 || iter >= std::max<std::int64_t>(cfg.max_iter, 1))
    throw ValidationError("lr_at: iteration " + std::to_string(iter) + " outside [0," +
                          std::to_string(cfg.max_iter) + ")");
  double lr = cfg.base_lr;
  for (std::int64_t k = iter / cfg.lr_step; k > 0; --k) lr *= cfg.lr_factor;
  return lr;
}

Sgd::Sgd(std::vector<std::pair<std::string, TensorPtr>> params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  validate(cfg_);
  buffers_.reserve(params_.size());
  for (auto& [name, p] : params_) buffers_.push_back(zeros<float>(p->shape));
}

void Sgd::step(double lr) {
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float flr = static_cast<float>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, p] = params_[i];
    if (!p->requires_grad) continue;
    if (p->grad.empty())
      throw Error("sgd_step: trainable parameter " + name + " has no gradient");
    auto& buf = buffers_[i]->data;
    for (std::size_t q = 0; q < p->data.size(); ++q) {
      float g = p->grad[q] + wd * p->data[q];
      buf[q] = mu * buf[q] + g;
      p->data[q] -= flr * buf[q];
    }
    check_finite(*p, ("sgd_step(" + name + ")").c_str());
  }
}

std::vector<std::pair<std::string, TensorPtr>> Sgd::named_buffers() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.emplace_back(params_[i].first + ".momentum", buffers_[i]);
  return out;
}

}  // namespace dcnet
