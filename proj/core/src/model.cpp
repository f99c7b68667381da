#include "dcnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace dcnet {

namespace {

using i64 = std::int64_t;

i64 compressed(i64 channels, double theta) {
  return static_cast<i64>(std::floor(theta * static_cast<double>(channels)));
}

// Spatial sizes after the stem and each transition; throws where the
// architecture cannot downsample cleanly.
std::vector<i64> spatial_trace(const ArchConfig& cfg) {
  std::vector<i64> trace;
  i64 s = cfg.input_size;
  s = (s - 1) / 2 + 1;  // 7x7 stride-2 conv, pad 3
  if (s < 3) throw ValidationError("input_size too small for the stem");
  s = (s - 1) / 2 + 1;  // 3x3 stride-2 max pool, pad 1
  trace.push_back(s);
  for (std::size_t b = 0; b + 1 < cfg.block_sizes.size(); ++b) {
    if (s % 2 != 0)
      throw ValidationError("transition " + std::to_string(b + 1) + " sees odd spatial size " +
                            std::to_string(s));
    s /= 2;
    trace.push_back(s);
  }
  if (s < 1) throw ValidationError("spatial size underflow");
  return trace;
}

const char* kind_str(LayerKind k) {
  switch (k) {
    case LayerKind::kStem: return "stem";
    case LayerKind::kBottleneck: return "bottleneck";
    case LayerKind::kTransition: return "transition";
    case LayerKind::kGlobalPool: return "global_pool";
    case LayerKind::kClassifier: return "classifier";
  }
  return "?";
}

}  // namespace

void validate(const ArchConfig& cfg) {
  if (cfg.block_sizes.empty() || cfg.block_sizes.size() > 4)
    throw ValidationError("block_sizes must list 1..4 blocks");
  for (i64 b : cfg.block_sizes)
    if (b < 1) throw ValidationError("every dense block needs at least one layer");
  if (cfg.growth < 1) throw ValidationError("growth rate must be positive");
  if (!(cfg.compression > 0.0) || cfg.compression > 1.0)
    throw ValidationError("compression must be in (0,1]");
  if (cfg.stem_channels < 1) throw ValidationError("stem_channels must be positive");
  if (cfg.num_classes < 1) throw ValidationError("num_classes must be positive");
  if (cfg.input_size < 1) throw ValidationError("input_size must be positive");
  spatial_trace(cfg);
  i64 c = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.block_sizes.size(); ++b) {
    c += cfg.block_sizes[b] * cfg.growth;
    if (b + 1 < cfg.block_sizes.size()) {
      c = compressed(c, cfg.compression);
      if (c < 1) throw ValidationError("compression drives channels to zero");
    }
  }
  if (cfg.freeze) {
    const auto [fb, fl] = *cfg.freeze;
    if (fb < 1 || fb > static_cast<int>(cfg.block_sizes.size()) || fl < 1 ||
        fl > cfg.block_sizes[fb - 1])
      throw ValidationError("freeze boundary (" + std::to_string(fb) + "," + std::to_string(fl) +
                            ") names no dense layer");
  }
}

LayerPlan plan_architecture(const ArchConfig& cfg) {
  validate(cfg);
  const int nb = static_cast<int>(cfg.block_sizes.size());
  auto frozen = [&](int b, int j) {
    if (!cfg.freeze) return false;
    const auto [fb, fl] = *cfg.freeze;
    if (b == 0) return true;                      // stem (b==0) precedes every boundary
    if (j == 0) return b < fb;                    // transition after block b
    return b < fb || (b == fb && j < fl);         // dense layer j of block b
  };

  LayerPlan plan;
  i64 c = cfg.stem_channels;
  plan.push_back({"conv1", LayerKind::kStem, 3, c, !frozen(0, 0)});
  for (int b = 1; b <= nb; ++b) {
    for (int j = 1; j <= cfg.block_sizes[b - 1]; ++j) {
      std::string name = "concat_" + std::to_string(b + 1) + "_" + std::to_string(j);
      plan.push_back({name, LayerKind::kBottleneck, c, c + cfg.growth, !frozen(b, j)});
      c += cfg.growth;
    }
    if (b < nb) {
      i64 cc = compressed(c, cfg.compression);
      plan.push_back(
          {"transition_" + std::to_string(b), LayerKind::kTransition, c, cc, !frozen(b, 0)});
      c = cc;
    }
  }
  plan.push_back({"pool5", LayerKind::kGlobalPool, c, c, true});
  plan.push_back({"fc", LayerKind::kClassifier, c, cfg.num_classes, true});
  return plan;
}

std::string plan_table(const LayerPlan& plan) {
  std::ostringstream os;
  os << "name             kind         in    out   trainable\n";
  for (const auto& r : plan) {
    os << r.name;
    for (std::size_t i = r.name.size(); i < 17; ++i) os << ' ';
    std::string k = kind_str(r.kind);
    os << k;
    for (std::size_t i = k.size(); i < 13; ++i) os << ' ';
    std::string in = std::to_string(r.in_channels), out = std::to_string(r.out_channels);
    os << in;
    for (std::size_t i = in.size(); i < 6; ++i) os << ' ';
    os << out;
    for (std::size_t i = out.size(); i < 6; ++i) os << ' ';
    os << (r.trainable ? "yes" : "no") << "\n";
  }
  return os.str();
}

std::int64_t conv_layer_count(const LayerPlan& plan) {
  i64 n = 0;
  for (const auto& r : plan) {
    if (r.kind == LayerKind::kStem || r.kind == LayerKind::kTransition) n += 1;
    if (r.kind == LayerKind::kBottleneck) n += 2;
  }
  return n;
}

std::int64_t feature_dim(const LayerPlan& plan) {
  for (const auto& r : plan)
    if (r.kind == LayerKind::kGlobalPool) return r.out_channels;
  throw Error("plan has no global pool record");
}

DenseNet::DenseNet(const ArchConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), plan_(plan_architecture(cfg)) {
  const i64 k = cfg_.growth;
  i64 c = cfg_.stem_channels;
  stem_conv_ = zeros<float>({c, 3, 7, 7}, true);
  stem_bn_ = make_batch_norm<float>(c);
  for (std::size_t b = 0; b < cfg_.block_sizes.size(); ++b) {
    std::vector<Bottleneck> block;
    for (i64 j = 0; j < cfg_.block_sizes[b]; ++j) {
      Bottleneck l;
      l.bn1 = make_batch_norm<float>(c);
      l.conv1 = zeros<float>({4 * k, c, 1, 1}, true);
      l.bn2 = make_batch_norm<float>(4 * k);
      l.conv2 = zeros<float>({k, 4 * k, 3, 3}, true);
      block.push_back(std::move(l));
      c += k;
    }
    blocks_.push_back(std::move(block));
    if (b + 1 < cfg_.block_sizes.size()) {
      Transition t;
      t.bn = make_batch_norm<float>(c);
      i64 cc = compressed(c, cfg_.compression);
      t.conv = zeros<float>({cc, c, 1, 1}, true);
      transitions_.push_back(std::move(t));
      c = cc;
    }
  }
  final_bn_ = make_batch_norm<float>(c);
  fc_w_ = zeros<float>({cfg_.num_classes, c}, true);
  fc_b_ = zeros<float>({cfg_.num_classes}, true);
  init_all(seed, false);
  apply_freeze();
}

void DenseNet::init_all(std::uint64_t seed, bool trainable_only) {
  Rng root(seed);
  auto conv_init = [&](const TensorPtr& w, const std::string& name) {
    if (trainable_only && !w->requires_grad) return;
    Rng r = root.fork(name);
    i64 fan_in = w->shape.size() == 4 ? w->shape[1] * w->shape[2] * w->shape[3] : w->shape[1];
    he_init_into(*w, fan_in, r);
  };
  auto bn_init = [&](BatchNorm& bn) {
    if (trainable_only && !bn.gamma->requires_grad) return;
    std::fill(bn.gamma->data.begin(), bn.gamma->data.end(), 1.0f);
    std::fill(bn.beta->data.begin(), bn.beta->data.end(), 0.0f);
    std::fill(bn.running_mean->data.begin(), bn.running_mean->data.end(), 0.0f);
    std::fill(bn.running_var->data.begin(), bn.running_var->data.end(), 1.0f);
  };
  conv_init(stem_conv_, "conv1.weight");
  bn_init(stem_bn_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t j = 0; j < blocks_[b].size(); ++j) {
      auto& l = blocks_[b][j];
      std::string base = "concat_" + std::to_string(b + 2) + "_" + std::to_string(j + 1);
      bn_init(l.bn1);
      conv_init(l.conv1, base + ".conv1.weight");
      bn_init(l.bn2);
      conv_init(l.conv2, base + ".conv2.weight");
    }
    if (b < transitions_.size()) {
      bn_init(transitions_[b].bn);
      conv_init(transitions_[b].conv, "transition_" + std::to_string(b + 1) + ".conv.weight");
    }
  }
  bn_init(final_bn_);
  conv_init(fc_w_, "fc.weight");
  if (!trainable_only || fc_b_->requires_grad)
    std::fill(fc_b_->data.begin(), fc_b_->data.end(), 0.0f);
}

void DenseNet::apply_freeze() {
  std::map<std::string, bool> trainable;
  for (const auto& r : plan_) trainable[r.name] = r.trainable;
  auto set_bn = [](BatchNorm& bn, bool t) {
    bn.gamma->requires_grad = t;
    bn.beta->requires_grad = t;
  };
  stem_conv_->requires_grad = trainable["conv1"];
  set_bn(stem_bn_, trainable["conv1"]);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t j = 0; j < blocks_[b].size(); ++j) {
      bool t = trainable["concat_" + std::to_string(b + 2) + "_" + std::to_string(j + 1)];
      auto& l = blocks_[b][j];
      set_bn(l.bn1, t);
      l.conv1->requires_grad = t;
      set_bn(l.bn2, t);
      l.conv2->requires_grad = t;
    }
    if (b < transitions_.size()) {
      bool t = trainable["transition_" + std::to_string(b + 1)];
      set_bn(transitions_[b].bn, t);
      transitions_[b].conv->requires_grad = t;
    }
  }
  set_bn(final_bn_, trainable["pool5"]);
  fc_w_->requires_grad = trainable["fc"];
  fc_b_->requires_grad = trainable["fc"];
}

DenseNet::Output DenseNet::forward(const TensorPtr& x, Mode mode, Tape* tape) {
  if (x->shape.size() != 4 || x->shape[1] != 3 || x->shape[2] != cfg_.input_size ||
      x->shape[3] != cfg_.input_size)
    throw ShapeError("forward: expected [N,3," + std::to_string(cfg_.input_size) + "," +
                     std::to_string(cfg_.input_size) + "], got " + shape_str(x->shape));
  auto t = conv2d(x, stem_conv_, 2, 3, tape);
  t = batch_norm(t, stem_bn_, mode, tape);
  t = relu(t, tape);
  t = max_pool2d(t, 3, 2, 1, tape);
  if (probe) probe("conv1", t);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t j = 0; j < blocks_[b].size(); ++j) {
      auto& l = blocks_[b][j];
      auto u = batch_norm(t, l.bn1, mode, tape);
      u = relu(u, tape);
      u = conv2d(u, l.conv1, 1, 0, tape);
      u = batch_norm(u, l.bn2, mode, tape);
      u = relu(u, tape);
      u = conv2d(u, l.conv2, 1, 1, tape);
      t = concat_channels<float>({t, u}, tape);
      if (probe) probe("concat_" + std::to_string(b + 2) + "_" + std::to_string(j + 1), t);
    }
    if (b < transitions_.size()) {
      auto& tr = transitions_[b];
      t = batch_norm(t, tr.bn, mode, tape);
      t = relu(t, tape);
      t = conv2d(t, tr.conv, 1, 0, tape);
      t = avg_pool2x2(t, tape);
      if (probe) probe("transition_" + std::to_string(b + 1), t);
    }
  }
  t = batch_norm(t, final_bn_, mode, tape);
  t = relu(t, tape);
  auto features = global_avg_pool(t, tape);
  if (probe) probe("pool5", features);
  auto logits = linear(features, fc_w_, fc_b_, tape);
  if (probe) probe("fc", logits);
  return {logits, features};
}

void DenseNet::for_each_tensor(
    const std::function<void(const std::string&, const TensorPtr&, bool)>& fn) const {
  auto bn = [&](const std::string& base, const BatchNorm& p) {
    fn(base + ".gamma", p.gamma, true);
    fn(base + ".beta", p.beta, true);
    fn(base + ".mean", p.running_mean, false);
    fn(base + ".var", p.running_var, false);
  };
  fn("conv1.weight", stem_conv_, true);
  bn("conv1.bn", stem_bn_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t j = 0; j < blocks_[b].size(); ++j) {
      const auto& l = blocks_[b][j];
      std::string base = "concat_" + std::to_string(b + 2) + "_" + std::to_string(j + 1);
      bn(base + ".bn1", l.bn1);
      fn(base + ".conv1.weight", l.conv1, true);
      bn(base + ".bn2", l.bn2);
      fn(base + ".conv2.weight", l.conv2, true);
    }
    if (b < transitions_.size()) {
      std::string base = "transition_" + std::to_string(b + 1);
      bn(base + ".bn", transitions_[b].bn);
      fn(base + ".conv.weight", transitions_[b].conv, true);
    }
  }
  bn("pool5.bn", final_bn_);
  fn("fc.weight", fc_w_, true);
  fn("fc.bias", fc_b_, true);
}

std::vector<std::pair<std::string, TensorPtr>> DenseNet::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for_each_tensor([&](const std::string& n, const TensorPtr& t, bool param) {
    if (param) out.emplace_back(n, t);
  });
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> DenseNet::named_state() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for_each_tensor([&](const std::string& n, const TensorPtr& t, bool) { out.emplace_back(n, t); });
  return out;
}

ImportReport DenseNet::import_weights(
    const std::vector<std::pair<std::string, TensorPtr>>& tensors,
    const std::vector<std::pair<std::string, std::string>>& name_map) {
  std::map<std::string, TensorPtr> state;
  for (auto& [n, t] : named_state()) state[n] = t;

  ImportReport rep;
  std::vector<std::pair<TensorPtr, TensorPtr>> copies;  // dst, src
  std::vector<std::string> mismatched;
  std::set<std::string> hit;
  for (const auto& [raw_name, src] : tensors) {
    std::string name = raw_name;
    for (const auto& [from, to] : name_map)
      if (from == raw_name) {
        name = to;
        break;
      }
    auto it = state.find(name);
    if (it == state.end()) {
      rep.skipped.push_back(raw_name);
      continue;
    }
    if (it->second->shape != src->shape) {
      mismatched.push_back(name + ": model " + shape_str(it->second->shape) + " vs checkpoint " +
                           shape_str(src->shape));
      continue;
    }
    rep.matched.push_back(name);
    copies.emplace_back(it->second, src);
    hit.insert(name);
  }
  if (!mismatched.empty()) {
    std::string msg = "import_weights: shape mismatch on";
    for (const auto& m : mismatched) msg += " [" + m + "]";
    throw ValidationError(msg);
  }
  for (auto& [dst, src] : copies) dst->data = src->data;
  rep.untouched = static_cast<i64>(state.size() - hit.size());
  return rep;
}

void DenseNet::reinitialize_trainable(std::uint64_t seed) {
  if (!cfg_.freeze) throw ValidationError("reinitialize_trainable requires a freeze boundary");
  init_all(seed, true);
}

}  // namespace dcnet
