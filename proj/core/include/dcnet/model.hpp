#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "dcnet/nn.hpp"

namespace dcnet {

// Reduced DenseNet-BC: a 7x7/2 stem, dense blocks of bottleneck layers
// joined by compressing transitions, then BN-ReLU, global average pooling
// and a linear classifier.
struct ArchConfig {
  std::vector<std::int64_t> block_sizes{6, 12, 11};
  std::int64_t growth = 32;          // channels added per dense layer
  double compression = 0.5;          // transition channel factor
  std::int64_t stem_channels = 64;   // 2 * growth
  std::int64_t num_classes = 7;
  std::int64_t input_size = 224;
  // (block, layer), both 1-based; that dense layer and everything after it
  // train, everything before is frozen. Unset trains the whole net.
  std::optional<std::pair<int, int>> freeze = std::make_pair(3, 6);
};

void validate(const ArchConfig& cfg);

enum class LayerKind { kStem, kBottleneck, kTransition, kGlobalPool, kClassifier };

struct LayerRecord {
  std::string name;
  LayerKind kind;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  bool trainable = true;
};
using LayerPlan = std::vector<LayerRecord>;

// Dense layer j of block b is named concat_{b+1}_{j}; the stem is conv1,
// transitions transition_{b}, the final pool pool5, the classifier fc.
LayerPlan plan_architecture(const ArchConfig& cfg);

std::string plan_table(const LayerPlan& plan);
std::int64_t conv_layer_count(const LayerPlan& plan);
std::int64_t feature_dim(const LayerPlan& plan);  // classifier input width

struct ImportReport {
  std::vector<std::string> matched;
  std::vector<std::string> skipped;  // checkpoint names with no model tensor
  std::int64_t untouched = 0;        // model tensors the checkpoint never named
};

class DenseNet {
 public:
  DenseNet(const ArchConfig& cfg, std::uint64_t seed);

  struct Output {
    TensorPtr logits;    // [N, num_classes]
    TensorPtr features;  // [N, feature_dim], the pool5 vector
  };
  Output forward(const TensorPtr& x, Mode mode, Tape* tape = nullptr);

  const ArchConfig& config() const { return cfg_; }
  const LayerPlan& plan() const { return plan_; }
  std::int64_t feature_dim() const { return dcnet::feature_dim(plan_); }

  // Trainable and frozen parameters, plan order. Running stats excluded.
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
  // Parameters plus BN running statistics: everything a checkpoint carries.
  std::vector<std::pair<std::string, TensorPtr>> named_state() const;

  // Copies every name both sides know after shape-checking it; name_map
  // renames checkpoint tensors first. Any shape mismatch is an error.
  ImportReport import_weights(
      const std::vector<std::pair<std::string, TensorPtr>>& tensors,
      const std::vector<std::pair<std::string, std::string>>& name_map = {});

  // Re-draws every trainable parameter (He for conv/linear weights, affine
  // identity for BN) and resets trainable-layer running stats.
  void reinitialize_trainable(std::uint64_t seed);

  // When set, called with each plan layer's name and output during forward.
  std::function<void(const std::string&, const TensorPtr&)> probe;

 private:
  struct Bottleneck {
    BatchNorm bn1;
    TensorPtr conv1;  // [4k, C, 1, 1]
    BatchNorm bn2;
    TensorPtr conv2;  // [k, 4k, 3, 3]
  };
  struct Transition {
    BatchNorm bn;
    TensorPtr conv;  // [floor(theta*C), C, 1, 1]
  };

  void init_all(std::uint64_t seed, bool trainable_only);
  void apply_freeze();
  void for_each_tensor(
      const std::function<void(const std::string&, const TensorPtr&, bool param)>& fn) const;

  ArchConfig cfg_;
  LayerPlan plan_;
  TensorPtr stem_conv_;
  BatchNorm stem_bn_;
  std::vector<std::vector<Bottleneck>> blocks_;
  std::vector<Transition> transitions_;
  BatchNorm final_bn_;
  TensorPtr fc_w_, fc_b_;
};

}  // namespace dcnet
