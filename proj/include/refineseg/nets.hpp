#pragma once

// Two-part refinement network.
//
// The backbone is a small encoder-decoder (U-Net with skip concatenations,
// or an FCN-style decoder without them) whose last three decoder levels each
// emit a sigmoid 1x1-conv side output at 0.25x, 0.5x and 1x of the input.
// The refinement head concatenates each side output with the seed channels
// resized to that scale, and merges the scales coarse to fine with 2x2
// transposed convolutions. Its output is added to the backbone's full-scale
// logit, so with no seeds the head only has to learn a small correction.

#include <cstdint>
#include <map>
#include <string>

#include "refineseg/autodiff.hpp"
#include "refineseg/imgcore.hpp"

namespace refineseg {

enum class BackboneKind { kUnet, kFcn };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& text);

struct NetConfig {
  BackboneKind backbone_kind = BackboneKind::kUnet;
  int base_channels = 8;
  // Number of encoder resolution levels; the coarsest is the bottleneck.
  int depth = 3;
  int input_size = 64;
  int head_channels = 8;

  // Throws when the configuration cannot produce the 1x/0.5x/0.25x ladder.
  void validate() const;
};

struct MultiScaleSeg {
  ProbMap full;
  ProbMap half;
  ProbMap quarter;
};

// Fresh parameters: Kaiming-uniform weights, zero biases.
ModelParams init_params(const NetConfig& config, std::uint64_t seed);

// Recovers the configuration from parameter names and shapes (checkpoints
// carry no other metadata).
NetConfig infer_config(const ModelParams& params);

// Throws unless `params` has exactly the names and shapes `config` needs.
void check_params(const NetConfig& config, const ModelParams& params);

namespace graph {

using ParamVars = std::map<std::string, ad::Var>;

// Leaves (trainable) or constants (inference) for every parameter.
ParamVars bind(ad::Tape& tape, const ModelParams& params, bool trainable);

struct SideOutputs {
  ad::Var full;     // (N,1,S,S)
  ad::Var half;     // (N,1,S/2,S/2)
  ad::Var quarter;  // (N,1,S/4,S/4)
};

// images: (N,1,S,S).
SideOutputs backbone(const NetConfig& config, const ParamVars& p, ad::Var images);

// seeds: (N,2,S,S), channel 0 foreground, channel 1 background.
ad::Var refine(const NetConfig& config, const ParamVars& p,
               const SideOutputs& seg, ad::Var seeds);

}  // namespace graph

// Frozen network for inference. Safe to share across threads.
class RefineNet {
 public:
  RefineNet(NetConfig config, ModelParams params);

  const NetConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }

  MultiScaleSeg backbone_forward(const Image& image) const;
  ProbMap refine_forward(const MultiScaleSeg& seg, const SeedChannels& seeds) const;

 private:
  NetConfig config_;
  ModelParams params_;
};

// Tensor packing helpers.
Tensor image_tensor(const Image& image);
Tensor seed_tensor(const SeedChannels& seeds);
ProbMap prob_map_from(const Tensor& t, int batch_index = 0);

// pixel = 1 iff p >= threshold; threshold must lie in (0,1).
BinaryMask binarize(const ProbMap& p, double threshold);

// u = 1 - |2p - 1|.
Image difficulty_map(const ProbMap& p);

}  // namespace refineseg
