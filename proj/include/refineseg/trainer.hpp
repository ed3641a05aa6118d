#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "refineseg/data.hpp"
#include "refineseg/nets.hpp"
#include "refineseg/optim.hpp"
#include "refineseg/seedgen.hpp"

namespace refineseg {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double lr = 1e-3;
  double sigma = kDefaultSigma;
  // Weight of the side-output (deep supervision) losses.
  double deep_supervision_weight = 0.5;
  double threshold = 0.5;
  std::uint64_t rng_seed = 0;
  BackboneKind backbone_kind = BackboneKind::kUnet;
  int base_channels = 8;
  int min_region = kDefaultMinRegion;
  int max_seeds_per_class = kDefaultMaxSeedsPerClass;
  // Staged schedule: for the first N epochs only the backbone side outputs
  // are trained. 0 trains everything jointly from the start.
  int backbone_only_epochs = 0;
  // Fraction of samples whose seeds are instead derived like a propagation
  // step: skeleton and dilation ring of the ground truth shifted by up to
  // max_reference_shift pixels. 0 uses error-region seeds only.
  double reference_seed_fraction = 0.25;
  int max_reference_shift = 2;

  void validate() const;
  NetConfig net_config(int input_size) const;
};

struct StepResult {
  double loss = 0.0;
  // Seeds used for each sample of the batch, in batch order.
  std::vector<SeedSet> seeds;
};

// Owns parameters and optimizer state. One step in flight at a time.
class Trainer {
 public:
  Trainer(const TrainConfig& config, int input_size);
  Trainer(const TrainConfig& config, NetConfig net, ModelParams params);

  // Backbone forward, seed generation from the binarized 1x output, seed
  // rendering, refinement forward, joint loss, one Adam update over all
  // parameters. Seeds are treated as constant inputs.
  StepResult step(std::span<const Sample> batch);

  // Loss and gradient for a batch with the given seeds, without updating.
  // Used by the gradient check and by step().
  double loss_and_grad(const ModelParams& params, std::span<const Sample> batch,
                       std::span<const SeedSet> seeds, ModelParams* grad,
                       bool include_refinement = true) const;

  // Seeds the current network would be trained with for `sample`.
  SeedSet training_seeds(const Sample& sample, std::uint64_t subsample_seed) const;

  const ModelParams& params() const { return params_; }
  const NetConfig& net_config() const { return net_; }
  const TrainConfig& config() const { return config_; }
  long steps_taken() const { return adam_.steps(); }
  void set_refinement_enabled(bool on) { refine_enabled_ = on; }

 private:
  double compute(const ModelParams& params, std::span<const Sample> batch,
                 bool include_refinement, std::span<const SeedSet> given,
                 std::vector<SeedSet>* generated, std::uint64_t seed_base,
                 ModelParams* grad) const;

  TrainConfig config_;
  NetConfig net_;
  ModelParams params_;
  Adam adam_;
  bool refine_enabled_ = true;
};

// Seeds for one training sample: error-region skeletons from the prediction
// against the ground truth, or with probability reference_seed_fraction the
// propagation-style seeds of a shifted ground truth. Capped per class.
SeedSet sample_training_seeds(const BinaryMask& pred, const BinaryMask& gt,
                              const TrainConfig& config, std::uint64_t rng_seed);

// Single-sample convenience wrapper.
StepResult train_step(Trainer& trainer, const Image& image, const BinaryMask& gt);

struct CaseResult {
  double dice_backbone = 0.0;
  double dice_refined = 0.0;
  SeedSet seeds;
};

// Backbone-only and refined Dice per sample, with oracle seeds generated from
// each sample's ground truth exactly as during training.
std::vector<CaseResult> evaluate_with_oracle_seeds(const RefineNet& net,
                                                   std::span<const Sample> samples,
                                                   const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double dice_backbone = 0.0;
  double dice_refined = 0.0;
};

struct FitResult {
  NetConfig net;
  ModelParams params;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains for config.epochs over `train`; validation Dice is measured on
// `validation`, or on up to 50 training samples when it is empty.
FitResult fit(std::span<const Sample> train, std::span<const Sample> validation,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

std::string epoch_record_json(const EpochRecord& record);

// 2x block max-pooling of a mask.
BinaryMask downsample_max(const BinaryMask& mask);

}  // namespace refineseg
