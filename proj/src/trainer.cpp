#include "refineseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "refineseg/evaluator.hpp"
#include "refineseg/random.hpp"

namespace refineseg {

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidArgument, "train config: " + msg);
  };
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(sigma > 0.0)) bad("sigma must be positive");
  if (!(deep_supervision_weight >= 0.0)) bad("deep supervision weight must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) bad("threshold must lie in (0,1)");
  if (max_seeds_per_class < 1) bad("max_seeds_per_class must be >= 1");
  if (backbone_only_epochs < 0) bad("backbone_only_epochs must be >= 0");
  if (!(reference_seed_fraction >= 0.0 && reference_seed_fraction <= 1.0)) {
    bad("reference_seed_fraction must lie in [0,1]");
  }
  if (max_reference_shift < 0) bad("max_reference_shift must be >= 0");
}

NetConfig TrainConfig::net_config(int input_size) const {
  NetConfig n;
  n.backbone_kind = backbone_kind;
  n.base_channels = base_channels;
  n.input_size = input_size;
  n.validate();
  return n;
}

BinaryMask downsample_max(const BinaryMask& mask) {
  BinaryMask out(mask.height / 2, mask.width / 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      out.at(r, c) = mask.at(2 * r, 2 * c) | mask.at(2 * r, 2 * c + 1) |
                     mask.at(2 * r + 1, 2 * c) | mask.at(2 * r + 1, 2 * c + 1);
    }
  }
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x7F4A7C15ULL;
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 29;
  return x;
}

Tensor stack_masks(std::span<const BinaryMask> masks) {
  const int h = masks[0].height, w = masks[0].width;
  Tensor t({static_cast<int>(masks.size()), 1, h, w});
  size_t o = 0;
  for (const auto& m : masks) {
    for (auto v : m.values) t[o++] = v;
  }
  return t;
}

BinaryMask shifted(const BinaryMask& m, int dy, int dx) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      const int sr = r - dy, sc = c - dx;
      if (sr >= 0 && sr < m.height && sc >= 0 && sc < m.width) {
        out.at(r, c) = m.at(sr, sc);
      }
    }
  }
  return out;
}

}  // namespace

SeedSet sample_training_seeds(const BinaryMask& pred, const BinaryMask& gt,
                              const TrainConfig& config, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  SeedSet seeds;
  if (rng.uniform() < config.reference_seed_fraction) {
    const int span = 2 * config.max_reference_shift + 1;
    const int dy = static_cast<int>(rng.below(span)) - config.max_reference_shift;
    const int dx = static_cast<int>(rng.below(span)) - config.max_reference_shift;
    seeds = seeds_from_reference_slice(shifted(gt, dy, dx));
  } else {
    seeds = generate_training_seeds(pred, gt, config.min_region);
  }
  return subsample_seeds(seeds, config.max_seeds_per_class, rng.below(1ULL << 62));
}

Trainer::Trainer(const TrainConfig& config, int input_size)
    : Trainer(config, config.net_config(input_size),
              init_params(config.net_config(input_size), config.rng_seed)) {}

Trainer::Trainer(const TrainConfig& config, NetConfig net, ModelParams params)
    : config_(config),
      net_(net),
      params_(std::move(params)),
      adam_(params_, AdamConfig{.lr = config.lr}) {
  config_.validate();
  net_.validate();
  check_params(net_, params_);
}

SeedSet Trainer::training_seeds(const Sample& sample,
                                std::uint64_t subsample_seed) const {
  const RefineNet net(net_, params_);
  const MultiScaleSeg seg = net.backbone_forward(sample.image);
  const BinaryMask pred = binarize(seg.full, config_.threshold);
  return sample_training_seeds(pred, sample.mask, config_, subsample_seed);
}

double Trainer::loss_and_grad(const ModelParams& params, std::span<const Sample> batch,
                              std::span<const SeedSet> seeds, ModelParams* grad,
                              bool include_refinement) const {
  if (include_refinement && seeds.size() != batch.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one seed set per sample required");
  }
  return compute(params, batch, include_refinement, seeds, nullptr, 0, grad);
}

double Trainer::compute(const ModelParams& params, std::span<const Sample> batch,
                        bool include_refinement, std::span<const SeedSet> given,
                        std::vector<SeedSet>* generated, std::uint64_t seed_base,
                        ModelParams* grad) const {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  const int s = net_.input_size;
  const int n = static_cast<int>(batch.size());
  Tensor images({n, 1, s, s});
  std::vector<BinaryMask> full, half, quarter;
  for (int i = 0; i < n; ++i) {
    const Sample& smp = batch[i];
    validate_image(smp.image);
    require_same_shape(smp.image, smp.mask, "train sample");
    if (smp.image.height != s || smp.image.width != s) {
      throw Error(ErrorCode::kShapeMismatch,
                  "train sample is " + shape_string(smp.image.height, smp.image.width) +
                      ", network expects " + shape_string(s, s));
    }
    if (!given.empty() && given.size() != batch.size()) {
      throw Error(ErrorCode::kInvalidArgument, "one seed set per sample required");
    }
    std::copy(smp.image.values.begin(), smp.image.values.end(),
              images.ptr() + static_cast<size_t>(i) * s * s);
    full.push_back(smp.mask);
    half.push_back(downsample_max(full.back()));
    quarter.push_back(downsample_max(half.back()));
  }
  ad::Tape tape;
  const auto p = graph::bind(tape, params, grad != nullptr);
  const auto side = graph::backbone(net_, p, tape.constant(std::move(images)));
  ad::Var deep = ad::add(ad::add(ad::bce_loss(side.full, stack_masks(full)),
                                 ad::bce_loss(side.half, stack_masks(half))),
                         ad::bce_loss(side.quarter, stack_masks(quarter)));
  ad::Var loss = ad::scale(deep, config_.deep_supervision_weight);
  if (include_refinement) {
    // Seeds are input construction: computed from the forward values, never
    // differentiated.
    if (generated) {
      for (int i = 0; i < n; ++i) {
        const BinaryMask pred =
            binarize(prob_map_from(side.full.value(), i), config_.threshold);
        generated->push_back(
            sample_training_seeds(pred, full[i], config_, mix(seed_base, i)));
      }
      given = *generated;
    }
    Tensor seed_maps({n, 2, s, s});
    for (int i = 0; i < n; ++i) {
      const SeedChannels ch = render_seeds(given[i], s, s, config_.sigma);
      std::copy(ch.foreground.values.begin(), ch.foreground.values.end(),
                seed_maps.ptr() + static_cast<size_t>(2 * i) * s * s);
      std::copy(ch.background.values.begin(), ch.background.values.end(),
                seed_maps.ptr() + static_cast<size_t>(2 * i + 1) * s * s);
    }
    const ad::Var refined =
        graph::refine(net_, p, side, tape.constant(std::move(seed_maps)));
    loss = ad::add(ad::bce_loss(refined, stack_masks(full)), loss);
  }
  const double value = loss.value()[0];
  if (grad) {
    tape.backward(loss);
    for (auto& e : grad->entries()) e.value = p.at(e.name).grad();
  }
  return value;
}

StepResult Trainer::step(std::span<const Sample> batch) {
  StepResult result;
  const long step_index = adam_.steps();
  ModelParams grad = params_.zeros_like();
  result.loss = compute(params_, batch, refine_enabled_, {}, &result.seeds,
                        mix(config_.rng_seed, step_index), &grad);
  if (!std::isfinite(result.loss) || !grad.all_finite()) {
    throw Error(ErrorCode::kNumeric,
                "training diverged at step " + std::to_string(step_index));
  }
  adam_.step(params_, grad);
  if (!params_.all_finite()) {
    throw Error(ErrorCode::kNumeric,
                "non-finite parameters after step " + std::to_string(step_index));
  }
  return result;
}

StepResult train_step(Trainer& trainer, const Image& image, const BinaryMask& gt) {
  const Sample sample{image, gt};
  return trainer.step(std::span<const Sample>(&sample, 1));
}

std::vector<CaseResult> evaluate_with_oracle_seeds(const RefineNet& net,
                                                   std::span<const Sample> samples,
                                                   const TrainConfig& config) {
  std::vector<CaseResult> out;
  const int s = net.config().input_size;
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& smp = samples[i];
    const MultiScaleSeg seg = net.backbone_forward(smp.image);
    const BinaryMask pred = binarize(seg.full, config.threshold);
    CaseResult r;
    r.seeds = subsample_seeds(
        generate_training_seeds(pred, smp.mask, config.min_region),
        config.max_seeds_per_class, mix(config.rng_seed ^ 0xE7A1ULL, i));
    const ProbMap refined =
        net.refine_forward(seg, render_seeds(r.seeds, s, s, config.sigma));
    r.dice_backbone = metrics(pred, smp.mask).dice;
    r.dice_refined = metrics(binarize(refined, config.threshold), smp.mask).dice;
    out.push_back(std::move(r));
  }
  return out;
}

FitResult fit(std::span<const Sample> train, std::span<const Sample> validation,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "fit: empty dataset");
  config.validate();
  const int size = train[0].image.height;
  for (const auto& s : train) {
    if (s.image.height != size || s.image.width != size) {
      throw Error(ErrorCode::kShapeMismatch,
                  "fit: all training images must be " + shape_string(size, size));
    }
  }
  if (validation.empty()) validation = train.first(std::min<size_t>(train.size(), 50));

  Trainer trainer(config, size);
  FitResult result;
  result.net = trainer.net_config();
  std::vector<size_t> order(train.size());
  std::vector<Sample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    trainer.set_refinement_enabled(epoch >= config.backbone_only_epochs);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(mix(config.rng_seed, 0xF17ULL + epoch));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const size_t end = std::min(order.size(), start + config.batch_size);
      for (size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      loss_sum += trainer.step(batch).loss;
      ++batches;
    }
    const RefineNet net(trainer.net_config(), trainer.params());
    const auto cases = evaluate_with_oracle_seeds(net, validation, config);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / batches;
    for (const auto& c : cases) {
      rec.dice_backbone += c.dice_backbone;
      rec.dice_refined += c.dice_refined;
    }
    rec.dice_backbone /= static_cast<double>(cases.size());
    rec.dice_refined /= static_cast<double>(cases.size());
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.params = trainer.params();
  return result;
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["dice_backbone"] = r.dice_backbone;
  j["dice_refined"] = r.dice_refined;
  return j.dump();
}

}  // namespace refineseg
