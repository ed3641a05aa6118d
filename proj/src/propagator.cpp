#include "refineseg/propagator.hpp"

#include <exception>
#include <thread>

namespace refineseg {

namespace {

void sweep(const RefineNet& net, const ImageVolume& volume, int ref_index, int dir,
           const PropagateConfig& config, MaskVolume& out) {
  const int n = static_cast<int>(volume.size());
  const int h = volume[0].height, w = volume[0].width;
  bool stopped = false;
  for (int j = ref_index + dir; j >= 0 && j < n; j += dir) {
    if (stopped) {
      out[j] = BinaryMask(h, w);
      continue;
    }
    SeedSet seeds = seeds_from_reference_slice(out[j - dir], config.dilation_radius);
    if (config.max_seeds_per_class > 0) {
      seeds = subsample_seeds(seeds, config.max_seeds_per_class,
                              static_cast<std::uint64_t>(j));
    }
    const MultiScaleSeg seg = net.backbone_forward(volume[j]);
    const ProbMap refined = net.refine_forward(seg, render_seeds(seeds, h, w, config.sigma));
    out[j] = binarize(refined, config.threshold);
    stopped = out[j].count() == 0;
  }
}

}  // namespace

MaskVolume propagate(const RefineNet& net, const ImageVolume& volume, int ref_index,
                     const BinaryMask& ref_mask, const PropagateConfig& config) {
  validate_volume(volume);
  const int n = static_cast<int>(volume.size());
  if (ref_index < 0 || ref_index >= n) {
    throw Error(ErrorCode::kOutOfRange,
                "reference index " + std::to_string(ref_index) + " outside [0," +
                    std::to_string(n - 1) + "]");
  }
  require_same_shape(volume[0], ref_mask, "propagate reference mask");
  validate_mask(ref_mask);
  MaskVolume out(volume.size());
  out[ref_index] = ref_mask;
  if (config.parallel) {
    // The directions touch disjoint slices of `out`.
    std::exception_ptr failure;
    std::thread up([&] {
      try {
        sweep(net, volume, ref_index, -1, config, out);
      } catch (...) {
        failure = std::current_exception();
      }
    });
    try {
      sweep(net, volume, ref_index, +1, config, out);
    } catch (...) {
      up.join();
      throw;
    }
    up.join();
    if (failure) std::rethrow_exception(failure);
  } else {
    sweep(net, volume, ref_index, -1, config, out);
    sweep(net, volume, ref_index, +1, config, out);
  }
  return out;
}

MaskVolume backbone_only(const RefineNet& net, const ImageVolume& volume,
                         double threshold) {
  MaskVolume out;
  for (const auto& slice : volume) {
    out.push_back(binarize(net.backbone_forward(slice).full, threshold));
  }
  return out;
}

}  // namespace refineseg
