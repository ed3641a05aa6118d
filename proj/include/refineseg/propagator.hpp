#pragma once

#include "refineseg/data.hpp"
#include "refineseg/nets.hpp"
#include "refineseg/seedgen.hpp"

namespace refineseg {

struct PropagateConfig {
  double sigma = kDefaultSigma;
  double threshold = 0.5;
  int dilation_radius = kDefaultDilationRadius;
  // Seeds per class after subsampling; <= 0 keeps every seed.
  int max_seeds_per_class = 0;
  // Run the two directions on separate threads.
  bool parallel = false;
};

// Segments every slice outward from `ref_index`. Slice j is refined with
// seeds derived from the result of its already-segmented neighbour (j+1 when
// moving down, j-1 when moving up). The reference slice is copied verbatim;
// once a direction yields an empty mask the rest of that direction is empty.
MaskVolume propagate(const RefineNet& net, const ImageVolume& volume, int ref_index,
                     const BinaryMask& ref_mask, const PropagateConfig& config = {});

// Per-slice binarized backbone output, for comparison.
MaskVolume backbone_only(const RefineNet& net, const ImageVolume& volume,
                         double threshold = 0.5);

}  // namespace refineseg
