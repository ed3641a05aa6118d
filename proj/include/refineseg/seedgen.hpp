#pragma once

#include <cstdint>
#include <string>

#include "refineseg/imgcore.hpp"

namespace refineseg {

inline constexpr int kDefaultMinRegion = 4;
inline constexpr int kDefaultMaxSeedsPerClass = 32;
inline constexpr int kDefaultDilationRadius = 3;

// Seeds from the disagreement between a binarized prediction and the ground
// truth. Over-segmented pixels (pred 1, gt 0) yield background seeds on the
// skeleton of their region; under-segmented pixels (pred 0, gt 1) yield
// foreground seeds likewise. Components smaller than `min_region` pixels are
// ignored.
SeedSet generate_training_seeds(const BinaryMask& pred, const BinaryMask& gt,
                                int min_region = kDefaultMinRegion);

// Seeds transferred from a segmented slice to its neighbours: the skeleton of
// `seg` as foreground and the outer ring of its dilation as background.
// An empty `seg` gives an empty set.
SeedSet seeds_from_reference_slice(const BinaryMask& seg,
                                   int dilation_radius = kDefaultDilationRadius);

// Uniform subsample of each list down to at most `max_per_class` points,
// keeping the original relative order.
SeedSet subsample_seeds(const SeedSet& seeds, int max_per_class,
                        std::uint64_t rng_seed);

// Wire format {"fg": [[r,c],...], "bg": [[r,c],...]}.
std::string seeds_to_json(const SeedSet& seeds);
SeedSet seeds_from_json(const std::string& text);

}  // namespace refineseg
