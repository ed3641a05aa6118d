#pragma once

#include <vector>

#include "refineseg/imgcore.hpp"

namespace refineseg {

struct MetricsRecord {
  double dice = 0.0;
  double sen = 0.0;
  double ppv = 0.0;
};

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

// Dice 2TP/(2TP+FP+FN), SEN TP/(TP+FN), PPV TP/(TP+FP).
// Both masks empty: all 1. An undefined ratio with a nonempty counterpart
// (e.g. PPV when the prediction is empty) is 0.
MetricsRecord metrics_from_counts(const ConfusionCounts& c);
MetricsRecord metrics(const BinaryMask& pred, const BinaryMask& gt);

// Voxel counts pooled over all slices.
MetricsRecord evaluate_volume(const std::vector<BinaryMask>& pred,
                              const std::vector<BinaryMask>& gt);

}  // namespace refineseg
