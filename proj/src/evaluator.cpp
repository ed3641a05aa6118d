#include "refineseg/evaluator.hpp"

#include <string>

namespace refineseg {

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "metrics");
  ConfusionCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = gt.values[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

MetricsRecord metrics_from_counts(const ConfusionCounts& c) {
  auto ratio = [](long long num, long long den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return {1.0, 1.0, 1.0};
  return {ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fn),
          ratio(c.tp, c.tp + c.fp)};
}

MetricsRecord metrics(const BinaryMask& pred, const BinaryMask& gt) {
  return metrics_from_counts(confusion(pred, gt));
}

MetricsRecord evaluate_volume(const std::vector<BinaryMask>& pred,
                              const std::vector<BinaryMask>& gt) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "evaluate_volume: " + std::to_string(pred.size()) +
                    " predicted slices vs " + std::to_string(gt.size()) +
                    " ground-truth slices");
  }
  if (pred.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluate_volume: empty volume");
  }
  ConfusionCounts total;
  for (size_t i = 0; i < pred.size(); ++i) total += confusion(pred[i], gt[i]);
  return metrics_from_counts(total);
}

}  // namespace refineseg
