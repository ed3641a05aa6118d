#pragma once

// Minimal reverse-mode differentiation over the layer set the networks use.
//
// Tensor-level forward functions live in `ops`; the tape in `ad` records the
// same operations together with their adjoints.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "refineseg/tensor.hpp"

namespace refineseg {

namespace ops {

inline constexpr double kBceEpsilon = 1e-7;

// input (N,Cin,H,W), weight (Cout,Cin,kh,kw), bias (Cout).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// input (N,Cin,H,W), weight (Cin,Cout,k,k), bias (Cout). No padding, no
// output padding: output extent is (H - 1) * stride + k. With the default
// k = 2, stride = 2 this is exact 2x upsampling.
Tensor transposed_conv2d(const Tensor& input, const Tensor& weight,
                         const Tensor& bias, int stride);

// 2x2 window, stride 2, floor for odd extents.
Tensor maxpool2(const Tensor& input);
Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
// log(p / (1 - p)) with p clamped to [eps, 1 - eps] like bce_loss.
Tensor logit(const Tensor& prob);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Half-pixel-centre bilinear interpolation with edge clamping.
Tensor bilinear_resize(const Tensor& input, int height, int width);

// -mean(t log p + (1 - t) log(1 - p)), p clamped to [eps, 1 - eps].
double bce_loss(const Tensor& pred, const Tensor& target);

}  // namespace ops

namespace ad {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf whose gradient is accumulated.
  Var leaf(Tensor value);
  // A leaf that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Reverse sweep from a scalar node with seed gradient 1.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  using Backward = std::function<void(Tape&, int self)>;
  Var record(Tensor value, std::vector<int> parents, Backward backward);
  Tensor& grad_mut(int id);
  const Tensor& value_of(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> parents;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var conv2d(Var input, Var weight, Var bias, int stride, int padding);
Var transposed_conv2d(Var input, Var weight, Var bias, int stride);
Var maxpool2(Var input);
Var relu(Var input);
Var sigmoid(Var input);
Var logit(Var prob);
Var concat_channels(Var a, Var b);
Var bilinear_resize(Var input, int height, int width);
Var bce_loss(Var pred, const Tensor& target);
// Elementwise sum of equal shapes.
Var add(Var a, Var b);
// Scalar multiple of a scalar, for weighting losses.
Var scale(Var a, double factor);

}  // namespace ad

// Loss evaluated at `params`; when `grad` is non-null it receives dLoss/dparams
// (same names and shapes as `params`).
using LossFunction =
    std::function<double(const ModelParams& params, ModelParams* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline constexpr double kGradCheckStep = 1e-4;
// Relative error uses max(|analytic|, |numeric|, floor) as the denominator.
inline constexpr double kGradCheckFloor = 1e-7;

// Compares the analytic gradient with central differences at `probes`
// uniformly drawn coordinates. Throws on a non-finite analytic gradient.
GradCheckResult grad_check(const LossFunction& f, const ModelParams& params,
                           int probes, std::uint64_t rng_seed = 0);

}  // namespace refineseg
