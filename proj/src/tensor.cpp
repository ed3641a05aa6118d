#include "refineseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace refineseg {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

size_t checked_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "tensor extents must be positive: " + shape_string(shape));
    }
    n *= static_cast<size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (checked_numel(shape_) != data_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "tensor shape " + shape_string(shape_) + " needs " +
                    std::to_string(checked_numel(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void ModelParams::add(std::string name, Tensor value) {
  if (index_.count(name)) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

bool ModelParams::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

Tensor& ModelParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kNotFound, "no parameter named " + name);
  }
  return entries_[it->second].value;
}

const Tensor& ModelParams::get(const std::string& name) const {
  return const_cast<ModelParams*>(this)->get(name);
}

size_t ModelParams::numel() const {
  return std::accumulate(
      entries_.begin(), entries_.end(), size_t{0},
      [](size_t acc, const Entry& e) { return acc + e.value.numel(); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape(), 0.0));
  return out;
}

bool ModelParams::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const Entry& e) { return e.value.all_finite(); });
}

}  // namespace refineseg
