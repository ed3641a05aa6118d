#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refineseg/error.hpp"

namespace refineseg {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Activations use (batch, channels,
// height, width). The shape is fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // 4D accessors for (n, c, h, w).
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Named parameter arrays in insertion order.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  size_t numel() const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Same names and shapes, all zeros.
  ModelParams zeros_like() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.entries_.size() == b.entries_.size() &&
           std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(),
                      [](const Entry& x, const Entry& y) {
                        return x.name == y.name && x.value == y.value;
                      });
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace refineseg
