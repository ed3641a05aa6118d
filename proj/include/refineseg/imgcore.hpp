#pragma once

// 2D raster primitives: masks, morphology, thinning, Gaussian seed rendering
// and connected components. Everything here is a pure function.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "refineseg/error.hpp"

namespace refineseg {

struct Point {
  int row = 0;
  int col = 0;

  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

using PointList = std::vector<Point>;

// Row-major 2D grid. The concrete raster types below are distinct so that a
// probability map cannot silently be passed where an image is expected.
template <class T>
struct Grid {
  using value_type = T;

  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {
    if (h < 0 || w < 0) {
      throw Error(ErrorCode::kInvalidArgument, "negative grid extent");
    }
  }

  size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }
  bool contains(int r, int c) const {
    return r >= 0 && r < height && c >= 0 && c < width;
  }
  bool contains(Point p) const { return contains(p.row, p.col); }

  T& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
  const T& at(int r, int c) const {
    return values[static_cast<size_t>(r) * width + c];
  }
  T& operator[](Point p) { return at(p.row, p.col); }
  const T& operator[](Point p) const { return at(p.row, p.col); }

  template <class U>
  bool same_shape(const Grid<U>& other) const {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

// Grayscale intensities in [0,1].
struct Image : Grid<double> {
  using Grid::Grid;
};

// Per-pixel foreground probability in [0,1].
struct ProbMap : Grid<double> {
  using Grid::Grid;
};

// Values in {0,1}.
struct BinaryMask : Grid<std::uint8_t> {
  using Grid::Grid;

  size_t count() const;
};

// Values in {-1,0,+1}: prediction minus ground truth.
struct SignedMask : Grid<std::int8_t> {
  using Grid::Grid;

  BinaryMask positive() const;  // over-segmentation
  BinaryMask negative() const;  // under-segmentation
};

struct SeedSet {
  PointList foreground;
  PointList background;

  bool empty() const { return foreground.empty() && background.empty(); }
  friend bool operator==(const SeedSet&, const SeedSet&) = default;
};

struct SeedChannels {
  Grid<double> foreground;
  Grid<double> background;
  double sigma = 0.0;
};

inline constexpr int kMinImageExtent = 8;
inline constexpr double kDefaultSigma = 5.0;

std::string shape_string(int height, int width);

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": shape mismatch " +
                    shape_string(a.height, a.width) + " vs " +
                    shape_string(b.height, b.width));
  }
}

// Throws unless the image is at least 8x8 with finite values in [0,1].
void validate_image(const Image& image);
// Throws unless every value is 0 or 1.
void validate_mask(const BinaryMask& mask);
// Throws unless seeds are in-bounds and no point carries both labels.
void validate_seeds(const SeedSet& seeds, int height, int width);

SignedMask subtraction_mask(const BinaryMask& pred, const BinaryMask& gt);

// Guarded Zhang-Suen thinning. Pixels outside the grid count as background.
// If a sub-iteration would delete every pixel of an 8-connected component,
// the component's first pixel in row-major order is retained, so the number
// of components never changes.
BinaryMask skeletonize(const BinaryMask& mask);

// Dilation by `radius` iterations of the 3x3 square element.
BinaryMask dilate(const BinaryMask& mask, int radius);

// dilate(mask, radius) minus dilate(mask, radius - 1), dilate(., 0) = mask.
BinaryMask dilation_boundary(const BinaryMask& mask, int radius);

// Each channel is the pointwise max over its seeds of
// exp(-((r - r0)^2 + (c - c0)^2) / (2 sigma^2)).
SeedChannels render_seeds(const SeedSet& seeds, int height, int width,
                          double sigma);

// Foreground coordinates in row-major order.
PointList mask_to_points(const BinaryMask& mask);

BinaryMask points_to_mask(const PointList& points, int height, int width);

// 8-connected component labels (0 = background, 1.. in row-major discovery
// order). Returns the number of components through `count`.
Grid<int> label_components(const BinaryMask& mask, int* count);

// Drops 8-connected components with fewer than `min_size` pixels.
BinaryMask remove_small_components(const BinaryMask& mask, int min_size);

}  // namespace refineseg
