#include "refineseg/imgcore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <set>

namespace refineseg {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kUnavailable: return "unavailable";
    case ErrorCode::kNumeric: return "numeric_error";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

std::string shape_string(int height, int width) {
  return std::to_string(height) + "x" + std::to_string(width);
}

size_t BinaryMask::count() const {
  return static_cast<size_t>(std::count(values.begin(), values.end(), 1));
}

BinaryMask SignedMask::positive() const {
  BinaryMask out(height, width);
  for (size_t i = 0; i < values.size(); ++i) out.values[i] = values[i] > 0;
  return out;
}

BinaryMask SignedMask::negative() const {
  BinaryMask out(height, width);
  for (size_t i = 0; i < values.size(); ++i) out.values[i] = values[i] < 0;
  return out;
}

void validate_image(const Image& image) {
  if (image.height < kMinImageExtent || image.width < kMinImageExtent) {
    throw Error(ErrorCode::kInvalidArgument,
                "image must be at least 8x8, got " +
                    shape_string(image.height, image.width));
  }
  for (size_t i = 0; i < image.values.size(); ++i) {
    const double v = image.values[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "image value at index " + std::to_string(i) +
                      " outside [0,1]");
    }
  }
}

void validate_mask(const BinaryMask& mask) {
  for (size_t i = 0; i < mask.values.size(); ++i) {
    if (mask.values[i] > 1) {
      throw Error(ErrorCode::kInvalidArgument,
                  "mask value at index " + std::to_string(i) +
                      " is not binary");
    }
  }
}

namespace {

std::string point_string(Point p) {
  return "(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")";
}

}  // namespace

void validate_seeds(const SeedSet& seeds, int height, int width) {
  std::string bad;
  for (const auto* list : {&seeds.foreground, &seeds.background}) {
    for (Point p : *list) {
      if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
        bad += (bad.empty() ? "" : " ") + point_string(p);
      }
    }
  }
  if (!bad.empty()) {
    throw Error(ErrorCode::kOutOfRange,
                "seed out of bounds for " + shape_string(height, width) +
                    ": " + bad);
  }
  std::set<Point> fg(seeds.foreground.begin(), seeds.foreground.end());
  for (Point p : seeds.background) {
    if (fg.count(p)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "seed " + point_string(p) + " is both foreground and "
                  "background");
    }
  }
}

SignedMask subtraction_mask(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "subtraction_mask");
  SignedMask out(pred.height, pred.width);
  for (size_t i = 0; i < pred.values.size(); ++i) {
    out.values[i] = static_cast<std::int8_t>(static_cast<int>(pred.values[i]) -
                                             static_cast<int>(gt.values[i]));
  }
  return out;
}

namespace {

// Clockwise from north: P2..P9 in Zhang-Suen notation.
constexpr std::array<int, 8> kDr = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr std::array<int, 8> kDc = {0, 1, 1, 1, 0, -1, -1, -1};

bool zhang_suen_deletable(const BinaryMask& m, int r, int c, int pass) {
  std::array<int, 8> p{};
  int b = 0;
  for (int k = 0; k < 8; ++k) {
    const int rr = r + kDr[k];
    const int cc = c + kDc[k];
    p[k] = m.contains(rr, cc) ? m.at(rr, cc) : 0;
    b += p[k];
  }
  if (b < 2 || b > 6) return false;
  int transitions = 0;
  for (int k = 0; k < 8; ++k) {
    if (p[k] == 0 && p[(k + 1) % 8] == 1) ++transitions;
  }
  if (transitions != 1) return false;
  const int p2 = p[0], p4 = p[2], p6 = p[4], p8 = p[6];
  if (pass == 0) return p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0;
  return p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0;
}

}  // namespace

BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask img = mask;
  for (auto& v : img.values) v = v != 0;
  std::vector<std::uint8_t> del(img.size());
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      std::fill(del.begin(), del.end(), 0);
      bool any = false;
      for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
          if (img.at(r, c) && zhang_suen_deletable(img, r, c, pass)) {
            del[static_cast<size_t>(r) * img.width + c] = 1;
            any = true;
          }
        }
      }
      if (!any) continue;

      int ncomp = 0;
      const Grid<int> labels = label_components(img, &ncomp);
      // Per component: does any pixel survive this sub-iteration?
      std::vector<char> survives(static_cast<size_t>(ncomp) + 1, 0);
      std::vector<int> first(static_cast<size_t>(ncomp) + 1, -1);
      for (size_t i = 0; i < img.size(); ++i) {
        const int l = labels.values[i];
        if (l == 0) continue;
        if (first[l] < 0) first[l] = static_cast<int>(i);
        if (!del[i]) survives[l] = 1;
      }
      for (int l = 1; l <= ncomp; ++l) {
        if (!survives[l]) del[first[l]] = 0;
      }
      for (size_t i = 0; i < img.size(); ++i) {
        if (del[i]) {
          img.values[i] = 0;
          changed = true;
        }
      }
    }
  }
  return img;
}

namespace {

BinaryMask dilate_once(const BinaryMask& m) {
  BinaryMask out(m.height, m.width);
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (!m.at(r, c)) continue;
      const int r0 = std::max(0, r - 1), r1 = std::min(m.height - 1, r + 1);
      const int c0 = std::max(0, c - 1), c1 = std::min(m.width - 1, c + 1);
      for (int rr = r0; rr <= r1; ++rr) {
        for (int cc = c0; cc <= c1; ++cc) out.at(rr, cc) = 1;
      }
    }
  }
  return out;
}

void require_radius(int radius) {
  if (radius < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "dilation radius must be >= 1, got " + std::to_string(radius));
  }
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int radius) {
  require_radius(radius);
  BinaryMask out = mask;
  for (int i = 0; i < radius; ++i) out = dilate_once(out);
  return out;
}

BinaryMask dilation_boundary(const BinaryMask& mask, int radius) {
  require_radius(radius);
  const BinaryMask inner = radius == 1 ? mask : dilate(mask, radius - 1);
  BinaryMask outer = dilate_once(inner);
  for (size_t i = 0; i < outer.size(); ++i) {
    outer.values[i] = outer.values[i] && !inner.values[i];
  }
  return outer;
}

SeedChannels render_seeds(const SeedSet& seeds, int height, int width,
                          double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kInvalidArgument, "sigma must be positive");
  }
  validate_seeds(seeds, height, width);
  SeedChannels out{Grid<double>(height, width), Grid<double>(height, width),
                   sigma};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  // Beyond this squared distance exp() underflows to exactly zero anyway.
  const double cutoff = 745.0 / inv;
  auto splat = [&](const PointList& points, Grid<double>& ch) {
    for (Point s : points) {
      for (int r = 0; r < height; ++r) {
        const double dr = r - s.row;
        if (dr * dr > cutoff) continue;
        double* row = &ch.at(r, 0);
        for (int c = 0; c < width; ++c) {
          const double dc = c - s.col;
          const double v = std::exp(-(dr * dr + dc * dc) * inv);
          if (v > row[c]) row[c] = v;
        }
      }
    }
  };
  splat(seeds.foreground, out.foreground);
  splat(seeds.background, out.background);
  return out;
}

PointList mask_to_points(const BinaryMask& mask) {
  PointList out;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (mask.at(r, c)) out.push_back({r, c});
    }
  }
  return out;
}

BinaryMask points_to_mask(const PointList& points, int height, int width) {
  BinaryMask out(height, width);
  for (Point p : points) {
    if (!out.contains(p)) {
      throw Error(ErrorCode::kOutOfRange,
                  "point " + point_string(p) + " outside " +
                      shape_string(height, width));
    }
    out[p] = 1;
  }
  return out;
}

Grid<int> label_components(const BinaryMask& mask, int* count) {
  Grid<int> labels(mask.height, mask.width, 0);
  int next = 0;
  std::vector<Point> stack;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c) || labels.at(r, c)) continue;
      ++next;
      labels.at(r, c) = next;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        for (int k = 0; k < 8; ++k) {
          const int rr = p.row + kDr[k], cc = p.col + kDc[k];
          if (mask.contains(rr, cc) && mask.at(rr, cc) && !labels.at(rr, cc)) {
            labels.at(rr, cc) = next;
            stack.push_back({rr, cc});
          }
        }
      }
    }
  }
  if (count) *count = next;
  return labels;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_size) {
  if (min_size <= 1) return mask;
  int n = 0;
  const Grid<int> labels = label_components(mask, &n);
  std::vector<int> sizes(static_cast<size_t>(n) + 1, 0);
  for (int l : labels.values) ++sizes[l];
  BinaryMask out(mask.height, mask.width);
  for (size_t i = 0; i < out.size(); ++i) {
    const int l = labels.values[i];
    out.values[i] = l != 0 && sizes[l] >= min_size;
  }
  return out;
}

}  // namespace refineseg
