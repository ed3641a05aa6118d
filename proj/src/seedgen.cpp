#include "refineseg/seedgen.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>

#include "refineseg/random.hpp"

namespace refineseg {

SeedSet generate_training_seeds(const BinaryMask& pred, const BinaryMask& gt,
                                int min_region) {
  const SignedMask delta = subtraction_mask(pred, gt);
  const BinaryMask over = remove_small_components(delta.positive(), min_region);
  const BinaryMask under = remove_small_components(delta.negative(), min_region);
  return {mask_to_points(skeletonize(under)), mask_to_points(skeletonize(over))};
}

SeedSet seeds_from_reference_slice(const BinaryMask& seg, int dilation_radius) {
  if (dilation_radius < 1) {
    throw Error(ErrorCode::kInvalidArgument, "dilation_radius must be >= 1");
  }
  if (seg.count() == 0) return {};
  return {mask_to_points(skeletonize(seg)),
          mask_to_points(dilation_boundary(seg, dilation_radius))};
}

namespace {

PointList subsample(const PointList& points, int max_count, Rng& rng) {
  if (points.size() <= static_cast<size_t>(max_count)) return points;
  // Partial Fisher-Yates over indices, then restore row-major order.
  std::vector<size_t> idx(points.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = 0; i < static_cast<size_t>(max_count); ++i) {
    const size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_count);
  std::sort(idx.begin(), idx.end());
  PointList out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(points[i]);
  return out;
}

}  // namespace

SeedSet subsample_seeds(const SeedSet& seeds, int max_per_class,
                        std::uint64_t rng_seed) {
  if (max_per_class < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_per_class must be >= 1");
  }
  Rng rng(rng_seed);
  SeedSet out;
  out.foreground = subsample(seeds.foreground, max_per_class, rng);
  out.background = subsample(seeds.background, max_per_class, rng);
  return out;
}

namespace {

nlohmann::json points_json(const PointList& points) {
  nlohmann::json arr = nlohmann::json::array();
  for (Point p : points) arr.push_back({p.row, p.col});
  return arr;
}

PointList points_from(const nlohmann::json& arr, const char* key) {
  if (!arr.is_array()) {
    throw Error(ErrorCode::kParse, std::string("seeds: '") + key + "' must be an array");
  }
  PointList out;
  for (const auto& item : arr) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number_integer() ||
        !item[1].is_number_integer()) {
      throw Error(ErrorCode::kParse, std::string("seeds: entries of '") + key +
                                         "' must be [row, col] integer pairs");
    }
    out.push_back({item[0].get<int>(), item[1].get<int>()});
  }
  return out;
}

}  // namespace

std::string seeds_to_json(const SeedSet& seeds) {
  nlohmann::json j;
  j["fg"] = points_json(seeds.foreground);
  j["bg"] = points_json(seeds.background);
  return j.dump();
}

SeedSet seeds_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("seeds: invalid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "seeds: expected an object");
  SeedSet s;
  if (j.contains("fg")) s.foreground = points_from(j["fg"], "fg");
  if (j.contains("bg")) s.background = points_from(j["bg"], "bg");
  return s;
}

}  // namespace refineseg
