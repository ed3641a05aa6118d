#pragma once

// Synthetic low-contrast phantoms and raster/volume file IO.
//
// Float raster:  "RSEGIMG1\n", ASCII "H W\n", H*W float32 little-endian.
// Mask raster:   "RSEGMSK1\n", ASCII "H W\n", H*W bytes in {0,1}.
// 8-bit PGM (P5) is accepted on read for both and written on request.
// Volumes are directories of slice_0000.<ext>, slice_0001.<ext>, ...

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "refineseg/imgcore.hpp"

namespace refineseg {

using ImageVolume = std::vector<Image>;
using MaskVolume = std::vector<BinaryMask>;

struct Sample {
  Image image;
  BinaryMask mask;
};

struct PhantomParams {
  double noise_sigma = 0.05;
  // Upper bound on |target intensity - distractor intensity|.
  double max_contrast = 0.08;
  double min_contrast = 0.02;
  // Distractor radii relative to the target's mean radius.
  double distractor_scale_min = 0.6;
  double distractor_scale_max = 1.0;
  // Centre distance as a fraction of the summed mean radii; < 1 overlaps.
  double distractor_gap = 0.9;
};

// A target blob next to a distractor blob of nearly equal intensity over a
// noisy background. The mask covers exactly the target. Values are rounded
// to float32 so they survive the raster format unchanged.
Sample make_phantom(std::uint64_t rng_seed, int size, const PhantomParams& params = {});

struct PhantomVolume {
  ImageVolume images;
  MaskVolume masks;
};

// The target grows towards the middle slice and shrinks towards both ends;
// centre and radius change by at most 2 pixels between adjacent slices.
PhantomVolume make_phantom_volume(std::uint64_t rng_seed, int size, int n_slices,
                                  const PhantomParams& params = {});

inline constexpr char kImageMagic[] = "RSEGIMG1\n";
inline constexpr char kMaskMagic[] = "RSEGMSK1\n";
inline constexpr char kImageExt[] = ".img";
inline constexpr char kMaskExt[] = ".msk";

std::string encode_image(const Image& image);
std::string encode_mask(const BinaryMask& mask);
std::string encode_pgm(const Image& image);
std::string encode_pgm(const BinaryMask& mask);
// Accept either the native format or P5 PGM.
Image decode_image(const std::string& bytes);
BinaryMask decode_mask(const std::string& bytes);

void write_image(const std::filesystem::path& path, const Image& image);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);
// Writes PGM when the path ends in .pgm, the native format otherwise.
Image read_image(const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);

std::string slice_file_name(int index, const std::string& ext);

void write_image_volume(const std::filesystem::path& dir, const ImageVolume& volume);
void write_mask_volume(const std::filesystem::path& dir, const MaskVolume& volume);
ImageVolume read_image_volume(const std::filesystem::path& dir);
MaskVolume read_mask_volume(const std::filesystem::path& dir);

// Throws unless the volume is nonempty and all slices share one shape.
template <class Slice>
void validate_volume(const std::vector<Slice>& volume) {
  if (volume.empty()) throw Error(ErrorCode::kInvalidArgument, "volume has no slices");
  for (size_t i = 1; i < volume.size(); ++i) {
    if (!volume[i].same_shape(volume[0])) {
      throw Error(ErrorCode::kShapeMismatch,
                  "slice " + std::to_string(i) + " is " +
                      shape_string(volume[i].height, volume[i].width) +
                      ", slice 0 is " +
                      shape_string(volume[0].height, volume[0].width));
    }
  }
}

// Dataset directory layout: <dir>/images and <dir>/masks as volumes.
std::vector<Sample> read_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

}  // namespace refineseg
