#pragma once

// Checkpoint layout:
//   "RSEGCKPT1\n"
//   u64 little-endian header length L
//   L bytes of UTF-8 JSON: {"<name>": {"shape": [...], "offset": <bytes>}, ...}
//     in parameter order; offsets are relative to the start of the payload
//   payload: float32 little-endian values, parameters in header order

#include <filesystem>
#include <string>

#include "refineseg/tensor.hpp"

namespace refineseg {

inline constexpr char kCheckpointMagic[] = "RSEGCKPT1\n";

std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace refineseg
