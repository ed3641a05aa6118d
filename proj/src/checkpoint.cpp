#include "refineseg/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "bytes.hpp"

namespace refineseg {

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace detail

namespace {

constexpr size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

[[noreturn]] void parse_error(size_t offset, const std::string& what) {
  throw Error(ErrorCode::kParse,
              "checkpoint: at byte " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    header[e.name] = {{"shape", e.value.shape()}, {"offset", offset}};
    offset += 4 * e.value.numel();
  }
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, kMagicLen);
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : params.entries()) {
    for (double v : e.value.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

ModelParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0) {
    parse_error(0, "expected magic RSEGCKPT1");
  }
  if (bytes.size() < kMagicLen + 8) parse_error(kMagicLen, "expected u64 header length");
  const std::uint64_t hlen = detail::get_u64(bytes, kMagicLen);
  const size_t hstart = kMagicLen + 8;
  if (hlen > bytes.size() - hstart) {
    parse_error(hstart, "header length " + std::to_string(hlen) + " exceeds file");
  }
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(hstart, hlen));
  } catch (const nlohmann::json::exception& ex) {
    parse_error(hstart, std::string("invalid JSON header: ") + ex.what());
  }
  if (!header.is_object()) parse_error(hstart, "header must be a JSON object");
  const size_t payload = hstart + hlen;
  ModelParams params;
  std::uint64_t expected_offset = 0;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const auto& spec = it.value();
    if (!spec.is_object() || !spec.contains("shape") || !spec.contains("offset")) {
      parse_error(hstart, "entry " + it.key() + " needs shape and offset");
    }
    Shape shape;
    std::uint64_t off = 0;
    try {
      shape = spec.at("shape").get<Shape>();
      off = spec.at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception&) {
      parse_error(hstart, "entry " + it.key() + " has malformed shape/offset");
    }
    if (off != expected_offset) {
      parse_error(hstart, "entry " + it.key() + " offset " + std::to_string(off) +
                              ", expected " + std::to_string(expected_offset));
    }
    Tensor t(shape);
    const size_t start = payload + off;
    if (start + 4 * t.numel() > bytes.size()) {
      parse_error(bytes.size(), "payload truncated in " + it.key());
    }
    for (size_t i = 0; i < t.numel(); ++i) {
      const float v = detail::get_f32(bytes, start + 4 * i);
      if (!std::isfinite(v)) {
        parse_error(start + 4 * i, "non-finite value in " + it.key());
      }
      t[i] = v;
    }
    expected_offset += 4 * t.numel();
    params.add(it.key(), std::move(t));
  }
  if (payload + expected_offset != bytes.size()) {
    parse_error(payload + expected_offset, "trailing bytes after payload");
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  detail::write_file(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace refineseg
