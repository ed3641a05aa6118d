#include "refineseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <regex>

#include "bytes.hpp"
#include "refineseg/random.hpp"

namespace refineseg {

namespace {

struct Blob {
  double cy = 0, cx = 0;
  double ry = 1, rx = 1;
  double theta = 0;
  double amp = 0;
  int lobes = 2;
  double phase = 0;

  bool contains(double r, double c) const {
    const double dy = r - cy, dx = c - cx;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double u = (dx * ct + dy * st) / rx;
    const double v = (-dx * st + dy * ct) / ry;
    const double rho = std::hypot(u, v);
    const double phi = std::atan2(v, u);
    return rho <= 1.0 + amp * std::sin(lobes * phi + phase);
  }

  double extent() const { return std::max(rx, ry) * (1.0 + amp); }
};

void require_size(int size) {
  if (size < kMinImageExtent || size % 4 != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "phantom size must be >= 8 and divisible by 4, got " +
                    std::to_string(size));
  }
}

struct Scene {
  Blob target;
  Blob distractor;
  double background = 0;
  double target_level = 0;
  double distractor_level = 0;
};

Scene random_scene(Rng& rng, int size, const PhantomParams& params) {
  Scene s;
  const double n = size;
  Blob& t = s.target;
  t.rx = rng.uniform(0.14, 0.26) * n;
  t.ry = rng.uniform(0.14, 0.26) * n;
  t.theta = rng.uniform(0.0, std::numbers::pi);
  t.amp = rng.uniform(0.0, 0.12);
  t.lobes = 2 + static_cast<int>(rng.below(3));
  t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double lo = t.extent() + 1.0, hi = n - t.extent() - 2.0;
  t.cy = rng.uniform(lo, std::max(lo, hi));
  t.cx = rng.uniform(lo, std::max(lo, hi));

  Blob& d = s.distractor;
  const double mean_r = 0.5 * (t.rx + t.ry);
  d.rx = rng.uniform(params.distractor_scale_min, params.distractor_scale_max) * mean_r;
  d.ry = rng.uniform(params.distractor_scale_min, params.distractor_scale_max) * mean_r;
  d.theta = rng.uniform(0.0, std::numbers::pi);
  d.amp = rng.uniform(0.0, 0.1);
  d.lobes = 2 + static_cast<int>(rng.below(3));
  d.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dist = params.distractor_gap * (mean_r + 0.5 * (d.rx + d.ry));
  d.cy = std::clamp(t.cy + dist * std::sin(dir), 0.0, n - 1.0);
  d.cx = std::clamp(t.cx + dist * std::cos(dir), 0.0, n - 1.0);

  s.background = rng.uniform(0.15, 0.3);
  s.target_level = rng.uniform(0.45, 0.6);
  const double gap = rng.uniform(params.min_contrast, params.max_contrast);
  s.distractor_level = s.target_level + (rng.uniform() < 0.5 ? -gap : gap);
  return s;
}

Sample render_scene(const Scene& s, int size, double noise_sigma, Rng& rng) {
  Sample out{Image(size, size), BinaryMask(size, size)};
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double v = s.background;
      if (s.distractor.contains(r, c)) v = s.distractor_level;
      if (s.target.contains(r, c)) {
        v = s.target_level;
        out.mask.at(r, c) = 1;
      }
      v = std::clamp(v + noise_sigma * rng.normal(), 0.0, 1.0);
      out.image.at(r, c) = static_cast<float>(v);
    }
  }
  return out;
}

}  // namespace

Sample make_phantom(std::uint64_t rng_seed, int size, const PhantomParams& params) {
  require_size(size);
  Rng rng(rng_seed);
  const Scene scene = random_scene(rng, size, params);
  return render_scene(scene, size, params.noise_sigma, rng);
}

PhantomVolume make_phantom_volume(std::uint64_t rng_seed, int size, int n_slices,
                                  const PhantomParams& params) {
  require_size(size);
  if (n_slices < 3) {
    throw Error(ErrorCode::kInvalidArgument,
                "phantom volume needs >= 3 slices, got " + std::to_string(n_slices));
  }
  Rng rng(rng_seed);
  const Scene base = random_scene(rng, size, params);
  const double vy = rng.uniform(-0.5, 0.5), vx = rng.uniform(-0.5, 0.5);
  const double spin = rng.uniform(-0.02, 0.02);
  const int mid = n_slices / 2;
  // Radius profile flattens for short volumes so per-slice change stays small.
  const double falloff = std::max(mid, 10);
  PhantomVolume vol;
  for (int k = 0; k < n_slices; ++k) {
    const double d = k - mid;
    const double scale = std::sqrt(1.0 - 0.5 * (d / falloff) * (d / falloff));
    Scene s = base;
    s.target.rx *= scale;
    s.target.ry *= scale;
    s.target.theta += spin * d;
    const double lo = s.target.extent() + 1.0;
    const double hi = std::max(lo, size - s.target.extent() - 2.0);
    s.target.cy = std::clamp(base.target.cy + vy * d, lo, hi);
    s.target.cx = std::clamp(base.target.cx + vx * d, lo, hi);
    s.distractor.rx *= scale;
    s.distractor.ry *= scale;
    s.distractor.cy += s.target.cy - base.target.cy;
    s.distractor.cx += s.target.cx - base.target.cx;
    Sample slice = render_scene(s, size, params.noise_sigma, rng);
    vol.images.push_back(std::move(slice.image));
    vol.masks.push_back(std::move(slice.mask));
  }
  return vol;
}

// ---------------------------------------------------------------------------
// Raster IO

namespace {

constexpr size_t kMagicLen = 9;

[[noreturn]] void parse_error(size_t offset, const std::string& expected) {
  throw Error(ErrorCode::kParse,
              "at byte " + std::to_string(offset) + ": expected " + expected);
}

std::string size_header(int h, int w) {
  return std::to_string(h) + " " + std::to_string(w) + "\n";
}

// Reads a decimal integer at `pos`, advancing past it.
int read_uint(const std::string& b, size_t& pos, const char* what) {
  const size_t start = pos;
  long long v = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    v = v * 10 + (b[pos] - '0');
    if (v > 1 << 20) parse_error(start, std::string(what) + " of reasonable size");
    ++pos;
  }
  if (pos == start) parse_error(start, what);
  return static_cast<int>(v);
}

void expect_char(const std::string& b, size_t& pos, char ch, const char* what) {
  if (pos >= b.size() || b[pos] != ch) parse_error(pos, what);
  ++pos;
}

// Parses the "H W\n" header after the magic; returns payload start.
size_t native_header(const std::string& b, int& h, int& w) {
  size_t pos = kMagicLen;
  h = read_uint(b, pos, "height");
  expect_char(b, pos, ' ', "space after height");
  w = read_uint(b, pos, "width");
  expect_char(b, pos, '\n', "newline after width");
  if (h <= 0 || w <= 0) parse_error(kMagicLen, "positive extents");
  return pos;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

void skip_pgm_space(const std::string& b, size_t& pos) {
  while (pos < b.size()) {
    if (is_space(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

struct PgmData {
  int height = 0, width = 0, maxval = 0;
  size_t payload = 0;
};

PgmData pgm_header(const std::string& b) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') parse_error(0, "PGM magic P5");
  PgmData d;
  size_t pos = 2;
  skip_pgm_space(b, pos);
  d.width = read_uint(b, pos, "PGM width");
  skip_pgm_space(b, pos);
  d.height = read_uint(b, pos, "PGM height");
  skip_pgm_space(b, pos);
  d.maxval = read_uint(b, pos, "PGM maxval");
  if (d.maxval < 1 || d.maxval > 255) parse_error(pos, "PGM maxval in 1..255");
  if (pos >= b.size() || !is_space(b[pos])) parse_error(pos, "whitespace after maxval");
  d.payload = pos + 1;
  if (d.width <= 0 || d.height <= 0) parse_error(2, "positive PGM extents");
  const size_t need = static_cast<size_t>(d.width) * d.height;
  if (b.size() - d.payload < need) {
    parse_error(b.size(), std::to_string(need) + " PGM pixel bytes");
  }
  return d;
}

bool starts_with(const std::string& b, const char* magic) {
  return b.compare(0, kMagicLen, magic) == 0;
}

}  // namespace

std::string encode_image(const Image& image) {
  std::string out(kImageMagic, kMagicLen);
  out += size_header(image.height, image.width);
  for (double v : image.values) detail::put_f32(out, static_cast<float>(v));
  return out;
}

std::string encode_mask(const BinaryMask& mask) {
  std::string out(kMaskMagic, kMagicLen);
  out += size_header(mask.height, mask.width);
  for (auto v : mask.values) out.push_back(v ? 1 : 0);
  return out;
}

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  for (double v : image.values) {
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

std::string encode_pgm(const BinaryMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " +
                    std::to_string(mask.height) + "\n255\n";
  for (auto v : mask.values) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

Image decode_image(const std::string& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    const PgmData d = pgm_header(bytes);
    Image img(d.height, d.width);
    for (size_t i = 0; i < img.size(); ++i) {
      img.values[i] = static_cast<unsigned char>(bytes[d.payload + i]) /
                      static_cast<double>(d.maxval);
    }
    return img;
  }
  if (bytes.size() < kMagicLen || !starts_with(bytes, kImageMagic)) {
    parse_error(0, "magic RSEGIMG1 or P5");
  }
  int h = 0, w = 0;
  const size_t pos = native_header(bytes, h, w);
  const size_t need = 4 * static_cast<size_t>(h) * w;
  if (bytes.size() - pos < need) {
    parse_error(bytes.size(), std::to_string(need) + " payload bytes from offset " +
                                  std::to_string(pos));
  }
  if (bytes.size() - pos > need) parse_error(pos + need, "end of file");
  Image img(h, w);
  for (size_t i = 0; i < img.size(); ++i) {
    const float v = detail::get_f32(bytes, pos + 4 * i);
    if (!std::isfinite(v)) parse_error(pos + 4 * i, "finite intensity");
    img.values[i] = v;
  }
  return img;
}

BinaryMask decode_mask(const std::string& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    const PgmData d = pgm_header(bytes);
    BinaryMask m(d.height, d.width);
    for (size_t i = 0; i < m.size(); ++i) m.values[i] = bytes[d.payload + i] != 0;
    return m;
  }
  if (bytes.size() < kMagicLen || !starts_with(bytes, kMaskMagic)) {
    parse_error(0, "magic RSEGMSK1 or P5");
  }
  int h = 0, w = 0;
  const size_t pos = native_header(bytes, h, w);
  const size_t need = static_cast<size_t>(h) * w;
  if (bytes.size() - pos < need) {
    parse_error(bytes.size(), std::to_string(need) + " payload bytes from offset " +
                                  std::to_string(pos));
  }
  if (bytes.size() - pos > need) parse_error(pos + need, "end of file");
  BinaryMask m(h, w);
  for (size_t i = 0; i < need; ++i) {
    const unsigned char v = static_cast<unsigned char>(bytes[pos + i]);
    if (v > 1) parse_error(pos + i, "mask byte 0 or 1");
    m.values[i] = v;
  }
  return m;
}

namespace {

bool is_pgm_path(const std::filesystem::path& path) { return path.extension() == ".pgm"; }

template <class T, class Decode>
T read_with_context(const std::filesystem::path& path, Decode decode) {
  const std::string bytes = detail::read_file(path);
  try {
    return decode(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& image) {
  detail::write_file(path, is_pgm_path(path) ? encode_pgm(image) : encode_image(image));
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  detail::write_file(path, is_pgm_path(path) ? encode_pgm(mask) : encode_mask(mask));
}

Image read_image(const std::filesystem::path& path) {
  return read_with_context<Image>(path, decode_image);
}

BinaryMask read_mask(const std::filesystem::path& path) {
  return read_with_context<BinaryMask>(path, decode_mask);
}

std::string slice_file_name(int index, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slice_%04d", index);
  return std::string(buf) + ext;
}

namespace {

// Slice files in `dir` keyed by index; every index 0..n-1 must be present.
std::vector<std::filesystem::path> slice_paths(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::kIo, "not a directory: " + dir.string());
  }
  static const std::regex pattern(R"(slice_(\d{4,})\.(img|msk|pgm))");
  std::map<int, fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int idx = std::stoi(m[1].str());
    if (!found.emplace(idx, entry.path()).second) {
      throw Error(ErrorCode::kParse, dir.string() + ": duplicate slice index " +
                                         std::to_string(idx));
    }
  }
  if (found.empty()) throw Error(ErrorCode::kParse, dir.string() + ": no slice files");
  std::vector<fs::path> out;
  std::string missing;
  const int last = found.rbegin()->first;
  for (int i = 0; i <= last; ++i) {
    auto it = found.find(i);
    if (it == found.end()) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(i);
    } else {
      out.push_back(it->second);
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::kParse,
                dir.string() + ": missing slice index " + missing);
  }
  return out;
}

}  // namespace

void write_image_volume(const std::filesystem::path& dir, const ImageVolume& volume) {
  validate_volume(volume);
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < volume.size(); ++i) {
    write_image(dir / slice_file_name(static_cast<int>(i), kImageExt), volume[i]);
  }
}

void write_mask_volume(const std::filesystem::path& dir, const MaskVolume& volume) {
  validate_volume(volume);
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < volume.size(); ++i) {
    write_mask(dir / slice_file_name(static_cast<int>(i), kMaskExt), volume[i]);
  }
}

ImageVolume read_image_volume(const std::filesystem::path& dir) {
  ImageVolume vol;
  for (const auto& p : slice_paths(dir)) vol.push_back(read_image(p));
  validate_volume(vol);
  return vol;
}

MaskVolume read_mask_volume(const std::filesystem::path& dir) {
  MaskVolume vol;
  for (const auto& p : slice_paths(dir)) vol.push_back(read_mask(p));
  validate_volume(vol);
  return vol;
}

std::vector<Sample> read_dataset(const std::filesystem::path& dir) {
  ImageVolume images = read_image_volume(dir / "images");
  MaskVolume masks = read_mask_volume(dir / "masks");
  if (images.size() != masks.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                dir.string() + ": " + std::to_string(images.size()) + " images but " +
                    std::to_string(masks.size()) + " masks");
  }
  std::vector<Sample> out;
  for (size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i], masks[i], "dataset sample");
    out.push_back({std::move(images[i]), std::move(masks[i])});
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  ImageVolume images;
  MaskVolume masks;
  for (const auto& s : samples) {
    images.push_back(s.image);
    masks.push_back(s.mask);
  }
  write_image_volume(dir / "images", images);
  write_mask_volume(dir / "masks", masks);
}

}  // namespace refineseg
