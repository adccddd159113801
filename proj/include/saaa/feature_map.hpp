#pragma once

// Precomputed CNN feature maps ("SAAF" files) and their preprocessing.
//
// File layout, all little-endian:
//   "SAAF" | u16 version (=1) | u32 H | u32 W | u32 depth | H*W*depth f32
// values are row-major with depth varying fastest.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "saaa/errors.hpp"
#include "saaa/rng.hpp"
#include "saaa/tensor.hpp"

namespace saaa {

inline constexpr std::array<char, 4> kFeatureMagic = {'S', 'A', 'A', 'F'};
inline constexpr std::uint16_t kFeatureVersion = 1;

template <typename T>
struct FeatureMap {
  std::int64_t image_id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  Tensor<T> values;  // (height, width, depth)
  bool normalized = false;

  std::size_t locations() const { return height * width; }

  /// Values viewed as an (L, depth) matrix, one row per spatial location.
  Tensor<T> as_locations() const { return reshape(values, {locations(), depth}); }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

template <typename T>
std::string encode_feature_map(const FeatureMap<T>& fm) {
  std::string out;
  out.reserve(18 + fm.values.size() * 4);
  out.append(kFeatureMagic.data(), kFeatureMagic.size());
  detail::put_u16(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(fm.height));
  detail::put_u32(out, static_cast<std::uint32_t>(fm.width));
  detail::put_u32(out, static_cast<std::uint32_t>(fm.depth));
  for (T v : fm.values.data()) detail::put_f32(out, static_cast<float>(v));
  return out;
}

/// Parses SAAF bytes. Throws FormatError naming the failing byte offset.
template <typename T>
FeatureMap<T> decode_feature_map(const std::string& bytes, std::int64_t image_id = 0) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  constexpr std::size_t kHeader = 18;
  if (bytes.size() < 4 || std::memcmp(p, kFeatureMagic.data(), 4) != 0) {
    throw FormatError("bad magic, expected \"SAAF\"", 0);
  }
  if (bytes.size() < kHeader) throw FormatError("truncated header", bytes.size());
  const std::uint16_t version = static_cast<std::uint16_t>(p[4] | (p[5] << 8));
  if (version != kFeatureVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t h = detail::get_u32(p + 6);
  const std::uint32_t w = detail::get_u32(p + 10);
  const std::uint32_t d = detail::get_u32(p + 14);
  if (h == 0 || w == 0 || d == 0) throw FormatError("zero extent in header", 6);
  const std::uint64_t count = std::uint64_t{h} * w * d;
  const std::uint64_t expected = kHeader + count * 4;
  if (bytes.size() < expected) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload", expected);
  std::vector<T> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t off = kHeader + i * 4;
    const float f = std::bit_cast<float>(detail::get_u32(p + off));
    if (!std::isfinite(f)) throw FormatError("non-finite feature value", off);
    values[i] = static_cast<T>(f);
  }
  FeatureMap<T> fm;
  fm.image_id = image_id;
  fm.height = h;
  fm.width = w;
  fm.depth = d;
  fm.values = Tensor<T>({h, w, d}, std::move(values));
  return fm;
}

/// Image id taken from a "<image_id>.saaf" file name, 0 when it is not numeric.
inline std::int64_t image_id_from_path(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  try {
    std::size_t used = 0;
    const long long id = std::stoll(stem, &used);
    return used == stem.size() ? id : 0;
  } catch (const std::exception&) {
    return 0;
  }
}

inline std::filesystem::path feature_path(const std::filesystem::path& dir, std::int64_t image_id) {
  return dir / (std::to_string(image_id) + ".saaf");
}

template <typename T>
FeatureMap<T> load_feature_map(const std::filesystem::path& path) {
  return decode_feature_map<T>(detail::read_file(path), image_id_from_path(path));
}

template <typename T>
void save_feature_map(const FeatureMap<T>& fm, const std::filesystem::path& path) {
  detail::write_file(path, encode_feature_map(fm));
}

/// l2-normalizes the depth vector at every spatial location.
template <typename T>
FeatureMap<T> normalize_depth(const FeatureMap<T>& fm) {
  if (fm.normalized) throw InvalidState("feature map " + std::to_string(fm.image_id) + " is already normalized");
  FeatureMap<T> out = fm;
  out.values = l2_normalize(fm.values, 2, kL2Epsilon);
  out.normalized = true;
  return out;
}

/// Appends column and row coordinates, scaled to [0, 1], as two extra channels.
template <typename T>
FeatureMap<T> augment_positions(const FeatureMap<T>& fm) {
  const std::size_t h = fm.height, w = fm.width;
  std::vector<T> coords(h * w * 2);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      coords[(r * w + c) * 2 + 0] = w > 1 ? static_cast<T>(c) / static_cast<T>(w - 1) : T(0);
      coords[(r * w + c) * 2 + 1] = h > 1 ? static_cast<T>(r) / static_cast<T>(h - 1) : T(0);
    }
  FeatureMap<T> out = fm;
  out.values = concat<T>({fm.values, Tensor<T>({h, w, 2}, std::move(coords))}, 2);
  out.depth = fm.depth + 2;
  return out;
}

/// Average of the depth vectors over all spatial locations.
template <typename T>
Tensor<T> spatial_mean(const FeatureMap<T>& fm) {
  return mean_rows(fm.as_locations());
}

/// Deterministic stand-in for CNN output: standard-normal values seeded by (seed, image_id).
template <typename T>
FeatureMap<T> synthetic_feature_map(std::int64_t image_id, std::size_t height, std::size_t width,
                                    std::size_t depth, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(image_id)));
  std::vector<T> values(height * width * depth);
  for (auto& v : values) v = static_cast<T>(static_cast<float>(rng.normal()));
  FeatureMap<T> fm;
  fm.image_id = image_id;
  fm.height = height;
  fm.width = width;
  fm.depth = depth;
  fm.values = Tensor<T>({height, width, depth}, std::move(values));
  return fm;
}

}  // namespace saaa
