#pragma once

// Attention-map export: per glimpse an H x W grid as CSV and as an 8-bit PGM.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "saaa/attention.hpp"
#include "saaa/errors.hpp"
#include "saaa/feature_map.hpp"

namespace saaa {

/// Row-major grid, comma separated, 6 significant digits.
inline std::string grid_csv(const std::vector<double>& grid, std::size_t height, std::size_t width) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      std::snprintf(buf, sizeof(buf), "%.6g", grid[r * width + c]);
      if (c) out += ",";
      out += buf;
    }
    out += "\n";
  }
  return out;
}

/// Binary PGM (P5), values min-max scaled to 0..255. A constant grid maps to 0.
inline std::string grid_pgm(const std::vector<double>& grid, std::size_t height, std::size_t width) {
  const auto [lo_it, hi_it] = std::minmax_element(grid.begin(), grid.end());
  const double lo = *lo_it, hi = *hi_it;
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : grid) {
    const double scaled = hi > lo ? (v - lo) / (hi - lo) * 255.0 : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
  return out;
}

/// The weights of glimpse `c` (0-based) laid out on the feature grid.
template <typename T>
std::vector<double> glimpse_grid(const Tensor<T>& weights, std::size_t c) {
  const std::size_t L = weights.dim(0), C = weights.dim(1);
  if (c >= C) throw InvalidArgument("glimpse index out of range");
  std::vector<double> grid(L);
  for (std::size_t l = 0; l < L; ++l) grid[l] = static_cast<double>(weights[l * C + c]);
  return grid;
}

/// Writes <question_id>_g<c>.csv and .pgm for c = 1..C. Returns the paths written.
template <typename T>
std::vector<std::filesystem::path> export_attention_maps(const AttentionResult<T>& result, std::size_t height,
                                                         std::size_t width, std::int64_t question_id,
                                                         const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  const std::size_t glimpses = result.weights.dim(1);
  for (std::size_t c = 0; c < glimpses; ++c) {
    const auto grid = glimpse_grid(result.weights, c);
    const std::string stem = std::to_string(question_id) + "_g" + std::to_string(c + 1);
    detail::write_file(dir / (stem + ".csv"), grid_csv(grid, height, width));
    detail::write_file(dir / (stem + ".pgm"), grid_pgm(grid, height, width));
    written.push_back(dir / (stem + ".csv"));
    written.push_back(dir / (stem + ".pgm"));
  }
  return written;
}

}  // namespace saaa
