#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace stprog {

inline constexpr double kHuMin = -1024.0;
inline constexpr double kHuMax = 3071.0;

/// Single-channel voxel grid with physical spacing. Values are held as
/// doubles in memory; the on-disk payload is little-endian f32.
struct Volume {
  std::size_t depth = 0, height = 0, width = 0;
  double spacing_z = 1.0, spacing_y = 1.0, spacing_x = 1.0;  // mm
  std::vector<double> voxels;  // z-major, then y, then x

  Volume() = default;
  Volume(std::size_t d, std::size_t h, std::size_t w, double fill = 0.0)
      : depth(d), height(h), width(w), voxels(d * h * w, fill) {}

  std::size_t size() const { return voxels.size(); }
  double& at(std::size_t z, std::size_t y, std::size_t x) {
    return voxels[(z * height + y) * width + x];
  }
  double at(std::size_t z, std::size_t y, std::size_t x) const {
    return voxels[(z * height + y) * width + x];
  }
};

/// File format: one UTF-8 JSON header line
///   {"shape":[D,H,W],"spacing_mm":[z,y,x],"dtype":"f32le"}
/// followed by exactly D*H*W little-endian 32-bit floats in z,y,x order.
/// The f32 payload round-trips bit-exactly.
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

}  // namespace stprog
