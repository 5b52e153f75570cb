#pragma once

#include <cstdint>

#include "stprog/volume.hpp"

namespace stprog {

/// Affine map of the full 12-bit HU window onto [-1, 1]:
/// x -> (x + 1024)/2047.5 - 1. Endpoints map exactly. Values outside
/// [-1024, 3071] throw ValueError (upstream bug signal).
Volume normalize_hu(const Volume& v);

/// Per-slice tile-based histogram equalization: 4x4 tile grid, 64-bin
/// histograms, per-tile monotone remapping onto the slice's value range,
/// bilinear blending of the surrounding tile mappings. Slices smaller than
/// the tile grid fall back to whole-slice equalization. Output range stays
/// within the input range.
Volume adaptive_hist_eq(const Volume& v);

/// In-plane downsampling by separable Catmull-Rom interpolation along H
/// then W, edge-clamped at borders. Upscaling is rejected. In-plane
/// spacing is rescaled accordingly.
Volume resize_cubic(const Volume& v, std::size_t target_hw);

/// Fixes the slice count: extracts an n_slices window centered at the
/// anchor (shifted inward at the boundaries) or pads symmetrically with
/// -1024 HU, the extra slice going after when the deficit is odd.
Volume crop_or_pad_slices(const Volume& v, int n_slices, std::size_t anchor);

struct PreprocessSettings {
  std::size_t n_slices = 40;
  std::size_t target_hw = 32;
};

/// Full chain: adaptive_hist_eq -> resize_cubic -> crop_or_pad_slices ->
/// normalize_hu. Output is exactly n_slices x target x target in [-1, 1].
Volume preprocess_volume(const Volume& raw, std::size_t anchor,
                         const PreprocessSettings& s);

/// Random smooth warp: per-axis control-point displacements drawn
/// Uniform(-max_disp_mm, max_disp_mm) on a 7x7x7 lattice, densified by
/// cubic B-spline interpolation (a convex combination, so the dense
/// displacement never exceeds max_disp_mm), then trilinear resampling.
/// Out-of-volume reads return `fill`.
Volume elastic_deform(const Volume& v, std::uint64_t seed,
                      double max_disp_mm = 5.0, double fill = kHuMin);

/// Maximum dense displacement magnitude (mm, per axis) the given seed
/// produces; test/verification helper.
double elastic_max_displacement_mm(const Volume& v, std::uint64_t seed,
                                   double max_disp_mm = 5.0);

/// i.i.d. Gaussian noise on a normalized volume.
Volume add_gaussian_noise(const Volume& v, std::uint64_t seed, double sd);

/// 1-D Gaussian blur along axis 1 (y) or 2 (x) with kernel radius
/// ceil(3*sigma) and renormalized weights; borders replicate.
Volume gaussian_blur_1d(const Volume& v, int axis, double sigma);

/// Draws sd_noise ~ U(0, max_noise_sd) and sd_blur ~ U(0, max_blur_sd),
/// applies noise then an in-plane blur along a random axis, and clamps to
/// [-1, 1]. Expects a normalized volume.
Volume noise_and_blur(const Volume& v, std::uint64_t seed,
                      double max_noise_sd = 0.1, double max_blur_sd = 0.5);

}  // namespace stprog
