#include "stprog/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "stprog/errors.hpp"
#include "stprog/rng.hpp"

namespace stprog {

Volume normalize_hu(const Volume& v) {
  Volume out = v;
  for (double& x : out.voxels) {
    if (x < kHuMin || x > kHuMax) {
      throw ValueError("normalize_hu: value " + std::to_string(x) +
                       " outside [-1024, 3071]");
    }
    x = (x + 1024.0) / 2047.5 - 1.0;
  }
  return out;
}

namespace {

constexpr std::size_t kTiles = 4;
constexpr std::size_t kBins = 64;

// Monotone remap of one bin population onto [lo, hi]; cdf normalized so the
// first occupied bin maps to lo and the last to hi.
struct TileMapping {
  std::array<double, kBins> mapped{};  // target value per bin
  bool identity = false;
};

TileMapping build_mapping(const std::array<std::size_t, kBins>& hist,
                          std::size_t count, double lo, double hi) {
  TileMapping m;
  if (count == 0 || lo == hi) {
    m.identity = true;
    return m;
  }
  double cdf = 0.0;
  double cdf_min = -1.0;
  std::array<double, kBins> cum{};
  for (std::size_t b = 0; b < kBins; ++b) {
    cdf += static_cast<double>(hist[b]) / static_cast<double>(count);
    cum[b] = cdf;
    if (cdf_min < 0.0 && hist[b] > 0) cdf_min = cum[b];
  }
  const double denom = 1.0 - cdf_min;
  if (denom <= 0.0) {
    m.identity = true;  // single occupied bin
    return m;
  }
  for (std::size_t b = 0; b < kBins; ++b) {
    const double u = std::clamp((cum[b] - cdf_min) / denom, 0.0, 1.0);
    m.mapped[b] = lo + u * (hi - lo);
  }
  return m;
}

std::size_t bin_of(double v, double lo, double hi) {
  const double u = (v - lo) / (hi - lo);
  const long long b = static_cast<long long>(u * static_cast<double>(kBins));
  return static_cast<std::size_t>(std::clamp(b, 0LL, (long long)kBins - 1));
}

void equalize_slice(const double* src, double* dst, std::size_t h,
                    std::size_t w) {
  double lo = src[0], hi = src[0];
  for (std::size_t i = 0; i < h * w; ++i) {
    lo = std::min(lo, src[i]);
    hi = std::max(hi, src[i]);
  }
  if (lo == hi) {  // constant slice: degenerate histogram maps to itself
    std::copy(src, src + h * w, dst);
    return;
  }

  if (h < kTiles || w < kTiles) {
    // Whole-slice fallback.
    std::array<std::size_t, kBins> hist{};
    for (std::size_t i = 0; i < h * w; ++i) ++hist[bin_of(src[i], lo, hi)];
    TileMapping m = build_mapping(hist, h * w, lo, hi);
    for (std::size_t i = 0; i < h * w; ++i)
      dst[i] = m.identity ? src[i] : m.mapped[bin_of(src[i], lo, hi)];
    return;
  }

  // Tile histograms over a fixed 4x4 grid.
  TileMapping tiles[kTiles][kTiles];
  double centers_y[kTiles], centers_x[kTiles];
  for (std::size_t ty = 0; ty < kTiles; ++ty) {
    const std::size_t y0 = ty * h / kTiles, y1 = (ty + 1) * h / kTiles;
    centers_y[ty] = (static_cast<double>(y0) + static_cast<double>(y1) - 1.0) / 2.0;
    for (std::size_t tx = 0; tx < kTiles; ++tx) {
      const std::size_t x0 = tx * w / kTiles, x1 = (tx + 1) * w / kTiles;
      if (ty == 0) {
        centers_x[tx] =
            (static_cast<double>(x0) + static_cast<double>(x1) - 1.0) / 2.0;
      }
      std::array<std::size_t, kBins> hist{};
      std::size_t count = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          ++hist[bin_of(src[y * w + x], lo, hi)];
          ++count;
        }
      tiles[ty][tx] = build_mapping(hist, count, lo, hi);
    }
  }

  auto apply = [&](const TileMapping& m, double v) {
    return m.identity ? v : m.mapped[bin_of(v, lo, hi)];
  };

  // Bilinear blend of the four surrounding tile mappings.
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t ty0 = 0;
    while (ty0 + 1 < kTiles && centers_y[ty0 + 1] <= static_cast<double>(y)) ++ty0;
    std::size_t ty1 = ty0;
    double wy = 0.0;
    if (static_cast<double>(y) > centers_y[ty0] && ty0 + 1 < kTiles) {
      ty1 = ty0 + 1;
      wy = (static_cast<double>(y) - centers_y[ty0]) /
           (centers_y[ty1] - centers_y[ty0]);
    }
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t tx0 = 0;
      while (tx0 + 1 < kTiles && centers_x[tx0 + 1] <= static_cast<double>(x))
        ++tx0;
      std::size_t tx1 = tx0;
      double wx = 0.0;
      if (static_cast<double>(x) > centers_x[tx0] && tx0 + 1 < kTiles) {
        tx1 = tx0 + 1;
        wx = (static_cast<double>(x) - centers_x[tx0]) /
             (centers_x[tx1] - centers_x[tx0]);
      }
      const double v = src[y * w + x];
      const double m00 = apply(tiles[ty0][tx0], v);
      const double m01 = apply(tiles[ty0][tx1], v);
      const double m10 = apply(tiles[ty1][tx0], v);
      const double m11 = apply(tiles[ty1][tx1], v);
      dst[y * w + x] = (1.0 - wy) * ((1.0 - wx) * m00 + wx * m01) +
                       wy * ((1.0 - wx) * m10 + wx * m11);
    }
  }
}

}  // namespace

Volume adaptive_hist_eq(const Volume& v) {
  Volume out = v;
  for (std::size_t z = 0; z < v.depth; ++z) {
    equalize_slice(v.voxels.data() + z * v.height * v.width,
                   out.voxels.data() + z * v.height * v.width, v.height,
                   v.width);
  }
  return out;
}

namespace {

// Catmull-Rom weights at fractional offset t in [0,1).
inline void catmull_rom(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
  w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

// Separable pass along one in-plane axis; returns interpolated rows.
void resize_axis(const double* src, double* dst, std::size_t n_rows,
                 std::size_t src_len, std::size_t dst_len,
                 std::size_t src_stride, std::size_t dst_stride,
                 std::size_t row_stride_src, std::size_t row_stride_dst) {
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* s = src + r * row_stride_src;
    double* d = dst + r * row_stride_dst;
    for (std::size_t j = 0; j < dst_len; ++j) {
      const double pos = (static_cast<double>(j) + 0.5) * scale - 0.5;
      const double fl = std::floor(pos);
      const long long i0 = static_cast<long long>(fl);
      double w[4];
      catmull_rom(pos - fl, w);
      double acc = 0.0;
      for (int k = -1; k <= 2; ++k) {
        const long long idx =
            std::clamp(i0 + k, 0LL, static_cast<long long>(src_len) - 1);
        acc += w[k + 1] * s[static_cast<std::size_t>(idx) * src_stride];
      }
      d[j * dst_stride] = acc;
    }
  }
}

}  // namespace

Volume resize_cubic(const Volume& v, std::size_t target_hw) {
  if (target_hw == 0) throw ValueError("resize_cubic: target extent is zero");
  if (target_hw > v.height || target_hw > v.width) {
    throw ValueError("resize_cubic: upscaling requested (target " +
                     std::to_string(target_hw) + " exceeds source " +
                     std::to_string(v.height) + "x" + std::to_string(v.width) +
                     ")");
  }

  // Pass 1: H -> target (per slice, column-wise).
  Volume mid(v.depth, target_hw, v.width);
  for (std::size_t z = 0; z < v.depth; ++z) {
    resize_axis(v.voxels.data() + z * v.height * v.width,
                mid.voxels.data() + z * target_hw * v.width,
                /*n_rows=*/v.width, v.height, target_hw,
                /*src_stride=*/v.width, /*dst_stride=*/v.width,
                /*row_stride_src=*/1, /*row_stride_dst=*/1);
  }
  // Pass 2: W -> target (per slice, row-wise).
  Volume out(v.depth, target_hw, target_hw);
  for (std::size_t z = 0; z < v.depth; ++z) {
    resize_axis(mid.voxels.data() + z * target_hw * v.width,
                out.voxels.data() + z * target_hw * target_hw,
                /*n_rows=*/target_hw, v.width, target_hw,
                /*src_stride=*/1, /*dst_stride=*/1,
                /*row_stride_src=*/v.width, /*row_stride_dst=*/target_hw);
  }
  // Cubic overshoot is clipped back into the valid HU window so the chain
  // invariant (normalize_hu accepts any preprocessed volume) holds.
  for (double& x : out.voxels) x = std::clamp(x, kHuMin, kHuMax);

  out.spacing_z = v.spacing_z;
  out.spacing_y = v.spacing_y * static_cast<double>(v.height) /
                  static_cast<double>(target_hw);
  out.spacing_x = v.spacing_x * static_cast<double>(v.width) /
                  static_cast<double>(target_hw);
  return out;
}

Volume crop_or_pad_slices(const Volume& v, int n_slices, std::size_t anchor) {
  if (n_slices <= 0) throw ValueError("crop_or_pad_slices: n_slices must be > 0");
  if (anchor >= v.depth) {
    throw ValueError("crop_or_pad_slices: anchor " + std::to_string(anchor) +
                     " out of range for depth " + std::to_string(v.depth));
  }
  const std::size_t n = static_cast<std::size_t>(n_slices);
  const std::size_t plane = v.height * v.width;
  Volume out(n, v.height, v.width);
  out.spacing_z = v.spacing_z;
  out.spacing_y = v.spacing_y;
  out.spacing_x = v.spacing_x;

  if (v.depth >= n) {
    long long start = static_cast<long long>(anchor) - static_cast<long long>(n / 2);
    start = std::clamp(start, 0LL, static_cast<long long>(v.depth - n));
    std::copy(v.voxels.begin() + static_cast<std::size_t>(start) * plane,
              v.voxels.begin() + (static_cast<std::size_t>(start) + n) * plane,
              out.voxels.begin());
  } else {
    const std::size_t deficit = n - v.depth;
    const std::size_t before = deficit / 2;  // odd deficit: extra slice after
    std::fill(out.voxels.begin(), out.voxels.end(), kHuMin);
    std::copy(v.voxels.begin(), v.voxels.end(),
              out.voxels.begin() + before * plane);
  }
  return out;
}

Volume preprocess_volume(const Volume& raw, std::size_t anchor,
                         const PreprocessSettings& s) {
  Volume v = adaptive_hist_eq(raw);
  v = resize_cubic(v, s.target_hw);
  v = crop_or_pad_slices(v, static_cast<int>(s.n_slices), anchor);
  return normalize_hu(v);
}

namespace {

constexpr std::size_t kCtrl = 7;  // control points per axis

// Uniform cubic B-spline basis on [0,1).
inline void bspline_basis(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

struct ElasticField {
  // displacement in mm per axis at every voxel
  std::vector<double> dz, dy, dx;
};

ElasticField dense_field(const Volume& v, std::uint64_t seed,
                         double max_disp_mm) {
  Rng rng(seed);
  const std::size_t nctrl = kCtrl * kCtrl * kCtrl;
  std::vector<double> cz(nctrl), cy(nctrl), cx(nctrl);
  for (std::size_t i = 0; i < nctrl; ++i) {
    cz[i] = rng.uniform(-max_disp_mm, max_disp_mm);
    cy[i] = rng.uniform(-max_disp_mm, max_disp_mm);
    cx[i] = rng.uniform(-max_disp_mm, max_disp_mm);
  }

  auto axis_coords = [](std::size_t extent) {
    // Map voxel index onto the control lattice coordinate [0, kCtrl-1].
    std::vector<std::pair<long long, double>> out(extent);
    const double span = extent > 1 ? static_cast<double>(kCtrl - 1) /
                                         static_cast<double>(extent - 1)
                                   : 0.0;
    for (std::size_t i = 0; i < extent; ++i) {
      const double u = static_cast<double>(i) * span;
      const double fl = std::floor(u);
      out[i] = {static_cast<long long>(fl), u - fl};
    }
    return out;
  };
  const auto zc = axis_coords(v.depth);
  const auto yc = axis_coords(v.height);
  const auto xc = axis_coords(v.width);

  ElasticField f;
  f.dz.resize(v.size());
  f.dy.resize(v.size());
  f.dx.resize(v.size());
  auto ctrl_at = [&](const std::vector<double>& c, long long i, long long j,
                     long long k) {
    i = std::clamp(i, 0LL, (long long)kCtrl - 1);
    j = std::clamp(j, 0LL, (long long)kCtrl - 1);
    k = std::clamp(k, 0LL, (long long)kCtrl - 1);
    return c[(static_cast<std::size_t>(i) * kCtrl + static_cast<std::size_t>(j)) *
                 kCtrl +
             static_cast<std::size_t>(k)];
  };

  std::size_t idx = 0;
  for (std::size_t z = 0; z < v.depth; ++z) {
    double wz[4];
    bspline_basis(zc[z].second, wz);
    for (std::size_t y = 0; y < v.height; ++y) {
      double wy[4];
      bspline_basis(yc[y].second, wy);
      for (std::size_t x = 0; x < v.width; ++x, ++idx) {
        double wx[4];
        bspline_basis(xc[x].second, wx);
        double az = 0.0, ay = 0.0, ax = 0.0;
        for (int a = -1; a <= 2; ++a)
          for (int b = -1; b <= 2; ++b)
            for (int c = -1; c <= 2; ++c) {
              const double wgt = wz[a + 1] * wy[b + 1] * wx[c + 1];
              const long long i = zc[z].first + a;
              const long long j = yc[y].first + b;
              const long long k = xc[x].first + c;
              az += wgt * ctrl_at(cz, i, j, k);
              ay += wgt * ctrl_at(cy, i, j, k);
              ax += wgt * ctrl_at(cx, i, j, k);
            }
        f.dz[idx] = az;
        f.dy[idx] = ay;
        f.dx[idx] = ax;
      }
    }
  }
  return f;
}

double trilinear(const Volume& v, double z, double y, double x, double fill) {
  if (z < 0.0 || y < 0.0 || x < 0.0 || z > static_cast<double>(v.depth - 1) ||
      y > static_cast<double>(v.height - 1) ||
      x > static_cast<double>(v.width - 1)) {
    return fill;
  }
  const std::size_t z0 = static_cast<std::size_t>(z);
  const std::size_t y0 = static_cast<std::size_t>(y);
  const std::size_t x0 = static_cast<std::size_t>(x);
  const std::size_t z1 = std::min(z0 + 1, v.depth - 1);
  const std::size_t y1 = std::min(y0 + 1, v.height - 1);
  const std::size_t x1 = std::min(x0 + 1, v.width - 1);
  const double tz = z - static_cast<double>(z0);
  const double ty = y - static_cast<double>(y0);
  const double tx = x - static_cast<double>(x0);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double c00 = lerp(v.at(z0, y0, x0), v.at(z0, y0, x1), tx);
  const double c01 = lerp(v.at(z0, y1, x0), v.at(z0, y1, x1), tx);
  const double c10 = lerp(v.at(z1, y0, x0), v.at(z1, y0, x1), tx);
  const double c11 = lerp(v.at(z1, y1, x0), v.at(z1, y1, x1), tx);
  return lerp(lerp(c00, c01, ty), lerp(c10, c11, ty), tz);
}

}  // namespace

Volume elastic_deform(const Volume& v, std::uint64_t seed, double max_disp_mm,
                      double fill) {
  const ElasticField f = dense_field(v, seed, max_disp_mm);
  Volume out = v;
  std::size_t idx = 0;
  for (std::size_t z = 0; z < v.depth; ++z)
    for (std::size_t y = 0; y < v.height; ++y)
      for (std::size_t x = 0; x < v.width; ++x, ++idx) {
        const double sz = static_cast<double>(z) - f.dz[idx] / v.spacing_z;
        const double sy = static_cast<double>(y) - f.dy[idx] / v.spacing_y;
        const double sx = static_cast<double>(x) - f.dx[idx] / v.spacing_x;
        out.voxels[idx] = trilinear(v, sz, sy, sx, fill);
      }
  return out;
}

double elastic_max_displacement_mm(const Volume& v, std::uint64_t seed,
                                   double max_disp_mm) {
  const ElasticField f = dense_field(v, seed, max_disp_mm);
  double mx = 0.0;
  for (std::size_t i = 0; i < f.dz.size(); ++i) {
    mx = std::max(mx, std::abs(f.dz[i]));
    mx = std::max(mx, std::abs(f.dy[i]));
    mx = std::max(mx, std::abs(f.dx[i]));
  }
  return mx;
}

Volume add_gaussian_noise(const Volume& v, std::uint64_t seed, double sd) {
  Volume out = v;
  if (sd == 0.0) return out;
  Rng rng(seed);
  for (double& x : out.voxels) x += rng.normal(0.0, sd);
  return out;
}

Volume gaussian_blur_1d(const Volume& v, int axis, double sigma) {
  if (axis != 1 && axis != 2) {
    throw ValueError("gaussian_blur_1d: axis must be 1 (y) or 2 (x)");
  }
  const long long radius =
      sigma > 0.0 ? static_cast<long long>(std::ceil(3.0 * sigma)) : 0;
  if (radius == 0) return v;

  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (long long k = -radius; k <= radius; ++k) {
    const double val = std::exp(-0.5 * (double)(k * k) / (sigma * sigma));
    w[static_cast<std::size_t>(k + radius)] = val;
    sum += val;
  }
  for (double& x : w) x /= sum;

  Volume out = v;
  for (std::size_t z = 0; z < v.depth; ++z)
    for (std::size_t y = 0; y < v.height; ++y)
      for (std::size_t x = 0; x < v.width; ++x) {
        double acc = 0.0;
        for (long long k = -radius; k <= radius; ++k) {
          long long yy = static_cast<long long>(y);
          long long xx = static_cast<long long>(x);
          if (axis == 1) {
            yy = std::clamp(yy + k, 0LL, (long long)v.height - 1);
          } else {
            xx = std::clamp(xx + k, 0LL, (long long)v.width - 1);
          }
          acc += w[static_cast<std::size_t>(k + radius)] *
                 v.at(z, (std::size_t)yy, (std::size_t)xx);
        }
        out.at(z, y, x) = acc;
      }
  return out;
}

Volume noise_and_blur(const Volume& v, std::uint64_t seed, double max_noise_sd,
                      double max_blur_sd) {
  Rng rng(seed);
  const double sd_noise = rng.uniform(0.0, max_noise_sd);
  const double sd_blur = rng.uniform(0.0, max_blur_sd);
  const int axis = rng.below(2) == 0 ? 1 : 2;

  Volume out = add_gaussian_noise(v, rng.next_u64(), sd_noise);
  out = gaussian_blur_1d(out, axis, sd_blur);
  for (double& x : out.voxels) x = std::clamp(x, -1.0, 1.0);
  return out;
}

}  // namespace stprog
