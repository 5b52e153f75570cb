#include "stprog/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stprog/errors.hpp"
#include "stprog/rng.hpp"

namespace stprog {

std::string phantom_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%04zu", index + 1);
  return buf;
}

Labels labels_from_features(const LabelRule& r, double tvf,
                            const ClinicalRecord& c, std::size_t timesteps) {
  const double cea_high = c.cea > r.cea_threshold ? 1.0 : 0.0;
  const double mets = static_cast<double>(c.n_mets);

  const double recur_raw = r.recur_base + r.recur_img_coef * tvf +
                           r.recur_cea_coef * cea_high +
                           r.recur_inter_coef * cea_high * std::min(mets, 4.0);
  const double surv_raw = r.surv_base - r.surv_img_coef * tvf -
                          r.surv_cea_coef * cea_high -
                          r.surv_mets_coef * (mets - 1.0) +
                          r.surv_treat_coef * (c.treatment == 2 ? 1.0 : 0.0);

  const double tmax = static_cast<double>(timesteps);
  Labels out;
  out.recurrence_year =
      static_cast<int>(std::clamp(std::round(recur_raw), 1.0, tmax));
  out.survival_year =
      static_cast<int>(std::clamp(std::round(surv_raw), 1.0, tmax));
  return out;
}

PhantomSample generate_phantom(const CohortSpec& spec, std::size_t index) {
  if (spec.raw_height < 16 || spec.raw_width < 16 || spec.raw_slices_min < 8) {
    throw ValueError(
        "generate_phantom: raw extents too small to fit the liver ellipsoid "
        "(need height/width >= 16 and >= 8 slices)");
  }
  if (spec.raw_slices_max < spec.raw_slices_min) {
    throw ValueError("generate_phantom: raw slice range is empty");
  }

  PhantomSample s;
  s.id = phantom_id(index);
  Rng rng(mix_seed(spec.seed, hash_str(s.id)));

  const std::size_t d =
      spec.raw_slices_min +
      rng.below(spec.raw_slices_max - spec.raw_slices_min + 1);
  const std::size_t h = spec.raw_height, w = spec.raw_width;

  Volume v(d, h, w);
  const double zsp[3] = {2.0, 2.5, 3.0};
  v.spacing_z = zsp[rng.below(3)];
  v.spacing_y = rng.uniform(0.7, 1.0);
  v.spacing_x = v.spacing_y;

  // Background parenchyma-free air/soft-tissue mix.
  for (double& voxel : v.voxels)
    voxel = std::clamp(rng.normal(-700.0, 30.0), kHuMin, kHuMax);

  // Liver ellipsoid.
  const double cz = d * 0.5 + rng.uniform(-1.5, 1.5);
  const double cy = h * 0.5 + rng.uniform(-2.0, 2.0);
  const double cx = w * 0.5 + rng.uniform(-2.0, 2.0);
  const double az = d * rng.uniform(0.30, 0.38);
  const double ay = h * rng.uniform(0.28, 0.36);
  const double ax = w * rng.uniform(0.30, 0.38);

  std::size_t liver_voxels = 0;
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dz = (z - cz) / az, dy = (y - cy) / ay, dx = (x - cx) / ax;
        if (dz * dz + dy * dy + dx * dx <= 1.0) {
          v.at(z, y, x) = std::clamp(rng.normal(60.0, 10.0), kHuMin, kHuMax);
          ++liver_voxels;
        }
      }

  // Lesions: 1..5 spheres inside the liver.
  const int n_mets = 1 + static_cast<int>(rng.below(5));
  std::size_t tumor_voxels = 0;
  for (int m = 0; m < n_mets; ++m) {
    const double radius = rng.uniform(2.2, 3.2);
    // Center placed well inside the ellipsoid.
    const double uz = rng.uniform(-0.55, 0.55);
    const double uy = rng.uniform(-0.55, 0.55);
    const double ux = rng.uniform(-0.55, 0.55);
    const double tz = cz + uz * az, ty = cy + uy * ay, tx = cx + ux * ax;
    const long long r = static_cast<long long>(std::ceil(radius));
    for (long long z = std::max(0LL, (long long)std::floor(tz) - r);
         z <= std::min((long long)d - 1, (long long)std::ceil(tz) + r); ++z)
      for (long long y = std::max(0LL, (long long)std::floor(ty) - r);
           y <= std::min((long long)h - 1, (long long)std::ceil(ty) + r); ++y)
        for (long long x = std::max(0LL, (long long)std::floor(tx) - r);
             x <= std::min((long long)w - 1, (long long)std::ceil(tx) + r); ++x) {
          const double dz = z - tz, dy = y - ty, dx = x - tx;
          if (dz * dz + dy * dy + dx * dx <= radius * radius) {
            v.at((std::size_t)z, (std::size_t)y, (std::size_t)x) =
                std::clamp(rng.normal(90.0, 8.0), kHuMin, kHuMax);
            ++tumor_voxels;
          }
        }
  }

  s.volume = std::move(v);
  s.truth.tumor_volume_fraction =
      liver_voxels ? static_cast<double>(tumor_voxels) /
                         static_cast<double>(liver_voxels)
                   : 0.0;
  s.truth.liver_center_slice = static_cast<std::size_t>(
      std::clamp(std::llround(cz), 0LL, (long long)d - 1));

  s.clinical.age = 35.0 + 50.0 * rng.uniform();
  s.clinical.sex = static_cast<int>(rng.below(2));
  s.clinical.tnm = 1 + static_cast<int>(rng.below(4));
  s.clinical.n_mets = n_mets;
  s.clinical.cea = std::exp(rng.normal(std::log(5.0), 0.8));
  s.clinical.treatment = static_cast<int>(rng.below(3));

  s.labels = labels_from_features(spec.rule, s.truth.tumor_volume_fraction,
                                  s.clinical, spec.timesteps);
  return s;
}

std::vector<PhantomSample> generate_synthetic_cohort(const CohortSpec& spec) {
  std::vector<PhantomSample> out;
  out.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i)
    out.push_back(generate_phantom(spec, i));
  return out;
}

}  // namespace stprog
