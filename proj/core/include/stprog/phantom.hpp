#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stprog/heads.hpp"
#include "stprog/volume.hpp"

namespace stprog {

/// Synthetic clinical covariates (raw, pre-standardization).
struct ClinicalRecord {
  double age = 60.0;     // years
  int sex = 0;           // 0/1
  int tnm = 1;           // 1..4 ordinal stage
  int n_mets = 1;        // number of lesions (matches the painted count)
  double cea = 5.0;      // ng/mL, log-normal with median 5
  int treatment = 0;     // 0..2 regimen code
};

/// Deterministic label rule: event years are a pure function of observable
/// features, so a perfect predictor exists by construction.
struct LabelRule {
  double cea_threshold = 5.0;  // median of the CEA sampling distribution
  double recur_base = 2.0;
  double recur_img_coef = 240.0;   // * tumor volume fraction
  double recur_cea_coef = 2.0;     // * [cea > threshold]
  double recur_inter_coef = 0.5;   // * [cea > threshold] * min(n_mets, 4)
  double surv_base = 11.0;
  double surv_img_coef = 168.0;    // subtracted * tumor volume fraction
  double surv_cea_coef = 1.5;      // subtracted * [cea > threshold]
  double surv_mets_coef = 0.5;     // subtracted * (n_mets - 1)
  double surv_treat_coef = 1.0;    // added * [treatment == 2]
};

struct CohortSpec {
  std::size_t n = 197;
  std::uint64_t seed = 1;
  std::size_t raw_height = 64, raw_width = 64;
  std::size_t raw_slices_min = 34, raw_slices_max = 46;
  std::size_t timesteps = 12;
  LabelRule rule;
};

/// Ground truth the generator used; labels are recomputable from it.
struct PhantomTruth {
  double tumor_volume_fraction = 0.0;
  std::size_t liver_center_slice = 0;  // anchor for slice cropping
};

struct PhantomSample {
  std::string id;
  Volume volume;  // raw HU
  ClinicalRecord clinical;
  Labels labels;
  PhantomTruth truth;
};

/// Applies the label rule. Results are clipped into 1..timesteps.
Labels labels_from_features(const LabelRule& rule, double tumor_volume_fraction,
                            const ClinicalRecord& clinical,
                            std::size_t timesteps);

/// Phantom with an ellipsoidal liver (HU ~ N(60,10)) on background
/// (HU ~ N(-700,30)) carrying 1..5 spherical lesions (HU ~ N(90,8)).
/// Fully reproducible from (spec.seed, id).
PhantomSample generate_phantom(const CohortSpec& spec, std::size_t index);

std::vector<PhantomSample> generate_synthetic_cohort(const CohortSpec& spec);

std::string phantom_id(std::size_t index);

}  // namespace stprog
