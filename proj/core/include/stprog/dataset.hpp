#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stprog/phantom.hpp"
#include "stprog/volume.hpp"

namespace stprog {

/// One patient: volume + raw clinical vector + event-year labels.
struct Sample {
  std::string id;
  Volume volume;
  ClinicalRecord clinical;
  Labels labels;
};

struct ClinicalRow {
  std::string id;
  ClinicalRecord clinical;
  Labels labels;
};

/// cohort.csv: header id,age,sex,tnm,n_mets,cea,treatment,recurrence_year,
/// survival_year; one row per patient. Labels are range-checked at parse.
void write_cohort_csv(const std::filesystem::path& path,
                      const std::vector<ClinicalRow>& rows,
                      std::size_t timesteps = 12);
std::vector<ClinicalRow> read_cohort_csv(const std::filesystem::path& path,
                                         std::size_t timesteps = 12);

/// anchors.csv: id,anchor_slice (the generator's liver-center slice).
void write_anchors_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::size_t>>& rows);
std::map<std::string, std::size_t> read_anchors_csv(
    const std::filesystem::path& path);

/// splits.csv: id,split with split in {train,val,test}.
void write_splits_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& rows);
std::map<std::string, std::string> read_splits_csv(
    const std::filesystem::path& path);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffle by seed, then either floor(0.8n)/floor(0.1n)/rest
/// or the fixed 157/20/20 counts (only valid at n == 197).
SplitIndices split_dataset(std::size_t n, std::uint64_t seed, bool fixed_counts);

/// Directory layout: <dir>/cohort.csv, <dir>/anchors.csv,
/// <dir>/volumes/<id>.vol.
void write_cohort_dir(const std::filesystem::path& dir,
                      const std::vector<PhantomSample>& cohort,
                      std::size_t timesteps = 12);
std::vector<Sample> read_cohort_dir(const std::filesystem::path& dir,
                                    std::size_t timesteps = 12);

/// Feature vector order: age, sex, tnm, n_mets, cea, treatment.
std::vector<double> clinical_features(const ClinicalRecord& c);

/// Per-feature mean/sd over the given rows; sd of a constant feature
/// falls back to 1 so standardization stays finite.
struct Standardizer {
  std::vector<double> mean, sd;
  std::vector<double> apply(const ClinicalRecord& c) const;
};
Standardizer fit_standardizer(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& indices);

}  // namespace stprog
