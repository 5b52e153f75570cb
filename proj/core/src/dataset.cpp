#include "stprog/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stprog/errors.hpp"
#include "stprog/rng.hpp"

namespace stprog {

namespace {

std::string fmt(double v) { return nlohmann::json(v).dump(); }

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw IoError("malformed CSV value '" + s + "' at " + where);
  }
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw IoError("malformed CSV value '" + s + "' at " + where);
  }
}

constexpr const char* kCohortHeader =
    "id,age,sex,tnm,n_mets,cea,treatment,recurrence_year,survival_year";

}  // namespace

void write_cohort_csv(const std::filesystem::path& path,
                      const std::vector<ClinicalRow>& rows,
                      std::size_t timesteps) {
  std::ofstream out(path);
  if (!out) throw IoError("write_cohort_csv: cannot open " + path.string());
  out << kCohortHeader << '\n';
  for (const ClinicalRow& r : rows) {
    validate_labels(r.labels, timesteps);
    out << r.id << ',' << fmt(r.clinical.age) << ',' << r.clinical.sex << ','
        << r.clinical.tnm << ',' << r.clinical.n_mets << ','
        << fmt(r.clinical.cea) << ',' << r.clinical.treatment << ','
        << r.labels.recurrence_year << ',' << r.labels.survival_year << '\n';
  }
}

std::vector<ClinicalRow> read_cohort_csv(const std::filesystem::path& path,
                                         std::size_t timesteps) {
  std::ifstream in(path);
  if (!in) throw IoError("read_cohort_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_line(line).size() != 9) {
    throw IoError("read_cohort_csv: missing or malformed header in " +
                  path.string());
  }
  std::vector<ClinicalRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 9) {
      throw IoError("malformed CSV row (want 9 fields, got " +
                    std::to_string(f.size()) + ") at " + where);
    }
    ClinicalRow r;
    r.id = f[0];
    r.clinical.age = parse_double(f[1], where);
    r.clinical.sex = parse_int(f[2], where);
    r.clinical.tnm = parse_int(f[3], where);
    r.clinical.n_mets = parse_int(f[4], where);
    r.clinical.cea = parse_double(f[5], where);
    r.clinical.treatment = parse_int(f[6], where);
    r.labels.recurrence_year = parse_int(f[7], where);
    r.labels.survival_year = parse_int(f[8], where);
    try {
      validate_labels(r.labels, timesteps);
    } catch (const ValueError& e) {
      throw IoError(std::string(e.what()) + " at " + where);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_anchors_csv(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, std::size_t>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("write_anchors_csv: cannot open " + path.string());
  out << "id,anchor_slice\n";
  for (const auto& [id, anchor] : rows) out << id << ',' << anchor << '\n';
}

std::map<std::string, std::size_t> read_anchors_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_anchors_csv: cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, std::size_t> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 2) {
      throw IoError("malformed anchors row at " + path.string() + ":" +
                    std::to_string(lineno));
    }
    out[f[0]] = static_cast<std::size_t>(
        parse_int(f[1], path.string() + ":" + std::to_string(lineno)));
  }
  return out;
}

void write_splits_csv(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("write_splits_csv: cannot open " + path.string());
  out << "id,split\n";
  for (const auto& [id, split] : rows) out << id << ',' << split << '\n';
}

std::map<std::string, std::string> read_splits_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_splits_csv: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::string> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 2 || (f[1] != "train" && f[1] != "val" && f[1] != "test")) {
      throw IoError("malformed splits row at " + path.string() + ":" +
                    std::to_string(lineno));
    }
    out[f[0]] = f[1];
  }
  return out;
}

SplitIndices split_dataset(std::size_t n, std::uint64_t seed, bool fixed_counts) {
  if (n < 3) {
    throw ValueError("split_dataset: need at least 3 samples, got " +
                     std::to_string(n));
  }
  std::size_t n_train, n_val;
  if (fixed_counts) {
    if (n != 197) {
      throw ValueError(
          "split_dataset: fixed-counts mode (157/20/20) requires n == 197, "
          "got " + std::to_string(n));
    }
    n_train = 157;
    n_val = 20;
  } else {
    n_train = (n * 8) / 10;
    n_val = n / 10;
    if (n_train == 0) n_train = 1;
    if (n_val == 0) n_val = 1;
  }

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, hash_str("split")));
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng.below(i + 1);
    std::swap(idx[i], idx[j]);
  }

  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

void write_cohort_dir(const std::filesystem::path& dir,
                      const std::vector<PhantomSample>& cohort,
                      std::size_t timesteps) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "volumes", ec);
  if (ec) throw IoError("write_cohort_dir: cannot create " + dir.string());

  std::vector<ClinicalRow> rows;
  std::vector<std::pair<std::string, std::size_t>> anchors;
  for (const PhantomSample& s : cohort) {
    rows.push_back({s.id, s.clinical, s.labels});
    anchors.emplace_back(s.id, s.truth.liver_center_slice);
    write_volume(dir / "volumes" / (s.id + ".vol"), s.volume);
  }
  write_cohort_csv(dir / "cohort.csv", rows, timesteps);
  write_anchors_csv(dir / "anchors.csv", anchors);
}

std::vector<Sample> read_cohort_dir(const std::filesystem::path& dir,
                                    std::size_t timesteps) {
  const auto rows = read_cohort_csv(dir / "cohort.csv", timesteps);
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const ClinicalRow& r : rows) {
    Sample s;
    s.id = r.id;
    s.clinical = r.clinical;
    s.labels = r.labels;
    s.volume = read_volume(dir / "volumes" / (r.id + ".vol"));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> clinical_features(const ClinicalRecord& c) {
  return {c.age,
          static_cast<double>(c.sex),
          static_cast<double>(c.tnm),
          static_cast<double>(c.n_mets),
          c.cea,
          static_cast<double>(c.treatment)};
}

std::vector<double> Standardizer::apply(const ClinicalRecord& c) const {
  const std::vector<double> f = clinical_features(c);
  std::vector<double> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    out[i] = (f[i] - mean[i]) / sd[i];
  return out;
}

Standardizer fit_standardizer(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValueError("fit_standardizer: empty index set");
  const std::size_t d = clinical_features(samples[0].clinical).size();
  Standardizer st;
  st.mean.assign(d, 0.0);
  st.sd.assign(d, 0.0);
  for (std::size_t i : indices) {
    const auto f = clinical_features(samples[i].clinical);
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += f[j];
  }
  const double n = static_cast<double>(indices.size());
  for (double& m : st.mean) m /= n;
  for (std::size_t i : indices) {
    const auto f = clinical_features(samples[i].clinical);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = f[j] - st.mean[j];
      st.sd[j] += c * c;
    }
  }
  for (double& s : st.sd) {
    s = std::sqrt(s / n);
    if (s == 0.0) s = 1.0;  // constant feature
  }
  return st;
}

}  // namespace stprog
