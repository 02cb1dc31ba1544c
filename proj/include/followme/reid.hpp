#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "followme/errors.hpp"

namespace followme::reid {

using FeatureVector = std::vector<double>;

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr int kDefaultFeatureDim = 256;
inline constexpr double kDefaultSplitFraction = 2.0 / 3.0;

// Per-target statistics fitted from the calibration image stream plus the
// acceptance radius in weighted feature space.
struct CalibrationProfile {
  std::size_t dim = 0;
  std::vector<double> mu;     // per-component mean
  std::vector<double> sigma;  // per-component std, floored at kSigmaFloor
  double lambda_d = 0.0;      // acceptance radius, mu_d + 2*sigma_d
  double mu_d = 0.0;          // mean distance over the threshold split
  double sigma_d = 0.0;       // std of distances over the threshold split
  std::size_t n_calibration = 0;
  std::size_t n_threshold = 0;
};

struct IdentificationResult {
  std::optional<std::size_t> target_index;
  std::optional<double> distance;
  std::vector<double> all_distances;

  bool found() const { return target_index.has_value(); }
};

inline bool all_finite(const FeatureVector& x) {
  return std::all_of(x.begin(), x.end(),
                     [](double v) { return std::isfinite(v); });
}

// Weighted per-component distance between a feature vector and the calibrated
// distribution: sqrt(mean_i(((x_i - mu_i) / sigma_i)^2)).
inline double feature_distance(const FeatureVector& x,
                               const CalibrationProfile& profile) {
  if (x.size() != profile.dim) {
    throw InvalidInputError("feature_distance: feature has dimension " +
                            std::to_string(x.size()) + ", profile expects " +
                            std::to_string(profile.dim));
  }
  if (profile.dim == 0) {
    throw InvalidInputError("feature_distance: profile dimension is zero");
  }
  if (!all_finite(x)) {
    throw InvalidInputError("feature_distance: feature has non-finite values");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sigma = std::max(profile.sigma[i], kSigmaFloor);
    const double z = (x[i] - profile.mu[i]) / sigma;
    sum += z * z;
  }
  return std::sqrt(sum / static_cast<double>(profile.dim));
}

namespace detail {

// Population (1/N) mean and standard deviation.
inline std::pair<double, double> mean_and_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Fits mu/sigma from the first ceil(split_fraction * N) samples (the stream is
// time-ordered, so no shuffling) and the acceptance radius lambda_d from the
// distances of the remaining samples.
inline CalibrationProfile calibrate(const std::vector<FeatureVector>& samples,
                                    double split_fraction = kDefaultSplitFraction) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw InvalidInputError("calibrate: split_fraction must be in (0, 1)");
  }
  const std::size_t n = samples.size();
  const auto n_cal = static_cast<std::size_t>(
      std::ceil(split_fraction * static_cast<double>(n)));
  if (n_cal < 3 || n - n_cal < 3) {
    throw CalibrationError(
        "calibrate: need at least 3 samples in each split, got " +
        std::to_string(n_cal) + " calibration / " + std::to_string(n - n_cal) +
        " threshold");
  }
  const std::size_t dim = samples.front().size();
  if (dim == 0) throw InvalidInputError("calibrate: zero-dimensional feature");
  for (const auto& s : samples) {
    if (s.size() != dim) {
      throw InvalidInputError("calibrate: features have mixed dimensions");
    }
    if (!all_finite(s)) {
      throw InvalidInputError("calibrate: feature has non-finite values");
    }
  }

  CalibrationProfile profile;
  profile.dim = dim;
  profile.n_calibration = n_cal;
  profile.n_threshold = n - n_cal;
  profile.mu.assign(dim, 0.0);
  profile.sigma.assign(dim, 0.0);

  for (std::size_t i = 0; i < n_cal; ++i) {
    for (std::size_t d = 0; d < dim; ++d) profile.mu[d] += samples[i][d];
  }
  for (std::size_t d = 0; d < dim; ++d) {
    profile.mu[d] /= static_cast<double>(n_cal);
  }
  for (std::size_t i = 0; i < n_cal; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double r = samples[i][d] - profile.mu[d];
      profile.sigma[d] += r * r;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    profile.sigma[d] =
        std::max(std::sqrt(profile.sigma[d] / static_cast<double>(n_cal)),
                 kSigmaFloor);
  }

  std::vector<double> distances;
  distances.reserve(n - n_cal);
  for (std::size_t i = n_cal; i < n; ++i) {
    distances.push_back(feature_distance(samples[i], profile));
  }
  const auto [mu_d, sigma_d] = detail::mean_and_std(distances);
  profile.mu_d = mu_d;
  profile.sigma_d = sigma_d;
  profile.lambda_d = mu_d + 2.0 * sigma_d;
  return profile;
}

// Picks the person with the least distance, but only below lambda_d; ties at
// the minimum go to the lowest index. Empty input means no target.
inline IdentificationResult identify(const std::vector<FeatureVector>& frame,
                                     const CalibrationProfile& profile) {
  IdentificationResult result;
  result.all_distances.reserve(frame.size());
  for (const auto& f : frame) {
    result.all_distances.push_back(feature_distance(f, profile));
  }
  if (result.all_distances.empty()) return result;
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.all_distances.size(); ++i) {
    if (result.all_distances[i] < result.all_distances[best]) best = i;
  }
  if (result.all_distances[best] <= profile.lambda_d) {
    result.target_index = best;
    result.distance = result.all_distances[best];
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kProfileSchemaVersion = 1;

inline nlohmann::json profile_to_json(const CalibrationProfile& p) {
  return nlohmann::json{{"schema_version", kProfileSchemaVersion},
                        {"dim", p.dim},
                        {"mu", p.mu},
                        {"sigma", p.sigma},
                        {"lambda_d", p.lambda_d},
                        {"mu_d", p.mu_d},
                        {"sigma_d", p.sigma_d},
                        {"n_calibration", p.n_calibration},
                        {"n_threshold", p.n_threshold}};
}

inline CalibrationProfile profile_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("", "profile must be a JSON object");
  for (const char* key : {"dim", "mu", "sigma", "lambda_d", "mu_d", "sigma_d",
                          "n_calibration", "n_threshold"}) {
    if (!j.contains(key)) {
      throw ParseError(key, "missing required profile field");
    }
  }
  CalibrationProfile p;
  try {
    p.dim = j.at("dim").get<std::size_t>();
    p.mu = j.at("mu").get<std::vector<double>>();
    p.sigma = j.at("sigma").get<std::vector<double>>();
    p.lambda_d = j.at("lambda_d").get<double>();
    p.mu_d = j.at("mu_d").get<double>();
    p.sigma_d = j.at("sigma_d").get<double>();
    p.n_calibration = j.at("n_calibration").get<std::size_t>();
    p.n_threshold = j.at("n_threshold").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("", std::string("profile field has wrong type: ") +
                             e.what());
  }
  if (p.dim == 0) throw ParseError("dim", "must be positive");
  if (p.mu.size() != p.dim) throw ParseError("mu", "length must equal dim");
  if (p.sigma.size() != p.dim) {
    throw ParseError("sigma", "length must equal dim");
  }
  for (double s : p.sigma) {
    if (!(s > 0.0)) throw ParseError("sigma", "components must be positive");
  }
  return p;
}

inline void save_profile(const std::string& path,
                         const CalibrationProfile& p) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open profile file for writing: " + path);
  out << profile_to_json(p).dump(2) << "\n";
}

inline CalibrationProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open profile file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, std::string("invalid JSON: ") + e.what());
  }
  return profile_from_json(j);
}

// One observation of the feature log (JSON Lines, one record per line).
struct FeatureRecord {
  double t = 0.0;
  std::optional<std::string> person_id;
  FeatureVector feature;
};

inline std::vector<FeatureRecord> read_feature_log(std::istream& in,
                                                   const std::string& name) {
  std::vector<FeatureRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(name + ":" + std::to_string(line_no),
                       std::string("invalid JSON: ") + e.what());
    }
    FeatureRecord rec;
    try {
      rec.t = j.at("t").get<double>();
      rec.feature = j.at("feature").get<FeatureVector>();
      if (j.contains("person_id") && !j.at("person_id").is_null()) {
        rec.person_id = j.at("person_id").get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(name + ":" + std::to_string(line_no),
                       std::string("bad feature record: ") + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<FeatureRecord> load_feature_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature log: " + path);
  return read_feature_log(in, path);
}

inline void write_feature_log(std::ostream& out,
                              const std::vector<FeatureRecord>& records) {
  for (const auto& rec : records) {
    nlohmann::json j{{"t", rec.t}, {"feature", rec.feature}};
    if (rec.person_id) j["person_id"] = *rec.person_id;
    out << j.dump() << "\n";
  }
}

inline void save_feature_log(const std::string& path,
                             const std::vector<FeatureRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open feature log for writing: " + path);
  write_feature_log(out, records);
}

}  // namespace followme::reid
