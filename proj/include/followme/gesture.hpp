#pragma once

#include <array>
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
#include "followme/svm.hpp"

namespace followme::gesture {

inline constexpr int kLandmarkCount = 21;
inline constexpr int kFlatDim = 63;
inline constexpr int kDefaultDebounceCount = 5;

// Order matters: it is the vote tie-break of classify() and the column order
// of every report.
enum class GestureClass { Wait = 0, Follow = 1, Other = 2 };

enum class Command { Wait, Follow };

inline const char* to_string(GestureClass c) {
  switch (c) {
    case GestureClass::Wait: return "wait";
    case GestureClass::Follow: return "follow";
    case GestureClass::Other: return "other";
  }
  return "?";
}

inline const char* to_string(Command c) {
  return c == Command::Wait ? "wait" : "follow";
}

inline std::optional<GestureClass> gesture_class_from_string(
    const std::string& s) {
  if (s == "wait") return GestureClass::Wait;
  if (s == "follow") return GestureClass::Follow;
  if (s == "other") return GestureClass::Other;
  return std::nullopt;
}

// 21 hand key points, coordinates relative to the palm centre.
struct LandmarkSet {
  std::array<std::array<double, 3>, kLandmarkCount> points{};

  std::vector<double> flatten() const {
    std::vector<double> flat(kFlatDim);
    for (int i = 0; i < kLandmarkCount; ++i) {
      flat[3 * i + 0] = points[i][0];
      flat[3 * i + 1] = points[i][1];
      flat[3 * i + 2] = points[i][2];
    }
    return flat;
  }

  bool finite() const {
    for (const auto& p : points) {
      for (double v : p) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }
};

// Divides all coordinates by the maximum pairwise point distance, so the
// representation does not depend on how large the hand appears.
inline LandmarkSet scale_normalized(const LandmarkSet& lm) {
  double max_sq = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i) {
    for (int j = i + 1; j < kLandmarkCount; ++j) {
      double sq = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = lm.points[i][k] - lm.points[j][k];
        sq += d * d;
      }
      max_sq = std::max(max_sq, sq);
    }
  }
  if (max_sq <= 0.0) return lm;  // degenerate single-point hand
  const double scale = 1.0 / std::sqrt(max_sq);
  LandmarkSet out = lm;
  for (auto& p : out.points) {
    for (double& v : p) v *= scale;
  }
  return out;
}

struct LabeledLandmarks {
  LandmarkSet landmarks;
  GestureClass label = GestureClass::Other;
};

struct PairwiseClassifier {
  GestureClass positive = GestureClass::Wait;  // decision value > 0 favours it
  GestureClass negative = GestureClass::Follow;
  svm::BinaryModel model;
};

// One-vs-one RBF SVM over flattened landmark vectors. Only pairs with both
// classes present in the training data exist in `pairs`.
struct GestureModel {
  double gamma = 1.0;
  double c = 1.0;
  std::vector<PairwiseClassifier> pairs;
  std::size_t training_samples = 0;
};

struct TrainOptions {
  double c = 1.0;
  std::optional<double> gamma;  // unset = 1 / (63 * pooled component variance)
  double tol = 1e-3;
};

// Pooled variance over every component of every sample.
inline double auto_gamma(const std::vector<LabeledLandmarks>& data) {
  double mean = 0.0;
  std::size_t count = 0;
  for (const auto& d : data) {
    for (double v : d.landmarks.flatten()) {
      mean += v;
      ++count;
    }
  }
  if (count == 0) return 1.0;
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (const auto& d : data) {
    for (double v : d.landmarks.flatten()) var += (v - mean) * (v - mean);
  }
  var /= static_cast<double>(count);
  if (var <= 0.0) return 1.0;
  return 1.0 / (kFlatDim * var);
}

inline GestureModel train(const std::vector<LabeledLandmarks>& data,
                          const TrainOptions& opts = {}) {
  std::array<std::size_t, 3> class_count{0, 0, 0};
  for (const auto& d : data) {
    if (!d.landmarks.finite()) {
      throw InvalidInputError("train: landmark set has non-finite values");
    }
    class_count[static_cast<int>(d.label)]++;
  }
  const int present = (class_count[0] > 0) + (class_count[1] > 0) +
                      (class_count[2] > 0);
  if (present < 2) {
    throw TrainingError("train: need at least 2 gesture classes, got " +
                        std::to_string(present));
  }

  GestureModel model;
  model.c = opts.c;
  model.gamma = opts.gamma ? *opts.gamma : auto_gamma(data);
  model.training_samples = data.size();

  constexpr std::array<std::pair<GestureClass, GestureClass>, 3> kPairs{{
      {GestureClass::Wait, GestureClass::Follow},
      {GestureClass::Wait, GestureClass::Other},
      {GestureClass::Follow, GestureClass::Other},
  }};
  for (const auto& [pos, neg] : kPairs) {
    if (class_count[static_cast<int>(pos)] == 0 ||
        class_count[static_cast<int>(neg)] == 0) {
      continue;
    }
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const auto& d : data) {
      if (d.label == pos) {
        x.push_back(d.landmarks.flatten());
        y.push_back(1);
      } else if (d.label == neg) {
        x.push_back(d.landmarks.flatten());
        y.push_back(-1);
      }
    }
    svm::TrainOptions bopts;
    bopts.c = opts.c;
    bopts.gamma = model.gamma;
    bopts.tol = opts.tol;
    PairwiseClassifier pc;
    pc.positive = pos;
    pc.negative = neg;
    pc.model = svm::train_binary(x, y, bopts);
    model.pairs.push_back(std::move(pc));
  }
  return model;
}

// Majority vote over the pairwise decisions. Vote ties break on the largest
// summed decision value in the class's favour, then on enum order.
inline GestureClass classify(const GestureModel& model,
                             const LandmarkSet& lm) {
  if (model.pairs.empty()) {
    throw InvalidInputError("classify: model has no trained classifiers");
  }
  const std::vector<double> flat = lm.flatten();
  std::array<int, 3> votes{0, 0, 0};
  std::array<double, 3> aggregate{0.0, 0.0, 0.0};
  for (const auto& pc : model.pairs) {
    const double d = svm::decision_value(pc.model, flat);
    const int pos = static_cast<int>(pc.positive);
    const int neg = static_cast<int>(pc.negative);
    if (d >= 0.0) {
      votes[pos]++;
    } else {
      votes[neg]++;
    }
    aggregate[pos] += d;
    aggregate[neg] -= d;
  }
  int best = 0;
  for (int c = 1; c < 3; ++c) {
    if (votes[c] > votes[best] ||
        (votes[c] == votes[best] && aggregate[c] > aggregate[best])) {
      best = c;
    }
  }
  return static_cast<GestureClass>(best);
}

// Requires `required_count` identical consecutive classifications before a
// command fires, fires once per run, and ignores Other entirely.
class Debouncer {
 public:
  explicit Debouncer(int required_count = kDefaultDebounceCount)
      : required_(required_count) {
    if (required_count < 1) {
      throw InvalidInputError("Debouncer: required_count must be >= 1");
    }
  }

  std::optional<Command> step(GestureClass c) {
    if (last_ && *last_ == c) {
      if (run_length_ < required_) ++run_length_;
    } else {
      last_ = c;
      run_length_ = 1;
      fired_ = false;
    }
    if (run_length_ >= required_ && !fired_ && c != GestureClass::Other) {
      fired_ = true;
      return c == GestureClass::Wait ? Command::Wait : Command::Follow;
    }
    return std::nullopt;
  }

  void reset() {
    last_.reset();
    run_length_ = 0;
    fired_ = false;
  }

  int required_count() const { return required_; }
  int run_length() const { return run_length_; }
  std::optional<GestureClass> last_class() const { return last_; }

 private:
  int required_;
  std::optional<GestureClass> last_;
  int run_length_ = 0;
  bool fired_ = false;
};

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_to_json(const GestureModel& m) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& pc : m.pairs) {
    pairs.push_back({{"positive", to_string(pc.positive)},
                     {"negative", to_string(pc.negative)},
                     {"support_vectors", pc.model.support_vectors},
                     {"coefficients", pc.model.coefficients},
                     {"bias", pc.model.bias},
                     {"iterations", pc.model.iterations},
                     {"kkt_gap", pc.model.kkt_gap}});
  }
  return nlohmann::json{{"schema_version", kModelSchemaVersion},
                        {"kernel", "rbf"},
                        {"gamma", m.gamma},
                        {"c", m.c},
                        {"training_samples", m.training_samples},
                        {"pairs", pairs}};
}

inline GestureModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("", "model must be a JSON object");
  GestureModel m;
  try {
    if (j.at("kernel").get<std::string>() != "rbf") {
      throw ParseError("kernel", "only 'rbf' is supported");
    }
    m.gamma = j.at("gamma").get<double>();
    m.c = j.at("c").get<double>();
    m.training_samples = j.value("training_samples", std::size_t{0});
    for (const auto& pj : j.at("pairs")) {
      PairwiseClassifier pc;
      const auto pos = gesture_class_from_string(
          pj.at("positive").get<std::string>());
      const auto neg = gesture_class_from_string(
          pj.at("negative").get<std::string>());
      if (!pos || !neg) throw ParseError("pairs", "unknown gesture class");
      pc.positive = *pos;
      pc.negative = *neg;
      pc.model.support_vectors =
          pj.at("support_vectors").get<std::vector<std::vector<double>>>();
      pc.model.coefficients =
          pj.at("coefficients").get<std::vector<double>>();
      pc.model.bias = pj.at("bias").get<double>();
      pc.model.gamma = m.gamma;
      pc.model.c = m.c;
      if (pc.model.support_vectors.size() != pc.model.coefficients.size()) {
        throw ParseError("pairs",
                         "support_vectors and coefficients differ in length");
      }
      m.pairs.push_back(std::move(pc));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("", std::string("bad gesture model: ") + e.what());
  }
  if (!(m.gamma > 0.0)) throw ParseError("gamma", "must be positive");
  if (m.pairs.empty()) throw ParseError("pairs", "model has no classifiers");
  return m;
}

inline void save_model(const std::string& path, const GestureModel& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open model file for writing: " + path);
  out << model_to_json(m).dump(2) << "\n";
}

inline GestureModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, std::string("invalid JSON: ") + e.what());
  }
  return model_from_json(j);
}

// Landmark corpus CSV: 63 coordinate columns x0,y0,z0,...,x20,y20,z20 plus a
// trailing label column; header row required.
inline void write_corpus(std::ostream& out,
                         const std::vector<LabeledLandmarks>& data) {
  for (int i = 0; i < kLandmarkCount; ++i) {
    out << "x" << i << ",y" << i << ",z" << i << ",";
  }
  out << "label\n";
  out.precision(17);
  for (const auto& d : data) {
    for (const auto& p : d.landmarks.points) {
      out << p[0] << "," << p[1] << "," << p[2] << ",";
    }
    out << to_string(d.label) << "\n";
  }
}

inline void save_corpus(const std::string& path,
                        const std::vector<LabeledLandmarks>& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open corpus file for writing: " + path);
  write_corpus(out, data);
}

inline std::vector<LabeledLandmarks> read_corpus(std::istream& in,
                                                 const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(name, "empty corpus file, expected a header row");
  }
  std::vector<LabeledLandmarks> data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    LabeledLandmarks row;
    for (int i = 0; i < kFlatDim; ++i) {
      if (!std::getline(ss, cell, ',')) {
        throw ParseError(name + ":" + std::to_string(line_no),
                         "expected 63 coordinate columns");
      }
      try {
        row.landmarks.points[i / 3][i % 3] = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError(name + ":" + std::to_string(line_no),
                         "bad number '" + cell + "'");
      }
    }
    if (!std::getline(ss, cell)) {
      throw ParseError(name + ":" + std::to_string(line_no),
                       "missing label column");
    }
    const auto label = gesture_class_from_string(cell);
    if (!label) {
      throw ParseError(name + ":" + std::to_string(line_no),
                       "unknown label '" + cell + "'");
    }
    row.label = *label;
    data.push_back(std::move(row));
  }
  return data;
}

inline std::vector<LabeledLandmarks> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file: " + path);
  return read_corpus(in, path);
}

}  // namespace followme::gesture
