#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "followme/errors.hpp"

namespace followme::metrics {

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // actual-class count
};

// Confusion-matrix-backed report; rows are actual classes, columns predicted.
struct MetricsReport {
  std::vector<std::string> labels;
  std::vector<std::size_t> confusion;  // row-major, labels.size() squared
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  std::size_t total = 0;

  std::size_t at(std::size_t actual, std::size_t predicted) const {
    return confusion[actual * labels.size() + predicted];
  }
};

// Ratios with empty denominators (a class never predicted, or never seen)
// report as 0.
inline MetricsReport compute_metrics(const std::vector<std::string>& labels,
                                     const std::vector<int>& actual,
                                     const std::vector<int>& predicted) {
  if (labels.empty()) {
    throw InvalidInputError("compute_metrics: no class labels");
  }
  if (actual.size() != predicted.size()) {
    throw InvalidInputError(
        "compute_metrics: actual/predicted length mismatch");
  }
  const std::size_t k = labels.size();
  MetricsReport r;
  r.labels = labels;
  r.confusion.assign(k * k, 0);
  r.total = actual.size();
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const int a = actual[i];
    const int p = predicted[i];
    if (a < 0 || p < 0 || a >= static_cast<int>(k) ||
        p >= static_cast<int>(k)) {
      throw InvalidInputError("compute_metrics: class index out of range");
    }
    r.confusion[static_cast<std::size_t>(a) * k + p]++;
  }

  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) correct += r.confusion[c * k + c];
  r.accuracy = r.total == 0 ? 0.0
                            : static_cast<double>(correct) /
                                  static_cast<double>(r.total);

  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.label = labels[c];
    std::size_t tp = r.confusion[c * k + c];
    std::size_t actual_count = 0;
    std::size_t predicted_count = 0;
    for (std::size_t j = 0; j < k; ++j) {
      actual_count += r.confusion[c * k + j];
      predicted_count += r.confusion[j * k + c];
    }
    m.support = actual_count;
    m.precision = predicted_count == 0
                      ? 0.0
                      : static_cast<double>(tp) /
                            static_cast<double>(predicted_count);
    m.recall = actual_count == 0 ? 0.0
                                 : static_cast<double>(tp) /
                                       static_cast<double>(actual_count);
    m.f1 = (m.precision + m.recall) == 0.0
               ? 0.0
               : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    r.per_class.push_back(std::move(m));
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& m : r.per_class) {
    per_class.push_back({{"label", m.label},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
  }
  return nlohmann::json{{"labels", r.labels},
                        {"confusion", r.confusion},
                        {"accuracy", r.accuracy},
                        {"total", r.total},
                        {"per_class", per_class}};
}

}  // namespace followme::metrics
