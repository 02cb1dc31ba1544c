#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "followme/errors.hpp"

namespace followme::svm {

inline double rbf_kernel(std::span<const double> a, std::span<const double> b,
                         double gamma) {
  if (a.size() != b.size()) {
    throw InvalidInputError("rbf_kernel: size mismatch");
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidInputError("rbf_kernel: gamma must be positive and finite");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw InvalidInputError("rbf_kernel: non-finite input");
    }
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return std::exp(-gamma * sq);
}

struct TrainOptions {
  double c = 1.0;
  double gamma = 1.0;
  double tol = 1e-3;          // stop when the KKT gap drops below this
  std::size_t max_iter = 0;   // 0 = choose from problem size
};

// Soft-margin binary SVM with an RBF kernel, stored as support vectors with
// signed coefficients alpha_i * y_i.
struct BinaryModel {
  std::vector<std::vector<double>> support_vectors;
  std::vector<double> coefficients;  // alpha_i * y_i
  double bias = 0.0;
  double gamma = 1.0;
  double c = 1.0;
  // solver diagnostics
  std::size_t iterations = 0;
  double kkt_gap = 0.0;
};

inline double decision_value(const BinaryModel& m, std::span<const double> x) {
  double sum = m.bias;
  for (std::size_t i = 0; i < m.support_vectors.size(); ++i) {
    sum += m.coefficients[i] * rbf_kernel(m.support_vectors[i], x, m.gamma);
  }
  return sum;
}

namespace detail {

// Maximal-violating-pair selection over the dual gradient. Ties resolve to
// the lowest index so runs are repeatable.
struct WorkingSet {
  int i = -1;
  int j = -1;
  double gap = 0.0;
};

inline WorkingSet select_working_set(const std::vector<int>& y,
                                     const std::vector<double>& alpha,
                                     const std::vector<double>& grad,
                                     double c) {
  const std::size_t n = y.size();
  double up_max = -std::numeric_limits<double>::infinity();
  double low_min = std::numeric_limits<double>::infinity();
  int i = -1;
  int j = -1;
  for (std::size_t t = 0; t < n; ++t) {
    const double v = -static_cast<double>(y[t]) * grad[t];
    const bool in_up =
        (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0.0);
    const bool in_low =
        (y[t] > 0 && alpha[t] > 0.0) || (y[t] < 0 && alpha[t] < c);
    if (in_up && v > up_max) {
      up_max = v;
      i = static_cast<int>(t);
    }
    if (in_low && v < low_min) {
      low_min = v;
      j = static_cast<int>(t);
    }
  }
  WorkingSet ws;
  ws.i = i;
  ws.j = j;
  ws.gap = up_max - low_min;
  return ws;
}

}  // namespace detail

// KKT gap (max violating pair gap) of a candidate dual point; zero at the
// optimum, used by tests to validate both the solver and external oracles.
inline double kkt_gap(const std::vector<std::vector<double>>& x,
                      const std::vector<int>& y,
                      const std::vector<double>& alpha, double c,
                      double gamma) {
  const std::size_t n = x.size();
  std::vector<double> grad(n, -1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      grad[i] += static_cast<double>(y[i]) * static_cast<double>(y[j]) *
                 alpha[j] * rbf_kernel(x[i], x[j], gamma);
    }
  }
  return detail::select_working_set(y, alpha, grad, c).gap;
}

// SMO with first-order working-set selection on the full kernel matrix.
// Labels must be +1/-1 with at least one of each.
inline BinaryModel train_binary(const std::vector<std::vector<double>>& x,
                                const std::vector<int>& y,
                                const TrainOptions& opts) {
  const std::size_t n = x.size();
  if (n == 0 || y.size() != n) {
    throw InvalidInputError("train_binary: empty data or label size mismatch");
  }
  bool has_pos = false;
  bool has_neg = false;
  for (int label : y) {
    if (label == 1) {
      has_pos = true;
    } else if (label == -1) {
      has_neg = true;
    } else {
      throw InvalidInputError("train_binary: labels must be +1 or -1");
    }
  }
  if (!has_pos || !has_neg) {
    throw TrainingError("train_binary: training data contains a single class");
  }
  if (!(opts.c > 0.0) || !(opts.gamma > 0.0) || !(opts.tol > 0.0)) {
    throw InvalidInputError("train_binary: c, gamma and tol must be positive");
  }

  const std::size_t dim = x.front().size();
  for (const auto& row : x) {
    if (row.size() != dim) {
      throw InvalidInputError("train_binary: samples have mixed dimensions");
    }
  }

  // Full kernel matrix; pairwise problems stay small enough for this.
  std::vector<double> kernel(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    kernel[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double k = rbf_kernel(x[i], x[j], opts.gamma);
      kernel[i * n + j] = k;
      kernel[j * n + i] = k;
    }
  }

  const double c = opts.c;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);  // gradient of 1/2 a'Qa - e'a
  const std::size_t max_iter =
      opts.max_iter > 0 ? opts.max_iter : std::max<std::size_t>(200000, 200 * n);
  constexpr double kTau = 1e-12;

  std::size_t iter = 0;
  double gap = std::numeric_limits<double>::infinity();
  while (iter < max_iter) {
    const auto ws = detail::select_working_set(y, alpha, grad, c);
    gap = ws.gap;
    if (ws.i < 0 || ws.j < 0 || gap <= opts.tol) break;
    ++iter;

    const auto i = static_cast<std::size_t>(ws.i);
    const auto j = static_cast<std::size_t>(ws.j);
    const double yi = y[i];
    const double yj = y[j];
    const double kii = kernel[i * n + i];
    const double kjj = kernel[j * n + j];
    const double kij = kernel[i * n + j];
    const double old_ai = alpha[i];
    const double old_aj = alpha[j];

    if (yi != yj) {
      double quad = kii + kjj + 2.0 * kij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else {
        if (alpha[i] < 0.0) {
          alpha[i] = 0.0;
          alpha[j] = -diff;
        }
      }
      if (diff > 0.0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = c + diff;
        }
      }
    } else {
      double quad = kii + kjj - 2.0 * kij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = sum;
        }
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else {
        if (alpha[i] < 0.0) {
          alpha[i] = 0.0;
          alpha[j] = sum;
        }
      }
    }

    const double dai = (alpha[i] - old_ai) * yi;
    const double daj = (alpha[j] - old_aj) * yj;
    for (std::size_t t = 0; t < n; ++t) {
      grad[t] += static_cast<double>(y[t]) *
                 (dai * kernel[i * n + t] + daj * kernel[j * n + t]);
    }
  }

  if (gap > opts.tol) {
    throw ConvergenceError(
        "train_binary: SMO did not converge after " +
            std::to_string(max_iter) + " iterations (KKT gap " +
            std::to_string(gap) + ")",
        gap);
  }

  // Bias from free support vectors, falling back to the violating-pair
  // midpoint when every multiplier sits on a bound.
  double bias_sum = 0.0;
  std::size_t bias_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0 && alpha[t] < c) {
      bias_sum += -static_cast<double>(y[t]) * grad[t];
      ++bias_count;
    }
  }
  double bias = 0.0;
  if (bias_count > 0) {
    bias = bias_sum / static_cast<double>(bias_count);
  } else {
    double up_max = -std::numeric_limits<double>::infinity();
    double low_min = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -static_cast<double>(y[t]) * grad[t];
      const bool in_up =
          (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0.0);
      const bool in_low =
          (y[t] > 0 && alpha[t] > 0.0) || (y[t] < 0 && alpha[t] < c);
      if (in_up) up_max = std::max(up_max, v);
      if (in_low) low_min = std::min(low_min, v);
    }
    bias = 0.5 * (up_max + low_min);
  }

  BinaryModel model;
  model.gamma = opts.gamma;
  model.c = opts.c;
  model.bias = bias;
  model.iterations = iter;
  model.kkt_gap = gap;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      model.support_vectors.push_back(x[t]);
      model.coefficients.push_back(alpha[t] * static_cast<double>(y[t]));
    }
  }
  return model;
}

}  // namespace followme::svm
